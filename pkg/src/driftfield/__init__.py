"""Mean-shift drift fields, kernel-induced scores, and one-step generator training.

The package is organized by layer:

* :mod:`driftfield.kernels`  -- radial kernel family, bandwidth policies,
  Laplace moment constants.
* :mod:`driftfield.sampling` -- seeded samplers for synthetic targets,
  priors, and 2D toy datasets.
* :mod:`driftfield.fields`   -- Monte Carlo estimators of mean-shift and
  kernel-score vector fields plus decomposition diagnostics.
* :mod:`driftfield.metrics`  -- alignment diagnostics, distribution
  distances (SWD, MMD), and scaling-law fits.
* :mod:`driftfield.trainer`  -- from-scratch MLP generator, exact VJP,
  Adam, and the drifting training loop.
* :mod:`driftfield.experiments` / :mod:`driftfield.cli` -- experiment
  drivers and the command line front end.
"""

from driftfield.kernels import (
    BandwidthPolicy,
    RadialKernel,
    b_weight,
    kernel_eval,
    kernel_log_grad,
    laplace_moment_ratio,
    resolve_bandwidth,
)
from driftfield.sampling import (
    PointCloud,
    load_cloud,
    sample_prior,
    sample_raw_mog,
    sample_ring_mog,
    sample_toy2d,
    save_cloud,
)

__version__ = "0.1.0"

__all__ = [
    "BandwidthPolicy",
    "PointCloud",
    "RadialKernel",
    "b_weight",
    "kernel_eval",
    "kernel_log_grad",
    "laplace_moment_ratio",
    "load_cloud",
    "resolve_bandwidth",
    "sample_prior",
    "sample_raw_mog",
    "sample_ring_mog",
    "sample_toy2d",
    "save_cloud",
]
