"""Seeded samplers for synthetic targets, priors, and 2D toy datasets.

All randomness flows through Philox, a counter-based 64-bit generator,
keyed by ``(seed, stream label)``.  Each sampler draws from documented
streams so that distinct roles and purposes never share a stream:

* ``ring_mog/plane``            -- the shared 2-plane (role independent)
* ``ring_mog/draw/{p,q}``       -- mode choices and noise per role
* ``raw_mog/dirs/{p,q}``        -- mode center directions per role
* ``raw_mog/draw/{p,q}``        -- mode choices and noise per role
* ``toy2d/<name>``              -- 2D toy dataset draws
* ``prior``                     -- standard normal prior draws

Identical sampler arguments and seed always reproduce a bit-identical
cloud.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

DATA_P = "data_p"
MODEL_Q = "model_q"
PRIOR = "prior"
GENERATED = "generated"

_LABELS = (DATA_P, MODEL_Q, PRIOR, GENERATED)

_MASK64 = (1 << 64) - 1

RING_RADIUS = 3.0
RING_MODES = 6
RING_NOISE_SD = 0.40
RING_Q_ANGLE = math.pi / 6.0

RAW_RADII_P = (1.5, 2.5, 3.0, 4.0, 5.0, 6.0)
RAW_RADII_Q = (2.0, 3.5, 4.0, 5.5)
RAW_NOISE_SD = 0.5

TOY2D_NAMES = ("ring_mog", "swiss_roll", "checkerboard", "two_moons")


def stream_rng(seed: int, stream: str) -> np.random.Generator:
    """Philox generator on the stream derived from ``(seed, stream)``."""
    digest = hashlib.blake2s(stream.encode("utf-8"), digest_size=8).digest()
    entropy = (int(seed) & _MASK64, int.from_bytes(digest, "little"))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def derive_seed(seed: int, stream: str) -> int:
    """Stable 64-bit sub-seed for handing to another seeded component."""
    digest = hashlib.blake2s(
        f"{int(seed) & _MASK64}/{stream}".encode("utf-8"), digest_size=8
    ).digest()
    return int.from_bytes(digest, "little")


@dataclass
class PointCloud:
    """N x D sample matrix with seed provenance."""

    data: np.ndarray
    seed: int
    label: str = GENERATED

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2 or self.data.shape[0] < 1:
            raise ValueError("point cloud must be a nonempty N x D matrix")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("point cloud contains non-finite entries")
        if self.label not in _LABELS:
            raise ValueError(f"unknown label {self.label!r}")

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]


def _role_label(role: str) -> str:
    if role == "p":
        return DATA_P
    if role == "q":
        return MODEL_Q
    raise ValueError(f"role must be 'p' or 'q', got {role!r}")


def _seeded_plane(D: int, seed: int) -> np.ndarray:
    """Random orthonormal 2-plane in R^D from the role-independent stream.

    QR of a Gaussian matrix with the sign of the R diagonal fixed, so
    the basis is a deterministic function of (D, seed).
    """
    rng = stream_rng(seed, "ring_mog/plane")
    m = rng.standard_normal((D, 2))
    q, r = np.linalg.qr(m)
    return q * np.sign(np.diag(r))


def sample_ring_mog(
    D: int, n: int, role: str, seed: int, noise_sd: float = RING_NOISE_SD
) -> PointCloud:
    """Six-mode ring mixture on a seeded random 2-plane in R^D.

    Mode centers sit equally spaced on the radius-3 circle inside the
    plane; role ``q`` rotates all centers by pi/6 within the plane.  The
    plane depends on the seed only, so for a fixed seed p and q differ
    solely by the in-plane rotation.  Noise is isotropic in full R^D
    (``noise_sd = 0`` collapses samples onto the centers, for debugging).
    """
    if D < 2:
        raise ValueError("ring MoG requires D >= 2")
    if n < 1:
        raise ValueError("need at least one sample")
    label = _role_label(role)
    plane = _seeded_plane(D, seed)
    angles = 2.0 * math.pi * np.arange(RING_MODES) / RING_MODES
    if role == "q":
        angles = angles + RING_Q_ANGLE
    centers = RING_RADIUS * (
        np.cos(angles)[:, None] * plane[:, 0] + np.sin(angles)[:, None] * plane[:, 1]
    )
    rng = stream_rng(seed, f"ring_mog/draw/{role}")
    idx = rng.integers(RING_MODES, size=n)
    data = centers[idx]
    if noise_sd > 0.0:
        data = data + noise_sd * rng.standard_normal((n, D))
    return PointCloud(data, seed, label)


def ring_mog_centers(D: int, role: str, seed: int) -> np.ndarray:
    """Mode centers of :func:`sample_ring_mog` (6 x D), for diagnostics."""
    _role_label(role)
    plane = _seeded_plane(D, seed)
    angles = 2.0 * math.pi * np.arange(RING_MODES) / RING_MODES
    if role == "q":
        angles = angles + RING_Q_ANGLE
    return RING_RADIUS * (
        np.cos(angles)[:, None] * plane[:, 0] + np.sin(angles)[:, None] * plane[:, 1]
    )


def sample_raw_mog(
    D: int, n: int, role: str, seed: int, noise_sd: float = RAW_NOISE_SD
) -> PointCloud:
    """Mixture with mode centers at fixed radii along random directions.

    Role ``p`` uses six radii {1.5, 2.5, 3, 4, 5, 6}; role ``q`` uses
    four radii {2, 3.5, 4, 5.5}.  Directions are independent uniformly
    random unit vectors, resampled per (D, seed, role).
    """
    if D < 1:
        raise ValueError("dimension must be positive")
    if n < 1:
        raise ValueError("need at least one sample")
    label = _role_label(role)
    radii = np.asarray(RAW_RADII_P if role == "p" else RAW_RADII_Q)
    dir_rng = stream_rng(seed, f"raw_mog/dirs/{role}")
    dirs = dir_rng.standard_normal((len(radii), D))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    centers = radii[:, None] * dirs
    rng = stream_rng(seed, f"raw_mog/draw/{role}")
    idx = rng.integers(len(radii), size=n)
    data = centers[idx]
    if noise_sd > 0.0:
        data = data + noise_sd * rng.standard_normal((n, D))
    return PointCloud(data, seed, label)


def sample_toy2d(name: str, n: int, seed: int, noise_sd: float | None = None) -> PointCloud:
    """2D training targets: ring_mog, swiss_roll, checkerboard, two_moons.

    Constructions are fixed by this package:

    * swiss_roll:  (t cos t, t sin t) / 3 with t ~ U[3 pi / 2, 9 pi / 2],
      plus isotropic Gaussian noise (default sd 0.05)
    * checkerboard: uniform over the 8 black unit cells of the 4 x 4
      board on [-2, 2]^2, black = (i + j) even
    * two_moons:   the standard interleaving half circles of radius 1,
      second moon at (1 - cos t, 1 - sin t - 0.5), noise sd 0.05
    * ring_mog:    :func:`sample_ring_mog` with D = 2, role p

    ``noise_sd = 0`` disables the additive noise (support tests).
    """
    if n < 1:
        raise ValueError("need at least one sample")
    if name == "ring_mog":
        sd = RING_NOISE_SD if noise_sd is None else noise_sd
        return sample_ring_mog(2, n, "p", seed, noise_sd=sd)
    rng = stream_rng(seed, f"toy2d/{name}")
    if name == "swiss_roll":
        sd = 0.05 if noise_sd is None else noise_sd
        t = rng.uniform(1.5 * math.pi, 4.5 * math.pi, size=n)
        data = np.stack([t * np.cos(t), t * np.sin(t)], axis=1) / 3.0
        if sd > 0.0:
            data = data + sd * rng.standard_normal((n, 2))
    elif name == "checkerboard":
        black = [(i, j) for i in range(4) for j in range(4) if (i + j) % 2 == 0]
        cells = np.asarray(black, dtype=np.float64)
        idx = rng.integers(len(cells), size=n)
        offsets = rng.uniform(0.0, 1.0, size=(n, 2))
        data = -2.0 + cells[idx] + offsets
    elif name == "two_moons":
        sd = 0.05 if noise_sd is None else noise_sd
        t = rng.uniform(0.0, math.pi, size=n)
        moon = rng.integers(2, size=n)
        x = np.where(moon == 0, np.cos(t), 1.0 - np.cos(t))
        y = np.where(moon == 0, np.sin(t), 1.0 - np.sin(t) - 0.5)
        data = np.stack([x, y], axis=1)
        if sd > 0.0:
            data = data + sd * rng.standard_normal((n, 2))
    else:
        raise ValueError(f"unknown toy dataset {name!r}")
    return PointCloud(data, seed, DATA_P)


def sample_prior(m: int, n: int, seed: int) -> PointCloud:
    """n i.i.d. standard normal vectors in R^m."""
    if m < 1:
        raise ValueError("latent dimension must be positive")
    if n < 1:
        raise ValueError("need at least one sample")
    rng = stream_rng(seed, "prior")
    return PointCloud(rng.standard_normal((n, m)), seed, PRIOR)


def save_cloud(cloud: PointCloud, path) -> None:
    """Write a cloud as CSV: one header line, then one row per point.

    Values use 17 significant digits so float64 round-trips exactly;
    formatting is locale independent.
    """
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"dim={cloud.dim},n={cloud.n},seed={cloud.seed},label={cloud.label}\n")
        for row in cloud.data:
            fh.write(",".join(format(v, ".17g") for v in row) + "\n")


def load_cloud(path) -> PointCloud:
    """Read a cloud written by :func:`save_cloud`."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        meta = dict(item.split("=", 1) for item in header.split(","))
        rows = [
            [float(v) for v in line.strip().split(",")]
            for line in fh
            if line.strip()
        ]
    data = np.asarray(rows, dtype=np.float64)
    expected = (int(meta["n"]), int(meta["dim"]))
    if data.shape != expected:
        raise ValueError(f"cloud shape {data.shape} does not match header {expected}")
    return PointCloud(data, int(meta["seed"]), meta["label"])
