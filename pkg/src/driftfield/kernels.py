"""Radial kernels, bandwidth resolution, and Laplace moment constants.

A radial kernel is ``k_tau(x, y) = exp(-rho(||x - y|| / tau))`` for a
monotone differentiable profile ``rho``.  Two profiles are built in:

* Gaussian: ``rho(u) = u^2 / 2``, so ``k = exp(-||x-y||^2 / (2 tau^2))``
* Laplace:  ``rho(u) = u``,       so ``k = exp(-||x-y|| / tau)``

Kernels are unnormalized; every downstream quantity (softmax weights,
mean shift, kernel score) is invariant under a multiplicative rescaling
of the kernel, so no normalizing constants appear anywhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import integrate

GAUSSIAN = "gaussian"
LAPLACE = "laplace"
CUSTOM = "custom"

_FAMILIES = (GAUSSIAN, LAPLACE, CUSTOM)


class DegenerateBandwidthError(ValueError):
    """Adaptive bandwidth resolved to a nonpositive value."""


@dataclass(frozen=True)
class RadialKernel:
    """Radial kernel with bandwidth ``tau``.

    Custom profiles must supply both ``rho`` and ``rho_prime``; the
    profile derivative is never obtained by numerical differentiation.
    """

    family: str
    tau: float
    rho: Optional[Callable[[np.ndarray], np.ndarray]] = None
    rho_prime: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}")
        if not (self.tau > 0.0):
            raise ValueError(f"bandwidth must be positive, got {self.tau}")
        if self.family == CUSTOM and (self.rho is None or self.rho_prime is None):
            raise ValueError("custom kernels require rho and rho_prime")

    @classmethod
    def gaussian(cls, tau: float) -> "RadialKernel":
        return cls(GAUSSIAN, float(tau))

    @classmethod
    def laplace(cls, tau: float) -> "RadialKernel":
        return cls(LAPLACE, float(tau))

    @classmethod
    def custom(cls, tau: float, rho, rho_prime) -> "RadialKernel":
        return cls(CUSTOM, float(tau), rho, rho_prime)

    @property
    def singular_at_zero(self) -> bool:
        """True when the log-gradient direction is undefined at r = 0.

        The Gaussian profile has b(r) = 1 everywhere; Laplace and custom
        profiles are treated as singular, matching the convention that
        callers never evaluate ``b_weight`` at r = 0 for them.
        """
        return self.family != GAUSSIAN

    def log_value(self, r):
        """Elementwise log kernel value ``-rho(r / tau)`` for distances r."""
        u = np.asarray(r, dtype=np.float64) / self.tau
        if self.family == GAUSSIAN:
            return -0.5 * u * u
        if self.family == LAPLACE:
            return -u
        return -np.asarray(self.rho(u), dtype=np.float64)

    def b_values(self, r):
        """Elementwise ``b_tau(r) = rho'(r/tau) / (r/tau)``; r must be > 0
        for singular profiles."""
        if self.family == GAUSSIAN:
            return np.ones_like(np.asarray(r, dtype=np.float64))
        if self.family == LAPLACE:
            return self.tau / np.asarray(r, dtype=np.float64)
        u = np.asarray(r, dtype=np.float64) / self.tau
        return np.asarray(self.rho_prime(u), dtype=np.float64) / u


def _check_pair(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"dimension mismatch: {x.shape} vs {y.shape}")
    return x, y


def kernel_eval(kernel: RadialKernel, x, y) -> float:
    """Kernel weight ``exp(-rho(||x - y|| / tau))`` in (0, 1]."""
    x, y = _check_pair(x, y)
    r = float(np.linalg.norm(x - y))
    return float(np.exp(kernel.log_value(r)))


def b_weight(kernel: RadialKernel, r: float) -> float:
    """Radius-dependent reweighting ``b_tau(r) = rho'(r/tau)/(r/tau)``.

    Gaussian: identically 1.  Laplace: ``tau / r``.  Raises for r = 0
    under a singular profile; callers are expected to treat coincident
    points separately (see the fields module).
    """
    r = float(r)
    if r < 0:
        raise ValueError("radius must be nonnegative")
    if kernel.family == GAUSSIAN:
        return 1.0
    if r == 0.0:
        raise ValueError("b_weight undefined at r = 0 for singular profiles")
    return float(kernel.b_values(r))


def kernel_log_grad(kernel: RadialKernel, x, y) -> np.ndarray:
    """Gradient of ``log k_tau(x, y)`` in x: ``(1/tau^2) b_tau(r) (y - x)``.

    For the Laplace kernel this is ``(y - x) / (tau * r)``, a unit vector
    scaled by ``1/tau``.  Raises when x == y under a singular profile.
    """
    x, y = _check_pair(x, y)
    diff = y - x
    r = float(np.linalg.norm(diff))
    if kernel.family == GAUSSIAN:
        return diff / kernel.tau**2
    if r == 0.0:
        raise ValueError("log-gradient direction undefined at x == y")
    return (b_weight(kernel, r) / kernel.tau**2) * diff


@dataclass(frozen=True)
class BandwidthPolicy:
    """Bandwidth resolution rule.

    ``fixed``:    tau = tau_bar * D^a  (dimension-aware scaling)
    ``adaptive``: tau = tau_bar * mean L2 norm of the query batch
    """

    mode: str
    tau_bar: float
    a: float = 0.0

    def __post_init__(self):
        if self.mode not in ("fixed", "adaptive"):
            raise ValueError(f"unknown bandwidth mode {self.mode!r}")
        if not (self.tau_bar > 0.0):
            raise ValueError("tau_bar must be positive")
        if self.a < 0.0:
            raise ValueError("exponent a must be nonnegative")

    @classmethod
    def fixed(cls, tau_bar: float, a: float = 0.0) -> "BandwidthPolicy":
        return cls("fixed", float(tau_bar), float(a))

    @classmethod
    def adaptive(cls, tau_bar: float) -> "BandwidthPolicy":
        return cls("adaptive", float(tau_bar))


def resolve_bandwidth(policy: BandwidthPolicy, D: int, query_batch=None) -> float:
    """Resolve the policy to a concrete tau for dimension D.

    Adaptive policies require a nonempty query batch (a PointCloud or an
    (n, D) array) and fail on an all-zero batch.
    """
    if D < 1:
        raise ValueError("dimension must be positive")
    if policy.mode == "fixed":
        return policy.tau_bar * float(D) ** policy.a
    data = getattr(query_batch, "data", query_batch)
    if data is None:
        raise ValueError("adaptive bandwidth requires a query batch")
    data = np.asarray(data, dtype=np.float64)
    if data.size == 0:
        raise ValueError("adaptive bandwidth requires a nonempty query batch")
    tau = policy.tau_bar * float(np.mean(np.linalg.norm(data, axis=1)))
    if not tau > 0.0:
        raise DegenerateBandwidthError("all-zero query batch gives tau = 0")
    return tau


def _log_gamma_integral(power: int, upper: float) -> float:
    """log of ``int_0^upper r^power exp(-r) dr`` via adaptive quadrature.

    The integrand is evaluated in the log domain and normalized by its
    peak value so that the quadrature stays in range for large powers.
    """
    if power == 0:
        log_peak = 0.0
        peak = 0.0
    else:
        peak = float(power)
        log_peak = power * math.log(peak) - peak

    def f(r):
        if r <= 0.0:
            return 0.0 if power > 0 else math.exp(-log_peak)
        return math.exp(power * math.log(r) - r - log_peak)

    points = [peak] if 0.0 < peak < upper else None
    value, _ = integrate.quad(
        f, 0.0, upper, epsabs=1e-10, epsrel=1e-12, limit=400, points=points
    )
    return log_peak + math.log(value)


def laplace_moment_ratio(D: int) -> float:
    """Moment ratio ``c_D = M_2 / M_0`` of the D-dimensional Laplace weight.

    ``M_0 = int exp(-||z||) dz`` and ``M_2 = int z_1^2 exp(-||z||) dz``
    over R^D.  Writing both in radial form, the angular factors cancel
    and ``c_D = (1/D) * I(D+1) / I(D-1)`` with ``I(k) = int_0^inf r^k
    exp(-r) dr``, evaluated by 1-D adaptive quadrature on ``[0, 50+10D]``
    (the tail beyond is below machine relevance for exp(-r)).
    """
    if D < 1:
        raise ValueError("dimension must be positive")
    upper = 50.0 + 10.0 * D
    log_hi = _log_gamma_integral(D + 1, upper)
    log_lo = _log_gamma_integral(D - 1, upper)
    return math.exp(log_hi - log_lo) / D
