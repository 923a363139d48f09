"""Scalar diagnostics for drift/score alignment and distribution distances.

Alignment metrics compare drift rows Delta_i against score-mismatch rows
Delta_s_i under a scaling C: the theory-side scale ``C_theory`` built
from kernel-weighted mean radii, and the oracle least-squares scale
``C*``.  Distribution distances are the sliced Wasserstein distance
(per-projection 1-D Wasserstein-2 via sorted matching, averaged over
seeded random directions) and the biased V-statistic RBF-MMD with a
median-heuristic bandwidth by default.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import pdist

from driftfield.fields import FieldEstimate, batch_kernel_score, as_points
from driftfield.kernels import RadialKernel
from driftfield.sampling import stream_rng

COSINE_DEGENERATE_TOL = 1e-12


class DegenerateRowsError(ValueError):
    """Every row was degenerate for the requested statistic."""


def c_theory(alpha_bar_p: float, alpha_bar_q: float, tau: float) -> float:
    """Theory-predicted scale ``C = rho * tau`` with rho the average of
    the two kernel-weighted mean radii."""
    if not (alpha_bar_p > 0.0 and alpha_bar_q > 0.0 and tau > 0.0):
        raise ValueError("alpha_bar_p, alpha_bar_q, and tau must be positive")
    return 0.5 * (alpha_bar_p + alpha_bar_q) * tau


def oracle_scale(drift_rows, score_rows) -> float:
    """Least-squares scale ``C* = sum <Delta, Delta_s> / sum ||Delta_s||^2``.

    Minimizes the mean squared residual ``||Delta - C Delta_s||^2`` over
    scalar C.
    """
    d = np.asarray(drift_rows, dtype=np.float64)
    s = np.asarray(score_rows, dtype=np.float64)
    if d.shape != s.shape:
        raise ValueError("row sets must have matching shapes")
    denom = float(np.sum(s * s))
    if denom <= 0.0:
        raise DegenerateRowsError("score rows are all zero")
    return float(np.sum(d * s)) / denom


def alignment_errors(drift_rows, score_rows, C: float):
    """(absolute, relative) alignment errors of Delta against C Delta_s."""
    d = np.asarray(drift_rows, dtype=np.float64)
    s = np.asarray(score_rows, dtype=np.float64)
    if d.shape != s.shape:
        raise ValueError("row sets must have matching shapes")
    abs_err = float(np.mean(np.sum((d - C * s) ** 2, axis=1)))
    energy = float(np.mean(np.sum(d * d, axis=1)))
    if energy <= 0.0:
        raise DegenerateRowsError("drift energy is zero, relative error undefined")
    return abs_err, abs_err / energy


def cosine_stats(drift_rows, score_rows):
    """(mean cosine, 1 - mean cosine) of per-row angles.

    Rows with a vanishing norm product (below 1e-12) carry no direction
    and are skipped.
    """
    d = np.asarray(drift_rows, dtype=np.float64)
    s = np.asarray(score_rows, dtype=np.float64)
    if d.shape != s.shape:
        raise ValueError("row sets must have matching shapes")
    norm_prod = np.linalg.norm(d, axis=1) * np.linalg.norm(s, axis=1)
    ok = norm_prod >= COSINE_DEGENERATE_TOL
    if not ok.any():
        raise DegenerateRowsError("all rows degenerate for cosine statistics")
    cosines = np.sum(d[ok] * s[ok], axis=1) / norm_prod[ok]
    mean_cos = float(np.mean(cosines))
    return mean_cos, 1.0 - mean_cos


def loglog_slope(xs, ys):
    """(slope, intercept) of the OLS fit of log ys on log xs."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise ValueError("xs and ys must be 1-D with matching length")
    if np.any(xs <= 0.0) or np.any(ys <= 0.0):
        raise ValueError("log-log fit requires positive values")
    if len(np.unique(xs)) < 2:
        raise ValueError("need at least two distinct x values")
    slope, intercept = np.polyfit(np.log(xs), np.log(ys), 1)
    return float(slope), float(intercept)


def sliced_wasserstein(A, B, n_proj: int = 200, seed: int = 0) -> float:
    """Sliced Wasserstein-2 distance via seeded random projections.

    For each of ``n_proj`` uniform unit directions, both clouds are
    projected to 1-D and sorted; the per-projection distance is the L2
    norm of the order-statistic differences, and the result averages the
    per-projection distances (not their squares).
    """
    a = as_points(A)
    b = as_points(B)
    if a.shape[1] != b.shape[1]:
        raise ValueError("clouds must share a dimension")
    if a.shape[0] != b.shape[0]:
        raise ValueError("sliced Wasserstein requires equal sample counts")
    rng = stream_rng(seed, "metrics/swd")
    dirs = rng.standard_normal((n_proj, a.shape[1]))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    pa = np.sort(a @ dirs.T, axis=0)
    pb = np.sort(b @ dirs.T, axis=0)
    per_proj = np.sqrt(np.mean((pa - pb) ** 2, axis=0))
    return float(np.mean(per_proj))


def median_pairwise_distance(A, B) -> float:
    """Median pairwise distance of the pooled cloud A u B."""
    pooled = np.concatenate([as_points(A), as_points(B)], axis=0)
    return float(np.median(pdist(pooled)))


def _mean_rbf(X, Y, sigma, block=2048):
    total = 0.0
    inv = 1.0 / (2.0 * sigma * sigma)
    for i in range(0, X.shape[0], block):
        xi = X[i : i + block]
        xs = np.sum(xi * xi, axis=1)[:, None]
        for j in range(0, Y.shape[0], block):
            yj = Y[j : j + block]
            sq = xi @ yj.T
            sq *= -2.0
            sq += xs
            sq += np.sum(yj * yj, axis=1)[None, :]
            np.maximum(sq, 0.0, out=sq)
            sq *= -inv
            np.exp(sq, out=sq)
            total += float(np.sum(sq))
    return total / (X.shape[0] * Y.shape[0])


def rbf_mmd(A, B, bandwidth: float | None = None) -> float:
    """Biased V-statistic RBF maximum mean discrepancy.

    ``MMD^2 = mean k(A,A) + mean k(B,B) - 2 mean k(A,B)`` with the
    Gaussian kernel ``exp(-d^2 / (2 sigma^2))``; returns
    ``sqrt(max(MMD^2, 0))``.  When no bandwidth is given, sigma is the
    median pairwise distance of the pooled samples (falling back to 1.0
    if that median is zero).
    """
    a = as_points(A)
    b = as_points(B)
    if a.shape[1] != b.shape[1]:
        raise ValueError("clouds must share a dimension")
    sigma = bandwidth if bandwidth is not None else median_pairwise_distance(a, b)
    if not sigma > 0.0:
        sigma = 1.0
    mmd_sq = (
        _mean_rbf(a, a, sigma) + _mean_rbf(b, b, sigma) - 2.0 * _mean_rbf(a, b, sigma)
    )
    return float(np.sqrt(max(mmd_sq, 0.0)))


def reverse_fisher_estimate(kernel: RadialKernel, model_samples, refs_p, refs_model) -> float:
    """Empirical reverse-Fisher divergence estimate.

    Mean over model samples x of ``||s_p(x) - s_model(x)||^2`` where both
    scores are kernel-induced Monte Carlo estimates.  Samples coinciding
    with model references are handled leave-one-out: the coincident
    reference is dropped from the model-side score regardless of kernel
    family.
    """
    x = as_points(model_samples)
    s_p = batch_kernel_score(kernel, x, refs_p)
    s_m = batch_kernel_score(kernel, x, refs_model, exclude_coincident=True)
    return float(np.mean(np.sum((s_p - s_m) ** 2, axis=1)))


REPORT_COLUMNS = (
    "D",
    "abs_err",
    "rel_err",
    "mean_cos",
    "one_minus_cos",
    "alpha_bar_p",
    "alpha_bar_q",
    "alpha_ratio",
    "delta_gap_energy",
    "C_theory",
    "C_star",
    "C_ratio",
    "n_queries",
    "n_refs",
    "tau",
)


@dataclass
class AlignmentReport:
    """Scalar alignment diagnostics for one dimension D."""

    D: int
    abs_err: float
    rel_err: float
    mean_cos: float
    one_minus_cos: float
    alpha_bar_p: float
    alpha_bar_q: float
    alpha_ratio: float
    delta_gap_energy: float
    C_theory: float
    C_star: float
    C_ratio: float
    n_queries: int
    n_refs: int
    tau: float

    def row(self) -> list[float]:
        return [getattr(self, col) for col in REPORT_COLUMNS]


def alignment_report(est: FieldEstimate, D: int, n_refs: int, tau: float) -> AlignmentReport:
    """Assemble the per-dimension report from evaluated field rows.

    Errors use the theory scale C_theory; the oracle scale C* comes from
    the least-squares fit on the same rows.
    """
    alpha_bar_p = float(np.mean(est.alpha_p))
    alpha_bar_q = float(np.mean(est.alpha_q))
    c_th = c_theory(alpha_bar_p, alpha_bar_q, tau)
    c_st = oracle_scale(est.drift, est.score_mismatch)
    abs_err, rel_err = alignment_errors(est.drift, est.score_mismatch, c_th)
    mean_cos, one_minus = cosine_stats(est.drift, est.score_mismatch)
    return AlignmentReport(
        D=D,
        abs_err=abs_err,
        rel_err=rel_err,
        mean_cos=mean_cos,
        one_minus_cos=one_minus,
        alpha_bar_p=alpha_bar_p,
        alpha_bar_q=alpha_bar_q,
        alpha_ratio=alpha_bar_p / alpha_bar_q,
        delta_gap_energy=float(np.mean(np.sum(est.delta_gap**2, axis=1))),
        C_theory=c_th,
        C_star=c_st,
        C_ratio=c_st / c_th,
        n_queries=est.n_queries,
        n_refs=n_refs,
        tau=tau,
    )
