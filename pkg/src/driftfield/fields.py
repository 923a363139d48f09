"""Monte Carlo estimators of mean-shift and kernel-score vector fields.

Given a query point x and a reference set {y_j}, the normalized kernel
weights are ``w_j = k_tau(x, y_j) / sum_l k_tau(x, y_l)``.  The module
estimates

* mean shift        ``V(x)  = sum_j w_j (y_j - x)``
* kernel score      ``s(x)  = sum_j w_j grad_x log k_tau(x, y_j)``
* drift field       ``Delta = eta (V_p - V_q)``
* score mismatch    ``Delta_s = s_p - s_q``

together with the radial decomposition ``V = alpha tau s + delta`` where
``alpha = sum_j w_j ||y_j - x||`` is the kernel-weighted mean radius and
``delta`` is the scalar-vector covariance between radius and direction.
For Gaussian kernels b(r) = 1, so s = V / tau^2 exactly, alpha is tau by
convention, and delta is the exact zero vector.

Coincident query/reference pairs under kernels with a singular profile
(Laplace, custom) are excluded from the per-query sums with the weights
renormalized over the survivors, and the query is flagged.  The same
exclusion machinery implements the leave-one-out convention used when a
batch serves as its own reference set.

All weight computations run in the log domain with a max shift; all
arithmetic is 64-bit.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from driftfield.kernels import GAUSSIAN, RadialKernel
from driftfield.sampling import PointCloud

COINCIDENCE_TOL = 1e-12
DEGENERATE_SCORE_TOL = 1e-10

FLAG_COINCIDENT_P = 1
FLAG_COINCIDENT_Q = 2
FLAG_DEGENERATE_SCORE_P = 4
FLAG_DEGENERATE_SCORE_Q = 8


class DegenerateQueryError(ValueError):
    """Every reference point was excluded for some query."""


def as_points(obj) -> np.ndarray:
    """Accept a PointCloud or an (n, D) array and return float64 points."""
    data = obj.data if isinstance(obj, PointCloud) else np.asarray(obj)
    data = np.asarray(data, dtype=np.float64)
    if data.ndim == 1:
        data = data[None, :]
    if data.ndim != 2 or data.shape[0] < 1:
        raise ValueError("reference set must be a nonempty N x D matrix")
    return data


def _query_vector(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("query must be a single vector")
    return x


def _softmax_from_log(logw: np.ndarray, keep: np.ndarray) -> np.ndarray:
    """Row-normalized weights from log kernel values, max-shifted."""
    lw = np.where(keep, logw, -np.inf)
    shift = np.max(lw, axis=-1, keepdims=True)
    if not np.all(np.isfinite(shift)):
        raise DegenerateQueryError("a query has no usable reference points")
    w = np.exp(lw - shift)
    return w / np.sum(w, axis=-1, keepdims=True)


def softmax_weights(kernel: RadialKernel, x, refs) -> np.ndarray:
    """Normalized attention weights of x over the reference set."""
    x = _query_vector(x)
    Y = as_points(refs)
    if Y.shape[1] != x.shape[0]:
        raise ValueError("query/reference dimension mismatch")
    r = np.linalg.norm(Y - x, axis=1)
    keep = np.ones(len(r), dtype=bool)
    return _softmax_from_log(kernel.log_value(r), keep)


def mean_shift(kernel: RadialKernel, x, refs) -> np.ndarray:
    """Kernel-weighted barycenter displacement sum_j w_j (y_j - x)."""
    x = _query_vector(x)
    Y = as_points(refs)
    w = softmax_weights(kernel, x, refs)
    return w @ (Y - x)


def _score_survivors(kernel, x, Y):
    """Distances and survivor mask for a score computation at x."""
    r = np.linalg.norm(Y - x, axis=1)
    if kernel.singular_at_zero:
        keep = r >= COINCIDENCE_TOL
        if not keep.any():
            raise DegenerateQueryError("all reference points coincide with the query")
    else:
        keep = np.ones(len(r), dtype=bool)
    return r, keep


def kernel_score(kernel: RadialKernel, x, refs) -> np.ndarray:
    """Gradient of the log kernel-smoothed mass profile at x.

    Computed as ``sum_j w_j (1/tau^2) b(r_j) (y_j - x)`` over surviving
    references.  For Laplace this is the 1/tau-scaled weighted average
    of unit directions; for Gaussian it equals mean_shift / tau^2.
    """
    x = _query_vector(x)
    Y = as_points(refs)
    if Y.shape[1] != x.shape[0]:
        raise ValueError("query/reference dimension mismatch")
    r, keep = _score_survivors(kernel, x, Y)
    w = _softmax_from_log(kernel.log_value(r), keep)
    rs = np.where(keep, r, 1.0)
    grads = (kernel.b_values(rs) / kernel.tau**2)[:, None] * (Y - x)
    return (w[keep, None] * grads[keep]).sum(axis=0)


def drift_field(kernel: RadialKernel, x, refs_p, refs_q, eta: float = 1.0) -> np.ndarray:
    """Drift ``eta (V_p(x) - V_q(x))``; zero at equilibrium refs_p == refs_q."""
    return eta * (mean_shift(kernel, x, refs_p) - mean_shift(kernel, x, refs_q))


def score_mismatch_field(kernel: RadialKernel, x, refs_p, refs_q) -> np.ndarray:
    """Score mismatch ``s_p(x) - s_q(x)``."""
    return kernel_score(kernel, x, refs_p) - kernel_score(kernel, x, refs_q)


def precond_diagnostics(kernel: RadialKernel, x, refs):
    """Per-query decomposition diagnostics (alpha, delta).

    alpha is the kernel-weighted mean radius sum_j w_j r_j; delta is the
    covariance residual so that ``V = alpha * tau * s + delta``.  For the
    Laplace kernel delta is computed in its covariance form
    ``sum_j w_j r_j u_j - (sum_j w_j r_j)(sum_j w_j u_j)`` with u_j the
    unit directions.  The Gaussian branch returns (tau, 0) exactly.
    """
    x = _query_vector(x)
    Y = as_points(refs)
    if kernel.family == GAUSSIAN:
        return kernel.tau, np.zeros_like(x)
    r, keep = _score_survivors(kernel, x, Y)
    w = _softmax_from_log(kernel.log_value(r), keep)[keep]
    rk = r[keep]
    u = (Y[keep] - x) / rk[:, None]
    alpha = float(w @ rk)
    mean_u = w @ u
    if kernel.family == "laplace":
        mean_ru = (w * rk) @ u
        delta = mean_ru - alpha * mean_u
    else:
        # custom profiles: delta is the residual of the stored-alpha
        # decomposition (covariance form only collapses for Laplace)
        v = (w[:, None] * (Y[keep] - x)).sum(axis=0)
        s = ((w * kernel.b_values(rk) / kernel.tau**2)[:, None] * (Y[keep] - x)).sum(
            axis=0
        )
        delta = v - alpha * kernel.tau * s
    return alpha, delta


def offscore_residual(delta, s) -> np.ndarray:
    """Component of delta orthogonal to the score direction.

    When ||s|| is below the degenerate-direction tolerance the residual
    is returned unprojected; batch callers flag such rows.
    """
    delta = np.asarray(delta, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    norm = float(np.linalg.norm(s))
    if norm <= DEGENERATE_SCORE_TOL:
        return delta.copy()
    return delta - (float(delta @ s) / norm**2) * s


def coulomb_force_field(kernel: RadialKernel, x, refs_p, refs_q) -> np.ndarray:
    """Unnormalized kernel force field E_p[grad_x k] - E_q[grad_x k].

    Uses ``grad_x k = k * grad_x log k`` averaged over each reference
    set without softmax normalization, so rescaling the kernel rescales
    the force (in contrast to the drift field, which is invariant).
    """
    x = _query_vector(x)

    def term(refs):
        Y = as_points(refs)
        if Y.shape[1] != x.shape[0]:
            raise ValueError("query/reference dimension mismatch")
        r, keep = _score_survivors(kernel, x, Y)
        rs = np.where(keep, r, 1.0)
        k = np.exp(kernel.log_value(r))
        grads = (kernel.b_values(rs) / kernel.tau**2)[:, None] * (Y - x)
        return (k[keep, None] * grads[keep]).sum(axis=0) / keep.sum()

    return term(refs_p) - term(refs_q)


@dataclass
class FieldEstimate:
    """Per-query field rows for a batch of queries.

    Vector blocks are (n, D); alpha and flags are (n,).  ``flags`` is a
    bitmask of FLAG_* values recording coincidence exclusions and
    degenerate score directions.
    """

    v_p: np.ndarray
    v_q: np.ndarray
    s_p: np.ndarray
    s_q: np.ndarray
    drift: np.ndarray
    score_mismatch: np.ndarray
    alpha_p: np.ndarray
    alpha_q: np.ndarray
    delta_p: np.ndarray
    delta_q: np.ndarray
    delta_gap: np.ndarray
    delta_perp_p: np.ndarray
    delta_perp_q: np.ndarray
    eta: float
    flags: np.ndarray

    @property
    def n_queries(self) -> int:
        return self.v_p.shape[0]

    @property
    def dim(self) -> int:
        return self.v_p.shape[1]


class _SideFields:
    __slots__ = ("v", "s", "alpha", "delta", "excluded")

    def __init__(self, v, s, alpha, delta, excluded):
        self.v = v
        self.s = s
        self.alpha = alpha
        self.delta = delta
        self.excluded = excluded


def _log_kernel_inplace(kernel, dist, out):
    """Write ``-rho(dist / tau)`` into ``out`` (which may alias dist)."""
    if kernel.family == GAUSSIAN:
        np.multiply(dist, 1.0 / kernel.tau, out=out)
        np.multiply(out, out, out=out)
        out *= -0.5
    elif kernel.family == "laplace":
        np.multiply(dist, -1.0 / kernel.tau, out=out)
    else:
        np.copyto(out, -np.asarray(kernel.rho(dist / kernel.tau), dtype=np.float64))
    return out


def _batch_weights(kernel, X, R, exclude_diagonal=False, exclude_coincident=None, keep_dist=True):
    """Shared weight core: (weights, distances, per-query excluded counts).

    ``exclude_diagonal`` drops index-matched pairs (leave-one-out when a
    batch is its own reference set).  ``exclude_coincident`` drops pairs
    closer than COINCIDENCE_TOL; default is the kernel's singularity.
    Exclusions apply to every kernel-weighted sum of the affected query
    so the decomposition identity holds row by row on the survivors.

    Excluded entries carry exactly zero weight and their distance slots
    are overwritten with a finite sentinel, so downstream elementwise
    products and divisions stay clean.  When ``keep_dist`` is false the
    distance buffer is reused for the weights and None is returned.
    """
    if exclude_coincident is None:
        exclude_coincident = kernel.singular_at_zero
    dist = cdist(X, R)
    excluded = np.zeros(X.shape[0], dtype=np.int64)
    if exclude_diagonal:
        if X.shape[0] != R.shape[0]:
            raise ValueError("diagonal exclusion requires matching batch sizes")
        np.fill_diagonal(dist, 1.0)
    coincident = None
    if exclude_coincident and float(dist.min()) < COINCIDENCE_TOL:
        coincident = dist < COINCIDENCE_TOL
        excluded = coincident.sum(axis=1).astype(np.int64)
        dist[coincident] = 1.0
    lw = np.empty_like(dist) if keep_dist else dist
    _log_kernel_inplace(kernel, dist, lw)
    if exclude_diagonal:
        np.fill_diagonal(lw, -np.inf)
    if coincident is not None:
        lw[coincident] = -np.inf
    shift = np.max(lw, axis=1, keepdims=True)
    if not np.all(np.isfinite(shift)):
        raise DegenerateQueryError("a query has no usable reference points")
    np.subtract(lw, shift, out=lw)
    np.exp(lw, out=lw)
    norm = np.sum(lw, axis=1, keepdims=True)
    np.divide(lw, norm, out=lw)
    return lw, (dist if keep_dist else None), excluded


def _side_fields(kernel, X, R, exclude_diagonal=False, exclude_coincident=None):
    """Vectorized per-side fields for queries X against references R."""
    tau = kernel.tau
    if kernel.family == GAUSSIAN:
        w, _, excluded = _batch_weights(
            kernel, X, R, exclude_diagonal, exclude_coincident, keep_dist=False
        )
        v = w @ R - X
        s = v / tau**2
        alpha = np.full(X.shape[0], tau)
        delta = np.zeros_like(v)
        return _SideFields(v, s, alpha, delta, excluded)
    w, dist, excluded = _batch_weights(
        kernel, X, R, exclude_diagonal, exclude_coincident, keep_dist=True
    )
    v = w @ R - X
    alpha = np.einsum("ij,ij->i", w, dist)
    if kernel.family == "laplace":
        wu = w / dist
        su = wu @ R - np.sum(wu, axis=1, keepdims=True) * X
        s = su / tau
        delta = v - alpha[:, None] * su
    else:
        wb = w * kernel.b_values(dist)
        s = (wb @ R - np.sum(wb, axis=1, keepdims=True) * X) / tau**2
        delta = v - alpha[:, None] * (tau * s)
    return _SideFields(v, s, alpha, delta, excluded)


# reusable (n, m) scratch buffers for the training hot path; keyed by
# shape and always fully overwritten before use
_scratch = threading.local()


def _scratch_buffer(shape):
    cache = getattr(_scratch, "buffers", None)
    if cache is None:
        cache = _scratch.buffers = {}
    buf = cache.get(shape)
    if buf is None or buf.shape != shape:
        buf = cache[shape] = np.empty(shape)
    return buf


def batch_mean_shift(
    kernel, queries, refs, exclude_diagonal=False, exclude_coincident=None
) -> np.ndarray:
    """Mean-shift rows for a query batch; optional leave-one-out.

    Applies the same coincidence convention as :func:`evaluate_fields`
    (singular kernels drop coincident pairs from the per-query sums).
    The pairwise workspace is a reused thread-local buffer and the
    normalization is folded into the (n, D) barycenter, so one call
    allocates only small arrays.
    """
    if exclude_coincident is None:
        exclude_coincident = kernel.singular_at_zero
    X = as_points(queries)
    R = as_points(refs)
    if X.shape[1] != R.shape[1]:
        raise ValueError("query/reference dimension mismatch")
    lw = _scratch_buffer((X.shape[0], R.shape[0]))
    cdist(X, R, out=lw)
    if exclude_diagonal:
        if X.shape[0] != R.shape[0]:
            raise ValueError("diagonal exclusion requires matching batch sizes")
        np.fill_diagonal(lw, np.inf)
    if exclude_coincident and float(lw.min()) < COINCIDENCE_TOL:
        lw[lw < COINCIDENCE_TOL] = np.inf
    _log_kernel_inplace(kernel, lw, lw)
    shift = np.max(lw, axis=1, keepdims=True)
    if not np.all(np.isfinite(shift)):
        raise DegenerateQueryError("a query has no usable reference points")
    np.subtract(lw, shift, out=lw)
    np.exp(lw, out=lw)
    num = lw @ R
    num /= np.sum(lw, axis=1)[:, None]
    num -= X
    return num


def batch_softmax_weights(
    kernel, queries, refs, exclude_diagonal=False, exclude_coincident=None
) -> np.ndarray:
    """Normalized weight rows for a query batch (excluded pairs get 0)."""
    w, _, _ = _batch_weights(
        kernel,
        as_points(queries),
        as_points(refs),
        exclude_diagonal=exclude_diagonal,
        exclude_coincident=exclude_coincident,
    )
    return w


def batch_kernel_score(
    kernel, queries, refs, exclude_diagonal=False, exclude_coincident=None
) -> np.ndarray:
    """Kernel-score rows for a query batch."""
    side = _side_fields(
        kernel,
        as_points(queries),
        as_points(refs),
        exclude_diagonal=exclude_diagonal,
        exclude_coincident=exclude_coincident,
    )
    return side.s


def _project_off_score(delta, s):
    """Rowwise off-score residuals plus degenerate-direction mask."""
    norms_sq = np.sum(s * s, axis=1)
    degenerate = np.sqrt(norms_sq) <= DEGENERATE_SCORE_TOL
    coef = np.zeros(len(norms_sq))
    ok = ~degenerate
    coef[ok] = np.sum(delta[ok] * s[ok], axis=1) / norms_sq[ok]
    return delta - coef[:, None] * s, degenerate


def evaluate_fields(
    kernel: RadialKernel,
    queries,
    refs_p,
    refs_q,
    eta: float = 1.0,
    exclude_self_q: bool = False,
) -> FieldEstimate:
    """Batched field evaluation over a query cloud.

    ``exclude_self_q`` applies the leave-one-out convention on the q
    side when the query batch serves as its own model reference set.
    """
    X = as_points(queries)
    P = as_points(refs_p)
    Q = as_points(refs_q)
    if not (X.shape[1] == P.shape[1] == Q.shape[1]):
        raise ValueError("queries and reference sets must share a dimension")
    side_p = _side_fields(kernel, X, P)
    side_q = _side_fields(kernel, X, Q, exclude_diagonal=exclude_self_q)
    drift = eta * (side_p.v - side_q.v)
    mismatch = side_p.s - side_q.s
    perp_p, degen_p = _project_off_score(side_p.delta, side_p.s)
    perp_q, degen_q = _project_off_score(side_q.delta, side_q.s)
    flags = (
        FLAG_COINCIDENT_P * (side_p.excluded > 0)
        + FLAG_COINCIDENT_Q * (side_q.excluded > 0)
        + FLAG_DEGENERATE_SCORE_P * degen_p
        + FLAG_DEGENERATE_SCORE_Q * degen_q
    ).astype(np.int64)
    return FieldEstimate(
        v_p=side_p.v,
        v_q=side_q.v,
        s_p=side_p.s,
        s_q=side_q.s,
        drift=drift,
        score_mismatch=mismatch,
        alpha_p=side_p.alpha,
        alpha_q=side_q.alpha,
        delta_p=side_p.delta,
        delta_q=side_q.delta,
        delta_gap=side_p.delta - side_q.delta,
        delta_perp_p=perp_p,
        delta_perp_q=perp_q,
        eta=eta,
        flags=flags,
    )


FIELD_CSV_BLOCKS = ("v_p", "v_q", "s_p", "s_q", "drift", "score_mismatch")


def field_csv_header(dim: int) -> list[str]:
    cols = ["query_index"]
    for block in FIELD_CSV_BLOCKS:
        cols.extend(f"{block}_{d}" for d in range(dim))
    cols += ["alpha_p", "alpha_q", "delta_gap_norm2", "flags"]
    return cols


def export_fields_csv(est: FieldEstimate, path, comments=()) -> None:
    """Write per-query field rows in the fixed column order."""
    gap_norm2 = np.sum(est.delta_gap**2, axis=1)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in comments:
            fh.write(f"# {line}\n")
        fh.write(",".join(field_csv_header(est.dim)) + "\n")
        for i in range(est.n_queries):
            vals = [str(i)]
            for block in FIELD_CSV_BLOCKS:
                vals.extend(format(v, ".17g") for v in getattr(est, block)[i])
            vals.append(format(est.alpha_p[i], ".17g"))
            vals.append(format(est.alpha_q[i], ".17g"))
            vals.append(format(gap_norm2[i], ".17g"))
            vals.append(str(int(est.flags[i])))
            fh.write(",".join(vals) + "\n")
