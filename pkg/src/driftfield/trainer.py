"""From-scratch MLP one-step generator and the drifting training loop.

The generator is four affine layers (latent -> h -> h -> h -> out) with
tanh on the hidden layers, all in float64.  Reverse-mode accumulation
gives exact parameter gradients of the mean contraction
``(1/n) sum_i <f(z_i), G_i>``, which is everything the stop-gradient
drifting update needs: the semi-gradient is ``-2/n sum_i J(z_i)^T
Delta_i`` with the transport field Delta treated as constant.

A score-transport comparator replaces Delta by ``eta * C * (s_p - s_q)``
so the two implemented update directions can be compared (gradient
alignment).  Optimization is plain bias-corrected Adam.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from driftfield.fields import batch_kernel_score, batch_mean_shift, as_points
from driftfield.kernels import RadialKernel
from driftfield.metrics import c_theory, rbf_mmd, sliced_wasserstein
from driftfield.sampling import (
    GENERATED,
    PointCloud,
    derive_seed,
    sample_prior,
    sample_toy2d,
    stream_rng,
)

TOY2D_OUTPUT_DIM = 2


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite; carries the partial timeline."""

    def __init__(self, message, timeline):
        super().__init__(message)
        self.timeline = timeline


class MlpGenerator:
    """4-layer tanh MLP mapping latent vectors to output space."""

    def __init__(self, weights, biases):
        if len(weights) != 4 or len(biases) != 4:
            raise ValueError("generator has exactly four affine layers")
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]

    @classmethod
    def create(cls, latent_dim: int, hidden_dim: int, out_dim: int, seed: int):
        """Seeded Glorot-normal initialization, zero biases."""
        rng = stream_rng(seed, "mlp/init")
        dims = [latent_dim, hidden_dim, hidden_dim, hidden_dim, out_dim]
        weights, biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            scale = math.sqrt(2.0 / (fan_in + fan_out))
            weights.append(scale * rng.standard_normal((fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases)

    @property
    def layer_dims(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out

    def set_parameters(self, params) -> None:
        if len(params) != 8:
            raise ValueError("expected 8 parameter arrays")
        self.weights = [np.asarray(params[2 * i], dtype=np.float64) for i in range(4)]
        self.biases = [np.asarray(params[2 * i + 1], dtype=np.float64) for i in range(4)]

    def _forward_cache(self, Z):
        Z = as_points(Z)
        if Z.shape[1] != self.weights[0].shape[0]:
            raise ValueError("latent dimension mismatch")
        acts = [Z]
        h = Z
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = h @ w
            h += b
            np.tanh(h, out=h)
            acts.append(h)
        out = h @ self.weights[-1]
        out += self.biases[-1]
        return out, acts

    def forward(self, Z) -> np.ndarray:
        out, _ = self._forward_cache(Z)
        return out

    def vjp_from_cache(self, acts, G) -> list[np.ndarray]:
        """Parameter gradient of ``(1/n) sum_i <f(z_i), G_i>``."""
        G = np.asarray(G, dtype=np.float64)
        n = acts[0].shape[0]
        if G.shape != (n, self.weights[-1].shape[1]):
            raise ValueError("cotangent shape mismatch")
        g = G / n
        grads = [None] * 8
        grads[6] = acts[3].T @ g
        grads[7] = g.sum(axis=0)
        upstream = g @ self.weights[3].T
        scratch = None
        for layer in (2, 1, 0):
            a = acts[layer + 1]
            if scratch is None or scratch.shape != a.shape:
                scratch = np.empty_like(a)
            np.multiply(a, a, out=scratch)
            np.subtract(1.0, scratch, out=scratch)
            np.multiply(upstream, scratch, out=upstream)
            dz = upstream
            grads[2 * layer] = acts[layer].T @ dz
            grads[2 * layer + 1] = dz.sum(axis=0)
            if layer > 0:
                upstream = dz @ self.weights[layer].T
        return grads

    def vjp(self, Z, G) -> list[np.ndarray]:
        _, acts = self._forward_cache(Z)
        return self.vjp_from_cache(acts, G)


def generator_forward(gen: MlpGenerator, Z: PointCloud) -> PointCloud:
    """Push a prior cloud through the generator."""
    return PointCloud(gen.forward(Z.data), Z.seed, GENERATED)


def generator_vjp(gen: MlpGenerator, Z, G) -> list[np.ndarray]:
    """Mean Jacobian-transpose contraction ``(1/n) sum_i J(z_i)^T G_i``."""
    return gen.vjp(Z, G)


@dataclass
class OptimizerState:
    """Adam first/second moment accumulators and step counter."""

    m: list
    v: list
    t: int = 0

    @classmethod
    def for_params(cls, params) -> "OptimizerState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(
    params,
    grads,
    state: OptimizerState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
):
    """One bias-corrected Adam update; pure in all inputs."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("parameter/gradient/state shape mismatch")
    t = state.t + 1
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m1 = beta1 * m + (1.0 - beta1) * g
        v1 = beta2 * v + (1.0 - beta2) * g * g
        m_hat = m1 / (1.0 - beta1**t)
        v_hat = v1 / (1.0 - beta2**t)
        new_params.append(p - lr * m_hat / (np.sqrt(v_hat) + eps))
        new_m.append(m1)
        new_v.append(v1)
    return new_params, OptimizerState(new_m, new_v, t)


def drifting_loss_and_semigrad(
    gen: MlpGenerator,
    Z,
    refs_p,
    kernel: RadialKernel,
    eta: float = 1.0,
    include_self: bool = False,
):
    """Fixed-point drifting loss and its stop-gradient parameter update.

    The generated batch serves as its own model reference set; by
    default each query is left out of that set (``include_self=True``
    keeps it, except that singular kernels always drop coincident
    pairs).  Returns ``(mean ||Delta||^2, -2/n sum J^T Delta)``.
    """
    X, acts = gen._forward_cache(Z)
    if X.shape[0] < 2:
        raise ValueError("batch size must be at least 2")
    v_p = batch_mean_shift(kernel, X, refs_p)
    v_q = batch_mean_shift(kernel, X, X, exclude_diagonal=not include_self)
    delta = eta * (v_p - v_q)
    loss = float(np.mean(np.sum(delta * delta, axis=1)))
    grads = gen.vjp_from_cache(acts, -2.0 * delta)
    return loss, grads


def score_transport_semigrad(
    gen: MlpGenerator,
    Z,
    refs_p,
    kernel: RadialKernel,
    eta: float,
    C: float,
    include_self: bool = False,
) -> list[np.ndarray]:
    """Comparator update driven by the scaled score mismatch ``eta C (s_p - s_q)``."""
    if not C > 0.0:
        raise ValueError("transport scale C must be positive")
    X, acts = gen._forward_cache(Z)
    s_p = batch_kernel_score(kernel, X, refs_p)
    s_q = batch_kernel_score(kernel, X, X, exclude_diagonal=not include_self)
    delta_s = eta * C * (s_p - s_q)
    return gen.vjp_from_cache(acts, -2.0 * delta_s)


def flatten_grads(grads) -> np.ndarray:
    return np.concatenate([np.ravel(g) for g in grads])


def semigrad_cosine(
    gen: MlpGenerator, Z, refs_p, kernel: RadialKernel, eta: float = 1.0
) -> float:
    """Cosine between the drifting and score-transport update directions.

    The transport scale is the batch c_theory: half the sum of the mean
    kernel-weighted radii on the two sides, times tau.  Returns NaN when
    both updates are numerically zero (degenerate direction).
    """
    from driftfield.fields import evaluate_fields

    X, acts = gen._forward_cache(Z)
    est = evaluate_fields(kernel, X, refs_p, X, eta=eta, exclude_self_q=True)
    C = c_theory(float(np.mean(est.alpha_p)), float(np.mean(est.alpha_q)), kernel.tau)
    g_drift = flatten_grads(gen.vjp_from_cache(acts, -2.0 * est.drift))
    g_st = flatten_grads(gen.vjp_from_cache(acts, -2.0 * eta * C * est.score_mismatch))
    n_drift = float(np.linalg.norm(g_drift))
    n_st = float(np.linalg.norm(g_st))
    if n_drift <= 1e-12 and n_st <= 1e-12:
        return float("nan")
    return float(g_drift @ g_st) / (n_drift * n_st)


@dataclass(frozen=True)
class TrainConfig:
    """Configuration of one training run (see module docstring)."""

    dataset: str = "ring_mog"
    kernel_family: str = "laplace"
    kernel_scale: float = 0.30
    data_batch: int = 2048
    model_batch: int = 2048
    eta: float = 1.0
    lr: float = 1e-3
    steps: int = 5000
    seed: int = 0
    eval_interval: int = 500
    eval_samples: int = 5000
    latent_dim: int = 32
    hidden_dim: int = 256
    include_self: bool = False
    record_cosine: bool = False
    swd_projections: int = 200

    def __post_init__(self):
        if self.data_batch < 2 or self.model_batch < 2:
            raise ValueError("batch sizes must be at least 2")
        if self.steps < 1:
            raise ValueError("steps must be at least 1")
        if not self.eta > 0.0:
            raise ValueError("eta must be positive")
        if self.eval_interval < 1:
            raise ValueError("eval interval must be at least 1")

    def kernel(self) -> RadialKernel:
        if self.kernel_family == "laplace":
            return RadialKernel.laplace(self.kernel_scale)
        if self.kernel_family == "gaussian":
            return RadialKernel.gaussian(self.kernel_scale)
        raise ValueError(f"unknown kernel family {self.kernel_family!r}")


@dataclass
class EvalRecord:
    step: int
    loss: float
    swd: float
    mmd: float
    cosine: float
    wallclock_ms: float


TIMELINE_COLUMNS = ("step", "loss", "swd", "mmd", "semigrad_cosine", "wallclock_ms")


def _evaluate(gen, config, step, loss, started, record_cosine_value=float("nan")):
    z = sample_prior(
        config.latent_dim,
        config.eval_samples,
        derive_seed(config.seed, f"train/eval_prior/{step}"),
    )
    generated = gen.forward(z.data)
    real = sample_toy2d(
        config.dataset,
        config.eval_samples,
        derive_seed(config.seed, f"train/eval_data/{step}"),
    )
    swd = sliced_wasserstein(
        generated,
        real.data,
        n_proj=config.swd_projections,
        seed=derive_seed(config.seed, f"train/eval_swd/{step}"),
    )
    mmd = rbf_mmd(generated, real.data)
    wall = (time.perf_counter() - started) * 1e3
    return EvalRecord(step, loss, swd, mmd, record_cosine_value, wall)


def train(config: TrainConfig):
    """Run the drifting loop; returns (generator, timeline).

    Fully deterministic given the config: data batches, prior batches,
    eval draws, and projections all derive from ``config.seed``.  A
    non-finite loss aborts with the partial timeline attached.
    """
    kernel = config.kernel()
    gen = MlpGenerator.create(
        config.latent_dim,
        config.hidden_dim,
        TOY2D_OUTPUT_DIM,
        derive_seed(config.seed, "train/init"),
    )
    state = OptimizerState.for_params(gen.parameters())
    started = time.perf_counter()
    timeline = []

    def probe_loss(step):
        data = sample_toy2d(
            config.dataset, config.data_batch, derive_seed(config.seed, f"train/data/{step}")
        )
        z = sample_prior(
            config.latent_dim,
            config.model_batch,
            derive_seed(config.seed, f"train/prior/{step}"),
        )
        return data, z

    def maybe_cosine(step, refs):
        if not config.record_cosine:
            return float("nan")
        z = sample_prior(
            config.latent_dim,
            config.model_batch,
            derive_seed(config.seed, f"train/cosine/{step}"),
        )
        return semigrad_cosine(gen, z.data, refs, kernel, eta=config.eta)

    data0, z0 = probe_loss(0)
    loss0, _ = drifting_loss_and_semigrad(
        gen, z0.data, data0.data, kernel, eta=config.eta, include_self=config.include_self
    )
    timeline.append(_evaluate(gen, config, 0, loss0, started, maybe_cosine(0, data0.data)))

    loss = loss0
    for step in range(1, config.steps + 1):
        data, z = probe_loss(step)
        loss, grads = drifting_loss_and_semigrad(
            gen, z.data, data.data, kernel, eta=config.eta, include_self=config.include_self
        )
        if not math.isfinite(loss):
            timeline.append(
                EvalRecord(
                    step,
                    loss,
                    float("nan"),
                    float("nan"),
                    float("nan"),
                    (time.perf_counter() - started) * 1e3,
                )
            )
            raise TrainingDivergedError(f"non-finite loss at step {step}", timeline)
        params, state = adam_step(gen.parameters(), grads, state, lr=config.lr)
        gen.set_parameters(params)
        if step % config.eval_interval == 0 or step == config.steps:
            timeline.append(
                _evaluate(gen, config, step, loss, started, maybe_cosine(step, data.data))
            )
    return gen, timeline


def save_timeline_csv(timeline, path, comments=(), include_cosine=False) -> None:
    """Timeline CSV: step, loss, swd, mmd[, semigrad_cosine], wallclock_ms."""
    cols = ["step", "loss", "swd", "mmd"]
    if include_cosine:
        cols.append("semigrad_cosine")
    cols.append("wallclock_ms")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in comments:
            fh.write(f"# {line}\n")
        fh.write(",".join(cols) + "\n")
        for rec in timeline:
            vals = [str(rec.step)]
            vals.append(format(rec.loss, ".17g"))
            vals.append(format(rec.swd, ".17g"))
            vals.append(format(rec.mmd, ".17g"))
            if include_cosine:
                vals.append(format(rec.cosine, ".17g"))
            vals.append(format(rec.wallclock_ms, ".3f"))
            fh.write(",".join(vals) + "\n")


def save_generator(gen: MlpGenerator, path) -> None:
    """Text dump: layer dims, then one row-major parameter array per line."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(str(d) for d in gen.layer_dims) + "\n")
        for p in gen.parameters():
            fh.write(",".join(format(v, ".17g") for v in np.ravel(p)) + "\n")


def load_generator(path) -> MlpGenerator:
    with open(path, "r", encoding="utf-8") as fh:
        dims = [int(v) for v in fh.readline().strip().split(",")]
        params = []
        for line in fh:
            line = line.strip()
            if line:
                params.append(np.array([float(v) for v in line.split(",")]))
    weights, biases = [], []
    for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        weights.append(params[2 * i].reshape(fan_in, fan_out))
        biases.append(params[2 * i + 1])
    return MlpGenerator(weights, biases)
