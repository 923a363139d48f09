"""Experiment drivers: dimension sweeps, small-tau rates, training, dumps.

Every run writes its outputs under one directory with a metadata header
(config echo, seed, package version, and the behavioral switches that
affect numbers) as ``#`` comment lines at the top of each CSV.  Numeric
payloads are formatted with 17 significant digits, so a rerun with the
same config and seed reproduces them byte for byte.

Distinct sweep points may be computed by concurrent workers (environment
variable ``DRIFTFIELD_WORKERS``); rows are buffered and written in sweep
order, so results do not depend on the worker count.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields as dataclass_fields

import numpy as np

import driftfield
from driftfield.fields import (
    batch_kernel_score,
    batch_mean_shift,
    batch_softmax_weights,
    evaluate_fields,
    export_fields_csv,
)
from driftfield.kernels import (
    BandwidthPolicy,
    RadialKernel,
    laplace_moment_ratio,
    resolve_bandwidth,
)
from driftfield.metrics import (
    DegenerateRowsError,
    REPORT_COLUMNS,
    alignment_report,
    loglog_slope,
)
from driftfield.sampling import sample_raw_mog, sample_ring_mog, sample_toy2d
from driftfield.svgplot import PlotSpec, emit_svg_plot
from driftfield.trainer import (
    TrainConfig,
    TrainingDivergedError,
    save_generator,
    save_timeline_csv,
    train,
)

WORKERS_ENV = "DRIFTFIELD_WORKERS"

EXPERIMENTS = ("dim_sweep", "small_tau", "train", "fields_dump")

DEFAULT_D_LIST = (4, 8, 16, 32, 64, 128, 256, 512, 1024)

# bandwidth grid for the small-tau experiment: below tau ~ 0.1 the
# finite-sample fields hit a Monte Carlo noise floor that no affordable
# reference count pushes past, so the default grid stays above it and
# the small-tau reference set is enlarged instead
DEFAULT_TAU_LIST = (0.4, 0.3, 0.22, 0.17, 0.125)
SMALL_TAU_DEFAULT_REFS = 64000

SWEEP_SE_COLUMNS = (
    "abs_err",
    "rel_err",
    "mean_cos",
    "one_minus_cos",
    "alpha_ratio",
    "delta_gap_energy",
    "C_ratio",
)

# switches recorded in every metadata header; these are the behavioral
# choices that change numbers without changing the config schema
DESIGN_SWITCHES = (
    ("q_reference_convention", "leave_one_out"),
    ("coincidence_tolerance", "1e-12"),
    ("swd_order", "wasserstein2_sorted"),
    ("mmd_estimator", "biased_v_statistic_median_bandwidth"),
    ("repeat_seeds", "seed_plus_repeat_index"),
    ("raw_mog_directions", "resampled_per_dimension_and_seed"),
    ("small_tau_queries", "fresh_split_from_reference_distribution"),
)


@dataclass(frozen=True)
class ExperimentConfig:
    """Configuration shared by the experiment drivers."""

    experiment: str = "dim_sweep"
    dataset: str = "ring_mog"
    kernel: str = "laplace"
    bandwidth_mode: str = "adaptive"
    tau_bar: float = 0.3
    bandwidth_exponent: float = 0.5
    d_list: tuple = DEFAULT_D_LIST
    tau_list: tuple = DEFAULT_TAU_LIST
    dim: int = 2
    n_refs: int = 3000
    n_queries: int = 512
    seed: int = 0
    repeats: int = 3
    out_dir: str = "runs"
    emit_svg: bool = True
    eta: float = 1.0
    # training parameters
    steps: int = 5000
    batch_size: int = 2048
    kernel_scale: float = 0.30
    lr: float = 1e-3
    eval_interval: int = 500
    eval_samples: int = 5000

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}")
        if not self.d_list or not self.tau_list:
            raise ValueError("sweep lists must be nonempty")
        if self.n_refs < 2:
            raise ValueError("n_refs must be at least 2")
        if self.repeats < 1:
            raise ValueError("repeats must be at least 1")


def _parse_value(field_type, raw):
    raw = raw.strip()
    if field_type is bool:
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"expected true/false, got {raw!r}")
    if field_type is int:
        return int(raw)
    if field_type is float:
        return float(raw)
    if field_type is tuple:
        items = [v.strip() for v in raw.split(",") if v.strip()]
        try:
            return tuple(int(v) for v in items)
        except ValueError:
            return tuple(float(v) for v in items)
    return raw


def load_config(path, experiment: str, overrides=None) -> ExperimentConfig:
    """Build a config from a flat ``key = value`` file with sections.

    The ``[common]`` section applies to every experiment; the section
    named after the experiment overrides it; explicit ``overrides`` win.
    """
    import configparser

    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    if path is not None:
        read = parser.read(path)
        if not read:
            raise ValueError(f"config file {path!r} not found or unreadable")
    known = {f.name: f.type for f in dataclass_fields(ExperimentConfig)}
    type_map = {
        "experiment": str, "dataset": str, "kernel": str, "bandwidth_mode": str,
        "out_dir": str, "d_list": tuple, "tau_list": tuple, "emit_svg": bool,
        "tau_bar": float, "bandwidth_exponent": float, "eta": float,
        "kernel_scale": float, "lr": float, "dim": int, "n_refs": int,
        "n_queries": int, "seed": int, "repeats": int, "steps": int,
        "batch_size": int, "eval_interval": int, "eval_samples": int,
    }
    values = {"experiment": experiment}
    if experiment == "small_tau":
        values["n_refs"] = SMALL_TAU_DEFAULT_REFS
    for section in ("common", experiment):
        if parser.has_section(section):
            for key, raw in parser.items(section):
                if key not in known:
                    raise ValueError(f"unknown config key {key!r} in [{section}]")
                if key == "experiment":
                    continue
                values[key] = _parse_value(type_map[key], raw)
    for key, val in (overrides or {}).items():
        if val is not None:
            values[key] = val
    return ExperimentConfig(**values)


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def metadata_lines(cfg: ExperimentConfig, extra=()) -> list[str]:
    lines = [f"driftfield {driftfield.__version__} run metadata"]
    for f in dataclass_fields(ExperimentConfig):
        value = getattr(cfg, f.name)
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        lines.append(f"{f.name} = {value}")
    for key, value in DESIGN_SWITCHES:
        lines.append(f"switch.{key} = {value}")
    lines.extend(extra)
    return lines


def _fmt(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), ".17g")


def write_csv(path, header, rows, comments=()) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in comments:
            fh.write(f"# {line}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _split_role_q(cfg, D, n_refs, n_queries, seed):
    """References and queries from the q distribution: one draw, split.

    Drawing a single stream and splitting keeps the two sets disjoint
    i.i.d. samples of the same distribution (same seeded geometry).
    """
    if cfg.dataset == "ring_mog":
        cloud = sample_ring_mog(D, n_refs + n_queries, "q", seed)
    elif cfg.dataset == "raw_mog":
        cloud = sample_raw_mog(D, n_refs + n_queries, "q", seed)
    else:
        raise ValueError(f"dataset {cfg.dataset!r} has no p/q sweep form")
    return cloud.data[:n_refs], cloud.data[n_refs:]


def _refs_p(cfg, D, n_refs, seed):
    if cfg.dataset == "ring_mog":
        return sample_ring_mog(D, n_refs, "p", seed).data
    if cfg.dataset == "raw_mog":
        return sample_raw_mog(D, n_refs, "p", seed).data
    raise ValueError(f"dataset {cfg.dataset!r} has no p/q sweep form")


def _sweep_kernel(cfg, tau) -> RadialKernel:
    if cfg.kernel == "laplace":
        return RadialKernel.laplace(tau)
    if cfg.kernel == "gaussian":
        return RadialKernel.gaussian(tau)
    raise ValueError(f"kernel must be laplace or gaussian, got {cfg.kernel!r}")


def _bandwidth_policy(cfg) -> BandwidthPolicy:
    if cfg.bandwidth_mode == "adaptive":
        return BandwidthPolicy.adaptive(cfg.tau_bar)
    return BandwidthPolicy.fixed(cfg.tau_bar, cfg.bandwidth_exponent)


def _dim_sweep_point(cfg, D, repeat):
    seed = cfg.seed + repeat
    refs_p = _refs_p(cfg, D, cfg.n_refs, seed)
    refs_q, queries = _split_role_q(cfg, D, cfg.n_refs, cfg.n_queries, seed)
    tau = resolve_bandwidth(_bandwidth_policy(cfg), D, queries)
    kernel = _sweep_kernel(cfg, tau)
    est = evaluate_fields(kernel, queries, refs_p, refs_q, eta=cfg.eta)
    return alignment_report(est, D=D, n_refs=cfg.n_refs, tau=tau)


def _aggregate(reports):
    """Mean over repeats for every report column plus standard errors."""
    data = np.array([rep.row() for rep in reports], dtype=np.float64)
    means = data.mean(axis=0)
    row = list(means)
    idx = {name: i for i, name in enumerate(REPORT_COLUMNS)}
    ses = []
    for col in SWEEP_SE_COLUMNS:
        vals = data[:, idx[col]]
        if len(vals) > 1:
            ses.append(float(np.std(vals, ddof=1) / math.sqrt(len(vals))))
        else:
            ses.append(0.0)
    return row, ses


def run_dim_sweep(cfg: ExperimentConfig, out_dir=None):
    """Alignment sweep over dimensions; returns (rows, slopes, paths).

    ``rows`` maps D to the aggregated report values; ``slopes`` holds the
    log-log fits of abs_err, rel_err, and delta_gap_energy against D.
    Degenerate points are flagged and excluded from the fits.
    """
    out = _ensure_out(cfg, out_dir)
    header = (
        list(REPORT_COLUMNS)
        + [f"{c}_se" for c in SWEEP_SE_COLUMNS]
        + ["flagged"]
    )

    def point(D):
        reports = []
        for repeat in range(cfg.repeats):
            try:
                reports.append(_dim_sweep_point(cfg, D, repeat))
            except DegenerateRowsError:
                pass
        if not reports:
            return None
        return _aggregate(reports)

    n_workers = worker_count()
    if n_workers > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(point, cfg.d_list))
    else:
        results = [point(D) for D in cfg.d_list]

    rows = []
    table = {}
    for D, result in zip(cfg.d_list, results):
        if result is None:
            row = [float(D)] + [float("nan")] * (len(header) - 2) + [1]
        else:
            values, ses = result
            row = values + ses + [0]
            table[D] = dict(zip(REPORT_COLUMNS, values))
        rows.append(row)

    slopes = {}
    good = [D for D in cfg.d_list if D in table]
    if len(set(good)) >= 2:
        ds = np.array(good, dtype=np.float64)
        for metric in ("abs_err", "rel_err", "delta_gap_energy"):
            ys = np.array([table[D][metric] for D in good])
            if np.all(ys > 0.0):
                slopes[metric] = loglog_slope(ds, ys)

    comments = metadata_lines(cfg)
    sweep_csv = os.path.join(out, "sweep.csv")
    write_csv(sweep_csv, header, rows, comments)
    slope_rows = [[m, s, b] for m, (s, b) in slopes.items()]
    slopes_csv = os.path.join(out, "slopes.csv")
    with open(slopes_csv, "w", encoding="utf-8", newline="\n") as fh:
        for line in comments:
            fh.write(f"# {line}\n")
        fh.write("metric,slope,intercept\n")
        for metric, slope, intercept in slope_rows:
            fh.write(f"{metric},{_fmt(slope)},{_fmt(intercept)}\n")
    paths = {"sweep": sweep_csv, "slopes": slopes_csv}
    if cfg.emit_svg and table:
        paths["alignment_svg"] = emit_svg_plot(
            sweep_csv,
            PlotSpec("D", ("abs_err", "rel_err"), log_x=True, log_y=True,
                     title="drift vs score alignment error"),
            os.path.join(out, "alignment.svg"),
        )
        paths["mechanism_svg"] = emit_svg_plot(
            sweep_csv,
            PlotSpec("D", ("alpha_ratio", "C_ratio"), log_x=True,
                     title="preconditioner and scale diagnostics"),
            os.path.join(out, "mechanism.svg"),
        )
    return table, slopes, paths


def _small_tau_point(cfg, tau, repeat):
    seed = cfg.seed + repeat
    D = cfg.dim
    if cfg.dataset != "ring_mog":
        raise ValueError("small-tau experiment uses the ring MoG target")
    cloud = sample_ring_mog(D, cfg.n_refs + cfg.n_queries, "p", seed)
    refs = cloud.data[: cfg.n_refs]
    queries = cloud.data[cfg.n_refs :]
    kernel = _sweep_kernel(cfg, tau)
    c = laplace_moment_ratio(D) if cfg.kernel == "laplace" else 1.0
    v = batch_mean_shift(kernel, queries, refs)
    s = batch_kernel_score(kernel, queries, refs)
    # relative expansion error normalized by the field energy; a plain
    # mean of per-query ratios would be pinned near 1 by queries sitting
    # on the density ridge, where the population field itself vanishes
    resid_energy = float(np.sum((v - c * tau**2 * s) ** 2))
    field_energy = float(np.sum(v * v))
    err = math.sqrt(resid_energy / field_energy) if field_energy > 0.0 else float("nan")
    w = batch_softmax_weights(kernel, queries, refs)
    ess = 1.0 / np.sum(w * w, axis=1)
    return err, float(np.mean(ess))


def run_smalltau(cfg: ExperimentConfig, out_dir=None):
    """Small-bandwidth expansion error sweep; returns (rows, slope, paths).

    Rows are (tau, error, mean ESS, flagged) with errors averaged over
    repeats; rows whose mean effective sample size falls below 10 are
    flagged and excluded from the slope fit.
    """
    out = _ensure_out(cfg, out_dir)
    taus = sorted((float(t) for t in cfg.tau_list), reverse=True)
    rows = []
    fit_t, fit_e = [], []
    for tau in taus:
        errs, esses = [], []
        for repeat in range(cfg.repeats):
            err, ess = _small_tau_point(cfg, tau, repeat)
            errs.append(err)
            esses.append(ess)
        err_mean = float(np.mean(errs))
        ess_mean = float(np.mean(esses))
        if len(errs) > 1:
            err_se = float(np.std(errs, ddof=1) / math.sqrt(len(errs)))
        else:
            err_se = 0.0
        flagged = int(ess_mean < 10.0)
        rows.append([tau, err_mean, err_se, ess_mean, flagged])
        if not flagged and err_mean > 0.0:
            fit_t.append(tau)
            fit_e.append(err_mean)
    slope = None
    if len(fit_t) >= 2:
        slope = loglog_slope(fit_t, fit_e)
    comments = metadata_lines(
        cfg, extra=[f"expansion_constant_c_D = {_fmt(laplace_moment_ratio(cfg.dim))}"]
    )
    csv_path = os.path.join(out, "smalltau.csv")
    write_csv(csv_path, ["tau", "err", "err_se", "ess_mean", "flagged"], rows, comments)
    slopes_csv = os.path.join(out, "smalltau_slope.csv")
    with open(slopes_csv, "w", encoding="utf-8", newline="\n") as fh:
        for line in comments:
            fh.write(f"# {line}\n")
        fh.write("metric,slope,intercept\n")
        if slope is not None:
            fh.write(f"expansion_err,{_fmt(slope[0])},{_fmt(slope[1])}\n")
    paths = {"smalltau": csv_path, "slope": slopes_csv}
    if cfg.emit_svg:
        paths["svg"] = emit_svg_plot(
            csv_path,
            PlotSpec("tau", ("err",), log_x=True, log_y=True,
                     title="small-bandwidth expansion error"),
            os.path.join(out, "smalltau.svg"),
        )
    return rows, slope, paths


def _train_config(cfg: ExperimentConfig, family: str) -> TrainConfig:
    return TrainConfig(
        dataset=cfg.dataset,
        kernel_family=family,
        kernel_scale=cfg.kernel_scale,
        data_batch=cfg.batch_size,
        model_batch=cfg.batch_size,
        eta=cfg.eta,
        lr=cfg.lr,
        steps=cfg.steps,
        seed=cfg.seed,
        eval_interval=cfg.eval_interval,
        eval_samples=cfg.eval_samples,
    )


def run_train(cfg: ExperimentConfig, out_dir=None):
    """Train one generator per kernel with matched configs.

    Writes one timeline CSV and one model dump per kernel plus a summary
    CSV (final SWD/MMD per kernel and the Laplace/Gaussian ratios).  A
    diverged run still writes its partial timeline before propagating.
    """
    out = _ensure_out(cfg, out_dir)
    summary = {}
    paths = {}
    for family in ("laplace", "gaussian"):
        tc = _train_config(cfg, family)
        comments = metadata_lines(cfg, extra=[f"kernel_family = {family}"])
        timeline_path = os.path.join(out, f"timeline_{family}.csv")
        try:
            gen, timeline = train(tc)
        except TrainingDivergedError as err:
            save_timeline_csv(err.timeline, timeline_path, comments)
            raise
        save_timeline_csv(timeline, timeline_path, comments)
        model_path = os.path.join(out, f"generator_{family}.txt")
        save_generator(gen, model_path)
        summary[family] = {
            "swd_step0": timeline[0].swd,
            "swd_final": timeline[-1].swd,
            "mmd_final": timeline[-1].mmd,
        }
        paths[f"timeline_{family}"] = timeline_path
        paths[f"model_{family}"] = model_path
    ratio_swd = summary["laplace"]["swd_final"] / summary["gaussian"]["swd_final"]
    ratio_mmd = summary["laplace"]["mmd_final"] / summary["gaussian"]["mmd_final"]
    rows = [
        ["laplace", summary["laplace"]["swd_step0"], summary["laplace"]["swd_final"],
         summary["laplace"]["mmd_final"]],
        ["gaussian", summary["gaussian"]["swd_step0"], summary["gaussian"]["swd_final"],
         summary["gaussian"]["mmd_final"]],
        ["laplace_over_gaussian", float("nan"), ratio_swd, ratio_mmd],
    ]
    summary_path = os.path.join(out, "summary.csv")
    with open(summary_path, "w", encoding="utf-8", newline="\n") as fh:
        for line in metadata_lines(cfg):
            fh.write(f"# {line}\n")
        fh.write("kernel,swd_step0,swd_final,mmd_final\n")
        for row in rows:
            fh.write(",".join([row[0]] + [_fmt(v) for v in row[1:]]) + "\n")
    paths["summary"] = summary_path
    summary["ratio_swd"] = ratio_swd
    summary["ratio_mmd"] = ratio_mmd
    return summary, paths


def run_fields_dump(cfg: ExperimentConfig, out_dir=None):
    """Dump per-query field rows for external plotting."""
    out = _ensure_out(cfg, out_dir)
    D = cfg.dim
    if cfg.dataset in ("ring_mog", "raw_mog"):
        refs_p = _refs_p(cfg, D, cfg.n_refs, cfg.seed)
        refs_q, queries = _split_role_q(cfg, D, cfg.n_refs, cfg.n_queries, cfg.seed)
    else:
        data = sample_toy2d(cfg.dataset, cfg.n_refs, cfg.seed)
        refs_p = data.data
        model = sample_toy2d(cfg.dataset, cfg.n_refs + cfg.n_queries, cfg.seed + 1)
        refs_q, queries = model.data[: cfg.n_refs], model.data[cfg.n_refs :]
    families = ("laplace", "gaussian") if cfg.kernel == "both" else (cfg.kernel,)
    paths = {}
    for family in families:
        tau = resolve_bandwidth(_bandwidth_policy(cfg), D, queries)
        kernel = (
            RadialKernel.laplace(tau) if family == "laplace" else RadialKernel.gaussian(tau)
        )
        est = evaluate_fields(kernel, queries, refs_p, refs_q, eta=cfg.eta)
        path = os.path.join(out, f"fields_{family}.csv")
        export_fields_csv(
            est, path, comments=metadata_lines(cfg, extra=[f"kernel_family = {family}",
                                                           f"tau = {_fmt(tau)}"])
        )
        paths[family] = path
    return paths


def _ensure_out(cfg, out_dir):
    out = out_dir or cfg.out_dir
    os.makedirs(out, exist_ok=True)
    return out
