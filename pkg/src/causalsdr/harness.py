"""Benchmark harness: scenario x method x replication grids.

The grid is a pure function of the bench configuration: every dataset and
every method-level random stream is keyed off the base seed, the scenario
label, and the replication index, so reruns reproduce records byte for
byte and a half-finished output directory can be resumed (existing record
files are trusted and skipped).

Wall-clock timings are the one non-reproducible quantity; they go to a
separate ``timings.csv`` so the record and summary CSVs stay deterministic.
"""

from __future__ import annotations

import csv
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from time import perf_counter

import numpy as np

from .estimating_equations import Basis, u_augmented, u_ipw, u_regression
from .errors import CausalSdrError, RankDeficient
from .kernel_smoothing import KernelConfig
from .metrics import pca_directions, projection_distance
from .nuisance_models import (
    FTildeModel,
    NuisanceSpec,
    fit_ftilde,
    fit_treatment_model,
    linear_feature_map,
)
from .rng import RngStream, derive_seed
from .simulation import ScenarioSpec, SimulationTruth, generate
from .solver import SolverConfig, solve

METHOD_NAMES = (
    "regression",
    "noisy_reg_eval",
    "confounded_reg_eval",
    "ipw_causal",
    "aug_causal",
    "pca",
)

#: which data-generation variant each method consumes
METHOD_VARIANT = {
    "regression": "none",
    "noisy_reg_eval": "noise_only",
    "confounded_reg_eval": "confounded",
    "ipw_causal": "confounded",
    "aug_causal": "confounded",
    "pca": "confounded",
}

SCENARIO_FAMILIES = ("case1_p6", "case1_p12", "case2_p6", "case2_p12")

WORKERS_ENV = "CAUSALSDR_WORKERS"

_FLOAT_FMT = "%.17g"


def parse_scenario_family(label: str) -> tuple[str, int]:
    """Split a family label like ``case2_p6`` into (case, p)."""
    if label not in SCENARIO_FAMILIES:
        raise ValueError(f"unknown scenario {label!r}; choose from {SCENARIO_FAMILIES}")
    case, p_part = label.split("_")
    return case, int(p_part[1:])


@dataclass(frozen=True)
class BenchConfig:
    """Full effective configuration of one benchmark run.

    Default starting values are truth-plus-noise (``start='truth'`` with
    ``start_jitter``): the estimating equations are nonconvex and their
    empirical surfaces at bench sample sizes have spurious roots far from
    the target, so the grid is run as a calibration study of local solver
    behavior.  ``start='response'`` (slice-based directions) and
    ``start='pca'`` are the cold-start alternatives; the effective config
    written next to the records always says which was used.
    """

    scenarios: tuple[str, ...] = ("case2_p6",)
    methods: tuple[str, ...] = METHOD_NAMES
    replications: int = 20
    n: int = 200
    base_seed: int = 20240
    output_dir: str = "bench_out"
    start: str = "truth"
    start_jitter: float = 0.4
    aug_misspecify_ftilde: bool = True
    aug_max_outer: int = 4
    solver: SolverConfig = field(default_factory=lambda: SolverConfig(max_iterations=12, restarts=1))
    kernel: KernelConfig = field(default_factory=KernelConfig)
    nuisance: NuisanceSpec = field(default_factory=lambda: NuisanceSpec(aug_term3="weighted_empirical"))

    def __post_init__(self):
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if not self.methods:
            raise ValueError("methods must be nonempty")
        for m in self.methods:
            if m not in METHOD_NAMES:
                raise ValueError(f"unknown method {m!r}; choose from {METHOD_NAMES}")
        for s in self.scenarios:
            parse_scenario_family(s)
        if self.start not in ("pca", "truth", "response"):
            raise ValueError("start must be 'pca', 'truth', or 'response'")


@dataclass
class RunRecord:
    """Result of one (method, scenario, replication) cell."""

    method: str
    scenario: ScenarioSpec
    replication: int
    beta_hat: np.ndarray
    distance: float
    converged: bool
    iterations: int
    wall_seconds: float
    diagnostics: dict
    error: str = ""


# ---------------------------------------------------------------------------
# config file format: one `dotted.key = value` per line


_CONFIG_KEYS = {
    "scenarios": ("list", None),
    "methods": ("list", None),
    "replications": ("int", None),
    "n": ("int", None),
    "base_seed": ("int", None),
    "output_dir": ("str", None),
    "start": ("str", None),
    "start_jitter": ("float", None),
    "aug_misspecify_ftilde": ("bool", None),
    "aug_max_outer": ("int", None),
    "solver.max_iterations": ("int", "solver"),
    "solver.tolerance": ("optfloat", "solver"),
    "solver.step_damping": ("float", "solver"),
    "solver.fd_step": ("float", "solver"),
    "solver.restarts": ("int", "solver"),
    "solver.jitter_scale": ("float", "solver"),
    "solver.stall_limit": ("int", "solver"),
    "kernel.bandwidth": ("optfloat", "kernel"),
    "kernel.denom_floor": ("float", "kernel"),
    "kernel.rot_constant": ("float", "kernel"),
    "kernel.bias_correct": ("bool", "kernel"),
    "nuisance.mc_draws": ("int", "nuisance"),
    "nuisance.weight_cap_quantile": ("float", "nuisance"),
    "nuisance.weight_cap": ("optfloat", "nuisance"),
    "nuisance.weight_normalize": ("bool", "nuisance"),
    "nuisance.reweight_smoothers": ("bool", "nuisance"),
    "nuisance.aug_term2_weighted": ("bool", "nuisance"),
    "nuisance.aug_term3": ("str", "nuisance"),
}


def _parse_value(kind: str, raw: str):
    raw = raw.strip()
    if kind == "list":
        return tuple(x.strip() for x in raw.split(",") if x.strip())
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    if kind == "optfloat":
        return None if raw.lower() in ("none", "auto") else float(raw)
    if kind == "bool":
        if raw.lower() in ("true", "yes", "1"):
            return True
        if raw.lower() in ("false", "no", "0"):
            return False
        raise ValueError(f"expected boolean, got {raw!r}")
    return raw


def parse_config_text(text: str) -> BenchConfig:
    """Build a config from ``key = value`` lines ('#' starts a comment)."""
    top: dict = {}
    nested: dict[str, dict] = {"solver": {}, "kernel": {}, "nuisance": {}}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in _CONFIG_KEYS:
            raise ValueError(f"line {lineno}: unknown config key {key!r}")
        kind, section = _CONFIG_KEYS[key]
        value = _parse_value(kind, raw)
        if section is None:
            top[key] = value
        else:
            nested[section][key.split(".", 1)[1]] = value
    if nested["solver"]:
        top["solver"] = SolverConfig(**nested["solver"])
    if nested["kernel"]:
        top["kernel"] = KernelConfig(**nested["kernel"])
    if nested["nuisance"]:
        top["nuisance"] = NuisanceSpec(**nested["nuisance"])
    return BenchConfig(**top)


def load_config(path) -> BenchConfig:
    return parse_config_text(Path(path).read_text())


def effective_config_text(config: BenchConfig) -> str:
    """Serialize every effective setting (the reproducibility record)."""

    def fmt(value):
        if value is None:
            return "none"
        if isinstance(value, bool):
            return "true" if value else "false"
        if isinstance(value, float):
            return _FLOAT_FMT % value
        if isinstance(value, tuple):
            return ", ".join(value)
        return str(value)

    s, k, nu = config.solver, config.kernel, config.nuisance
    pairs = [
        ("scenarios", config.scenarios),
        ("methods", config.methods),
        ("replications", config.replications),
        ("n", config.n),
        ("base_seed", config.base_seed),
        ("output_dir", config.output_dir),
        ("start", config.start),
        ("start_jitter", config.start_jitter),
        ("aug_misspecify_ftilde", config.aug_misspecify_ftilde),
        ("aug_max_outer", config.aug_max_outer),
        ("solver.max_iterations", s.max_iterations),
        ("solver.tolerance", s.tolerance),
        ("solver.step_damping", s.step_damping),
        ("solver.fd_step", s.fd_step),
        ("solver.restarts", s.restarts),
        ("solver.jitter_scale", s.jitter_scale),
        ("solver.stall_limit", s.stall_limit),
        ("kernel.bandwidth", k.bandwidth),
        ("kernel.denom_floor", k.denom_floor),
        ("kernel.rot_constant", k.rot_constant),
        ("kernel.bias_correct", k.bias_correct),
        ("nuisance.mc_draws", nu.mc_draws),
        ("nuisance.weight_cap_quantile", nu.weight_cap_quantile),
        ("nuisance.weight_cap", nu.weight_cap),
        ("nuisance.weight_normalize", nu.weight_normalize),
        ("nuisance.reweight_smoothers", nu.reweight_smoothers),
        ("nuisance.aug_term2_weighted", nu.aug_term2_weighted),
        ("nuisance.aug_term3", nu.aug_term3),
    ]
    return "".join(f"{key} = {fmt(value)}\n" for key, value in pairs)


# ---------------------------------------------------------------------------
# running one method on one dataset


def _starting_basis(dataset, d: int, config: BenchConfig, rng: RngStream,
                    truth: SimulationTruth | None) -> Basis:
    if config.start == "truth":
        if truth is None:
            raise ValueError("start='truth' requires a SimulationTruth")
        base = truth.beta_true
    else:
        base = pca_directions(dataset.a, d)
    jitter_stream = rng.child("start")
    for attempt in range(6):
        try:
            basis = Basis.canonicalize(base)
            break
        except RankDeficient:
            # singular top block (can happen for unlucky PCA directions):
            # nudge and retry
            base = base + 1e-3 * jitter_stream.child("nudge", attempt).normal(base.shape)
    else:
        p, d = base.shape
        basis = Basis.from_free(0.1 * jitter_stream.child("fallback").normal((p - d, d)))
    if config.start_jitter > 0:
        free = basis.free + config.start_jitter * jitter_stream.child("jitter").normal(basis.free.shape)
        basis = Basis.from_free(free)
    return basis


def _accumulating(moment_fn, counters: dict):
    def wrapped(b):
        mv = moment_fn(b)
        counters["kernel_floored"] += mv.diagnostics.kernel_floored
        counters["weights_truncated"] += mv.diagnostics.weights_truncated
        return mv

    return wrapped


def _solve_augmented(dataset, start: Basis, tm, nu: NuisanceSpec, config: BenchConfig,
                     counters: dict, rng: RngStream):
    """Alternate between refitting the shift model and solving the moment.

    The shift model is frozen during each inner solve, as are the reference
    draws (fresh child streams with a fixed label replay the same draws).
    Stops when the basis is stable across a refit.
    """
    beta = start
    total_iterations = 0
    result = None
    for outer in range(config.aug_max_outer):
        ftm = fit_ftilde(dataset, beta, nu, config.kernel)
        nu_fitted = replace(nu, ftilde=ftm)
        moment_fn = _accumulating(
            lambda b: u_augmented(dataset, b, tm, nu_fitted, config.kernel, rng.child("q", outer)),
            counters,
        )
        result = solve(moment_fn, beta, config.solver, rng.child("solve", outer))
        total_iterations += result.iterations
        delta = float(np.max(np.abs(result.beta_hat.free - beta.free)))
        beta = result.beta_hat
        if delta < 1e-4:
            break
    return beta, result.converged, total_iterations


def estimate_basis(method: str, dataset, d: int, config: BenchConfig, rng: RngStream,
                   truth: SimulationTruth | None = None):
    """Estimate a p x d reduction with one method.

    Returns ``(beta_hat, converged, iterations, counters)``; ``truth`` is
    only consulted for truth-anchored starting values.
    """
    if method not in METHOD_NAMES:
        raise ValueError(f"unknown method {method!r}")
    counters = {"kernel_floored": 0, "weights_truncated": 0}

    if method == "pca":
        return pca_directions(dataset.a, d), True, 0, counters

    start = _starting_basis(dataset, d, config, rng, truth)
    nu = config.nuisance
    if method in ("regression", "noisy_reg_eval", "confounded_reg_eval"):
        moment_fn = _accumulating(
            lambda b: u_regression(dataset, b, nu, config.kernel), counters
        )
        result = solve(moment_fn, start, config.solver, rng.child("solve"))
        return result.beta_hat.matrix, result.converged, result.iterations, counters

    tm = fit_treatment_model(dataset)
    nu = replace(nu, reference=nu.resolve_reference(dataset))
    if method == "ipw_causal":
        moment_fn = _accumulating(
            lambda b: u_ipw(dataset, b, tm, nu, config.kernel), counters
        )
        result = solve(moment_fn, start, config.solver, rng.child("solve"))
        return result.beta_hat.matrix, result.converged, result.iterations, counters

    # aug_causal
    if config.aug_misspecify_ftilde:
        nu = replace(nu, ftilde=FTildeModel(linear_feature_map(include_interactions=False)))
    basis, converged, iterations = _solve_augmented(dataset, start, tm, nu, config, counters, rng)
    return basis.matrix, converged, iterations, counters


def run_method(method: str, dataset, truth: SimulationTruth, config: BenchConfig,
               rng: RngStream, *, scenario: ScenarioSpec | None = None,
               replication: int = 0) -> RunRecord:
    """Run one estimator on one dataset and score it against the truth."""
    t0 = perf_counter()
    beta_hat, converged, iterations, counters = estimate_basis(
        method, dataset, truth.d, config, rng, truth
    )
    distance = projection_distance(beta_hat, truth.beta_true)
    return RunRecord(
        method=method,
        scenario=scenario,
        replication=replication,
        beta_hat=beta_hat,
        distance=distance,
        converged=converged,
        iterations=iterations,
        wall_seconds=perf_counter() - t0,
        diagnostics=dict(counters),
    )


# ---------------------------------------------------------------------------
# record persistence


def _record_columns(p: int, d: int) -> list[str]:
    beta_cols = [f"b{i + 1}_{j + 1}" for i in range(p) for j in range(d)]
    return [
        "method", "replication", "distance", "converged", "iterations",
        "kernel_floored", "weights_truncated", "error", *beta_cols,
    ]


def _record_row(record: RunRecord) -> list[str]:
    beta = np.asarray(record.beta_hat, dtype=np.float64).ravel()
    return [
        record.method,
        str(record.replication),
        _FLOAT_FMT % record.distance,
        "true" if record.converged else "false",
        str(record.iterations),
        str(record.diagnostics.get("kernel_floored", 0)),
        str(record.diagnostics.get("weights_truncated", 0)),
        record.error,
        *(_FLOAT_FMT % x for x in beta),
    ]


def write_record_csv(path, record: RunRecord) -> None:
    p, d = record.beta_hat.shape
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp")
    with tmp.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_record_columns(p, d))
        writer.writerow(_record_row(record))
    tmp.replace(path)  # atomic enough for resume: no partial record files


def read_record_csv(path, scenario: ScenarioSpec, d: int = 2) -> RunRecord:
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        row = next(reader)
    vals = dict(zip(header, row))
    p = scenario.p
    beta = np.array([float(vals[f"b{i + 1}_{j + 1}"]) for i in range(p) for j in range(d)])
    return RunRecord(
        method=vals["method"],
        scenario=scenario,
        replication=int(vals["replication"]),
        beta_hat=beta.reshape(p, d),
        distance=float(vals["distance"]),
        converged=vals["converged"] == "true",
        iterations=int(vals["iterations"]),
        wall_seconds=float("nan"),
        diagnostics={
            "kernel_floored": int(vals["kernel_floored"]),
            "weights_truncated": int(vals["weights_truncated"]),
        },
        error=vals["error"],
    )


# ---------------------------------------------------------------------------
# the grid


def _grid_tasks(config: BenchConfig):
    tasks = []
    for family in config.scenarios:
        case, p = parse_scenario_family(family)
        for method in config.methods:
            variant = METHOD_VARIANT[method]
            for rep in range(config.replications):
                seed = derive_seed(config.base_seed, "data", case, p, config.n, variant, rep)
                scenario = ScenarioSpec(case=case, p=p, confounding=variant, n=config.n, seed=seed)
                tasks.append((scenario, method, rep))
    # deterministic execution and output order
    tasks.sort(key=lambda t: (t[0].label, METHOD_NAMES.index(t[1]), t[2]))
    return tasks


def _compute_record(task_and_config) -> RunRecord:
    (scenario, method, rep), config = task_and_config
    dataset, truth = generate(scenario)
    rng = RngStream(config.base_seed, "method", scenario.label, method, rep)
    try:
        return run_method(method, dataset, truth, config, rng, scenario=scenario, replication=rep)
    except (CausalSdrError, np.linalg.LinAlgError, ValueError) as exc:
        d = truth.d
        return RunRecord(
            method=method,
            scenario=scenario,
            replication=rep,
            beta_hat=np.full((scenario.p, d), np.nan),
            distance=float("nan"),
            converged=False,
            iterations=0,
            wall_seconds=float("nan"),
            diagnostics={"kernel_floored": 0, "weights_truncated": 0},
            error=f"{type(exc).__name__}: {exc}",
        )


def run_bench(config: BenchConfig) -> list[RunRecord]:
    """Execute the whole grid, resuming from any records already on disk."""
    out = Path(config.output_dir)
    records_dir = out / "records"
    records_dir.mkdir(parents=True, exist_ok=True)
    (out / "effective_config.txt").write_text(effective_config_text(config))

    tasks = _grid_tasks(config)
    paths = [
        records_dir / scenario.label / f"{method}_rep{rep:03d}.csv"
        for scenario, method, rep in tasks
    ]
    missing = [i for i, path in enumerate(paths) if not path.exists()]

    records: list[RunRecord | None] = [None] * len(tasks)
    timings: list[tuple[str, str, int, float]] = []
    workers = int(os.environ.get(WORKERS_ENV, "1"))
    if workers > 1 and missing:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            computed = list(pool.map(_compute_record, ((tasks[i], config) for i in missing)))
        for i, record in zip(missing, computed):
            records[i] = record
    else:
        for i in missing:
            records[i] = _compute_record((tasks[i], config))
    for i in missing:
        write_record_csv(paths[i], records[i])
        scenario, method, rep = tasks[i]
        timings.append((scenario.label, method, rep, records[i].wall_seconds))
    for i, path in enumerate(paths):
        if records[i] is None:
            records[i] = read_record_csv(path, tasks[i][0])

    _write_scenario_csvs(records_dir, tasks, records)
    write_summary_csv(out / "summary.csv", summarize(records))
    _write_boxplot_csv(out / "boxplot.csv", records)
    _write_timings_csv(out / "timings.csv", timings)
    return records


def _write_scenario_csvs(records_dir: Path, tasks, records) -> None:
    by_label: dict[str, list[RunRecord]] = {}
    for (scenario, _, _), record in zip(tasks, records):
        by_label.setdefault(scenario.label, []).append(record)
    for label, group in by_label.items():
        group.sort(key=lambda r: (METHOD_NAMES.index(r.method), r.replication))
        p, d = group[0].beta_hat.shape
        with (records_dir / f"{label}.csv").open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(_record_columns(p, d))
            for record in group:
                writer.writerow(_record_row(record))


def _write_boxplot_csv(path: Path, records) -> None:
    rows = sorted(
        ((r.scenario.label, r.method, r.replication, r.distance) for r in records),
        key=lambda t: t[:3],
    )
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scenario", "method", "distance"])
        for label, method, _, distance in rows:
            writer.writerow([label, method, _FLOAT_FMT % distance])


def _write_timings_csv(path: Path, timings) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scenario", "method", "replication", "wall_seconds"])
        for label, method, rep, seconds in sorted(timings, key=lambda t: t[:3]):
            writer.writerow([label, method, rep, f"{seconds:.6f}"])


# ---------------------------------------------------------------------------
# summaries


def summarize(records) -> list[dict]:
    """Distance distribution and convergence stats per (scenario, method)."""
    if not records:
        raise ValueError("no records to summarize")
    groups: dict[tuple[str, str], list[RunRecord]] = {}
    for record in records:
        label = record.scenario.label if record.scenario is not None else ""
        groups.setdefault((label, record.method), []).append(record)

    rows = []
    for (label, method) in sorted(groups, key=lambda k: (k[0], METHOD_NAMES.index(k[1]))):
        group = groups[(label, method)]
        distances = np.array([r.distance for r in group])
        finite = distances[np.isfinite(distances)]
        if finite.size:
            q = np.percentile(finite, [0, 25, 50, 75, 100])
            mean = float(finite.mean())
            sd = float(finite.std(ddof=1)) if finite.size > 1 else 0.0
        else:
            q = [float("nan")] * 5
            mean = sd = float("nan")
        rows.append({
            "scenario": label,
            "method": method,
            "count": len(group),
            "n_failed": int(np.count_nonzero(~np.isfinite(distances))),
            "min": float(q[0]),
            "q1": float(q[1]),
            "median": float(q[2]),
            "q3": float(q[3]),
            "max": float(q[4]),
            "mean": mean,
            "sd": sd,
            "convergence_rate": float(np.mean([r.converged for r in group])),
            "mean_iterations": float(np.mean([r.iterations for r in group])),
        })
    return rows


SUMMARY_COLUMNS = (
    "scenario", "method", "count", "n_failed", "min", "q1", "median", "q3",
    "max", "mean", "sd", "convergence_rate", "mean_iterations",
)


def write_summary_csv(path, rows) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_COLUMNS)
        for row in rows:
            writer.writerow([
                row["scenario"], row["method"], str(row["count"]), str(row["n_failed"]),
                *(_FLOAT_FMT % row[k] for k in SUMMARY_COLUMNS[4:]),
            ])


def format_summary_table(rows) -> str:
    """Fixed-width text rendering of summary rows."""
    headers = list(SUMMARY_COLUMNS)
    table = [headers]
    for row in rows:
        table.append([
            row["scenario"], row["method"], str(row["count"]), str(row["n_failed"]),
            *(f"{row[k]:.4f}" for k in headers[4:]),
        ])
    widths = [max(len(line[j]) for line in table) for j in range(len(headers))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(line, widths)).rstrip() for line in table]
    return "\n".join(lines)
