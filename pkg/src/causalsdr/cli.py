"""Command-line interface.

Subcommands::

    simulate    write one generated dataset to CSV
    fit         run one method on a dataset CSV, print the estimated basis
    bench       run a scenario x method x replication grid
    distance    subspace distance between two basis CSVs
    summarize   aggregate record CSVs into a summary table

Exit codes: 0 success, 1 configuration or I/O error, 2 at least one
record-level failure inside a bench grid.
"""

from __future__ import annotations

import argparse
import csv
import re
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .errors import CausalSdrError
from .harness import (
    METHOD_NAMES,
    SCENARIO_FAMILIES,
    BenchConfig,
    estimate_basis,
    load_config,
    format_summary_table,
    parse_scenario_family,
    read_record_csv,
    run_bench,
    summarize,
    write_summary_csv,
)
from .metrics import projection_distance
from .rng import RngStream
from .simulation import (
    CONFOUNDING,
    ScenarioSpec,
    generate,
    read_dataset_csv,
    true_basis,
    write_dataset_csv,
)


def write_beta_csv(path, beta: np.ndarray) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        for row in np.atleast_2d(beta):
            writer.writerow([f"{x:.17g}" for x in row])


def read_beta_csv(path) -> np.ndarray:
    with Path(path).open(newline="") as fh:
        return np.array([[float(x) for x in row] for row in csv.reader(fh) if row])


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="causalsdr")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="write one generated dataset to CSV")
    sim.add_argument("--scenario", required=True, choices=SCENARIO_FAMILIES)
    sim.add_argument("--variant", default="confounded", choices=CONFOUNDING)
    sim.add_argument("--n", type=int, default=200)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--out", required=True)
    sim.add_argument("--truth-out", help="also write the true basis to this CSV")

    fit = sub.add_parser("fit", help="run one method on a dataset CSV")
    fit.add_argument("--data", required=True)
    fit.add_argument("--method", required=True, choices=METHOD_NAMES)
    fit.add_argument("--d", type=int, default=2)
    fit.add_argument("--truth", help="CSV with the true basis; prints distance")
    fit.add_argument("--config", help="bench config file for solver/kernel settings")
    fit.add_argument("--seed", type=int, default=0)
    fit.add_argument("--out", help="write the estimated basis to this CSV")

    bench = sub.add_parser("bench", help="run the benchmark grid")
    bench.add_argument("--config", help="config file (one dotted key = value per line)")
    bench.add_argument("--seed", type=int, help="override base_seed")
    bench.add_argument("--out", help="override output_dir")
    bench.add_argument("--method", help="comma-separated method subset")
    bench.add_argument("--scenario", help="comma-separated scenario families")
    bench.add_argument("--replications", type=int)
    bench.add_argument("--n", type=int)

    dist = sub.add_parser("distance", help="subspace distance between two basis CSVs")
    dist.add_argument("beta_a")
    dist.add_argument("beta_b")

    summ = sub.add_parser("summarize", help="aggregate record CSVs")
    summ.add_argument("--records", required=True,
                      help="bench output directory (reads records/*.csv)")
    summ.add_argument("--out", help="write summary CSV here instead of stdout")
    return parser


def _cmd_simulate(args) -> int:
    case, p = parse_scenario_family(args.scenario)
    spec = ScenarioSpec(case=case, p=p, confounding=args.variant, n=args.n, seed=args.seed)
    data, truth = generate(spec)
    write_dataset_csv(data, args.out)
    if args.truth_out:
        write_beta_csv(args.truth_out, truth.beta_true)
    print(f"wrote {spec.label} ({data.n} rows) to {args.out}")
    return 0


def _cmd_fit(args) -> int:
    config = load_config(args.config) if args.config else BenchConfig()
    if args.method != "pca" and config.start == "truth" and not args.truth:
        config = replace(config, start="pca")
    data = read_dataset_csv(args.data)
    rng = RngStream(args.seed, "fit", args.method)
    beta_hat, converged, iterations, _ = estimate_basis(args.method, data, args.d, config, rng)
    print(f"method={args.method} converged={converged} iterations={iterations}")
    for row in beta_hat:
        print(",".join(f"{x:.6g}" for x in row))
    if args.truth:
        dist = projection_distance(beta_hat, read_beta_csv(args.truth))
        print(f"distance={dist:.6g}")
    if args.out:
        write_beta_csv(args.out, beta_hat)
    return 0


def _cmd_bench(args) -> int:
    config = load_config(args.config) if args.config else BenchConfig()
    if args.seed is not None:
        config = replace(config, base_seed=args.seed)
    if args.out is not None:
        config = replace(config, output_dir=args.out)
    if args.method is not None:
        config = replace(config, methods=tuple(m.strip() for m in args.method.split(",")))
    if args.scenario is not None:
        config = replace(config, scenarios=tuple(s.strip() for s in args.scenario.split(",")))
    if args.replications is not None:
        config = replace(config, replications=args.replications)
    if args.n is not None:
        config = replace(config, n=args.n)
    records = run_bench(config)
    failures = [r for r in records if r.error]
    for record in failures:
        print(
            f"failed: {record.scenario.label} {record.method} rep {record.replication}: {record.error}",
            file=sys.stderr,
        )
    print(format_summary_table(summarize(records)))
    return 2 if failures else 0


def _cmd_distance(args) -> int:
    dist = projection_distance(read_beta_csv(args.beta_a), read_beta_csv(args.beta_b))
    print(f"{dist:.17g}")
    return 0


_LABEL_RE = re.compile(r"^(case[12])_p(6|12)_n(\d+)_(none|noise_only|confounded)$")


def _scenario_from_label(label: str) -> ScenarioSpec:
    match = _LABEL_RE.match(label)
    if match is None:
        raise CausalSdrError(f"cannot parse scenario label {label!r}")
    case, p, n, variant = match.groups()
    return ScenarioSpec(case=case, p=int(p), confounding=variant, n=int(n), seed=0)


def _cmd_summarize(args) -> int:
    out_dir = Path(args.records)
    records_dir = out_dir / "records" if (out_dir / "records").is_dir() else out_dir
    records = []
    for scenario_csv in sorted(records_dir.glob("*.csv")):
        scenario = _scenario_from_label(scenario_csv.stem)
        records.extend(_read_scenario_rows(scenario_csv, scenario))
    if not records:
        raise CausalSdrError(f"no record CSVs found under {records_dir}")
    rows = summarize(records)
    if args.out:
        write_summary_csv(args.out, rows)
    else:
        print(format_summary_table(rows))
    return 0


def _read_scenario_rows(path: Path, scenario: ScenarioSpec):
    from .harness import RunRecord

    records = []
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        for vals in reader:
            p, d = scenario.p, 2
            beta = np.array(
                [float(vals[f"b{i + 1}_{j + 1}"]) for i in range(p) for j in range(d)]
            ).reshape(p, d)
            records.append(RunRecord(
                method=vals["method"],
                scenario=scenario,
                replication=int(vals["replication"]),
                beta_hat=beta,
                distance=float(vals["distance"]),
                converged=vals["converged"] == "true",
                iterations=int(vals["iterations"]),
                wall_seconds=float("nan"),
                diagnostics={
                    "kernel_floored": int(vals["kernel_floored"]),
                    "weights_truncated": int(vals["weights_truncated"]),
                },
                error=vals["error"],
            ))
    return records


_COMMANDS = {
    "simulate": _cmd_simulate,
    "fit": _cmd_fit,
    "bench": _cmd_bench,
    "distance": _cmd_distance,
    "summarize": _cmd_summarize,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (CausalSdrError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
