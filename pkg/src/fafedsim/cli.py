"""Command-line entry point.

Exit codes: 0 success, 1 validation error, 2 diverged run.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .config import ConfigError, build_run_config, merge, read_config
from .counterexample import counterexample_drift, format_table
from .engine import grid_search, run_experiment
from .plotting import X_AXES, emit_plot
from .problems import describe
from .results import compare_runs, read_audit, read_csv, write_audit, write_csv
from .verify import verification_suite

EXIT_OK, EXIT_INVALID, EXIT_DIVERGED = 0, 1, 2

# flag dest -> (section, key)
FLAG_KEYS = {
    "algo": ("algorithm", "name"),
    "problem": ("problem", "kind"),
    "n": ("problem", "n_clients"),
    "dim": ("problem", "dim"),
    "noise_sigma": ("problem", "noise_sigma"),
    "center_spread": ("problem", "center_spread"),
    "q": ("algorithm", "q"),
    "b": ("algorithm", "b"),
    "eta": ("algorithm", "eta"),
    "eta_mode": ("algorithm", "eta_mode"),
    "rho": ("algorithm", "rho"),
    "rho_hbar": ("algorithm", "rho_hbar"),
    "beta": ("algorithm", "beta"),
    "c": ("algorithm", "c"),
    "full_batch": ("algorithm", "full_batch"),
    "t": ("run", "total_steps"),
    "seed": ("run", "seed"),
    "record_every": ("run", "record_every"),
    "out": ("run", "out"),
    "audit": ("run", "audit"),
    "workers": ("run", "workers"),
    "timing": ("run", "timing"),
}


def _add_run_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="INI file with [problem], [algorithm], [run] sections")
    p.add_argument("--algo")
    p.add_argument("--problem", help="counterexample | quadratic | logistic")
    p.add_argument("--n", type=int, help="number of clients")
    p.add_argument("--dim", type=int)
    p.add_argument("--noise-sigma", type=float)
    p.add_argument("--center-spread", type=float)
    p.add_argument("--q", type=int)
    p.add_argument("--b", type=int)
    p.add_argument("--eta", type=float)
    p.add_argument("--eta-mode")
    p.add_argument("--rho", type=float)
    p.add_argument("--rho-hbar", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--c", type=float)
    p.add_argument("--full-batch", action="store_true", default=None)
    p.add_argument("--t", type=int, help="total steps")
    p.add_argument("--seed", type=int)
    p.add_argument("--record-every", type=int)
    p.add_argument("--out")
    p.add_argument("--audit", action="store_true", default=None)
    p.add_argument("--workers", type=int)
    p.add_argument("--timing", action="store_true", default=None)


def _flag_layer(args) -> dict:
    layer = {"problem": {}, "algorithm": {}, "run": {}}
    for dest, (section, key) in FLAG_KEYS.items():
        value = getattr(args, dest, None)
        if value is not None:
            layer[section][key] = value
    return layer


def _run_config(args):
    layers = []
    if args.config:
        layers.append(read_config(args.config))
    layers.append(_flag_layer(args))
    return build_run_config(merge(*layers))


def _save(record, out) -> None:
    if out is None:
        return
    write_csv(record, out)
    if record.audit is not None:
        write_audit(record.audit, out)
    print(f"wrote {out}")


def cmd_run(args) -> int:
    cfg = _run_config(args)
    record = run_experiment(cfg)
    _save(record, cfg.out)
    last = record.rows[-1]
    print(f"t={last.t} loss={last.loss:.6g} grad_norm={last.grad_norm:.6g} "
          f"samples={record.total_samples} comms={record.total_comms}")
    if record.diverged:
        print(f"diverged at step {record.diverged_at}", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def _parse_grid(items) -> dict:
    grid = {}
    for item in items:
        if "=" not in item:
            raise ConfigError(f"grid entry {item!r} must look like key=v1,v2,...")
        key, values = item.split("=", 1)
        grid[key.strip()] = [float(v) for v in values.split(",") if v.strip()]
    return grid


def cmd_grid(args) -> int:
    cfg = _run_config(args)
    grid = _parse_grid(args.grid)
    for key, values in grid.items():
        if key in ("q", "b", "total_steps", "init_batch"):
            grid[key] = [int(v) for v in values]
    result = grid_search(cfg, grid, args.score, args.threshold)
    for params, score in result.table:
        print(json.dumps(params, sort_keys=True), f"{score:.17g}")
    print("best", json.dumps(result.best_params, sort_keys=True))
    _save(result.best, cfg.out)
    return EXIT_DIVERGED if result.best.diverged else EXIT_OK


def cmd_verify(args) -> int:
    rows = read_csv(args.csv)
    trace = read_audit(args.csv)
    checks = verification_suite(rows, trace)
    for c in checks:
        extra = f"  ({c.detail})" if c.detail else ""
        print(f"{'PASS' if c.ok else 'FAIL'}  {c.name}{extra}")
    return EXIT_OK if all(c.ok for c in checks) else EXIT_INVALID


def cmd_counterexample(args) -> int:
    result = counterexample_drift(args.t, args.eta, args.beta)
    print(format_table(result))
    first = ", ".join(f"{v:.8f}" for v in result.first_clients)
    print(f"client points after step 1: {first}")
    if result.diverged_at is not None:
        print(f"average left the finite range at step {result.diverged_at} (expected)")
    print(f"max |observed - predicted| = {result.max_diff:.3g}")
    print("PASS" if result.passed else "FAIL")
    return EXIT_OK if result.passed else EXIT_INVALID


def cmd_plot(args) -> int:
    emit_plot(args.csv, args.column, args.out, args.x, args.log_y)
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_problem(args) -> int:
    cfg = _run_config(args)
    for k, v in describe(cfg.problem).items():
        print(f"{k} = {v}")
    return EXIT_OK


def cmd_compare(args) -> int:
    print(compare_runs(args.csv, args.threshold))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fafedsim")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one configuration and write its CSV")
    _add_run_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("grid", help="grid search over hyperparameters")
    _add_run_flags(p)
    p.add_argument("--grid", nargs="+", required=True, metavar="KEY=V1,V2")
    p.add_argument("--score", default="final_loss", choices=("final_loss", "samples_to_threshold"))
    p.add_argument("--threshold", type=float)
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("verify", help="check the invariant suite on a recorded run")
    p.add_argument("csv")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("counterexample", help="drift table of the naive method on the 1-D counter-example")
    p.add_argument("--t", type=int, default=50)
    p.add_argument("--eta", type=float, default=0.1)
    p.add_argument("--beta", type=float, default=0.5)
    p.set_defaults(func=cmd_counterexample)

    p = sub.add_parser("plot", help="SVG line chart of one column across runs")
    p.add_argument("csv", nargs="+")
    p.add_argument("--column", default="loss")
    p.add_argument("--x", default="comms", choices=X_AXES)
    p.add_argument("--log-y", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("problem", help="describe a problem instance")
    _add_run_flags(p)
    p.set_defaults(func=cmd_problem)

    p = sub.add_parser("compare", help="table of final values and cost to reach a gradient threshold")
    p.add_argument("csv", nargs="+")
    p.add_argument("--threshold", type=float, required=True)
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
