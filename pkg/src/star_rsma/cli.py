"""Command line: run sweeps, emit plot data, validate configs, self-test.

Exit codes: 0 success, 2 configuration error, 3 infeasible or numerical
termination in the executed runs, 4 I/O failure. Log lines go to stderr
as "LEVEL name message" so they stay machine-parsable.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
import tempfile
from typing import List, Optional

from . import __version__
from .config import (ConfigError, default_config, load_config,
                     plan_from_config, validate_config)
from .harness import emit_plot_data, load_table, run_plan

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4

log = logging.getLogger("star_rsma")


def _setup_logging() -> None:
    if log.handlers:
        return
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s %(message)s"))
    log.addHandler(handler)
    log.setLevel(logging.INFO)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="star-rsma",
        description="Robust STAR-RIS RSMA beamforming experiments")
    parser.add_argument("--version", action="version",
                        version=f"star-rsma {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute the configured sweep")
    run.add_argument("--config", help="YAML config path (defaults baked in)")
    run.add_argument("--seed", type=int, help="override run.seed")
    run.add_argument("--out", help="override run.out_dir")
    run.add_argument("--trials", type=int, help="override run.trials")
    run.add_argument("--parallel", type=int, default=1,
                     help="worker processes for trial dispatch")

    plots = sub.add_parser("emit-plots",
                           help="write plot-ready columns from a finished run")
    plots.add_argument("--out", required=True,
                       help="directory holding results.csv / traces.jsonl")

    check = sub.add_parser("validate-config", help="schema-check a config file")
    check.add_argument("--config", required=True)

    self_ = sub.add_parser("selftest",
                           help="tiny end-to-end run with determinism check")
    self_.add_argument("--out", help="work directory (default: temporary)")
    self_.add_argument("--parallel", type=int, default=1)
    return parser


def _configured_tree(args) -> dict:
    tree = load_config(args.config) if args.config else default_config()
    run = tree.setdefault("run", {})
    if getattr(args, "seed", None) is not None:
        run["seed"] = args.seed
    if getattr(args, "out", None) is not None:
        run["out_dir"] = args.out
    if getattr(args, "trials", None) is not None:
        run["trials"] = args.trials
    return tree


def _cmd_run(args) -> int:
    try:
        tree = _configured_tree(args)
    except ConfigError as exc:
        log.error("config: %s", exc)
        return EXIT_CONFIG
    errors = validate_config(tree)
    if errors:
        for e in errors:
            log.error("config: %s", e)
        return EXIT_CONFIG
    plan = plan_from_config(tree)
    log.info("run: %d scheme(s) x %d point(s) x %d trial(s) -> %s",
             len(plan.schemes), plan.n_points, plan.n_trials, plan.out_dir)
    try:
        table = run_plan(plan, parallel=args.parallel, config_tree=tree)
    except OSError as exc:
        log.error("io: %s", exc)
        return EXIT_IO
    bad = [r for r in table.rows
           if r["termination_reason"] in ("infeasible", "numerical")]
    print(f"wrote {table.n_rows} rows to {plan.out_dir}")
    if bad:
        for r in bad:
            log.warning("run: %s trial %s ended %s", r["scheme"],
                        r["trial"], r["termination_reason"])
        return EXIT_NUMERICAL
    return EXIT_OK


def _cmd_emit_plots(args) -> int:
    try:
        table = load_table(args.out)
    except OSError as exc:
        log.error("io: %s", exc)
        return EXIT_IO
    written: List[str] = []
    for kind in ("convergence", "sweep", "joint"):
        try:
            written.extend(emit_plot_data(table, kind, args.out))
        except ValueError as exc:
            log.info("emit-plots: skipping %s (%s)", kind, exc)
    if not written:
        log.error("emit-plots: no figure kind could be emitted")
        return EXIT_CONFIG
    for path in written:
        print(path)
    return EXIT_OK


def _cmd_validate_config(args) -> int:
    try:
        tree = load_config(args.config)
    except ConfigError as exc:
        log.error("config: %s", exc)
        return EXIT_CONFIG
    errors = validate_config(tree)
    if errors:
        for e in errors:
            log.error("config: %s", e)
        return EXIT_CONFIG
    print("config ok")
    return EXIT_OK


def _selftest_tree(out_dir: str) -> dict:
    tree = default_config()
    tree["system"].update(n_bs=2, n_ris=2, n_users=2)
    tree["run"].update(schemes=["star_opt", "benchmark3_random"],
                       trials=1, seed=7, out_dir=out_dir)
    tree["limits"].update(tau_max=2)
    return tree


def _cmd_selftest(args) -> int:
    base = args.out or tempfile.mkdtemp(prefix="star_rsma_selftest_")
    checks: List[tuple] = []
    try:
        texts = []
        for attempt in ("a", "b"):
            out = os.path.join(base, attempt)
            tree = _selftest_tree(out)
            plan = plan_from_config(tree)
            table = run_plan(plan, parallel=args.parallel, config_tree=tree)
            texts.append(table.results_csv_text())
            checks.append(("run_" + attempt,
                           table.n_rows == len(table.rows) + len(table.aggregates)
                           and all(r["sum_rate"] >= 0 for r in table.rows)))
        checks.append(("deterministic_replay", texts[0] == texts[1]))
        joint = [r for r in table.rows if r["scheme"] == "star_opt"]
        random_ = [r for r in table.rows if r["scheme"] == "benchmark3_random"]
        checks.append(("scheme_ordering",
                       joint[0]["sum_rate"] >= random_[0]["sum_rate"] - 1e-9))
    except OSError as exc:
        log.error("io: %s", exc)
        return EXIT_IO
    failed = [name for name, ok in checks if not ok]
    for name, ok in checks:
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    return EXIT_OK if not failed else EXIT_NUMERICAL


def main(argv: Optional[List[str]] = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    handler = {
        "run": _cmd_run,
        "emit-plots": _cmd_emit_plots,
        "validate-config": _cmd_validate_config,
        "selftest": _cmd_selftest,
    }[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
