"""Experiment harness: seeded sweep execution, result tables, plot data.

One run is fully determined by (plan seed, trial index, sweep point,
scheme): the scenario redraws per trial, channels depend additionally on
the array sizes only, so paired comparisons across impairment levels see
identical channels. Volatile timing never enters results.csv — it goes to
the timings.csv sidecar, keeping the result table byte-identical across
replays.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import __version__
from .alternation import OuterLimits, run_scheme
from .config import (SWEEP_AXES, ExperimentPlan, bits_per_hz_to_mbps,
                     watts_to_dbm)
from .rng import substream
from .stage1 import SCASettings
from .system_model import SystemParams, draw_channel_set, draw_scenario

RESULT_COLUMNS = (
    "kind", "scheme", "n_bs", "n_ris", "epsilon_level", "kappa_t",
    "kappa_r", "power_budget_w", "trial", "sum_rate", "sum_rate_std",
    "sum_rate_mbps", "min_user_rate", "n_outer", "termination_reason",
    "qos_ok", "per_user_rates")

TIMING_COLUMNS = ("scheme", "n_bs", "n_ris", "epsilon_level", "kappa_t",
                  "kappa_r", "power_budget_w", "trial", "wall_time_s")


def _fmt(value) -> str:
    """Deterministic cell text: shortest stable float spelling."""
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.12g}"
    return str(value)


@dataclass(frozen=True)
class TrialJob:
    """One dispatchable run; must stay picklable for the worker pool."""

    params: SystemParams        # sweep point already applied
    scheme: str
    point: Dict[str, float]     # canonical axis values for reporting
    trial: int
    seed: int                   # plan root seed
    limits: OuterLimits
    settings: SCASettings


def _point_tag(point: Dict[str, float]) -> str:
    return "|".join(f"{k}={point[k]:.12g}" for k in sorted(point))


def run_job(job: TrialJob) -> Dict[str, object]:
    """Execute one (scheme, point, trial) run; top level for pickling."""
    p = job.params
    scen_seed = int(substream(job.seed, "scenario", job.trial)
                    .integers(2 ** 63))
    scenario = draw_scenario(p, scen_seed)
    ch_rng = substream(job.seed, "channels", job.trial,
                       f"N{p.n_bs}", f"M{p.n_ris}")
    channels = draw_channel_set(p, scenario, ch_rng)
    algo_rng = substream(job.seed, "algo", job.trial, job.scheme,
                         _point_tag(job.point))
    t0 = time.perf_counter()
    run = run_scheme(channels, p, job.scheme, algo_rng,
                     job.limits, job.settings)
    wall = time.perf_counter() - t0

    base_cols = {axis: getattr(p, axis) for axis in SWEEP_AXES}
    fin = run.final
    row = dict(kind="trial", scheme=job.scheme, **base_cols,
               trial=job.trial,
               sum_rate=float(fin.sum_rate_value), sum_rate_std=None,
               sum_rate_mbps=bits_per_hz_to_mbps(fin.sum_rate_value,
                                                 p.bandwidth_hz),
               min_user_rate=float(np.min(fin.per_user_rates)),
               n_outer=run.trace.n_outer,
               termination_reason=run.trace.termination_reason,
               qos_ok=bool(fin.qos_ok),
               per_user_rates=";".join(_fmt(float(r))
                                       for r in fin.per_user_rates))
    timing = dict(scheme=job.scheme, **base_cols, trial=job.trial,
                  wall_time_s=wall)
    traces = []
    for rec in run.trace.to_records():
        rec = dict(rec)
        rec.update(base_cols)
        rec["scheme"] = job.scheme
        rec["trial"] = job.trial
        traces.append(rec)
    return {"row": row, "timing": timing, "traces": traces}


def _sort_key(row: Dict[str, object]) -> Tuple:
    return (row["scheme"], tuple(float(row[a]) for a in SWEEP_AXES),
            row["trial"] if row["trial"] is not None else -1)


def aggregate_rows(trial_rows: List[Dict[str, object]]) -> List[Dict[str, object]]:
    """One mean/std row per (scheme, sweep point); exact recomputation."""
    groups: Dict[Tuple, List[Dict]] = {}
    for row in trial_rows:
        key = (row["scheme"], tuple(float(row[a]) for a in SWEEP_AXES))
        groups.setdefault(key, []).append(row)
    out = []
    for (scheme, point), rows in sorted(groups.items()):
        rates = np.array([r["sum_rate"] for r in rows], dtype=float)
        mins = np.array([r["min_user_rate"] for r in rows], dtype=float)
        iters = np.array([r["n_outer"] for r in rows], dtype=float)
        mbps = np.array([r["sum_rate_mbps"] for r in rows], dtype=float)
        out.append(dict(
            kind="aggregate", scheme=scheme,
            **{a: v for a, v in zip(SWEEP_AXES, point)},
            trial=None,
            sum_rate=float(rates.mean()),
            sum_rate_std=float(rates.std()),
            sum_rate_mbps=float(mbps.mean()),
            min_user_rate=float(mins.mean()),
            n_outer=float(iters.mean()),
            termination_reason=None,
            qos_ok=float(np.mean([1.0 if r["qos_ok"] else 0.0
                                  for r in rows])),
            per_user_rates=None))
    return out


@dataclass
class ResultTable:
    """Trial rows plus aggregates, with traces and timings alongside."""

    rows: List[Dict[str, object]] = field(default_factory=list)
    aggregates: List[Dict[str, object]] = field(default_factory=list)
    traces: List[Dict[str, object]] = field(default_factory=list)
    timings: List[Dict[str, object]] = field(default_factory=list)

    @property
    def n_rows(self) -> int:
        return len(self.rows) + len(self.aggregates)

    def recompute_aggregates(self) -> List[Dict[str, object]]:
        return aggregate_rows(self.rows)

    def results_csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        for row in list(self.rows) + list(self.aggregates):
            w.writerow([_fmt(row[c]) for c in RESULT_COLUMNS])
        return buf.getvalue()

    def timings_csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TIMING_COLUMNS)
        for row in self.timings:
            w.writerow([_fmt(row[c]) for c in TIMING_COLUMNS])
        return buf.getvalue()

    def traces_jsonl_text(self) -> str:
        return "".join(json.dumps(rec, sort_keys=True) + "\n"
                       for rec in self.traces)


def config_hash(tree: dict) -> str:
    blob = json.dumps(tree, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def plan_to_tree(plan: ExperimentPlan) -> dict:
    """Config tree that reproduces the plan through plan_from_config."""
    base = plan.base
    system = {
        "n_bs": base.n_bs, "n_ris": base.n_ris, "n_users": base.n_users,
        "kappa_t": base.kappa_t, "kappa_r": base.kappa_r,
        "epsilon": base.epsilon_level,
        "noise_dbm": watts_to_dbm(base.noise_power_w),
        "power_budget_dbm": watts_to_dbm(base.power_budget_w),
        "r_min_mbps": bits_per_hz_to_mbps(base.r_min, base.bandwidth_hz),
        "bandwidth_hz": base.bandwidth_hz, "carrier_hz": base.carrier_hz,
        "rician_bs_ris": base.rician_bs_ris,
        "rician_ris_user": base.rician_ris_user,
    }
    sweep = {}
    for name, values in plan.axes.items():
        if name == "power_budget_w":
            sweep["power_budget_dbm"] = [watts_to_dbm(v) for v in values]
        elif name == "epsilon_level":
            sweep["epsilon"] = list(values)
        else:
            sweep[name] = list(values)
    return {
        "system": system,
        "sweep": sweep,
        "run": {"schemes": list(plan.schemes), "trials": plan.n_trials,
                "seed": plan.seed, "out_dir": plan.out_dir},
        "limits": {"tau_max": plan.limits.tau_max,
                   "tol_outer": plan.limits.tol_outer},
        "solver": {"tol_inner": plan.settings.tol_inner,
                   "max_inner": plan.settings.max_inner,
                   "qos_margin": plan.settings.qos_margin,
                   "log_mode": plan.settings.log_mode},
    }


def run_plan(plan: ExperimentPlan, parallel: int = 1,
             config_tree: Optional[dict] = None,
             write: bool = True) -> ResultTable:
    """Execute the full sweep and write the output bundle.

    Emits results.csv (deterministic), timings.csv (volatile wall times),
    traces.jsonl (per-outer-iteration records), and manifest.json (config
    tree, its hash, package version, result digest) into plan.out_dir.
    """
    jobs = [TrialJob(params=plan.params_at(point), scheme=scheme,
                     point=point, trial=trial, seed=plan.seed,
                     limits=plan.limits, settings=plan.settings)
            for scheme in plan.schemes
            for point in plan.points()
            for trial in range(plan.n_trials)]

    if parallel > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            outcomes = list(pool.map(run_job, jobs))
    else:
        outcomes = [run_job(job) for job in jobs]

    rows = sorted((o["row"] for o in outcomes), key=_sort_key)
    timings = sorted((o["timing"] for o in outcomes), key=_sort_key)
    traces = []
    for o in sorted(outcomes,
                    key=lambda o: _sort_key(o["row"])):
        traces.extend(o["traces"])
    table = ResultTable(rows=rows, aggregates=aggregate_rows(rows),
                        traces=traces, timings=timings)
    if write:
        write_outputs(table, plan, config_tree=config_tree)
    return table


def write_outputs(table: ResultTable, plan: ExperimentPlan,
                  config_tree: Optional[dict] = None) -> Dict[str, str]:
    """Write the bundle into plan.out_dir; returns {filename: path}."""
    out = plan.out_dir
    os.makedirs(out, exist_ok=True)
    texts = {
        "results.csv": table.results_csv_text(),
        "timings.csv": table.timings_csv_text(),
        "traces.jsonl": table.traces_jsonl_text(),
    }
    tree = config_tree if config_tree is not None else plan_to_tree(plan)
    manifest = {
        "package": "star-rsma",
        "version": __version__,
        "config_hash": config_hash(tree),
        "config": tree,
        # timings and trace wall clocks vary run to run by nature
        "deterministic_files": ["results.csv"],
        "files": {name: hashlib.sha256(text.encode("utf-8")).hexdigest()
                  for name, text in texts.items()},
    }
    texts["manifest.json"] = json.dumps(manifest, indent=2,
                                        sort_keys=True) + "\n"
    paths = {}
    for name, text in texts.items():
        path = os.path.join(out, name)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        paths[name] = path
    return paths


def _parse_cell(column: str, text: str, kind: str):
    if text == "":
        return None
    if column in ("scheme", "termination_reason", "kind"):
        return text
    if column == "trial":
        return int(text)
    if column == "qos_ok":
        if text in ("true", "false"):
            return text == "true"
        return float(text)          # aggregate rows carry the met fraction
    if column == "per_user_rates":
        return text
    if column == "n_outer":
        return int(text) if kind == "trial" else float(text)
    return float(text)


def load_table(out_dir: str) -> ResultTable:
    """Read a written bundle back; inverse of write_outputs for plotting."""
    rows, aggregates = [], []
    with open(os.path.join(out_dir, "results.csv"), encoding="utf-8") as fh:
        for raw in csv.DictReader(fh):
            row = {c: _parse_cell(c, raw[c], raw["kind"])
                   for c in RESULT_COLUMNS}
            (rows if row["kind"] == "trial" else aggregates).append(row)
    traces = []
    trace_path = os.path.join(out_dir, "traces.jsonl")
    if os.path.exists(trace_path):
        with open(trace_path, encoding="utf-8") as fh:
            traces = [json.loads(line) for line in fh if line.strip()]
    return ResultTable(rows=rows, aggregates=aggregates, traces=traces)


def _multi_axes(table: ResultTable) -> List[str]:
    values = {a: set() for a in SWEEP_AXES}
    for row in table.rows:
        for a in SWEEP_AXES:
            values[a].add(float(row[a]))
    return [a for a in SWEEP_AXES if len(values[a]) > 1]


def emit_plot_data(table: ResultTable, figure_kind: str, out_dir: str,
                   axis: Optional[str] = None) -> List[str]:
    """Columnar plot files for one figure kind; returns written paths.

    convergence: iteration,objective,n_ris from the joint scheme's traces,
    objectives averaged across trials at each outer index. sweep: x, mean,
    std, scheme along one axis (the single multi-valued axis when not
    named). joint: one matrix per scheme, n_bs rows by n_ris columns of
    mean sum rate.
    """
    os.makedirs(out_dir, exist_ok=True)
    if figure_kind == "convergence":
        outer = [t for t in table.traces
                 if t.get("kind") == "outer" and t.get("scheme") == "star_opt"
                 and t.get("stage2_objective") is not None
                 and np.isfinite(t["stage2_objective"])]
        if not outer:
            raise ValueError(
                "convergence plot needs star_opt traces with stage-2 "
                "objectives; run the plan with the star_opt scheme")
        acc: Dict[Tuple[float, int], List[float]] = {}
        for t in outer:
            acc.setdefault((float(t["n_ris"]), int(t["outer"])),
                           []).append(float(t["stage2_objective"]))
        path = os.path.join(out_dir, "plot_convergence.csv")
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "objective", "n_ris"])
            for (m, it), objs in sorted(acc.items(), key=lambda kv:
                                        (kv[0][0], kv[0][1])):
                w.writerow([it, _fmt(float(np.mean(objs))), _fmt(m)])
        return [path]

    if figure_kind == "sweep":
        multi = _multi_axes(table)
        if axis is None:
            if len(multi) != 1:
                raise ValueError(
                    f"sweep plot needs one swept axis, found {multi!r}; "
                    "pass axis= explicitly")
            axis = multi[0]
        if axis not in SWEEP_AXES:
            raise ValueError(f"unknown axis {axis!r}; valid: {SWEEP_AXES}")
        acc: Dict[Tuple[str, float], List[Tuple[float, float]]] = {}
        for row in table.aggregates:
            key = (row["scheme"], float(row[axis]))
            acc.setdefault(key, []).append(
                (float(row["sum_rate"]), float(row["sum_rate_std"])))
        if not acc:
            raise ValueError("sweep plot needs aggregate rows")
        path = os.path.join(out_dir, f"plot_sweep_{axis}.csv")
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x", "mean", "std", "scheme"])
            for (scheme, x), pairs in sorted(acc.items()):
                means = [p[0] for p in pairs]
                stds = [p[1] for p in pairs]
                w.writerow([_fmt(x), _fmt(float(np.mean(means))),
                            _fmt(float(np.mean(stds))), scheme])
        return [path]

    if figure_kind == "joint":
        n_vals = sorted({float(r["n_bs"]) for r in table.aggregates})
        m_vals = sorted({float(r["n_ris"]) for r in table.aggregates})
        if len(n_vals) < 2 or len(m_vals) < 2:
            raise ValueError(
                "joint plot needs both n_bs and n_ris swept; "
                f"found n_bs values {n_vals!r}, n_ris values {m_vals!r}")
        schemes = sorted({r["scheme"] for r in table.aggregates})
        paths = []
        for scheme in schemes:
            grid = np.full((len(n_vals), len(m_vals)), np.nan)
            counts = np.zeros_like(grid)
            for row in table.aggregates:
                if row["scheme"] != scheme:
                    continue
                i = n_vals.index(float(row["n_bs"]))
                j = m_vals.index(float(row["n_ris"]))
                v = float(row["sum_rate"])
                grid[i, j] = v if np.isnan(grid[i, j]) else grid[i, j] + v
                counts[i, j] += 1
            grid = np.where(counts > 0, grid / np.maximum(counts, 1), np.nan)
            path = os.path.join(out_dir, f"plot_joint_{scheme}.csv")
            with open(path, "w", encoding="utf-8", newline="\n") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["n_bs"] + [_fmt(m) for m in m_vals])
                for i, n in enumerate(n_vals):
                    w.writerow([_fmt(n)] + [_fmt(float(v))
                                            for v in grid[i]])
            paths.append(path)
        return paths

    raise ValueError(f"unknown figure kind {figure_kind!r}; "
                     "valid: convergence, sweep, joint")
