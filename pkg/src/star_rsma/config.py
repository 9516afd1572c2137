"""Experiment configuration: file loading, validation, unit conversions.

The config file is a small YAML tree; every key, unit, and default is
documented in docs/config-schema.md. Physical units (dBm, Mbps) live only
at this boundary — everything past plan construction works in watts and
bits/s/Hz.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import Dict, List, Tuple

import numpy as np
import yaml

from .alternation import SCHEMES, OuterLimits
from .stage1 import SCASettings
from .system_model import SystemParams


class ConfigError(ValueError):
    """Invalid or unreadable experiment configuration."""


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((float(dbm) - 30.0) / 10.0)


def watts_to_dbm(watts: float) -> float:
    if watts <= 0:
        raise ValueError("power must be positive")
    return 10.0 * np.log10(float(watts)) + 30.0


def mbps_to_bits_per_hz(mbps: float, bandwidth_hz: float) -> float:
    return float(mbps) * 1e6 / float(bandwidth_hz)


def bits_per_hz_to_mbps(rate: float, bandwidth_hz: float) -> float:
    return float(rate) * float(bandwidth_hz) / 1e6


# sweepable SystemParams fields, in canonical column order
SWEEP_AXES = ("n_bs", "n_ris", "epsilon_level", "kappa_t", "kappa_r",
              "power_budget_w")

# config-file spelling -> (internal axis, converter applied per value)
_AXIS_KEYS = {
    "n_bs": ("n_bs", int),
    "n_ris": ("n_ris", int),
    "epsilon": ("epsilon_level", float),
    "kappa_t": ("kappa_t", float),
    "kappa_r": ("kappa_r", float),
    "power_budget_dbm": ("power_budget_w", dbm_to_watts),
}


@dataclass(frozen=True)
class ExperimentPlan:
    """Everything one reproducible experiment needs.

    ``axes`` maps SystemParams field names to value tuples; the sweep is
    their Cartesian product. A single run is fully determined by
    (seed, trial index, sweep point, scheme).
    """

    base: SystemParams
    axes: Dict[str, Tuple] = field(default_factory=dict)
    schemes: Tuple[str, ...] = ("star_opt",)
    n_trials: int = 1
    seed: int = 0
    out_dir: str = "runs"
    limits: OuterLimits = field(default_factory=OuterLimits)
    settings: SCASettings = field(default_factory=SCASettings)

    def __post_init__(self):
        for name, values in self.axes.items():
            if name not in SWEEP_AXES:
                raise ConfigError(f"unknown sweep axis {name!r}")
            if len(values) == 0:
                raise ConfigError(f"sweep axis {name!r} is empty")
        if self.n_trials < 1:
            raise ConfigError("n_trials must be >= 1")
        if not self.schemes:
            raise ConfigError("at least one scheme is required")
        for s in self.schemes:
            if s not in SCHEMES:
                raise ConfigError(f"unknown scheme {s!r}; valid: {SCHEMES}")

    def points(self) -> List[Dict[str, float]]:
        """Sweep points in deterministic order (canonical axis nesting)."""
        names = [a for a in SWEEP_AXES if a in self.axes]
        if not names:
            return [{}]
        combos = itertools.product(*(self.axes[a] for a in names))
        return [dict(zip(names, c)) for c in combos]

    def params_at(self, point: Dict[str, float]) -> SystemParams:
        return replace(self.base, **point) if point else self.base

    @property
    def n_points(self) -> int:
        return len(self.points())


def load_config(path: str) -> dict:
    """Parse a YAML config file into a plain tree; I/O or parse errors raise."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            tree = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {path!r}: {exc}") from exc
    if tree is None:
        tree = {}
    if not isinstance(tree, dict):
        raise ConfigError("config root must be a mapping")
    return tree


def default_config() -> dict:
    """Full config tree with the published setup's default values."""
    return {
        "system": {
            "n_bs": 8,                  # BS antennas N
            "n_ris": 32,                # surface elements M
            "n_users": 4,               # users Q, half per region
            "kappa_t": 0.01,            # transmit distortion ratio
            "kappa_r": 0.01,            # receive distortion ratio
            "epsilon": 0.02,            # CSI error level, radius scale
            "noise_dbm": -114.0,
            "power_budget_dbm": 30.0,
            "r_min_mbps": 0.5,          # per-user QoS floor
            "bandwidth_hz": 1.0e6,
            "carrier_hz": 2.5e9,
            "rician_bs_ris": 10.0,
            "rician_ris_user": 10.0,
        },
        "sweep": {},                    # e.g. {"n_ris": [4, 8, 16]}
        "run": {
            "schemes": ["star_opt"],
            "trials": 1,
            "seed": 0,
            "out_dir": "runs",
        },
        "limits": {
            "tau_max": 30,
            "tol_outer": 1.0e-3,
        },
        "solver": {
            "tol_inner": 1.0e-4,
            "max_inner": 20,
            "qos_margin": 2.0e-4,
            "log_mode": "exp_cone",
        },
    }


_SECTIONS = ("system", "sweep", "run", "limits", "solver")


def _check_number(errors, where, value, lo=None, hi=None, integer=False,
                  lo_open=False, hi_open=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        errors.append(f"{where}: expected a number, got {value!r}")
        return
    if integer and not isinstance(value, int):
        errors.append(f"{where}: expected an integer, got {value!r}")
        return
    v = float(value)
    if lo is not None and (v <= lo if lo_open else v < lo):
        errors.append(f"{where}: {value!r} below the valid range")
    if hi is not None and (v >= hi if hi_open else v > hi):
        errors.append(f"{where}: {value!r} above the valid range")


_SYSTEM_RULES = {
    # key: (lo, hi, integer, lo_open, hi_open)
    "n_bs": (1, None, True, False, False),
    "n_ris": (1, None, True, False, False),
    "n_users": (1, None, True, False, False),
    "kappa_t": (0.0, 1.0, False, False, True),
    "kappa_r": (0.0, 1.0, False, False, True),
    "epsilon": (0.0, 1.0, False, False, True),
    "noise_dbm": (None, None, False, False, False),
    "power_budget_dbm": (None, None, False, False, False),
    "r_min_mbps": (0.0, None, False, False, False),
    "bandwidth_hz": (0.0, None, False, True, False),
    "carrier_hz": (0.0, None, False, True, False),
    "rician_bs_ris": (0.0, None, False, False, False),
    "rician_ris_user": (0.0, None, False, False, False),
}


def validate_config(tree: dict) -> List[str]:
    """All schema violations in the tree, empty when valid."""
    errors: List[str] = []
    if not isinstance(tree, dict):
        return ["config root must be a mapping"]
    for section in tree:
        if section not in _SECTIONS:
            errors.append(f"unknown section {section!r}")
    for section in _SECTIONS:
        sub = tree.get(section, {})
        if sub is None:
            sub = {}
        if not isinstance(sub, dict):
            errors.append(f"{section}: must be a mapping")
            continue
        known = {
            "system": _SYSTEM_RULES.keys(),
            "sweep": _AXIS_KEYS.keys(),
            "run": ("schemes", "trials", "seed", "out_dir"),
            "limits": ("tau_max", "tol_outer"),
            "solver": ("tol_inner", "max_inner", "qos_margin", "log_mode"),
        }[section]
        for key in sub:
            if key not in known:
                errors.append(f"{section}.{key}: unknown key")

    system = tree.get("system") or {}
    if isinstance(system, dict):
        for key, (lo, hi, integer, lo_o, hi_o) in _SYSTEM_RULES.items():
            if key in system:
                _check_number(errors, f"system.{key}", system[key],
                              lo, hi, integer, lo_o, hi_o)

    sweep = tree.get("sweep") or {}
    if isinstance(sweep, dict):
        for key, values in sweep.items():
            if key not in _AXIS_KEYS:
                continue
            if not isinstance(values, (list, tuple)) or len(values) == 0:
                errors.append(f"sweep.{key}: must be a non-empty list")
                continue
            rules = _SYSTEM_RULES[key]   # sweep keys reuse the system rules
            for i, v in enumerate(values):
                _check_number(errors, f"sweep.{key}[{i}]", v, rules[0],
                              rules[1], rules[2], rules[3], rules[4])

    run = tree.get("run") or {}
    if isinstance(run, dict):
        schemes = run.get("schemes")
        if schemes is not None:
            if not isinstance(schemes, (list, tuple)) or len(schemes) == 0:
                errors.append("run.schemes: must be a non-empty list")
            else:
                for s in schemes:
                    if s not in SCHEMES:
                        errors.append(
                            f"run.schemes: unknown scheme {s!r}; "
                            f"valid: {', '.join(SCHEMES)}")
        if "trials" in run:
            _check_number(errors, "run.trials", run["trials"], 1, None, True)
        if "seed" in run:
            _check_number(errors, "run.seed", run["seed"], 0, None, True)
        if "out_dir" in run and not isinstance(run["out_dir"], str):
            errors.append("run.out_dir: must be a string")

    limits = tree.get("limits") or {}
    if isinstance(limits, dict):
        if "tau_max" in limits:
            _check_number(errors, "limits.tau_max", limits["tau_max"],
                          1, None, True)
        if "tol_outer" in limits:
            _check_number(errors, "limits.tol_outer", limits["tol_outer"],
                          0.0, None, lo_open=True)

    solver = tree.get("solver") or {}
    if isinstance(solver, dict):
        if "tol_inner" in solver:
            _check_number(errors, "solver.tol_inner", solver["tol_inner"],
                          0.0, None, lo_open=True)
        if "max_inner" in solver:
            _check_number(errors, "solver.max_inner", solver["max_inner"],
                          1, None, True)
        if "qos_margin" in solver:
            _check_number(errors, "solver.qos_margin", solver["qos_margin"],
                          0.0, None)
        if "log_mode" in solver and solver["log_mode"] not in (
                "exp_cone", "inner_linear"):
            errors.append("solver.log_mode: must be exp_cone or inner_linear")

    return errors


def _merged(tree: dict) -> dict:
    """Defaults overlaid with the user tree, one level deep."""
    merged = default_config()
    for section, sub in (tree or {}).items():
        if isinstance(sub, dict) and section in merged:
            merged[section].update(sub)
    return merged


def params_from_config(tree: dict) -> SystemParams:
    """Base SystemParams from a validated tree, units converted."""
    sys_ = _merged(tree)["system"]
    return SystemParams(
        n_bs=int(sys_["n_bs"]),
        n_ris=int(sys_["n_ris"]),
        n_users=int(sys_["n_users"]),
        kappa_t=float(sys_["kappa_t"]),
        kappa_r=float(sys_["kappa_r"]),
        noise_power_w=dbm_to_watts(sys_["noise_dbm"]),
        power_budget_w=dbm_to_watts(sys_["power_budget_dbm"]),
        r_min=mbps_to_bits_per_hz(sys_["r_min_mbps"], sys_["bandwidth_hz"]),
        epsilon_level=float(sys_["epsilon"]),
        rician_bs_ris=float(sys_["rician_bs_ris"]),
        rician_ris_user=float(sys_["rician_ris_user"]),
        carrier_hz=float(sys_["carrier_hz"]),
        bandwidth_hz=float(sys_["bandwidth_hz"]),
    )


def plan_from_config(tree: dict) -> ExperimentPlan:
    """Validate the tree and build the full plan. Raises ConfigError."""
    errors = validate_config(tree)
    if errors:
        raise ConfigError("; ".join(errors))
    merged = _merged(tree)
    axes: Dict[str, Tuple] = {}
    for key, values in (merged["sweep"] or {}).items():
        name, conv = _AXIS_KEYS[key]
        axes[name] = tuple(conv(v) for v in values)
    run = merged["run"]
    limits = merged["limits"]
    solver = merged["solver"]
    return ExperimentPlan(
        base=params_from_config(tree),
        axes=axes,
        schemes=tuple(run["schemes"]),
        n_trials=int(run["trials"]),
        seed=int(run["seed"]),
        out_dir=str(run["out_dir"]),
        limits=OuterLimits(tau_max=int(limits["tau_max"]),
                           tol_outer=float(limits["tol_outer"])),
        settings=SCASettings(tol_inner=float(solver["tol_inner"]),
                             max_inner=int(solver["max_inner"]),
                             qos_margin=float(solver["qos_margin"]),
                             log_mode=str(solver["log_mode"])),
    )
