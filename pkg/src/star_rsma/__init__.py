"""Robust joint beamforming for a STAR-RIS-assisted RSMA downlink.

Library for worst-case sum-rate maximization under transceiver hardware
impairments and norm-bounded channel estimation error: system and channel
models, worst-case rate expressions, the two SDR/SCA stages, the
alternating optimizer, validation oracles, and the simulation harness.
"""

__version__ = "0.1.0"

from .system_model import (SystemParams, StarConfig, ChannelSet,  # noqa: E402
                           Scenario, draw_scenario, draw_channel_set,
                           attach_star, TRANSMISSION, REFLECTION)
from .rate_engine import (PrecoderSolution, worst_case_rates,  # noqa: E402
                          repair_shares, sum_rate)
from .rng import substream  # noqa: E402
from .oracles import (GridSpec, grid_search_star,  # noqa: E402
                      simulate_sinr_monte_carlo, trace_bound_sampler)
from .stage1 import (SCASettings, Stage1Result, sca_iterate_stage1,  # noqa: E402
                     extract_precoders)
from .stage2 import (Stage2Result, sca_iterate_stage2, extract_star,  # noqa: E402
                     initial_star, random_star)
from .alternation import (AlgorithmRun, OuterLimits, RunTrace,  # noqa: E402
                          FinalSolution, run_algorithm1, run_scheme,
                          validate_solution, SCHEMES, TERMINATION_REASONS)
from .config import (ExperimentPlan, ConfigError, load_config,  # noqa: E402
                     default_config, validate_config, params_from_config,
                     plan_from_config)
from .harness import ResultTable, run_plan, load_table, emit_plot_data  # noqa: E402

__all__ = [
    "__version__",
    "SystemParams", "StarConfig", "ChannelSet", "Scenario",
    "draw_scenario", "draw_channel_set", "attach_star",
    "TRANSMISSION", "REFLECTION",
    "PrecoderSolution", "worst_case_rates", "repair_shares", "sum_rate",
    "substream",
    "GridSpec", "grid_search_star", "simulate_sinr_monte_carlo",
    "trace_bound_sampler",
    "SCASettings", "Stage1Result", "sca_iterate_stage1", "extract_precoders",
    "Stage2Result", "sca_iterate_stage2", "extract_star", "initial_star",
    "random_star",
    "AlgorithmRun", "OuterLimits", "SCASettings", "RunTrace",
    "FinalSolution", "run_algorithm1", "run_scheme", "validate_solution",
    "SCHEMES", "TERMINATION_REASONS",
    "ExperimentPlan", "ConfigError", "load_config", "default_config",
    "validate_config", "params_from_config", "plan_from_config",
    "ResultTable", "run_plan", "load_table", "emit_plot_data",
]
