"""Alternating optimization over precoders and surface, plus benchmarks.

One outer round attaches the current surface, improves the precoders,
then improves the surface with the precoders held fixed. Both stages
maximize surrogates tangent at the carried-over point, so the recorded
relaxed objectives form a non-decreasing chain across the whole run
(warm-started stages get exact tangent anchors; only the cold start
inflates them). Every round also recovers a deployable rank-one
configuration; the best feasible recovery is the fallback should a later
round degrade it.

Benchmark runs reuse the same trace format: a reflection-only surface
(transmission-side users not served at all), a fixed surface under which
only the precoders are optimized, and a fully random configuration whose
share split alone is repaired.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional

import numpy as np

from .conic import INFEASIBLE
from .rate_engine import (PrecoderSolution, repair_shares, sum_rate,
                          worst_case_rates)
from .stage1 import (ANCHOR_INFLATION, SCASettings, extract_precoders,
                     initial_precoders, sca_iterate_stage1)
from .stage2 import (_surface_data, extract_star, initial_star, random_star,
                     sca_iterate_stage2, surrogate_objective)
from .system_model import ChannelSet, StarConfig, SystemParams, attach_star

SCHEME_STAR = "star_opt"
SCHEME_B1 = "benchmark1_conventional_ris"
SCHEME_B2 = "benchmark2_fixed_passive"
SCHEME_B3 = "benchmark3_random"
SCHEMES = (SCHEME_STAR, SCHEME_B1, SCHEME_B2, SCHEME_B3)

TERMINATION_REASONS = ("converged", "max_iter", "infeasible", "numerical")


@dataclass(frozen=True)
class OuterLimits:
    tau_max: int = 30        # outer-round cap
    tol_outer: float = 1e-3  # relative change of the surface-stage objective


@dataclass
class OuterRecord:
    """Everything one outer round produced, relaxed and recovered."""

    outer: int
    stage1_objective: float      # precoder-stage relaxed optimum
    stage2_objective: float      # surface-stage relaxed optimum (nan if skipped)
    stage2_bound: float          # certified cap on that optimum (dual value)
    stage1_rate: float           # true sum rate at the stage-1 point, repaired split
    stage2_rate: float           # true sum rate after the surface update, same
    extracted_rate: float        # rank-one recovery, true worst-case sum rate
    extracted_qos_ok: bool
    extracted_bound: float       # surface surrogate at the recovered lift
    per_user_rates: np.ndarray   # (Q,) share + private at the recovery
    stage1_iterations: int
    stage2_iterations: int
    stage1_status: str           # last solver status inside the stage
    stage2_status: str
    wall_time_s: float
    stage1_rank_ratio: float = np.nan   # max lambda2/lambda1 over W blocks
    stage2_rank_ratio: float = np.nan   # max over (E_t, E_r)

    def to_dict(self) -> dict:
        d = {k: v for k, v in self.__dict__.items()}
        d["per_user_rates"] = [float(x) for x in np.atleast_1d(self.per_user_rates)]
        d["extracted_qos_ok"] = bool(self.extracted_qos_ok)
        return d


@dataclass
class RunTrace:
    scheme: str
    records: List[OuterRecord] = field(default_factory=list)
    termination_reason: str = "max_iter"

    @property
    def n_outer(self) -> int:
        return len(self.records)

    def relaxed_chain(self) -> List[float]:
        """Stage objectives in solve order; non-decreasing within 1e-6."""
        chain: List[float] = []
        for rec in self.records:
            for v in (rec.stage1_objective, rec.stage2_objective):
                if np.isfinite(v):
                    chain.append(float(v))
        return chain

    def summary(self) -> dict:
        return {"scheme": self.scheme,
                "termination_reason": self.termination_reason,
                "n_outer": self.n_outer,
                "wall_time_s": float(sum(r.wall_time_s for r in self.records))}

    def to_records(self) -> List[dict]:
        """Line-delimited form: one summary row, then one row per round."""
        head = dict(kind="run", **self.summary())
        rows = [head]
        for rec in self.records:
            rows.append(dict(kind="outer", scheme=self.scheme, **rec.to_dict()))
        return rows


@dataclass
class FinalSolution:
    """One deployable configuration with its honestly recomputed figures."""

    star: StarConfig
    precoders: PrecoderSolution
    common_rates: np.ndarray     # (Q,) worst-case common-stream rates
    private_rates: np.ndarray    # (Q,)
    per_user_rates: np.ndarray   # (Q,) share + private
    sum_rate_value: float
    qos_ok: bool                 # every served floor met and split decodable
    share_split_ok: bool
    power_ok: bool
    coupling_residual: float


@dataclass
class AlgorithmRun:
    trace: RunTrace
    final: FinalSolution


def _split_ok(shares: np.ndarray, common_rates: np.ndarray,
              stream_powers: np.ndarray, tol: float = 1e-9) -> bool:
    """Shares fit under every decoding user's common rate.

    Users with no share and no private power take no part in the common
    stream (a reflection-only run leaves transmission users entirely
    unserved), so they do not cap the split.
    """
    shares = np.asarray(shares, dtype=float)
    if shares.size == 0:
        return True
    if np.min(shares) < -tol:
        return False
    served = (shares > tol) | (stream_powers > 1e-12)
    if not np.any(served):
        return bool(shares.sum() <= tol)
    return bool(shares.sum() <= np.min(common_rates[served]) + tol)


def validate_solution(channels: ChannelSet, params: SystemParams,
                      star: StarConfig, precoders: PrecoderSolution,
                      radii_sq: Optional[np.ndarray] = None) -> FinalSolution:
    """Recompute everything reported about a configuration from raw channels."""
    attached = attach_star(channels, star, params.epsilon_level,
                           radii_sq=radii_sq)
    common, private = worst_case_rates(attached, precoders, params)
    shares = np.asarray(precoders.common_rate_share, dtype=float)
    powers = np.array([np.trace(w).real for w in precoders.w_private_mat])
    per_user = shares + private
    served = (shares > 1e-9) | (powers > 1e-12)
    split_ok = _split_ok(shares, common, powers)
    qos_ok = split_ok and bool(np.all(per_user >= params.r_min - 1e-9))
    return FinalSolution(
        star=star, precoders=precoders, common_rates=common,
        private_rates=private, per_user_rates=per_user,
        sum_rate_value=sum_rate(shares, private), qos_ok=qos_ok,
        share_split_ok=split_ok,
        power_ok=bool(precoders.total_power()
                      <= params.power_budget_w * (1 + 1e-9)),
        coupling_residual=float(star.coupling_residual()))


def _zero_solution(channels: ChannelSet, params: SystemParams,
                   star: StarConfig,
                   radii_sq: Optional[np.ndarray]) -> FinalSolution:
    q_n, n = channels.n_users, channels.n_bs
    idle = PrecoderSolution.from_vectors(np.zeros(n, dtype=complex),
                                         np.zeros((q_n, n), dtype=complex),
                                         np.zeros(q_n))
    return validate_solution(channels, params, star, idle, radii_sq)


def _failure_reason(records, outer: int) -> str:
    status = records[-1].status if records else "numerical_failure"
    if outer == 0 and status == INFEASIBLE:
        return "infeasible"
    return "numerical"


def _failed_record(outer: int, s1, s2, elapsed: float,
                   n_users: int) -> OuterRecord:
    def last_status(res):
        return res.records[-1].status if res and res.records else "not_run"
    return OuterRecord(
        outer=outer,
        stage1_objective=float(s1.objective) if s1 and s1.feasible else np.nan,
        stage2_objective=np.nan, stage2_bound=np.nan,
        stage1_rate=np.nan, stage2_rate=np.nan,
        extracted_rate=np.nan, extracted_qos_ok=False, extracted_bound=np.nan,
        per_user_rates=np.full(n_users, np.nan),
        stage1_iterations=len(s1.records) if s1 else 0,
        stage2_iterations=len(s2.records) if s2 else 0,
        stage1_status=last_status(s1), stage2_status=last_status(s2),
        wall_time_s=elapsed)


def _better(a: FinalSolution, b: FinalSolution) -> bool:
    return (a.qos_ok, a.sum_rate_value) > (b.qos_ok, b.sum_rate_value)


def run_algorithm1(channels: ChannelSet, params: SystemParams,
                   rng: np.random.Generator,
                   limits: OuterLimits = OuterLimits(),
                   settings: SCASettings = SCASettings()) -> AlgorithmRun:
    """Alternate the two stages from the deterministic initialization.

    Uncertainty radii are frozen at the initial surface so every stage of
    the run optimizes one fixed robust problem. Convergence is declared
    when the surface-stage relaxed objective moves by less than
    ``limits.tol_outer`` relative between consecutive rounds. The final
    configuration is the best rank-one recovery over all rounds, QoS
    first, re-validated against the raw channels.
    """
    if channels.star is not None:
        raise ValueError("pass raw channels; the run attaches its own surface")
    star = initial_star(channels, params)
    attached = attach_star(channels, star, params.epsilon_level)
    radii = attached.uncertainty_radius_sq          # frozen for the run
    precoders = initial_precoders(attached, params)
    trace = RunTrace(scheme=SCHEME_STAR)
    best: Optional[FinalSolution] = None
    prev_obj: Optional[float] = None
    reason = "max_iter"

    for tau in range(limits.tau_max):
        t0 = time.perf_counter()
        s1 = sca_iterate_stage1(
            attached, params, precoders, settings,
            anchor_inflation=ANCHOR_INFLATION if tau == 0 else 1.0)
        if not s1.feasible:
            reason = _failure_reason(s1.records, tau)
            trace.records.append(_failed_record(
                tau, s1, None, time.perf_counter() - t0, channels.n_users))
            break
        precoders = s1.solution
        c1, p1 = worst_case_rates(attached, precoders, params)
        sh1, _ = repair_shares(c1, p1, params.r_min)
        rate1 = sum_rate(sh1, p1)

        s2 = sca_iterate_stage2(attached, params, precoders, star, settings)
        if not s2.feasible:
            reason = _failure_reason(s2.records, tau)
            trace.records.append(_failed_record(
                tau, s1, s2, time.perf_counter() - t0, channels.n_users))
            break
        data = _surface_data(attached, params, precoders)
        star = s2.star
        precoders = replace(precoders, common_rate_share=s2.shares)
        attached = attach_star(channels, star, params.epsilon_level,
                               radii_sq=radii)
        c2, p2 = worst_case_rates(attached, precoders, params)
        sh2, _ = repair_shares(c2, p2, params.r_min)
        rate2 = sum_rate(sh2, p2)

        # rank-one recovery: precoders against the lifted surface, then the
        # surface against the recovered precoders, scored by true rates
        ext_p = extract_precoders(attached, params, precoders, rng,
                                  sdr_bound=s2.objective)
        ext_s = extract_star(attached, params, ext_p.solution, star, rng,
                             sdr_bound=s2.objective, radii_sq=radii)
        recovered = replace(ext_p.solution, common_rate_share=ext_s.shares)
        candidate = validate_solution(channels, params, ext_s.star,
                                      recovered, radii)
        bound = surrogate_objective(data, attached, params, ext_s.star,
                                    s2.anchors, settings.qos_margin)

        trace.records.append(OuterRecord(
            outer=tau, stage1_objective=float(s1.objective),
            stage2_objective=float(s2.objective),
            stage2_bound=float(s2.objective_bound),
            stage1_rate=rate1, stage2_rate=rate2,
            extracted_rate=candidate.sum_rate_value,
            extracted_qos_ok=candidate.qos_ok, extracted_bound=float(bound),
            per_user_rates=candidate.per_user_rates,
            stage1_iterations=len(s1.records),
            stage2_iterations=len(s2.records),
            stage1_status=s1.records[-1].status,
            stage2_status=s2.records[-1].status,
            wall_time_s=time.perf_counter() - t0,
            stage1_rank_ratio=float(np.max(ext_p.rank_ratios)),
            stage2_rank_ratio=float(np.max(ext_s.rank_ratios))))
        if best is None or _better(candidate, best):
            best = candidate

        if prev_obj is not None:
            rel = abs(s2.objective - prev_obj) / max(abs(prev_obj), 1e-12)
            if rel <= limits.tol_outer:
                reason = "converged"
                break
        prev_obj = s2.objective

    trace.termination_reason = reason
    if best is None:
        best = _zero_solution(channels, params, star, radii)
    return AlgorithmRun(trace=trace, final=best)


def _benchmark_fixed_surface(channels: ChannelSet, params: SystemParams,
                             rng: np.random.Generator, limits: OuterLimits,
                             settings: SCASettings) -> AlgorithmRun:
    """Precoders optimized once under the untouched initial surface."""
    star = initial_star(channels, params)
    attached = attach_star(channels, star, params.epsilon_level)
    radii = attached.uncertainty_radius_sq
    trace = RunTrace(scheme=SCHEME_B2)
    t0 = time.perf_counter()
    s1 = sca_iterate_stage1(attached, params,
                            initial_precoders(attached, params), settings)
    if not s1.feasible:
        trace.termination_reason = _failure_reason(s1.records, 0)
        trace.records.append(_failed_record(
            0, s1, None, time.perf_counter() - t0, channels.n_users))
        return AlgorithmRun(trace, _zero_solution(channels, params, star, radii))
    c1, p1 = worst_case_rates(attached, s1.solution, params)
    sh1, _ = repair_shares(c1, p1, params.r_min)
    ext_p = extract_precoders(attached, params, s1.solution, rng,
                              sdr_bound=s1.objective)
    final = validate_solution(channels, params, star, ext_p.solution, radii)
    trace.records.append(OuterRecord(
        outer=0, stage1_objective=float(s1.objective),
        stage2_objective=np.nan, stage2_bound=np.nan,
        stage1_rate=sum_rate(sh1, p1),
        stage2_rate=np.nan, extracted_rate=final.sum_rate_value,
        extracted_qos_ok=final.qos_ok, extracted_bound=np.nan,
        per_user_rates=final.per_user_rates,
        stage1_iterations=len(s1.records), stage2_iterations=0,
        stage1_status=s1.records[-1].status, stage2_status="not_run",
        wall_time_s=time.perf_counter() - t0,
        stage1_rank_ratio=float(np.max(ext_p.rank_ratios))))
    trace.termination_reason = "converged" if s1.converged else "max_iter"
    return AlgorithmRun(trace, final)


def _benchmark_reflection_only(channels: ChannelSet, params: SystemParams,
                               rng: np.random.Generator, limits: OuterLimits,
                               settings: SCASettings) -> AlgorithmRun:
    """Conventional reflecting surface: transmission users go unserved.

    The full run executes on the reflection users only; with an empty
    transmission region the surface programs pin that side to zero, so
    all element energy reflects. Results merge back over the full user
    set with zero precoders and shares for the unserved side.
    """
    r_users = [q for q in range(channels.n_users)
               if channels.region[q] == "r"]
    star0 = initial_star(channels.restrict_users(r_users) if r_users
                         else channels, params)
    radii = attach_star(channels, star0,
                        params.epsilon_level).uncertainty_radius_sq
    if not r_users:
        trace = RunTrace(scheme=SCHEME_B1, termination_reason="infeasible")
        return AlgorithmRun(trace, _zero_solution(channels, params, star0, radii))

    sub = run_algorithm1(channels.restrict_users(r_users), params, rng,
                         limits, settings)
    n = channels.n_bs
    got = sub.final.precoders
    w_p = np.zeros((channels.n_users, n, n), dtype=complex)
    w_pv = np.zeros((channels.n_users, n), dtype=complex) \
        if got.w_private is not None else None
    shares = np.zeros(channels.n_users)
    for i, q in enumerate(r_users):
        w_p[q] = got.w_private_mat[i]
        shares[q] = got.common_rate_share[i]
        if w_pv is not None:
            w_pv[q] = got.w_private[i]
    merged = PrecoderSolution(w_common_mat=got.w_common_mat,
                              w_private_mat=w_p, common_rate_share=shares,
                              w_common=got.w_common, w_private=w_pv)
    final = validate_solution(channels, params, sub.final.star, merged, radii)
    trace = RunTrace(scheme=SCHEME_B1, records=sub.trace.records,
                     termination_reason=sub.trace.termination_reason)
    return AlgorithmRun(trace, final)


def _benchmark_random(channels: ChannelSet, params: SystemParams,
                      rng: np.random.Generator) -> AlgorithmRun:
    """Uniform random surface and precoders; only the share split is repaired."""
    m, n, q_n = channels.n_ris, channels.n_bs, channels.n_users
    star = random_star(m, rng)
    attached = attach_star(channels, star, params.epsilon_level)
    radii = attached.uncertainty_radius_sq
    t0 = time.perf_counter()

    def draw(power):
        v = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / np.sqrt(2)
        return v * np.sqrt(power) / np.linalg.norm(v)

    per_stream = params.power_budget_w / (q_n + 1)
    sol = PrecoderSolution.from_vectors(
        draw(per_stream), np.stack([draw(per_stream) for _ in range(q_n)]),
        np.zeros(q_n))
    common, private = worst_case_rates(attached, sol, params)
    shares, _ = repair_shares(common, private, params.r_min)
    final = validate_solution(channels, params, star,
                              replace(sol, common_rate_share=shares), radii)
    trace = RunTrace(scheme=SCHEME_B3, termination_reason="converged")
    trace.records.append(OuterRecord(
        outer=0, stage1_objective=np.nan, stage2_objective=np.nan,
        stage2_bound=np.nan, stage1_rate=np.nan, stage2_rate=np.nan,
        extracted_rate=final.sum_rate_value, extracted_qos_ok=final.qos_ok,
        extracted_bound=np.nan, per_user_rates=final.per_user_rates,
        stage1_iterations=0, stage2_iterations=0,
        stage1_status="not_run", stage2_status="not_run",
        wall_time_s=time.perf_counter() - t0))
    return AlgorithmRun(trace, final)


def run_benchmark(channels: ChannelSet, params: SystemParams, scheme: str,
                  rng: np.random.Generator,
                  limits: OuterLimits = OuterLimits(),
                  settings: SCASettings = SCASettings()) -> AlgorithmRun:
    if scheme == SCHEME_B1:
        return _benchmark_reflection_only(channels, params, rng, limits, settings)
    if scheme == SCHEME_B2:
        return _benchmark_fixed_surface(channels, params, rng, limits, settings)
    if scheme == SCHEME_B3:
        return _benchmark_random(channels, params, rng)
    raise ValueError(f"unknown benchmark scheme {scheme!r}")


def run_scheme(channels: ChannelSet, params: SystemParams, scheme: str,
               rng: np.random.Generator,
               limits: OuterLimits = OuterLimits(),
               settings: SCASettings = SCASettings()) -> AlgorithmRun:
    """Dispatch one named scheme on one channel realization."""
    if scheme == SCHEME_STAR:
        return run_algorithm1(channels, params, rng, limits, settings)
    if scheme in SCHEMES:
        return run_benchmark(channels, params, scheme, rng, limits, settings)
    raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
