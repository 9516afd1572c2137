"""Precoder stage: lifted SDR program, SCA anchors, rank-one recovery.

The surface configuration is held fixed; the program optimizes the lifted
common/private covariances and the common-rate shares. Slack variables
turn each worst-case rate into trace inequalities plus one exact log and
one Taylor-linearized log; anchoring the Taylor terms at the previous
optimum keeps every iterate feasible for the next program, so the inner
objective sequence never decreases.

All channel quantities are scaled by 1/sigma^2 inside the programs (the
SINRs are invariant, the conic data becomes O(1)); transmit powers stay
in watts. Reported slack values live on the normalized scale.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np

from .conic import LN2, ConicProgram, SolveReport, trace_term
from .rate_engine import (PrecoderSolution, distortion_aggregates,
                          repair_shares, sum_rate, worst_case_rates)
from .system_model import ChannelSet, SystemParams

ANCHOR_INFLATION = 1.01     # strict interiority of the initial anchors


@dataclass(frozen=True)
class SCASettings:
    """Inner-loop knobs shared by both stages."""

    tol_inner: float = 1e-4        # stop when the objective gain drops below
    max_inner: int = 20            # iteration cap per stage
    qos_margin: float = 2e-4       # internal tightening of r_min
    log_mode: str = "exp_cone"     # or "inner_linear" (conic fallback)
    feas_tol: float = 1e-7
    gap_tol: float = 1e-7
    max_solver_iter: int = 200


@dataclass(frozen=True)
class IterationRecord:
    """One inner solve, as written to the run trace."""

    stage: str
    iteration: int
    objective: float
    status: str
    max_violation: float
    solve_time_s: float


@dataclass
class Stage1Result:
    solution: PrecoderSolution         # lifted matrices + shares
    objective: float                   # relaxed objective, normalized scale
    records: List[IterationRecord]
    converged: bool
    feasible: bool                     # False if the first solve was infeasible
    slacks: Dict[str, np.ndarray] = field(default_factory=dict)
    noise_scale: float = 1.0           # 1/sigma^2 used inside the program


def _scaled_worst_case_channels(channels: ChannelSet, params: SystemParams):
    """Per-user (H - r2 I, H + r2 I) on the 1/sigma^2 scale, plus sigma2_tilde."""
    if channels.cov_estimated is None or channels.uncertainty_radius_sq is None:
        raise ValueError("attach a surface configuration first")
    scale = 1.0 / params.noise_power_w
    n = channels.n_bs
    eye = np.eye(n)
    h_minus, h_plus = [], []
    for q in range(channels.n_users):
        h = channels.cov_estimated[q] * scale
        r2 = float(channels.uncertainty_radius_sq[q]) * scale
        h_minus.append(h - r2 * eye)
        h_plus.append(h + r2 * eye)
    return h_minus, h_plus, 1.0 + params.kappa_r, scale


def build_p4(channels: ChannelSet, params: SystemParams,
             anchors: Dict[str, np.ndarray],
             settings: SCASettings = SCASettings()):
    """One SCA iterate of the precoder program.

    anchors: 'beta2' and 'kappa' arrays (Q,), strictly positive, on the
    normalized scale. Returns (program, handles); handles maps variable
    names to their builder objects for anchor updates and tests.

    Census: Q+1 PSD variables, 7Q scalars (share, psi, beta1, beta2,
    upsilon1, upsilon2, kappa slack per user), 6Q+1 inequality rows,
    2Q log-dominance rows.
    """
    beta2_a = np.asarray(anchors["beta2"], dtype=float)
    kappa_a = np.asarray(anchors["kappa"], dtype=float)
    if beta2_a.min() <= 0 or kappa_a.min() <= 0:
        raise ValueError("anchors must be strictly positive")
    h_minus, h_plus, s2t, _ = _scaled_worst_case_channels(channels, params)
    q_n, n = channels.n_users, channels.n_bs
    kt, kr = params.kappa_t, params.kappa_r

    p = ConicProgram("precoder-stage", feas_tol=settings.feas_tol,
                     gap_tol=settings.gap_tol, max_iter=settings.max_solver_iter,
                     log_mode=settings.log_mode)
    w_c = p.hermitian_psd("Wc", n)
    w_p = [p.hermitian_psd(f"W[{q}]", n) for q in range(q_n)]
    rc = [p.scalar(f"rc[{q}]", lower=0.0) for q in range(q_n)]
    psi = [p.scalar(f"psi[{q}]") for q in range(q_n)]
    beta1 = [p.scalar(f"beta1[{q}]") for q in range(q_n)]
    beta2 = [p.scalar(f"beta2[{q}]") for q in range(q_n)]
    ups1 = [p.scalar(f"upsilon1[{q}]") for q in range(q_n)]
    ups2 = [p.scalar(f"upsilon2[{q}]") for q in range(q_n)]
    kap = [p.scalar(f"kappa_slack[{q}]") for q in range(q_n)]

    r_min = params.r_min + settings.qos_margin
    sum_rc = sum(rc[1:], rc[0] + 0.0)
    for q in range(q_n):
        hm, hp = h_minus[q], h_plus[q]
        hp_diag = np.diag(np.diag(hp))
        # tr(Hp Pi2) = (1+kr) kt tr(diag(Hp) (sum W + Wc))
        tx_dist = (1 + kr) * kt * sum(
            (trace_term(hp_diag, w) for w in w_p), trace_term(hp_diag, w_c))
        num_p = trace_term(hm, w_p[q])
        den_p = (sum((trace_term((1 + kr) * hp, w) for w in w_p),
                     trace_term(kr * hp, w_c))
                 - trace_term(hp, w_p[q]) + tx_dist + s2t)
        p.add_le(beta1[q], num_p + den_p)                       # (30a)
        p.add_le(den_p, beta2[q])                                # (30b)
        # log2(beta1) - [log2(b2a) + (beta2-b2a)/(ln2 b2a)] >= psi   (31)
        taylor_p = (np.log2(beta2_a[q])
                    + (beta2[q] - beta2_a[q]) * (1.0 / (LN2 * beta2_a[q])))
        p.add_log_dominance(beta1[q], psi[q] + taylor_p, arg_lower=0.5,
                            anchor=float(beta2_a[q] * ANCHOR_INFLATION))
        p.add_le(r_min, rc[q] + psi[q])                          # QoS (29a)

        num_c = trace_term(hm, w_c)
        den_c = (sum((trace_term((1 + kr) * hp, w) for w in w_p),
                     trace_term(kr * hp, w_c)) + tx_dist + s2t)
        # log2(num_c + den_c) >= upsilon1                        (33)
        p.add_log_dominance(num_c + den_c, ups1[q], arg_lower=0.5,
                            anchor=float(kappa_a[q] * ANCHOR_INFLATION))
        p.add_le(den_c, kap[q])                                  # (35b)
        # log2(ka) + (kappa-ka)/(ln2 ka) <= upsilon2             (36)
        p.add_le(np.log2(kappa_a[q])
                 + (kap[q] - kappa_a[q]) * (1.0 / (LN2 * kappa_a[q])), ups2[q])
        p.add_le(sum_rc, ups1[q] - ups2[q])                      # (32)

    power = sum((trace_term(np.eye(n), w) for w in w_p), trace_term(np.eye(n), w_c))
    p.add_le(power, params.power_budget_w)                       # (27d)
    p.maximize(sum_rc + sum(psi[1:], psi[0] + 0.0))
    handles = {"w_c": w_c, "w_p": w_p, "rc": rc, "psi": psi, "beta1": beta1,
               "beta2": beta2, "upsilon1": ups1, "upsilon2": ups2, "kappa": kap}
    return p, handles


def anchor_values(channels: ChannelSet, params: SystemParams,
                  solution: PrecoderSolution,
                  inflation: float = ANCHOR_INFLATION) -> Dict[str, np.ndarray]:
    """Evaluate the anchored trace expressions at one precoder point.

    Values come back on the normalized scale. A cold start inflates them
    for strict interiority; warm starts across alternation rounds pass
    inflation=1 so the surrogate stays tangent at the carried-over point
    and the objective chain cannot dip.
    """
    h_minus, h_plus, s2t, scale = _scaled_worst_case_channels(channels, params)
    agg = distortion_aggregates(solution.w_common_mat, solution.w_private_mat,
                                params.kappa_t, params.kappa_r)
    q_n = channels.n_users
    beta2 = np.zeros(q_n)
    kappa = np.zeros(q_n)
    for q in range(q_n):
        hp = h_plus[q]
        beta2[q] = np.trace(hp @ agg.pi_private(q)).real + s2t
        kappa[q] = np.trace(hp @ agg.pi_common).real + s2t
    return {"beta2": beta2 * inflation, "kappa": kappa * inflation}


def initial_precoders(channels: ChannelSet, params: SystemParams) -> PrecoderSolution:
    """Matched-filter start: half the budget on the common stream.

    W_q aligns with the dominant eigenvector of the user's worst-case
    channel, W_c with that of the sum; shares start at zero.
    """
    if channels.cov_estimated is None:
        raise ValueError("attach a surface configuration first")
    q_n, n = channels.n_users, channels.n_bs
    w_p = np.zeros((q_n, n, n), dtype=complex)
    for q in range(q_n):
        _, vec = np.linalg.eigh(channels.cov_estimated[q])
        v = vec[:, -1]
        w_p[q] = (params.power_budget_w / (2 * q_n)) * np.outer(v, v.conj())
    _, vec = np.linalg.eigh(channels.cov_estimated.sum(axis=0))
    v = vec[:, -1]
    w_c = (params.power_budget_w / 2) * np.outer(v, v.conj())
    return PrecoderSolution(w_common_mat=w_c, w_private_mat=w_p,
                            common_rate_share=np.zeros(q_n))


def _collect(handles, key, values) -> np.ndarray:
    return np.array([values[v.name] for v in handles[key]])


def sca_iterate_stage1(channels: ChannelSet, params: SystemParams,
                       init: PrecoderSolution,
                       settings: SCASettings = SCASettings(),
                       anchor_inflation: float = ANCHOR_INFLATION) -> Stage1Result:
    """Run the anchored program to convergence from a feasible start."""
    anchors = anchor_values(channels, params, init, inflation=anchor_inflation)
    records: List[IterationRecord] = []
    best = init
    best_obj, prev_obj = -np.inf, -np.inf
    best_slacks: Dict[str, np.ndarray] = {}
    scale = 1.0 / params.noise_power_w
    converged = False
    for it in range(settings.max_inner):
        prog, handles = build_p4(channels, params, anchors, settings)
        rep = prog.solve()
        records.append(IterationRecord("precoder", it, rep.objective
                                       if rep.objective is not None else np.nan,
                                       rep.status, rep.max_violation,
                                       rep.solve_time_s))
        if not rep.usable:
            return Stage1Result(solution=best, objective=best_obj,
                                records=records, converged=False,
                                feasible=it > 0, slacks=best_slacks,
                                noise_scale=scale)
        vals = rep.values
        w_c = 0.5 * (vals["Wc"] + vals["Wc"].conj().T)
        w_p = np.stack([0.5 * (vals[f"W[{q}]"] + vals[f"W[{q}]"].conj().T)
                        for q in range(channels.n_users)])
        slacks = {k: _collect(handles, k, vals)
                  for k in ("psi", "beta1", "beta2", "upsilon1", "upsilon2", "kappa")}
        if rep.objective > best_obj:
            best = PrecoderSolution(w_common_mat=w_c, w_private_mat=w_p,
                                    common_rate_share=_collect(handles, "rc", vals))
            best_obj = rep.objective
            best_slacks = slacks
        if rep.objective - prev_obj < settings.tol_inner:
            converged = True
            break
        prev_obj = rep.objective
        # the next surrogates are tangent at the point just solved
        anchors = {"beta2": np.maximum(slacks["beta2"], 1e-12),
                   "kappa": np.maximum(slacks["kappa"], 1e-12)}
    return Stage1Result(solution=best, objective=best_obj, records=records,
                        converged=converged, feasible=True, slacks=best_slacks,
                        noise_scale=scale)


@dataclass(frozen=True)
class ExtractionReport:
    eigen_path: bool            # dominant-eigenvector shortcut taken
    rank_ratio: float           # lambda_2 / lambda_1 of the input
    n_feasible: int             # candidates passing the constraint check
    achieved: Optional[float]   # score of the returned candidate, if scored
    bound_gap: Optional[float]  # SDR bound minus achieved, if known


RANK_ONE_RATIO = 1e-6
N_CANDIDATES = 200


def extract_rank_one(w_mat: np.ndarray, constraint_check: Optional[Callable] = None,
                     rng: Optional[np.random.Generator] = None,
                     n_candidates: int = N_CANDIDATES,
                     score: Optional[Callable] = None) -> tuple:
    """Rank-one factor of one lifted matrix, with Gaussian randomization.

    Near-rank-one inputs take the scaled dominant eigenvector. Otherwise
    candidates w = U diag(lam)^(1/2) z are rescaled to tr(W) and ranked by
    ``score`` (higher is better) among those passing ``constraint_check``;
    with no scorer the first feasible candidate wins. Raises if every
    candidate fails the check.
    """
    w_mat = 0.5 * (w_mat + w_mat.conj().T)
    lam, vec = np.linalg.eigh(w_mat)
    lam = np.maximum(lam, 0.0)
    total = float(lam.sum())
    if total <= 0:
        return np.zeros(w_mat.shape[0], dtype=complex), ExtractionReport(
            True, 0.0, 1, None, None)
    ratio = float(lam[-2] / lam[-1]) if w_mat.shape[0] > 1 else 0.0
    if ratio <= RANK_ONE_RATIO:
        v = vec[:, -1] * np.sqrt(lam[-1])
        if constraint_check is not None and not constraint_check(v):
            raise ValueError("dominant eigenvector fails the constraint check")
        return v, ExtractionReport(True, ratio, 1, None, None)

    if rng is None:
        raise ValueError("randomized extraction needs a generator")
    n = w_mat.shape[0]
    root = vec * np.sqrt(lam)[None, :]
    best_v, best_s, n_ok = None, -np.inf, 0
    for _ in range(n_candidates):
        z = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / np.sqrt(2)
        v = root @ z
        nrm = float(np.sum(np.abs(v) ** 2))
        if nrm <= 0:
            continue
        v *= np.sqrt(total / nrm)           # candidate keeps the stream power
        if constraint_check is not None and not constraint_check(v):
            continue
        n_ok += 1
        s = score(v) if score is not None else 0.0
        if s > best_s or best_v is None:
            best_v, best_s = v, s
    if best_v is None:
        raise ValueError(f"no feasible candidate among {n_candidates} draws")
    return best_v, ExtractionReport(False, ratio, n_ok,
                                    best_s if score else None, None)


@dataclass(frozen=True)
class PrecoderExtraction:
    solution: PrecoderSolution      # rank-one, with repaired shares
    objective: float                # true worst-case sum rate
    qos_ok: bool
    eigen_path: bool
    rank_ratios: np.ndarray         # (Q+1,) lambda2/lambda1 per stream
    bound_gap: Optional[float]      # relaxation bound minus achieved


def extract_precoders(channels: ChannelSet, params: SystemParams,
                      solution: PrecoderSolution, rng: np.random.Generator,
                      n_candidates: int = N_CANDIDATES,
                      sdr_bound: Optional[float] = None) -> PrecoderExtraction:
    """Joint randomization over all streams against the true objective.

    Each candidate tuple rescales every stream to its lifted trace (the
    power split is preserved exactly), recomputes worst-case rates from
    raw channels, repairs the shares, and scores by (QoS met, sum rate,
    min per-user rate, -power). Falls back to the all-eigenvector tuple
    when every stream is numerically rank-one.
    """
    mats = [solution.w_common_mat] + list(solution.w_private_mat)
    decomp = []
    ratios = np.zeros(len(mats))
    for i, w in enumerate(mats):
        lam, vec = np.linalg.eigh(0.5 * (w + w.conj().T))
        lam = np.maximum(lam, 0.0)
        ratios[i] = float(lam[-2] / lam[-1]) if lam[-1] > 0 and len(lam) > 1 else 0.0
        decomp.append((lam, vec))
    eigen_path = bool(np.all(ratios <= RANK_ONE_RATIO))

    def assemble(vectors):
        w_c, w_p = vectors[0], np.stack(vectors[1:])
        cand = PrecoderSolution.from_vectors(w_c, w_p, np.zeros(channels.n_users))
        common, private = worst_case_rates(channels, cand, params)
        shares, ok = repair_shares(common, private, params.r_min)
        cand = PrecoderSolution.from_vectors(w_c, w_p, shares)
        rate = sum_rate(shares, private)
        score = (ok, rate, float(np.min(shares + private)), -cand.total_power())
        return cand, rate, ok, score

    def eigen_tuple():
        return [vec[:, -1] * np.sqrt(lam[-1]) for lam, vec in decomp]

    best = assemble(eigen_tuple())
    if not eigen_path:
        n = channels.n_bs
        roots = [vec * np.sqrt(lam)[None, :] for lam, vec in decomp]
        for _ in range(n_candidates):
            vectors = []
            for (lam, _), root in zip(decomp, roots):
                total = float(lam.sum())
                if total <= 0:
                    vectors.append(np.zeros(n, dtype=complex))
                    continue
                z = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / np.sqrt(2)
                v = root @ z
                nrm = float(np.sum(np.abs(v) ** 2))
                vectors.append(v * np.sqrt(total / max(nrm, 1e-300)))
            cand = assemble(vectors)
            if cand[3] > best[3]:
                best = cand
    sol, rate, ok, _ = best
    gap = None if sdr_bound is None else float(sdr_bound - rate)
    return PrecoderExtraction(solution=sol, objective=rate, qos_ok=ok,
                              eigen_path=eigen_path, rank_ratios=ratios,
                              bound_gap=gap)
