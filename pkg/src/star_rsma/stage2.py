"""Surface stage: lifted transmission/reflection program and vector recovery.

Precoders are held fixed; the program optimizes the two lifted surface
matrices and the common-rate shares. Each worst-case rate keeps its
increasing log exact and linearizes the decreasing log at the previous
surface, so successive programs are tangent at the previous optimum and
the inner objective never decreases. The same 1/sigma^2 normalization as
the precoder stage keeps the conic data near unit scale.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .conic import LN2, ConicProgram, trace_term
from .rate_engine import (PrecoderSolution, build_cascade_matrices,
                          distortion_aggregates, repair_shares, sum_rate,
                          worst_case_rates)
from .stage1 import RANK_ONE_RATIO, IterationRecord, SCASettings
from .system_model import (REGIONS, ChannelSet, StarConfig, SystemParams,
                           attach_star)


@dataclass(frozen=True)
class _SurfaceData:
    """Normalized per-user trace data for (P7), fixed across inner iterates."""

    g1: np.ndarray          # (Q, M, M) common-signal cascades / sigma^2
    g2: np.ndarray          # (Q, M, M) common-denominator cascades / sigma^2
    b1: np.ndarray          # (Q, M, M) private-signal cascades / sigma^2
    b2: np.ndarray          # (Q, M, M) private-denominator cascades / sigma^2
    num_c_shift: np.ndarray     # (Q,) -r2 tr(Wc), normalized
    num_p_shift: np.ndarray     # (Q,) -r2 tr(Wq)
    den_c_shift: np.ndarray     # (Q,) +r2 tr(Pi_c) + sigma2_tilde
    den_p_shift: np.ndarray     # (Q,) +r2 tr(Pi_p)
    sigma2_tilde: float


def _surface_data(channels: ChannelSet, params: SystemParams,
                  solution: PrecoderSolution) -> _SurfaceData:
    if channels.uncertainty_radius_sq is None:
        raise ValueError("attach a surface configuration first (radii needed)")
    cas = build_cascade_matrices(channels, solution, params)
    agg = distortion_aggregates(solution.w_common_mat, solution.w_private_mat,
                                params.kappa_t, params.kappa_r)
    scale = 1.0 / params.noise_power_w
    s2t = 1.0 + params.kappa_r
    r2 = np.asarray(channels.uncertainty_radius_sq, dtype=float) * scale
    tr_wc = float(np.trace(solution.w_common_mat).real)
    tr_wq = np.einsum("qii->q", solution.w_private_mat).real
    tr_pic = float(np.trace(agg.pi_common).real)
    tr_pip = np.array([np.trace(agg.pi_private(q)).real
                       for q in range(channels.n_users)])
    return _SurfaceData(
        g1=cas.g1 * scale, g2=cas.g2 * scale,
        b1=cas.b1 * scale, b2=cas.b2 * scale,
        num_c_shift=-r2 * tr_wc, num_p_shift=-r2 * tr_wq,
        den_c_shift=r2 * tr_pic + s2t, den_p_shift=r2 * tr_pip + s2t,
        sigma2_tilde=s2t)


def surface_terms(data: _SurfaceData, channels: ChannelSet,
                  star: StarConfig) -> tuple:
    """(num_p, den_p, num_c, den_c) arrays at one surface point."""
    q_n = channels.n_users
    out = np.zeros((4, q_n))
    for q in range(q_n):
        e_mat = star.lifted(channels.region[q])
        out[0, q] = np.trace(e_mat @ data.b1[q]).real + data.num_p_shift[q]
        out[1, q] = np.trace(e_mat @ data.b2[q]).real + data.den_p_shift[q]
        out[2, q] = np.trace(e_mat @ data.g1[q]).real + data.num_c_shift[q]
        out[3, q] = np.trace(e_mat @ data.g2[q]).real + data.den_c_shift[q]
    return tuple(out)


def surface_denominators(data: _SurfaceData, channels: ChannelSet,
                         star: StarConfig) -> tuple:
    """(den_p, den_c) arrays at one surface point, normalized scale."""
    _, den_p, _, den_c = surface_terms(data, channels, star)
    return den_p, den_c


def surrogate_objective(data: _SurfaceData, channels: ChannelSet,
                        params: SystemParams, star: StarConfig,
                        anchors: Dict[str, np.ndarray],
                        qos_margin: float = 0.0) -> float:
    """The surface program's objective at a fixed point, shares re-optimized.

    Any feasible surface scores at most the program's optimum under the
    same anchors, which is the relaxation-bound check used on extracted
    configurations. Returns -inf when the point cannot meet QoS under the
    surrogate rates.
    """
    num_p, den_p, num_c, den_c = surface_terms(data, channels, star)
    dpa = np.asarray(anchors["den_p"], dtype=float)
    dca = np.asarray(anchors["den_c"], dtype=float)
    # outside the program's log-argument guard: not a feasible point at all
    if np.min(num_p + den_p) < 0.5 or np.min(num_c + den_c) < 0.5:
        return -np.inf
    rate_p = (np.log2(num_p + den_p)
              - (np.log2(dpa) + (den_p - dpa) / (LN2 * dpa)))
    rate_c = (np.log2(num_c + den_c)
              - (np.log2(dca) + (den_c - dca) / (LN2 * dca)))
    cap = float(np.min(rate_c))
    need = np.maximum(0.0, (params.r_min + qos_margin) - rate_p)
    if need.sum() > cap + 1e-12 or cap < 0:
        return -np.inf
    return float(rate_p.sum() + cap)


def build_p7(channels: ChannelSet, params: SystemParams,
             solution: PrecoderSolution, anchors: Dict[str, np.ndarray],
             settings: SCASettings = SCASettings(),
             data: Optional[_SurfaceData] = None):
    """One SCA iterate of the surface program.

    anchors: 'den_p' and 'den_c' arrays (Q,), the denominator values at
    the previous surface (normalized scale, strictly positive). A region
    with no users has its lifted diagonal pinned to zero, which with the
    coupling row sends all element energy to the serving region.

    Census: 2 PSD variables (dim M), 2Q scalars, M (+M when a region is
    empty) equality rows, Q inequality rows, 2Q log-dominance rows.
    """
    dpa = np.asarray(anchors["den_p"], dtype=float)
    dca = np.asarray(anchors["den_c"], dtype=float)
    if dpa.min() <= 0 or dca.min() <= 0:
        raise ValueError("anchors must be strictly positive")
    if data is None:
        data = _surface_data(channels, params, solution)
    q_n, m = channels.n_users, channels.n_ris

    p = ConicProgram("surface-stage", feas_tol=settings.feas_tol,
                     gap_tol=settings.gap_tol, max_iter=settings.max_solver_iter,
                     log_mode=settings.log_mode)
    e_var = {region: p.hermitian_psd(f"E{region}", m) for region in REGIONS}
    rc = [p.scalar(f"rc[{q}]", lower=0.0) for q in range(q_n)]
    ups = [p.scalar(f"upsilon[{q}]") for q in range(q_n)]

    for i in range(m):
        unit = np.zeros((m, m), dtype=complex)
        unit[i, i] = 1.0
        p.add_eq(trace_term(unit, e_var["t"]) + trace_term(unit, e_var["r"]), 1.0)
    for region in REGIONS:
        if not channels.users_in(region):
            for i in range(m):
                unit = np.zeros((m, m), dtype=complex)
                unit[i, i] = 1.0
                p.add_eq(trace_term(unit, e_var[region]), 0.0)

    r_min = params.r_min + settings.qos_margin
    sum_rc = sum(rc[1:], rc[0] + 0.0)
    for q in range(q_n):
        e = e_var[channels.region[q]]
        num_p = trace_term(data.b1[q], e) + data.num_p_shift[q]
        den_p = trace_term(data.b2[q], e) + data.den_p_shift[q]
        num_c = trace_term(data.g1[q], e) + data.num_c_shift[q]
        den_c = trace_term(data.g2[q], e) + data.den_c_shift[q]
        # rc + log2(num+den) - [log2(dpa) + (den-dpa)/(ln2 dpa)] >= ups
        taylor_p = np.log2(dpa[q]) + (den_p - dpa[q]) * (1.0 / (LN2 * dpa[q]))
        p.add_log_dominance(num_p + den_p, ups[q] - rc[q] + taylor_p,
                            arg_lower=0.5, anchor=float(dpa[q]))
        p.add_le(r_min, ups[q])                                   # QoS (49b)
        taylor_c = np.log2(dca[q]) + (den_c - dca[q]) * (1.0 / (LN2 * dca[q]))
        p.add_log_dominance(num_c + den_c, sum_rc + taylor_c,
                            arg_lower=0.5, anchor=float(dca[q]))
    p.maximize(sum(ups[1:], ups[0] + 0.0))
    handles = {"e": e_var, "rc": rc, "upsilon": ups}
    return p, handles


@dataclass
class Stage2Result:
    star: StarConfig                   # lifted-only configuration
    shares: np.ndarray                 # (Q,) common-rate shares
    objective: float                   # relaxed objective (sum of upsilon)
    records: List[IterationRecord]
    converged: bool
    feasible: bool
    anchors: Optional[Dict[str, np.ndarray]] = None  # of the accepted solve
    objective_bound: float = np.nan    # certified cap on the accepted optimum


def sca_iterate_stage2(channels: ChannelSet, params: SystemParams,
                       solution: PrecoderSolution, init_star: StarConfig,
                       settings: SCASettings = SCASettings()) -> Stage2Result:
    """Run the anchored surface program to convergence."""
    data = _surface_data(channels, params, solution)
    den_p, den_c = surface_denominators(data, channels, init_star)
    anchors = {"den_p": np.maximum(den_p, 1e-12),
               "den_c": np.maximum(den_c, 1e-12)}
    records: List[IterationRecord] = []
    best_star = init_star
    best_shares = np.asarray(solution.common_rate_share, dtype=float)
    best_obj, prev_obj = -np.inf, -np.inf
    best_anchors, best_bound = anchors, np.nan
    converged = False
    for it in range(settings.max_inner):
        prog, handles = build_p7(channels, params, solution, anchors,
                                 settings, data=data)
        rep = prog.solve()
        records.append(IterationRecord("surface", it, rep.objective
                                       if rep.objective is not None else np.nan,
                                       rep.status, rep.max_violation,
                                       rep.solve_time_s))
        if not rep.usable:
            return Stage2Result(star=best_star, shares=best_shares,
                                objective=best_obj, records=records,
                                converged=False, feasible=it > 0,
                                anchors=best_anchors,
                                objective_bound=best_bound)
        lifted = {region: 0.5 * (rep.values[f"E{region}"]
                                 + rep.values[f"E{region}"].conj().T)
                  for region in REGIONS}
        star = StarConfig.from_lifted(lifted["t"], lifted["r"])
        shares = np.array([rep.values[v.name] for v in handles["rc"]])
        if rep.objective > best_obj:
            best_star, best_shares, best_obj = star, shares, rep.objective
            best_anchors = anchors
            best_bound = (rep.objective_bound if rep.objective_bound is not None
                          else np.nan)
        if rep.objective - prev_obj < settings.tol_inner:
            converged = True
            break
        prev_obj = rep.objective
        den_p, den_c = surface_denominators(data, channels, star)
        anchors = {"den_p": np.maximum(den_p, 1e-12),
                   "den_c": np.maximum(den_c, 1e-12)}
    return Stage2Result(star=best_star, shares=best_shares, objective=best_obj,
                        records=records, converged=converged, feasible=True,
                        anchors=best_anchors, objective_bound=best_bound)


def initial_star(channels: ChannelSet, params: SystemParams) -> StarConfig:
    """Even split, phases aligned to each region's dominant user cascade.

    Per region, the element phases conjugate the dominant user's cascade
    coefficients diag(h_q)^H Hd 1/sqrt(N), so the surface adds that user's
    paths coherently; an empty region keeps zero phases.
    """
    m, n = channels.n_ris, channels.n_bs
    ones = np.ones(n) / np.sqrt(n)
    phases = {region: np.zeros(m) for region in REGIONS}
    amps = {region: np.full(m, np.sqrt(0.5)) for region in REGIONS}
    for region in REGIONS:
        users = channels.users_in(region)
        if not users:
            amps[region] = np.zeros(m)
            continue
        dom = max(users, key=lambda q: float(np.linalg.norm(channels.h_ris_user[q])))
        coef = channels.h_ris_user[dom].conj() * (channels.h_bs_ris @ ones)
        phases[region] = np.mod(-np.angle(coef), 2 * np.pi)
    # all energy to the only active region when one side is empty
    for region, other in (("t", "r"), ("r", "t")):
        if not channels.users_in(region) and channels.users_in(other):
            amps[other] = np.ones(m)
    return StarConfig.from_amplitudes_phases(amps["t"], phases["t"],
                                             amps["r"], phases["r"])


def random_star(n_ris: int, rng: np.random.Generator) -> StarConfig:
    """Uniform energy split and phases; a diversification starting point."""
    zeta = rng.uniform(size=n_ris)
    return StarConfig.from_amplitudes_phases(
        np.sqrt(zeta), rng.uniform(0.0, 2 * np.pi, size=n_ris),
        np.sqrt(1.0 - zeta), rng.uniform(0.0, 2 * np.pi, size=n_ris))


@dataclass(frozen=True)
class StarExtractionReport:
    eigen_path: bool
    rank_ratios: np.ndarray        # (2,) lambda2/lambda1 of (E_t, E_r)
    n_feasible: int
    achieved: Optional[float]
    bound_gap: Optional[float]


def project_amplitude_coupling(e_t: np.ndarray, e_r: np.ndarray) -> StarConfig:
    """Elementwise power-ratio projection onto zeta_t + zeta_r = 1.

    zeta_t,m = |e_t,m|^2 / (|e_t,m|^2 + |e_r,m|^2), phases kept; an element
    dark on both sides splits evenly.
    """
    pt = np.abs(e_t) ** 2
    pr = np.abs(e_r) ** 2
    total = pt + pr
    zeta_t = np.where(total > 0, pt / np.where(total > 0, total, 1.0), 0.5)
    return StarConfig.from_amplitudes_phases(
        np.sqrt(zeta_t), np.angle(e_t), np.sqrt(1.0 - zeta_t), np.angle(e_r))


def extract_star_vectors(lifted_t: np.ndarray, lifted_r: np.ndarray,
                         constraint_check=None,
                         rng: Optional[np.random.Generator] = None,
                         n_candidates: int = 200,
                         score=None) -> tuple:
    """Rank-one surface pair from the lifted matrices.

    Both matrices near rank one: dominant eigenvectors, then the exact
    amplitude projection. Otherwise Gaussian candidate pairs are drawn
    from each lifted matrix and projected; candidates are ranked by
    ``score(config)`` among those passing ``constraint_check(config)``.
    """
    decomp = []
    ratios = np.zeros(2)
    for i, mat in enumerate((lifted_t, lifted_r)):
        lam, vec = np.linalg.eigh(0.5 * (mat + mat.conj().T))
        lam = np.maximum(lam, 0.0)
        ratios[i] = float(lam[-2] / lam[-1]) if lam[-1] > 0 and len(lam) > 1 else 0.0
        decomp.append((lam, vec))
    eigen_path = bool(np.all(ratios <= RANK_ONE_RATIO))

    def eigen_pair():
        return tuple(vec[:, -1] * np.sqrt(lam[-1]) for lam, vec in decomp)

    if eigen_path:
        cfg = project_amplitude_coupling(*eigen_pair())
        if constraint_check is not None and not constraint_check(cfg):
            raise ValueError("eigenvector surface fails the constraint check")
        return cfg, StarExtractionReport(True, ratios, 1,
                                         score(cfg) if score else None, None)

    if rng is None:
        raise ValueError("randomized extraction needs a generator")
    m = lifted_t.shape[0]
    roots = [vec * np.sqrt(lam)[None, :] for lam, vec in decomp]
    best_cfg, best_s, n_ok = None, -np.inf, 0
    candidates = [eigen_pair()]
    for _ in range(n_candidates):
        z = (rng.standard_normal((2, m)) + 1j * rng.standard_normal((2, m))) / np.sqrt(2)
        candidates.append((roots[0] @ z[0], roots[1] @ z[1]))
    for e_t, e_r in candidates:
        cfg = project_amplitude_coupling(e_t, e_r)
        if constraint_check is not None and not constraint_check(cfg):
            continue
        n_ok += 1
        s = score(cfg) if score is not None else 0.0
        if s > best_s or best_cfg is None:
            best_cfg, best_s = cfg, s
    if best_cfg is None:
        raise ValueError(f"no feasible surface among {n_candidates + 1} candidates")
    return best_cfg, StarExtractionReport(False, ratios, n_ok,
                                          best_s if score else None, None)


@dataclass(frozen=True)
class StarExtraction:
    star: StarConfig
    shares: np.ndarray
    objective: float               # true worst-case sum rate
    qos_ok: bool
    eigen_path: bool
    rank_ratios: np.ndarray
    bound_gap: Optional[float]


def extract_star(channels: ChannelSet, params: SystemParams,
                 solution: PrecoderSolution, star_lifted: StarConfig,
                 rng: np.random.Generator, n_candidates: int = 200,
                 sdr_bound: Optional[float] = None,
                 radii_sq: Optional[np.ndarray] = None) -> StarExtraction:
    """Recover a vector surface and score it by the true worst-case rate.

    The uncertainty radii default to the ones attached to ``channels``
    (the frozen per-run values), so the score matches what the programs
    optimized.
    """
    if radii_sq is None:
        radii_sq = channels.uncertainty_radius_sq
    best = {}

    def scorer(cfg: StarConfig) -> float:
        full = attach_star(channels, cfg, params.epsilon_level, radii_sq=radii_sq)
        common, private = worst_case_rates(full, solution, params)
        shares, ok = repair_shares(common, private, params.r_min)
        rate = sum_rate(shares, private)
        key = (ok, rate, float(np.min(shares + private)))
        if "key" not in best or key > best["key"]:
            best.update(key=key, cfg=cfg, shares=shares, rate=rate, ok=ok)
        return rate + (1e6 if ok else 0.0)     # QoS first, then sum rate

    _, rep = extract_star_vectors(star_lifted.lifted("t"), star_lifted.lifted("r"),
                                  rng=rng, n_candidates=n_candidates, score=scorer)
    gap = None if sdr_bound is None else float(sdr_bound - best["rate"])
    return StarExtraction(star=best["cfg"], shares=best["shares"],
                          objective=best["rate"], qos_ok=best["ok"],
                          eigen_path=rep.eigen_path,
                          rank_ratios=rep.rank_ratios, bound_gap=gap)
