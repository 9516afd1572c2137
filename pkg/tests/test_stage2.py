"""Stage-2 surface step: grid oracles, surrogate geometry, extraction."""
import dataclasses

import numpy as np
import pytest

from star_rsma.oracles import GridSpec, grid_search_star
from star_rsma.rate_engine import (
    PrecoderSolution, repair_shares, sum_rate, worst_case_rates)
from star_rsma.rng import substream
from star_rsma.stage1 import (
    SCASettings, extract_precoders, initial_precoders, sca_iterate_stage1)
from star_rsma.stage2 import (
    build_p7, extract_star, extract_star_vectors, initial_star,
    project_amplitude_coupling, sca_iterate_stage2, surface_terms,
    surrogate_objective, _surface_data)
from star_rsma.system_model import (
    StarConfig, SystemParams, attach_star, draw_channel_set, draw_scenario)

LN2 = float(np.log(2.0))


def _instance(params, seed):
    """Channels, frozen radii, and rank-one precoders from one stage-1 pass."""
    scen = draw_scenario(params, seed)
    ch = draw_channel_set(params, scen, substream(seed, "channels"))
    star0 = initial_star(ch, params)
    att = attach_star(ch, star0, params.epsilon_level)
    radii = att.uncertainty_radius_sq
    s1 = sca_iterate_stage1(att, params, initial_precoders(att, params))
    sol = extract_precoders(att, params, s1.solution,
                            substream(seed, "extract")).solution
    return ch, att, radii, star0, sol


SMALL = SystemParams(n_bs=2, n_ris=4, n_users=2, r_min=0.1)


@pytest.fixture(scope="module")
def small():
    ch, att, radii, star0, sol = _instance(SMALL, 41)
    s2 = sca_iterate_stage2(att, SMALL, sol, star0,
                            settings=SCASettings(max_inner=40))
    assert s2.feasible and s2.converged
    return ch, att, radii, sol, s2


def _extracted_rate(params, ch, att, radii, sol, s2, seed):
    es = extract_star(att, params, sol, s2.star, substream(seed, "star"),
                      sdr_bound=s2.objective, radii_sq=radii)
    att_f = attach_star(ch, es.star, params.epsilon_level, radii_sq=radii)
    c, pr = worst_case_rates(att_f, sol, params)
    sh, ok = repair_shares(c, pr, params.r_min)
    return sum_rate(sh, pr), ok


def test_single_element_matches_grid():
    # at M = 1 each region's phase is global, so an amplitude sweep is
    # exhaustive; with a tight inner tolerance the relaxed surface step
    # plus extraction must land on the grid optimum
    p = SystemParams(n_bs=2, n_ris=1, n_users=2, r_min=0.1)
    ch, att, radii, star0, sol = _instance(p, 9)
    s2 = sca_iterate_stage2(att, p, sol, star0,
                            settings=SCASettings(tol_inner=1e-6, max_inner=60))
    rate, ok = _extracted_rate(p, ch, att, radii, sol, s2, 9)
    grid = grid_search_star(ch, p, sol.w_common, sol.w_private,
                            GridSpec(n_phases=1, n_amplitudes=1001),
                            radii_sq=radii)
    assert ok and grid.feasible
    assert rate >= grid.objective - 1e-3


def test_two_element_matches_grid():
    p = SystemParams(n_bs=2, n_ris=2, n_users=2, r_min=0.1)
    ch, att, radii, star0, sol = _instance(p, 13)
    s2 = sca_iterate_stage2(att, p, sol, star0)
    rate, ok = _extracted_rate(p, ch, att, radii, sol, s2, 13)
    grid = grid_search_star(ch, p, sol.w_common, sol.w_private,
                            GridSpec(n_phases=16, n_amplitudes=11),
                            radii_sq=radii)
    assert ok and grid.feasible
    assert rate >= grid.objective - 1e-3


def test_zero_precoders():
    p0 = SystemParams(n_bs=2, n_ris=4, n_users=2, r_min=0.0)
    ch, att, _, star0, _ = _instance(p0, 43)
    zero = PrecoderSolution.from_vectors(
        np.zeros(p0.n_bs, dtype=complex),
        np.zeros((p0.n_users, p0.n_bs), dtype=complex),
        np.zeros(p0.n_users))
    # every rate is pinned at zero, so any positive floor margin kills it
    res = sca_iterate_stage2(att, p0, zero, star0,
                             settings=SCASettings(qos_margin=0.0))
    assert res.feasible
    assert res.objective == pytest.approx(0.0, abs=1e-6)
    # no power, positive floor: the first program is already infeasible
    p1 = SystemParams(n_bs=2, n_ris=4, n_users=2, r_min=0.5)
    res1 = sca_iterate_stage2(att, p1, zero, star0)
    assert not res1.feasible


def test_taylor_term_upper_bounds_log():
    # the linearized denominator log never falls below the true log,
    # which is the direction that makes the surrogate a lower bound
    rng = np.random.default_rng(3)
    for _ in range(200):
        a = float(rng.uniform(0.1, 10.0))   # anchor
        b = float(rng.uniform(0.1, 10.0))   # evaluation point
        taylor = np.log2(a) + (b - a) / (LN2 * a)
        assert taylor >= np.log2(b) - 1e-12


def test_surrogate_tangent_at_anchors(small):
    # with anchors taken at the evaluated surface the Taylor terms are
    # exact, so the surrogate equals the repaired true objective there
    ch, att, radii, sol, s2 = small
    data = _surface_data(att, SMALL, sol)
    _, den_p, _, den_c = surface_terms(data, att, s2.star)
    anchors = {"den_p": den_p, "den_c": den_c}
    sur = surrogate_objective(data, att, SMALL, s2.star, anchors)
    att_b = attach_star(ch, s2.star, SMALL.epsilon_level, radii_sq=radii)
    c, pr = worst_case_rates(att_b, sol, SMALL)
    sh, ok = repair_shares(c, pr, SMALL.r_min)
    assert ok
    assert sur == pytest.approx(sum_rate(sh, pr), abs=1e-8)


def test_surrogate_lower_bounds_true_objective(small):
    ch, att, radii, sol, s2 = small
    data = _surface_data(att, SMALL, sol)
    _, den_p, _, den_c = surface_terms(data, att, s2.star)
    anchors = {"den_p": den_p, "den_c": den_c}
    rng = np.random.default_rng(5)
    m = SMALL.n_ris
    n_finite = 0
    for _ in range(20):
        zeta = rng.uniform(0.2, 0.8, size=m)
        star_b = StarConfig.from_amplitudes_phases(
            np.sqrt(zeta), rng.uniform(0, 2 * np.pi, size=m),
            np.sqrt(1 - zeta), rng.uniform(0, 2 * np.pi, size=m))
        sur = surrogate_objective(data, att, SMALL, star_b, anchors)
        if not np.isfinite(sur):
            continue
        n_finite += 1
        att_b = attach_star(ch, star_b, SMALL.epsilon_level, radii_sq=radii)
        c, pr = worst_case_rates(att_b, sol, SMALL)
        sh, ok = repair_shares(c, pr, SMALL.r_min)
        assert ok
        assert sur <= sum_rate(sh, pr) + 1e-9
    assert n_finite >= 5


def test_first_program_contains_previous_point(small):
    # restarting at a converged surface: that point is feasible in the
    # first program with tangent anchors, so the restart cannot dip and
    # stops almost immediately
    ch, att, radii, sol, s2 = small
    data = _surface_data(att, SMALL, sol)
    _, den_p, _, den_c = surface_terms(data, att, s2.star)
    anchors = {"den_p": den_p, "den_c": den_c}
    margin = SCASettings().qos_margin
    tangent = surrogate_objective(data, att, SMALL, s2.star, anchors,
                                  qos_margin=margin)
    again = sca_iterate_stage2(att, SMALL, sol, s2.star)
    assert again.records[0].objective >= tangent - 1e-6
    assert again.converged
    assert len(again.records) <= 3
    assert abs(again.objective - s2.objective) <= 1e-3


def test_iterates_non_decreasing(small):
    _, _, _, _, s2 = small
    objs = [r.objective for r in s2.records]
    assert len(objs) >= 2
    for a, b in zip(objs, objs[1:]):
        assert b >= a - 1e-6


def test_program_census_two_regions():
    p = SystemParams(n_bs=2, n_ris=4, n_users=2, r_min=0.1)
    _, att, _, star0, sol = _instance(p, 47)
    data = _surface_data(att, p, sol)
    _, den_p, _, den_c = surface_terms(data, att, star0)
    prog, _ = build_p7(att, p, sol, {"den_p": den_p, "den_c": den_c})
    q, m = p.n_users, p.n_ris
    assert prog.census() == {
        "psd_vars": 2,              # one lifted surface per region
        "scalar_vars": 2 * q,
        "eq_constraints": m,        # elementwise energy coupling
        "ineq_constraints": q,
        "log_constraints": 2 * q,
    }


def test_program_census_empty_region_pinned():
    # with one region unpopulated its lifted diagonal is pinned to zero,
    # one extra equality row per element
    p = SystemParams(n_bs=2, n_ris=4, n_users=2, r_min=0.1)
    ch, att, _, star0, sol = _instance(p, 47)
    keep = att.users_in("r")
    assert 0 < len(keep) < p.n_users
    sub_att = attach_star(ch.restrict_users(keep), star0, p.epsilon_level)
    sub_sol = PrecoderSolution.from_vectors(
        sol.w_common, sol.w_private[keep],
        sol.common_rate_share[keep])
    p_sub = dataclasses.replace(p, n_users=len(keep))
    data = _surface_data(sub_att, p_sub, sub_sol)
    _, den_p, _, den_c = surface_terms(data, sub_att, star0)
    prog, _ = build_p7(sub_att, p_sub, sub_sol,
                       {"den_p": den_p, "den_c": den_c})
    q, m = len(keep), p.n_ris
    assert prog.census()["eq_constraints"] == 2 * m
    assert prog.census()["scalar_vars"] == 2 * q


def test_anchors_must_be_positive():
    p = SystemParams(n_bs=2, n_ris=4, n_users=2, r_min=0.1)
    _, att, _, star0, sol = _instance(p, 47)
    data = _surface_data(att, p, sol)
    _, den_p, _, den_c = surface_terms(data, att, star0)
    bad = {"den_p": den_p.copy(), "den_c": den_c}
    bad["den_p"][0] = 0.0
    with pytest.raises(ValueError):
        build_p7(att, p, sol, bad)


def test_star_vector_passthrough():
    rng = np.random.default_rng(7)
    m = 4
    zeta = rng.uniform(0.1, 0.9, size=m)
    e_t = np.sqrt(zeta) * np.exp(1j * rng.uniform(0, 2 * np.pi, m))
    e_r = np.sqrt(1 - zeta) * np.exp(1j * rng.uniform(0, 2 * np.pi, m))
    cfg, rep = extract_star_vectors(np.outer(e_t, e_t.conj()),
                                    np.outer(e_r, e_r.conj()))
    assert rep.eigen_path
    assert np.allclose(cfg.amplitudes_t, np.abs(e_t), atol=1e-9)
    assert np.allclose(cfg.amplitudes_r, np.abs(e_r), atol=1e-9)
    # phases recovered up to one global rotation per region
    ratio = cfg.vector("t") / e_t
    assert np.abs(ratio - ratio[0]).max() < 1e-9
    assert cfg.coupling_residual() <= 1e-9


def test_projection_even_split_and_dark_element():
    v = np.array([1.0 + 1.0j, -2.0, 0.3j])
    cfg = project_amplitude_coupling(v, v)
    assert np.allclose(cfg.amplitudes_t, np.sqrt(0.5), atol=1e-12)
    assert np.allclose(cfg.amplitudes_r, np.sqrt(0.5), atol=1e-12)
    dark = project_amplitude_coupling(np.zeros(1, complex), np.zeros(1, complex))
    assert dark.amplitudes_t[0] == pytest.approx(np.sqrt(0.5))


def test_projection_coupling_exact():
    rng = np.random.default_rng(11)
    for _ in range(100):
        e_t = rng.normal(size=3) + 1j * rng.normal(size=3)
        e_r = rng.normal(size=3) + 1j * rng.normal(size=3)
        cfg = project_amplitude_coupling(e_t, e_r)
        assert cfg.coupling_residual() <= 1e-12
        want = np.abs(e_t) ** 2 / (np.abs(e_t) ** 2 + np.abs(e_r) ** 2)
        assert np.allclose(cfg.amplitudes_t ** 2, want, atol=1e-12)


def test_star_vector_randomized_rank_two():
    rng = np.random.default_rng(13)
    m = 3
    a = rng.normal(size=m) + 1j * rng.normal(size=m)
    b = rng.normal(size=m) + 1j * rng.normal(size=m)
    lifted = 0.6 * np.outer(a, a.conj()) + 0.4 * np.outer(b, b.conj())
    cfg, rep = extract_star_vectors(lifted, lifted.conj(), rng=rng,
                                    n_candidates=50)
    assert not rep.eigen_path
    assert rep.n_feasible == 51    # eigen pair plus every draw
    assert cfg.coupling_residual() <= 1e-12


def test_initial_star_coupled():
    p = SystemParams(n_bs=2, n_ris=6, n_users=2)
    scen = draw_scenario(p, 53)
    ch = draw_channel_set(p, scen, substream(53, "channels"))
    star = initial_star(ch, p)
    assert star.has_vectors
    assert star.n_elements == p.n_ris
    assert star.coupling_residual() <= 1e-9
