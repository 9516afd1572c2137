"""Closed-form SINRs, worst-case rates, shares, and cascade lifting."""
import numpy as np
import pytest

from star_rsma.rate_engine import (
    CascadeMatrices, PrecoderSolution, build_cascade_matrices,
    common_rate_feasible, diag_extract, distortion_aggregates,
    rate_common_worst_case, rate_private_worst_case, repair_shares,
    sinr_common_perfect, sinr_private_perfect, sum_rate, worst_case_rates,
    worst_case_trace_bound)
from star_rsma.system_model import (
    REFLECTION, TRANSMISSION, ChannelSet, StarConfig, SystemParams,
    attach_star, draw_channel_set, draw_scenario)


def _random_instance(rng, n=2, q=2):
    h_eff = rng.normal(size=(q, n)) + 1j * rng.normal(size=(q, n))
    w_c = rng.normal(size=n) + 1j * rng.normal(size=n)
    w_p = rng.normal(size=(q, n)) + 1j * rng.normal(size=(q, n))
    return h_eff, w_c, w_p


def test_diag_extract():
    a = np.arange(9.0).reshape(3, 3) + 1j
    d = diag_extract(a)
    assert np.allclose(np.diag(d), np.diag(a))
    assert np.count_nonzero(d - np.diag(np.diag(d))) == 0


def test_precoder_solution_round_trip():
    rng = np.random.default_rng(0)
    _, w_c, w_p = _random_instance(rng, n=3, q=2)
    sol = PrecoderSolution.from_vectors(w_c, w_p, [0.1, 0.2])
    assert sol.n_users == 2
    assert sol.has_vectors
    assert np.allclose(sol.w_common_mat, np.outer(w_c, w_c.conj()))
    assert np.allclose(sol.w_private_mat[1], np.outer(w_p[1], w_p[1].conj()))
    assert sol.total_power() == pytest.approx(
        float(np.sum(np.abs(w_c) ** 2) + np.sum(np.abs(w_p) ** 2)))
    sol.validate()
    with pytest.raises(ValueError):
        PrecoderSolution.from_vectors(w_c, w_p, [-0.5, 0.2]).validate()


def test_distortion_aggregate_structure():
    rng = np.random.default_rng(1)
    _, w_c, w_p = _random_instance(rng, n=3, q=2)
    sol = PrecoderSolution.from_vectors(w_c, w_p, [0, 0])
    kt, kr = 0.02, 0.03
    agg = distortion_aggregates(sol.w_common_mat, sol.w_private_mat, kt, kr)
    sw = sol.w_private_mat.sum(axis=0)
    assert np.allclose(agg.pi1, (1 + kr) * sw + kr * sol.w_common_mat)
    assert np.allclose(agg.pi2, (1 + kr) * kt * diag_extract(sw + sol.w_common_mat))
    for q in range(2):
        expect = sw - sol.w_private_mat[q] + kr * sw + kr * sol.w_common_mat
        assert np.allclose(agg.pi3[q], expect)
        assert np.allclose(agg.pi_private(q), agg.pi2 + agg.pi3[q])
    assert np.allclose(agg.pi_common, agg.pi1 + agg.pi2)


def test_sinr_common_impairment_free_point_to_point():
    rng = np.random.default_rng(2)
    h = rng.normal(size=3) + 1j * rng.normal(size=3)
    w_c = rng.normal(size=3) + 1j * rng.normal(size=3)
    w_p = np.zeros((1, 3), dtype=complex)
    s2 = 0.37
    got = sinr_common_perfect(h, w_c, w_p, 0.0, 0.0, s2)
    assert got == pytest.approx(np.abs(h.conj() @ w_c) ** 2 / s2)


def test_sinr_common_zero_precoder():
    rng = np.random.default_rng(3)
    h, _, w_p = _random_instance(rng, n=2, q=2)
    assert sinr_common_perfect(h[0], np.zeros(2), w_p, 0.01, 0.01, 1.0) == 0.0


def test_sinr_private_interference_free():
    rng = np.random.default_rng(4)
    h = rng.normal(size=4) + 1j * rng.normal(size=4)
    w = rng.normal(size=(1, 4)) + 1j * rng.normal(size=(1, 4))
    s2 = 0.9
    got = sinr_private_perfect(h, np.zeros(4), w, 0, 0.0, 0.0, s2)
    assert got == pytest.approx(np.abs(h.conj() @ w[0]) ** 2 / s2)
    assert sinr_private_perfect(h, np.zeros(4), np.zeros((1, 4)), 0, 0.01, 0.01, s2) == 0.0


def test_trace_bound_values():
    e1 = np.zeros((2, 2), dtype=complex)
    e1[0, 0] = 1.0
    assert worst_case_trace_bound(e1, 0.5) == pytest.approx(0.5)
    assert worst_case_trace_bound(e1, 0.0) == 0.0
    h = np.array([1.0 + 1.0j, 0.5, 1.0])
    h *= np.sqrt(3.0 / np.sum(np.abs(h) ** 2))       # ||h||^2 = 3
    a = np.outer(h, h.conj())
    assert worst_case_trace_bound(a, 0.2) == pytest.approx(0.6)


def test_trace_bound_rejects_bad_inputs():
    with pytest.raises(ValueError):
        worst_case_trace_bound(np.eye(2), 0.1)       # rank two
    with pytest.raises(ValueError):
        worst_case_trace_bound(-np.eye(1), 0.1)      # not PSD
    with pytest.raises(ValueError):
        worst_case_trace_bound(np.eye(1), -0.1)      # negative radius


def _worst_case_setup(rng, n=2, q=2, kt=0.01, kr=0.01, s2=0.05):
    h_eff, w_c, w_p = _random_instance(rng, n, q)
    sol = PrecoderSolution.from_vectors(w_c, w_p, np.zeros(q))
    agg = distortion_aggregates(sol.w_common_mat, sol.w_private_mat, kt, kr)
    cov = np.outer(h_eff[0], h_eff[0].conj())
    return h_eff, sol, agg, cov


def test_worst_case_rate_reduces_at_zero_radius():
    rng = np.random.default_rng(5)
    kt, kr, s2 = 0.02, 0.03, 0.05
    h_eff, sol, agg, cov = _worst_case_setup(rng, kt=kt, kr=kr, s2=s2)
    s2t = (1 + kr) * s2
    rate_c = rate_common_worst_case(cov, 0.0, sol.w_common_mat, agg.pi_common, s2t)
    gamma = sinr_common_perfect(h_eff[0], sol.w_common, sol.w_private, kt, kr, s2)
    assert rate_c == pytest.approx(np.log2(1 + gamma), rel=1e-12)
    rate_p = rate_private_worst_case(cov, 0.0, sol.w_private_mat[0],
                                     agg.pi_private(0), s2t)
    gamma_p = sinr_private_perfect(h_eff[0], sol.w_common, sol.w_private, 0, kt, kr, s2)
    assert rate_p == pytest.approx(np.log2(1 + gamma_p), rel=1e-12)


def test_worst_case_rate_clamps_pessimistic_radius():
    rng = np.random.default_rng(6)
    _, sol, agg, cov = _worst_case_setup(rng)
    # radius_sq >= tr(cov @ Wc)/tr(Wc) kills the numerator
    r2 = float(np.trace(cov @ sol.w_common_mat).real
               / np.trace(sol.w_common_mat).real) + 1e-9
    assert rate_common_worst_case(cov, r2, sol.w_common_mat, agg.pi_common, 0.05) == 0.0
    r2p = float(np.trace(cov @ sol.w_private_mat[0]).real
                / np.trace(sol.w_private_mat[0]).real) + 1e-9
    assert rate_private_worst_case(cov, r2p, sol.w_private_mat[0],
                                   agg.pi_private(0), 0.05) == 0.0


def test_worst_case_rate_monotone_in_radius():
    rng = np.random.default_rng(7)
    _, sol, agg, cov = _worst_case_setup(rng)
    lam = float(np.linalg.eigvalsh(cov)[-1])
    for builder, w, pi in [
            (rate_common_worst_case, sol.w_common_mat, agg.pi_common),
            (rate_private_worst_case, sol.w_private_mat[0], agg.pi_private(0))]:
        vals = [builder(cov, eps * lam, w, pi, 0.05) for eps in (0.0, 0.01, 0.05)]
        assert vals[0] > vals[1] > vals[2]


def test_worst_case_rates_end_to_end():
    params = SystemParams(n_bs=2, n_ris=4, n_users=2, epsilon_level=0.02)
    sc = draw_scenario(params, 0)
    rng = np.random.default_rng(8)
    ch = draw_channel_set(params, sc, rng)
    zeta = np.full(4, 0.5)
    cfg = StarConfig.from_amplitudes_phases(np.sqrt(zeta), np.zeros(4),
                                            np.sqrt(1 - zeta), np.zeros(4))
    full = attach_star(ch, cfg, params.epsilon_level)
    scale = np.sqrt(params.power_budget_w) / 10
    w_c = scale * (rng.normal(size=2) + 1j * rng.normal(size=2))
    w_p = scale * (rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2)))
    sol = PrecoderSolution.from_vectors(w_c, w_p, np.zeros(2))
    common, private = worst_case_rates(full, sol, params)
    assert common.shape == private.shape == (2,)
    assert np.all(common >= 0) and np.all(private >= 0)
    agg = distortion_aggregates(sol.w_common_mat, sol.w_private_mat,
                                params.kappa_t, params.kappa_r)
    q = 1
    expect = rate_common_worst_case(full.cov_estimated[q],
                                    float(full.uncertainty_radius_sq[q]),
                                    sol.w_common_mat, agg.pi_common,
                                    params.sigma2_tilde)
    assert common[q] == pytest.approx(expect, rel=1e-12)


def test_sum_rate_values():
    assert sum_rate(np.zeros(2), np.zeros(2)) == 0.0
    assert sum_rate(np.array([0.5, 0.5]), np.array([1.0, 2.0])) == pytest.approx(4.0)
    rng = np.random.default_rng(9)
    for _ in range(20):
        s = rng.uniform(size=3)
        p = rng.uniform(size=3)
        assert sum_rate(s, p) == pytest.approx(s.sum() + p.sum())


def test_common_rate_feasibility():
    assert common_rate_feasible(np.array([0.6, 0.4]), np.array([1.2, 1.5]))
    assert not common_rate_feasible(np.array([0.6, 0.4]), np.array([0.8, 1.5]))
    rng = np.random.default_rng(10)
    for _ in range(50):
        shares = rng.uniform(0, 1, size=4)
        rates = rng.uniform(0, 4, size=4)
        # oracle: per-user loop
        ok = all(shares.sum() <= rates[q] + 1e-9 for q in range(4))
        assert common_rate_feasible(shares, rates) == ok


def test_repair_shares():
    # plenty of common capacity: QoS gaps covered, remainder split evenly
    shares, ok = repair_shares(np.array([2.0, 3.0]), np.array([0.1, 0.9]), r_min=0.5)
    assert ok
    assert shares.sum() == pytest.approx(2.0)
    assert shares[0] >= 0.4 - 1e-12
    # not enough capacity: honest failure, capacity still fully used
    shares, ok = repair_shares(np.array([0.3, 0.5]), np.array([0.0, 0.0]), r_min=0.5)
    assert not ok
    assert shares.sum() == pytest.approx(0.3)
    # no needs, no capacity
    shares, ok = repair_shares(np.array([0.0, 0.0]), np.array([1.0, 1.0]), r_min=0.5)
    assert ok and np.allclose(shares, 0.0)


def test_cascade_scalar_identity():
    # M = 1: tr(E G1) = |e|^2 |conj(Hd) h|^2 |w_c|^2
    params = SystemParams(n_bs=1, n_ris=1, n_users=1, kappa_t=0.0, kappa_r=0.0)
    hd = np.array([[1.3 - 0.4j]])
    h = np.array([[0.8 + 0.2j]])
    ch = ChannelSet(h_bs_ris=hd, h_ris_user=h, region=(TRANSMISSION,))
    w_c = np.array([0.9 + 0.1j])
    sol = PrecoderSolution.from_vectors(w_c, np.zeros((1, 1), complex), [0.0])
    cas = build_cascade_matrices(ch, sol, params)
    e = 0.7 * np.exp(1j * 0.5)
    lifted = np.array([[np.abs(e) ** 2]])
    got = float(np.trace(lifted @ cas.g1[0]).real)
    expect = np.abs(e) ** 2 * np.abs(np.conj(hd[0, 0]) * h[0, 0]) ** 2 * np.abs(w_c[0]) ** 2
    assert got == pytest.approx(expect, rel=1e-12)


def test_cascade_lift_identity_random():
    # tr(e e^H G(X)) == h_hat^H X h_hat for every weight X, 100 draws
    params = SystemParams(n_bs=2, n_ris=4, n_users=2, kappa_t=0.01, kappa_r=0.01)
    rng = np.random.default_rng(11)
    hd = rng.normal(size=(4, 2)) + 1j * rng.normal(size=(4, 2))
    hu = rng.normal(size=(2, 4)) + 1j * rng.normal(size=(2, 4))
    ch = ChannelSet(h_bs_ris=hd, h_ris_user=hu, region=(TRANSMISSION, REFLECTION))
    w_c = rng.normal(size=2) + 1j * rng.normal(size=2)
    w_p = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    sol = PrecoderSolution.from_vectors(w_c, w_p, np.zeros(2))
    agg = distortion_aggregates(sol.w_common_mat, sol.w_private_mat,
                                params.kappa_t, params.kappa_r)
    cas = build_cascade_matrices(ch, sol, params)
    for _ in range(100):
        e = rng.normal(size=4) + 1j * rng.normal(size=4)
        lifted = np.outer(e, e.conj())
        for q in range(2):
            h_hat = hd.conj().T @ (e * hu[q])
            pairs = [(cas.g1[q], sol.w_common_mat), (cas.g2[q], agg.pi_common),
                     (cas.b1[q], sol.w_private_mat[q]), (cas.b2[q], agg.pi_private(q))]
            for lifted_w, bs_w in pairs:
                got = float(np.trace(lifted @ lifted_w).real)
                expect = float((h_hat.conj() @ bs_w @ h_hat).real)
                assert abs(got - expect) <= 1e-9 * max(abs(expect), 1e-12)
