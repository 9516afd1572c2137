"""Monte-Carlo SINR simulator, trace-bound sampler, exhaustive grid search."""
import numpy as np
import pytest

from star_rsma.oracles import (GridSearchResult, GridSpec, grid_search_star,
                               simulate_sinr_monte_carlo, trace_bound_sampler)
from star_rsma.rate_engine import (PrecoderSolution, repair_shares,
                                   sinr_common_perfect, sinr_private_perfect,
                                   sum_rate, worst_case_rates)
from star_rsma.system_model import (REFLECTION, TRANSMISSION, ChannelSet,
                                    StarConfig, SystemParams, attach_star,
                                    draw_channel_set, draw_scenario)


def _attached_instance(seed, n=2, q=2, m=4, eps=0.0, kt=0.01, kr=0.01, s2=0.1):
    params = SystemParams(n_bs=n, n_ris=m, n_users=q, kappa_t=kt, kappa_r=kr,
                          noise_power_w=s2, epsilon_level=eps)
    rng = np.random.default_rng(seed)
    hd = rng.normal(size=(m, n)) + 1j * rng.normal(size=(m, n))
    hu = rng.normal(size=(q, m)) + 1j * rng.normal(size=(q, m))
    region = tuple(TRANSMISSION if i < q // 2 else REFLECTION for i in range(q))
    ch = ChannelSet(h_bs_ris=hd, h_ris_user=hu, region=region)
    zeta = rng.uniform(0.2, 0.8, size=m)
    cfg = StarConfig.from_amplitudes_phases(
        np.sqrt(zeta), rng.uniform(0, 2 * np.pi, m),
        np.sqrt(1 - zeta), rng.uniform(0, 2 * np.pi, m))
    return params, attach_star(ch, cfg, eps), rng


def test_mc_sinr_rejects_small_sample_counts():
    params, ch, rng = _attached_instance(0)
    with pytest.raises(ValueError):
        simulate_sinr_monte_carlo(ch, np.zeros(2), np.zeros((2, 2)), params,
                                  0, 100, rng)


def test_mc_sinr_impairment_free_point_to_point():
    params, ch, rng = _attached_instance(1, q=2, kt=0.0, kr=0.0)
    w_c = 0.3 * (rng.normal(size=2) + 1j * rng.normal(size=2))
    w_p = np.zeros((2, 2), dtype=complex)
    est_c, _ = simulate_sinr_monte_carlo(ch, w_c, w_p, params, 0, 10 ** 6, rng)
    expect = np.abs(ch.effective[0].conj() @ w_c) ** 2 / params.noise_power_w
    assert est_c == pytest.approx(expect, rel=0.01)


def test_mc_sinr_matches_closed_form():
    # the ground-truth check: simulator vs trace formulas, 2% at 1e6 draws
    params, ch, rng = _attached_instance(2, q=2)
    w_c = 0.4 * (rng.normal(size=2) + 1j * rng.normal(size=2))
    w_p = 0.4 * (rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2)))
    for q in range(2):
        est_c, est_p = simulate_sinr_monte_carlo(ch, w_c, w_p, params, q,
                                                 10 ** 6, rng)
        h = ch.effective[q]
        ref_c = sinr_common_perfect(h, w_c, w_p, params.kappa_t, params.kappa_r,
                                    params.noise_power_w)
        ref_p = sinr_private_perfect(h, w_c, w_p, q, params.kappa_t,
                                     params.kappa_r, params.noise_power_w)
        assert est_c == pytest.approx(ref_c, rel=0.02)
        assert est_p == pytest.approx(ref_p, rel=0.02)


def test_mc_sinr_clt_scaling():
    # doubling the sample count shrinks the spread by about sqrt(2)
    params, ch, _ = _attached_instance(3, q=2)
    rng = np.random.default_rng(33)
    w_c = 0.4 * np.ones(2, dtype=complex)
    w_p = 0.4 * np.eye(2, dtype=complex)
    reps = 24
    small = [simulate_sinr_monte_carlo(ch, w_c, w_p, params, 0, 2 * 10 ** 4, rng)[0]
             for _ in range(reps)]
    large = [simulate_sinr_monte_carlo(ch, w_c, w_p, params, 0, 8 * 10 ** 4, rng)[0]
             for _ in range(reps)]
    ratio = np.std(small) / np.std(large)
    assert 1.4 < ratio < 2.9    # expect about 2 for a 4x sample increase


def test_trace_bound_sampler_values():
    rng = np.random.default_rng(4)
    e1 = np.zeros((2, 2), dtype=complex)
    e1[0, 0] = 1.0
    assert trace_bound_sampler(e1, 0.0, 10, rng) == (0.0, 0.0)
    attained, _ = trace_bound_sampler(e1, 1.0, 100, rng)
    assert attained == pytest.approx(1.0, abs=1e-12)


def test_trace_bound_sampler_never_exceeds_analytic():
    rng = np.random.default_rng(5)
    for _ in range(10):
        h = rng.normal(size=3) + 1j * rng.normal(size=3)
        a = np.outer(h, h.conj())
        r2 = rng.uniform(0.05, 0.5)
        bound = r2 * float(np.trace(a).real)
        attained, sampled_only = trace_bound_sampler(a, r2, 300, rng)
        assert sampled_only <= bound + 1e-9
        assert attained == pytest.approx(bound, abs=1e-9)


def test_trace_bound_sampler_gap_shrinks():
    rng = np.random.default_rng(6)
    h = rng.normal(size=2) + 1j * rng.normal(size=2)
    a = np.outer(h, h.conj())
    bound = 0.3 * float(np.trace(a).real)
    _, few = trace_bound_sampler(a, 0.3, 30, np.random.default_rng(7))
    _, many = trace_bound_sampler(a, 0.3, 3000, np.random.default_rng(7))
    assert few <= many <= bound + 1e-9


def test_trace_bound_sampler_rejects_rank_two():
    rng = np.random.default_rng(8)
    with pytest.raises(ValueError):
        trace_bound_sampler(np.eye(2), 0.1, 10, rng)


def test_grid_search_refuses_large_grids():
    params, ch, _ = _attached_instance(9, m=2)
    with pytest.raises(ValueError, match="rate evaluations"):
        grid_search_star(ch, params, np.zeros(2), np.zeros((2, 2)),
                         GridSpec(n_phases=1024, n_amplitudes=11))
    with pytest.raises(ValueError, match="M <= 2"):
        big = _attached_instance(9, m=4)
        grid_search_star(big[1], big[0], np.zeros(2), np.zeros((2, 2)))


def test_grid_search_zero_precoder():
    params = SystemParams(n_bs=2, n_ris=1, n_users=2, r_min=0.0,
                          noise_power_w=0.1, epsilon_level=0.0)
    rng = np.random.default_rng(10)
    hd = rng.normal(size=(1, 2)) + 1j * rng.normal(size=(1, 2))
    hu = rng.normal(size=(2, 1)) + 1j * rng.normal(size=(2, 1))
    ch = ChannelSet(h_bs_ris=hd, h_ris_user=hu,
                    region=(TRANSMISSION, REFLECTION))
    res = grid_search_star(ch, params, np.zeros(2), np.zeros((2, 2)),
                           GridSpec(n_phases=4, n_amplitudes=3))
    assert res.objective == 0.0
    assert res.feasible
    assert res.n_evaluated == 2 * 3 * 4


def test_grid_search_m1_matches_scalar_scan():
    # independent 1-D check: zeta scan at fixed phase-invariant rates
    params, ch, rng = _attached_instance(11, m=1, q=2, eps=0.01)
    w_c = 0.5 * (rng.normal(size=2) + 1j * rng.normal(size=2))
    w_p = 0.5 * (rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2)))
    params = SystemParams(n_bs=2, n_ris=1, n_users=2, kappa_t=params.kappa_t,
                          kappa_r=params.kappa_r, noise_power_w=params.noise_power_w,
                          r_min=0.0, epsilon_level=0.01)
    raw = ChannelSet(h_bs_ris=ch.h_bs_ris, h_ris_user=ch.h_ris_user,
                     region=ch.region)
    spec = GridSpec(n_phases=8, n_amplitudes=21)
    res = grid_search_star(raw, params, w_c, w_p, spec)

    # scalar scan over the same quantized splits using the rate engine
    best = -np.inf
    for zeta in np.linspace(0, 1, 21):
        for pt in np.arange(8) * 2 * np.pi / 8:
            for pr in np.arange(8) * 2 * np.pi / 8:
                cfg = StarConfig.from_amplitudes_phases(
                    [np.sqrt(zeta)], [pt], [np.sqrt(1 - zeta)], [pr])
                full = attach_star(raw, cfg, params.epsilon_level)
                sol = PrecoderSolution.from_vectors(w_c, w_p, np.zeros(2))
                common, private = worst_case_rates(full, sol, params)
                shares, ok = repair_shares(common, private, params.r_min)
                if ok:
                    best = max(best, sum_rate(shares, private))
    assert res.objective == pytest.approx(best, abs=1e-9)


def test_grid_search_qos_feasibility_flag():
    params, ch, rng = _attached_instance(12, m=1, q=2)
    params = SystemParams(n_bs=2, n_ris=1, n_users=2, r_min=50.0,
                          noise_power_w=params.noise_power_w, epsilon_level=0.0)
    raw = ChannelSet(h_bs_ris=ch.h_bs_ris, h_ris_user=ch.h_ris_user,
                     region=ch.region)
    w_c = 0.1 * np.ones(2, dtype=complex)
    w_p = 0.1 * np.eye(2, dtype=complex)
    res = grid_search_star(raw, params, w_c, w_p, GridSpec(n_phases=4, n_amplitudes=5))
    assert not res.feasible            # a 50 bit/s/Hz floor is unreachable
    assert np.isfinite(res.objective)
