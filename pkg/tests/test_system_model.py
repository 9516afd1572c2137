"""Geometry, channel draws, and surface-configuration invariants."""
import numpy as np
import pytest

from star_rsma.system_model import (
    REFLECTION, TRANSMISSION, ChannelSet, Scenario, StarConfig, SystemParams,
    attach_star, dbm_to_watt, draw_channel_set, draw_rician_channel,
    draw_scenario, effective_channel, lifted_effective_cov, path_loss,
    steering_vector_ula, steering_vector_ura, uncertainty_radius, ura_grid,
    watt_to_dbm)


def test_dbm_round_trip():
    assert dbm_to_watt(30.0) == pytest.approx(1.0)
    assert dbm_to_watt(-114.0) == pytest.approx(10 ** (-14.4), rel=1e-12)
    for dbm in (-114.0, 0.0, 17.5, 30.0):
        assert watt_to_dbm(dbm_to_watt(dbm)) == pytest.approx(dbm)


def test_path_loss_values():
    # frozen: 1e-3 * 50^-2, 1e-3 * 1^-2.5, 1e-3 * 10^-2.5
    assert path_loss(50.0, 2.0, 1e-3) == pytest.approx(4.0e-7, rel=1e-12)
    assert path_loss(1.0, 2.5, 1e-3) == pytest.approx(1.0e-3, rel=1e-12)
    assert path_loss(10.0, 2.5, 1e-3) == pytest.approx(3.1623e-6, rel=1e-4)


def test_path_loss_rejects_nonpositive_distance():
    with pytest.raises(ValueError):
        path_loss(0.0, 2.0)
    with pytest.raises(ValueError):
        path_loss(-1.0, 2.0)


def test_steering_ula():
    assert np.allclose(steering_vector_ula(4, 0.0), np.ones(4))
    assert np.allclose(steering_vector_ula(2, np.pi / 2), [1.0, -1.0])
    v = steering_vector_ula(8, 0.3)
    assert np.allclose(np.abs(v), 1.0)
    incr = np.diff(np.unwrap(np.angle(v)))
    assert np.allclose(incr, np.pi * np.sin(0.3))


def test_steering_ura_degenerate_row_is_ula():
    az = 0.7
    assert np.allclose(steering_vector_ura(1, 6, az), steering_vector_ula(6, az))
    assert np.allclose(steering_vector_ura(2, 2, 0.0, 0.0), np.ones(4))
    v = steering_vector_ura(4, 8, 0.5, 0.2)
    assert v.shape == (32,)
    assert np.allclose(np.abs(v), 1.0)


def test_steering_ura_is_kron():
    a = steering_vector_ula(4, 0.2)
    b = steering_vector_ula(8, 0.5)
    assert np.allclose(steering_vector_ura(4, 8, 0.5, 0.2), np.kron(a, b))


def test_ura_grid():
    assert ura_grid(32) == (4, 8)
    assert ura_grid(8) == (2, 4)
    assert ura_grid(4) == (2, 2)
    assert ura_grid(2) == (1, 2)
    assert ura_grid(1) == (1, 1)


def test_rician_pure_los_limit():
    rng = np.random.default_rng(0)
    los = steering_vector_ula(8, 0.4)
    h = draw_rician_channel(los, 1e12, 0.25, rng)
    assert np.abs(h - 0.5 * los).max() < 1e-5 * np.abs(h).max()


def test_rician_rayleigh_moments():
    # alpha = 0: zero mean, per-entry variance = path gain
    rng = np.random.default_rng(1)
    gain = 0.7
    h = draw_rician_channel(np.ones(10 ** 5), 0.0, gain, rng)
    assert np.abs(h.mean()) < 3 * np.sqrt(gain / 1e5)
    assert np.mean(np.abs(h) ** 2) == pytest.approx(gain, rel=0.03)


def test_rician_total_power_unit():
    # alpha/(1+alpha) + 1/(1+alpha) = 1 regardless of alpha
    rng = np.random.default_rng(2)
    los = steering_vector_ula(10, 0.1)
    h = np.stack([draw_rician_channel(los, 10.0, 1.0, rng) for _ in range(10 ** 4)])
    assert np.mean(np.abs(h) ** 2) == pytest.approx(1.0, rel=0.03)


def test_scenario_regions_and_disc():
    params = SystemParams(n_bs=4, n_ris=8, n_users=5)
    for seed in range(20):
        sc = draw_scenario(params, seed)
        assert sc.region.count(TRANSMISSION) == 2      # floor(5/2)
        assert sc.region.count(REFLECTION) == 3        # odd user goes here
        d = np.linalg.norm(sc.user_positions - np.asarray(sc.ris_position), axis=1)
        assert d.max() <= sc.disc_radius_m + 1e-12
        for q, tag in enumerate(sc.region):
            # 't' users sit beyond the surface, 'r' users on the BS side
            if tag == TRANSMISSION:
                assert sc.user_positions[q, 0] >= sc.ris_position[0]
            else:
                assert sc.user_positions[q, 0] <= sc.ris_position[0]


def test_scenario_determinism():
    params = SystemParams(n_bs=4, n_ris=8, n_users=4)
    a = draw_scenario(params, 7)
    b = draw_scenario(params, 7)
    assert np.array_equal(a.user_positions, b.user_positions)
    assert a.region == b.region


def test_star_config_coupling_enforced():
    amp_t = np.array([0.6, 1.0])
    amp_r = np.sqrt(1.0 - amp_t ** 2)
    cfg = StarConfig.from_amplitudes_phases(amp_t, [0.1, 0.2], amp_r, [0.3, 0.4])
    assert cfg.coupling_residual() < 1e-12
    assert cfg.n_elements == 2
    with pytest.raises(ValueError):
        StarConfig.from_amplitudes_phases([0.9, 0.9], [0, 0], [0.9, 0.9], [0, 0])


def test_star_config_vectors_and_lifted_agree():
    rng = np.random.default_rng(3)
    zeta = rng.uniform(0.1, 0.9, size=6)
    e_t = np.sqrt(zeta) * np.exp(1j * rng.uniform(0, 2 * np.pi, 6))
    e_r = np.sqrt(1 - zeta) * np.exp(1j * rng.uniform(0, 2 * np.pi, 6))
    cfg = StarConfig.from_vectors(e_t, e_r)
    assert np.allclose(cfg.vector(TRANSMISSION), e_t)
    assert np.allclose(cfg.lifted(TRANSMISSION), np.outer(e_t, e_t.conj()))
    assert np.allclose(cfg.lifted(REFLECTION), np.outer(e_r, e_r.conj()))

    lifted_only = StarConfig.from_lifted(cfg.lifted(TRANSMISSION), cfg.lifted(REFLECTION))
    assert not lifted_only.has_vectors
    assert lifted_only.coupling_residual() < 1e-12
    with pytest.raises(ValueError):
        lifted_only.vector(TRANSMISSION)


def test_effective_channel_dark_surface():
    rng = np.random.default_rng(4)
    hd = rng.normal(size=(5, 3)) + 1j * rng.normal(size=(5, 3))
    h = rng.normal(size=5) + 1j * rng.normal(size=5)
    assert np.allclose(effective_channel(hd, h, np.zeros(5)), 0.0)


def test_effective_channel_scalar_case():
    hd = np.array([[2.0 - 1.0j]])
    h = np.array([0.5 + 0.25j])
    e = np.array([np.exp(1j * 0.3)])
    out = effective_channel(hd, h, e)
    assert out.shape == (1,)
    assert out[0] == pytest.approx(np.conj(hd[0, 0]) * e[0] * h[0])


def test_effective_channel_index_sum():
    rng = np.random.default_rng(5)
    m, n = 4, 2
    hd = rng.normal(size=(m, n)) + 1j * rng.normal(size=(m, n))
    h = rng.normal(size=m) + 1j * rng.normal(size=m)
    e = rng.normal(size=m) + 1j * rng.normal(size=m)
    manual = sum(hd[k].conj() * e[k] * h[k] for k in range(m))
    assert np.allclose(effective_channel(hd, h, e), manual)


def test_lifted_cov_matches_outer_product():
    # tr identities through the lifted map, 100 random surface vectors
    rng = np.random.default_rng(6)
    m, n = 4, 2
    hd = rng.normal(size=(m, n)) + 1j * rng.normal(size=(m, n))
    h = rng.normal(size=m) + 1j * rng.normal(size=m)
    for _ in range(100):
        e = rng.normal(size=m) + 1j * rng.normal(size=m)
        eff = effective_channel(hd, h, e)
        cov = lifted_effective_cov(hd, h, np.outer(e, e.conj()))
        ref = np.outer(eff, eff.conj())
        assert np.abs(cov - ref).max() <= 1e-9 * max(np.abs(ref).max(), 1e-30)


def test_uncertainty_radius_values():
    assert uncertainty_radius(np.eye(2), 0.5) == pytest.approx(0.5)
    assert uncertainty_radius(np.ones((3, 3)), 0.0) == 0.0
    h = np.array([1.0, 1.0, 1.0]) / np.sqrt(3) * np.sqrt(3)   # ||h||^2 = 3
    cov = np.outer(h, h.conj())
    assert uncertainty_radius(cov, 0.2) == pytest.approx(0.6)


def test_attach_star_populates_and_pins_radii():
    params = SystemParams(n_bs=2, n_ris=4, n_users=2, epsilon_level=0.05)
    sc = draw_scenario(params, 0)
    rng = np.random.default_rng(7)
    ch = draw_channel_set(params, sc, rng)
    zeta = np.full(4, 0.5)
    cfg = StarConfig.from_amplitudes_phases(np.sqrt(zeta), np.zeros(4),
                                            np.sqrt(1 - zeta), np.zeros(4))
    full = attach_star(ch, cfg, params.epsilon_level)
    assert full.effective.shape == (2, 2)
    assert full.cov_estimated.shape == (2, 2, 2)
    for q in range(2):
        ref = np.outer(full.effective[q], full.effective[q].conj())
        assert np.allclose(full.cov_estimated[q], ref)
        # rank-1 cov: top eigenvalue is ||h_eff||^2
        assert full.uncertainty_radius_sq[q] == pytest.approx(
            params.epsilon_level * float(np.linalg.eigvalsh(ref)[-1]))

    pinned = attach_star(ch, cfg, params.epsilon_level, radii_sq=np.array([1.0, 2.0]))
    assert np.array_equal(pinned.uncertainty_radius_sq, [1.0, 2.0])

    # lifted-only configuration reproduces the same covariances
    lifted_cfg = StarConfig.from_lifted(cfg.lifted(TRANSMISSION), cfg.lifted(REFLECTION))
    via_lift = attach_star(ch, lifted_cfg, params.epsilon_level)
    assert via_lift.effective is None
    assert np.allclose(via_lift.cov_estimated, full.cov_estimated)


def test_channel_set_restrict_users():
    params = SystemParams(n_bs=2, n_ris=4, n_users=4)
    sc = draw_scenario(params, 1)
    ch = draw_channel_set(params, sc, np.random.default_rng(8))
    sub = ch.restrict_users(ch.users_in(REFLECTION))
    assert sub.n_users == 2
    assert all(x == REFLECTION for x in sub.region)
    assert np.shares_memory(sub.h_bs_ris, ch.h_bs_ris)


def test_channel_set_determinism_and_scale():
    params = SystemParams(n_bs=4, n_ris=8, n_users=4)
    sc = draw_scenario(params, 3)
    a = draw_channel_set(params, sc, np.random.default_rng(9))
    b = draw_channel_set(params, sc, np.random.default_rng(9))
    assert np.array_equal(a.h_bs_ris, b.h_bs_ris)
    assert np.array_equal(a.h_ris_user, b.h_ris_user)
    # mean link power tracks the path-loss law
    g_br = path_loss(50.0, sc.pl_exponent_bs_ris, sc.pl_ref_gain)
    assert np.mean(np.abs(a.h_bs_ris) ** 2) == pytest.approx(g_br, rel=0.5)


def test_params_validation():
    with pytest.raises(ValueError):
        SystemParams(kappa_t=1.0)
    with pytest.raises(ValueError):
        SystemParams(epsilon_level=-0.1)
    with pytest.raises(ValueError):
        SystemParams(n_users=0)
    p = SystemParams(kappa_r=0.05)
    assert p.sigma2_tilde == pytest.approx(1.05 * p.noise_power_w)
    assert SystemParams(r_min=0.5).r_min_mbps() == pytest.approx(0.5)
