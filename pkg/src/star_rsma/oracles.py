"""Independent brute-force and Monte-Carlo verifiers.

These deliberately share no numerical kernels with the rate engine or the
optimization stages: SINRs come from simulating the signal model sample by
sample, the trace bound from random search plus its analytic maximizer,
and the surface optimum from exhaustive enumeration. Only raw-channel
primitives are imported.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .system_model import (REFLECTION, TRANSMISSION, ChannelSet, StarConfig,
                           SystemParams, effective_channel)


def simulate_sinr_monte_carlo(channels: ChannelSet, w_common: np.ndarray,
                              w_private: np.ndarray, params: SystemParams,
                              user: int, n_samples: int,
                              rng: np.random.Generator,
                              chunk_size: int = 1 << 16) -> tuple:
    """Empirical (common, private) SINRs of one user from signal simulation.

    Draws unit-power symbols, per-antenna transmit distortion with power
    kappa_t times the average antenna power, thermal noise, and receive
    distortion with power kappa_r times the empirical received power
    (measured in a first pass over the same sample stream). The private
    estimate applies ideal common-stream cancellation; the receive
    distortion keeps the common stream's contribution either way.
    """
    if n_samples < 10 ** 4:
        raise ValueError("need at least 1e4 samples for a stable estimate")
    if channels.effective is None:
        raise ValueError("attach a surface configuration first")
    h = np.asarray(channels.effective[user])            # (N,)
    w_c = np.asarray(w_common, dtype=complex)
    w_p = np.atleast_2d(np.asarray(w_private, dtype=complex))   # (Q, N)
    q_n, n = w_p.shape
    kt, kr = params.kappa_t, params.kappa_r
    sigma2 = params.noise_power_w

    proj_c = complex(h.conj() @ w_c)
    proj_p = w_p @ h.conj()                             # (Q,)
    d = (np.abs(w_p) ** 2).sum(axis=0) + np.abs(w_c) ** 2   # avg power per antenna
    tx_std = np.sqrt(kt * d / 2.0)                      # per-component std
    noise_std = np.sqrt(sigma2 / 2.0)

    seed_signal = int(rng.integers(2 ** 63))
    seed_rx = int(rng.integers(2 ** 63))

    def signal_chunks():
        g = np.random.default_rng(seed_signal)
        done = 0
        while done < n_samples:
            s = min(chunk_size, n_samples - done)
            sym_c = (g.standard_normal(s) + 1j * g.standard_normal(s)) / np.sqrt(2)
            sym_p = (g.standard_normal((s, q_n))
                     + 1j * g.standard_normal((s, q_n))) / np.sqrt(2)
            xi_t = (g.standard_normal((s, n)) + 1j * g.standard_normal((s, n))) * tx_std
            noise = (g.standard_normal(s) + 1j * g.standard_normal(s)) * noise_std
            yield sym_c, sym_p, xi_t @ h.conj(), noise
            done += s

    # pass 1: empirical received power sets the receive-distortion level
    acc = 0.0
    for sym_c, sym_p, xi_rx, noise in signal_chunks():
        y = proj_c * sym_c + sym_p @ proj_p + xi_rx + noise
        acc += float(np.sum(np.abs(y) ** 2))
    rx_var = kr * acc / n_samples

    # pass 2: identical draws, now with receive distortion added
    g_rx = np.random.default_rng(seed_rx)
    num_c = den_c = num_p = den_p = 0.0
    for sym_c, sym_p, xi_rx, noise in signal_chunks():
        s = sym_c.shape[0]
        xi_r = (g_rx.standard_normal(s) + 1j * g_rx.standard_normal(s)) \
            * np.sqrt(rx_var / 2.0)
        base = xi_rx + xi_r + noise
        privates = sym_p @ proj_p
        num_c += float(np.sum(np.abs(proj_c * sym_c) ** 2))
        den_c += float(np.sum(np.abs(privates + base) ** 2))
        own = sym_p[:, user] * proj_p[user]
        num_p += float(np.sum(np.abs(own) ** 2))
        den_p += float(np.sum(np.abs(privates - own + base) ** 2))
    return num_c / den_c, num_p / den_p


def trace_bound_sampler(a: np.ndarray, radius_sq: float, n_samples: int,
                        rng: np.random.Generator) -> tuple:
    """(attained max, sampled-only max) of tr(aB) over ||B||_2 <= radius_sq.

    Samples Gaussian Hermitian matrices rescaled onto the norm-ball
    boundary, then adds the analytic maximizer B* = (radius_sq/tr(a)) a.
    For rank-one PSD ``a`` the attained value is radius_sq * tr(a).
    """
    if radius_sq < 0:
        raise ValueError("radius_sq must be non-negative")
    a = np.asarray(a, dtype=complex)
    m = a.shape[0]
    lam = np.linalg.eigvalsh(0.5 * (a + a.conj().T))
    if lam[0] < -1e-9 * max(abs(lam).max(), 1.0):
        raise ValueError("matrix must be PSD")
    if m > 1 and abs(lam[-2]) > 1e-9 * max(lam[-1], 1e-300):
        raise ValueError("matrix must be numerically rank-one")
    tr_a = float(lam.sum())
    if radius_sq == 0.0:
        return 0.0, 0.0

    best_sampled = -np.inf
    for _ in range(n_samples):
        g = rng.standard_normal((m, m)) + 1j * rng.standard_normal((m, m))
        b = 0.5 * (g + g.conj().T)
        norm = float(np.abs(np.linalg.eigvalsh(b)).max())
        b *= radius_sq / norm               # boundary of the norm ball
        best_sampled = max(best_sampled, float(np.trace(a @ b).real))
    if tr_a > 0:
        b_star = (radius_sq / tr_a) * a
        attained = float(np.trace(a @ b_star).real)
    else:
        attained = 0.0
    return max(best_sampled, attained), best_sampled


@dataclass(frozen=True)
class GridSpec:
    """Quantization of the exhaustive surface search."""

    n_phases: int = 16          # per region, uniform on [0, 2*pi)
    n_amplitudes: int = 11      # energy splits zeta on [0, 1]
    max_points: int = 10 ** 6   # cap on explicit rate evaluations

    def __post_init__(self):
        if self.n_phases < 1 or self.n_amplitudes < 2:
            raise ValueError("need at least 1 phase and 2 amplitude levels")


@dataclass(frozen=True)
class GridSearchResult:
    config: StarConfig
    objective: float        # sum rate with the common capacity fully shared
    feasible: bool          # every user's QoS floor reachable at the optimum
    n_evaluated: int        # explicit worst-case rate evaluations


def _region_rate_tables(channels, params, w_c, w_p, users, vectors, radii_sq):
    """Private-sum, common-min, and QoS-need tables over candidate vectors.

    Worst-case rates are written out longhand from the signal model: the
    quadratic forms use the effective channel directly and the uncertainty
    enters as radius_sq times the precoders' total powers.
    """
    kt, kr = params.kappa_t, params.kappa_r
    s2t = (1.0 + kr) * params.noise_power_w
    pw_c = float(np.sum(np.abs(w_c) ** 2))
    pw_p = (np.abs(w_p) ** 2).sum(axis=1)               # (Q,)
    d = (np.abs(w_p) ** 2).sum(axis=0) + np.abs(w_c) ** 2
    # traces of the denominator aggregates, for the +radius_sq * I part
    tr_pi_c = (1 + kr) * pw_p.sum() + kr * pw_c + (1 + kr) * kt * d.sum()
    n_cfg = len(vectors)
    s_tab = np.zeros(n_cfg)
    c_tab = np.full(n_cfg, np.inf)
    need_tab = np.zeros(n_cfg)
    for i, e in enumerate(vectors):
        for q in users:
            h = effective_channel(channels.h_bs_ris, channels.h_ris_user[q], e)
            r2 = radii_sq[q] if radii_sq is not None \
                else params.epsilon_level * float(np.sum(np.abs(h) ** 2))
            g_c = np.abs(h.conj() @ w_c) ** 2
            g_p = np.abs(w_p @ h.conj()) ** 2
            tx = (1 + kr) * kt * float(np.abs(h) ** 2 @ d)
            den_c = ((1 + kr) * g_p.sum() + kr * g_c + tx + r2 * tr_pi_c + s2t)
            r_c = np.log2(1 + max(g_c - r2 * pw_c, 0.0) / den_c)
            tr_pi_p = tr_pi_c - pw_p[q]     # own stream leaves the aggregate
            den_p = (g_p.sum() - g_p[q] + kr * (g_p.sum() + g_c) + tx
                     + r2 * tr_pi_p + s2t)
            r_p = np.log2(1 + max(g_p[q] - r2 * pw_p[q], 0.0) / den_p)
            s_tab[i] += r_p
            c_tab[i] = min(c_tab[i], r_c)
            need_tab[i] += max(0.0, params.r_min - r_p)
    return s_tab, c_tab, need_tab


def grid_search_star(channels: ChannelSet, params: SystemParams,
                     w_common: np.ndarray, w_private: np.ndarray,
                     grid_spec: GridSpec = GridSpec(),
                     radii_sq: Optional[np.ndarray] = None) -> GridSearchResult:
    """Exhaustive quantized surface search; the stage-2 ground truth at M <= 2.

    The energy split couples the regions element-wise, but each region's
    rates depend only on its own vector, so rates are tabulated once per
    (amplitude combo, phase combo) per region and the joint optimum is a
    table max; the point cap counts explicit rate evaluations.
    """
    m = channels.n_ris
    if m > 2:
        raise ValueError(f"exhaustive search is limited to M <= 2, got M = {m}")
    w_c = np.asarray(w_common, dtype=complex)
    w_p = np.atleast_2d(np.asarray(w_private, dtype=complex))
    if radii_sq is None and channels.uncertainty_radius_sq is not None:
        radii_sq = channels.uncertainty_radius_sq

    zeta = np.linspace(0.0, 1.0, grid_spec.n_amplitudes)
    phases = np.arange(grid_spec.n_phases) * 2 * np.pi / grid_spec.n_phases
    amp_combos = np.stack(np.meshgrid(*[zeta] * m, indexing="ij"),
                          axis=-1).reshape(-1, m)           # (A, M)
    ph_combos = np.stack(np.meshgrid(*[phases] * m, indexing="ij"),
                         axis=-1).reshape(-1, m)            # (P, M)
    n_a, n_p = amp_combos.shape[0], ph_combos.shape[0]
    n_eval = 2 * n_a * n_p
    if n_eval > grid_spec.max_points:
        raise ValueError(
            f"grid too large: {n_eval} rate evaluations "
            f"({n_a} amplitude x {n_p} phase combos x 2 regions) "
            f"exceed the cap of {grid_spec.max_points}")

    users_t = channels.users_in(TRANSMISSION)
    users_r = channels.users_in(REFLECTION)
    vec_t = [np.sqrt(a) * np.exp(1j * p) for a in amp_combos for p in ph_combos]
    vec_r = [np.sqrt(1 - a) * np.exp(1j * p) for a in amp_combos for p in ph_combos]
    s_t, c_t, need_t = _region_rate_tables(channels, params, w_c, w_p,
                                           users_t, vec_t, radii_sq)
    s_r, c_r, need_r = _region_rate_tables(channels, params, w_c, w_p,
                                           users_r, vec_r, radii_sq)
    # tables are flat over (amplitude combo) x (phase combo)
    shape = (n_a, n_p)
    s_t, c_t, need_t = (x.reshape(shape) for x in (s_t, c_t, need_t))
    s_r, c_r, need_r = (x.reshape(shape) for x in (s_r, c_r, need_r))

    best_ok = (-np.inf, 0, 0, 0)     # feasible optimum
    best_any = (-np.inf, 0, 0, 0)    # fallback when nothing meets QoS
    for a in range(n_a):
        c_min = np.minimum(c_t[a][:, None], c_r[a][None, :])    # (P, P)
        cap = np.where(np.isinf(c_min), 0.0, c_min)             # empty region -> 0
        obj = s_t[a][:, None] + s_r[a][None, :] + cap
        ok = (need_t[a][:, None] + need_r[a][None, :]) <= cap + 1e-12

        i = int(np.argmax(obj))
        if obj.flat[i] > best_any[0]:
            best_any = (float(obj.flat[i]), a, i // n_p, i % n_p)
        masked = np.where(ok, obj, -np.inf)
        i = int(np.argmax(masked))
        if masked.flat[i] > best_ok[0]:
            best_ok = (float(masked.flat[i]), a, i // n_p, i % n_p)

    feas = np.isfinite(best_ok[0])
    val, a_i, pt_i, pr_i = best_ok if feas else best_any
    cfg = StarConfig.from_amplitudes_phases(
        np.sqrt(amp_combos[a_i]), ph_combos[pt_i],
        np.sqrt(1 - amp_combos[a_i]), ph_combos[pr_i])
    return GridSearchResult(config=cfg, objective=val, feasible=feas,
                            n_evaluated=n_eval)
