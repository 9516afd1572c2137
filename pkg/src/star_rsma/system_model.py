"""Physical layer: geometry, Rician channels, STAR surface configurations.

A base station with N antennas reaches Q single-antenna users only through
an M-element surface that simultaneously transmits (region 't') and reflects
(region 'r'). Energy splitting couples the two modes per element:
zeta_t + zeta_r = 1, with amplitudes sqrt(zeta) in [0, 1].
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

TRANSMISSION = "t"
REFLECTION = "r"
REGIONS = (TRANSMISSION, REFLECTION)


def dbm_to_watt(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def watt_to_dbm(watt: float) -> float:
    if watt <= 0:
        raise ValueError("power must be positive")
    return 10.0 * np.log10(watt) + 30.0


@dataclass(frozen=True)
class SystemParams:
    """Dimensions, impairment levels, and link-budget constants.

    Rates are carried in bit/s/Hz internally; Mbit/s only appears at the
    reporting boundary (bandwidth does the conversion).
    """

    n_bs: int = 8                  # BS antennas N
    n_ris: int = 32                # surface elements M
    n_users: int = 4               # users Q
    kappa_t: float = 0.01          # transmit distortion factor, in [0, 1)
    kappa_r: float = 0.01          # receive distortion factor, in [0, 1)
    noise_power_w: float = dbm_to_watt(-114.0)
    power_budget_w: float = dbm_to_watt(30.0)
    r_min: float = 0.5             # per-user QoS floor, bit/s/Hz
    epsilon_level: float = 0.02    # CSI error level; radius^2 = eps * ||cov||
    rician_bs_ris: float = 10.0    # Rician factor of the BS-surface link
    rician_ris_user: float = 10.0  # Rician factor of the surface-user links
    carrier_hz: float = 2.5e9
    bandwidth_hz: float = 1.0e6

    def __post_init__(self):
        if min(self.n_bs, self.n_ris, self.n_users) < 1:
            raise ValueError("dimensions must be at least 1")
        for name in ("kappa_t", "kappa_r"):
            k = getattr(self, name)
            if not (0.0 <= k < 1.0):
                raise ValueError(f"{name} must lie in [0, 1), got {k}")
        if not (0.0 <= self.epsilon_level < 1.0):
            raise ValueError("epsilon_level must lie in [0, 1)")
        if self.noise_power_w <= 0 or self.power_budget_w <= 0:
            raise ValueError("noise and power budget must be positive")
        if self.r_min < 0:
            raise ValueError("r_min must be non-negative")

    @property
    def sigma2_tilde(self) -> float:
        """Effective noise floor (1 + kappa_r) * sigma^2."""
        return (1.0 + self.kappa_r) * self.noise_power_w

    def r_min_mbps(self) -> float:
        return self.r_min * self.bandwidth_hz / 1e6


@dataclass(frozen=True)
class Scenario:
    """Node geometry and path-loss law. Distances in meters."""

    user_positions: np.ndarray            # (Q, 2)
    region: tuple                         # per-user 't' / 'r'
    bs_position: tuple = (0.0, 0.0)
    ris_position: tuple = (50.0, 0.0)
    pl_ref_gain: float = 1e-3             # gain at 1 m
    pl_exponent_bs_ris: float = 2.0
    pl_exponent_ris_user: float = 2.5
    disc_radius_m: float = 10.0
    rng_seed: int = 0

    def __post_init__(self):
        pos = np.atleast_2d(np.asarray(self.user_positions, dtype=float))
        object.__setattr__(self, "user_positions", pos)
        if pos.shape[1] != 2:
            raise ValueError("user_positions must be (Q, 2)")
        if len(self.region) != pos.shape[0]:
            raise ValueError("one region tag per user required")
        if any(x not in REGIONS for x in self.region):
            raise ValueError(f"region tags must be in {REGIONS}")

    @property
    def n_users(self) -> int:
        return self.user_positions.shape[0]


def draw_scenario(params: SystemParams, seed: int, **geometry) -> Scenario:
    """Place Q users uniformly in the disc around the surface.

    floor(Q/2) users land in the transmission half-plane (beyond the
    surface), the rest in the reflection half-plane (the BS side); an odd
    user count puts the extra user in the reflection region.
    """
    from .rng import substream

    rng = substream(seed, "scenario")
    proto = Scenario(user_positions=np.zeros((1, 2)), region=(REFLECTION,), **geometry)
    q = params.n_users
    n_t = q // 2
    region = (TRANSMISSION,) * n_t + (REFLECTION,) * (q - n_t)
    rx, ry = proto.ris_position
    pos = np.zeros((q, 2))
    for i, tag in enumerate(region):
        r = proto.disc_radius_m * np.sqrt(rng.uniform())
        # half-disc per region: 't' faces away from the BS, 'r' faces it
        phi = rng.uniform(-np.pi / 2, np.pi / 2)
        if tag == REFLECTION:
            phi += np.pi
        pos[i] = (rx + r * np.cos(phi), ry + r * np.sin(phi))
    return replace(proto, user_positions=pos, region=region, rng_seed=seed)


def path_loss(distance_m: float, exponent: float, ref_gain: float = 1e-3) -> float:
    """Power gain ref_gain * d^-exponent. Rejects non-positive distance."""
    if distance_m <= 0:
        raise ValueError(f"distance must be positive, got {distance_m}")
    return float(ref_gain * distance_m ** (-exponent))


def steering_vector_ula(n: int, angle_rad: float) -> np.ndarray:
    """Half-wavelength ULA response, element k = exp(j*pi*k*sin(angle))."""
    return np.exp(1j * np.pi * np.arange(n) * np.sin(angle_rad))


def ura_grid(m: int) -> tuple:
    """Factor M elements into rows x cols, rows = largest power of two <= sqrt(M)."""
    rows = 1
    while 2 * rows <= int(np.sqrt(m)):
        rows *= 2
    if m % rows != 0:
        raise ValueError(f"cannot factor {m} elements into a {rows}-row grid")
    return rows, m // rows


def steering_vector_ura(n_rows: int, n_cols: int, azimuth_rad: float,
                        elevation_rad: float = 0.0) -> np.ndarray:
    """URA response as the Kronecker product of two half-wavelength ULA factors."""
    return np.kron(steering_vector_ula(n_rows, elevation_rad),
                   steering_vector_ula(n_cols, azimuth_rad))


def draw_rician_channel(los: np.ndarray, rician_factor: float, gain: float,
                        rng: np.random.Generator) -> np.ndarray:
    """Rician fade around a deterministic LOS component.

    sqrt(gain) * ( sqrt(K/(1+K)) * los + sqrt(1/(1+K)) * nlos ),
    nlos entries iid CN(0, 1). ``los`` should have unit-modulus entries so
    E[|h|^2] = gain elementwise.
    """
    if rician_factor < 0:
        raise ValueError("Rician factor must be non-negative")
    shape = np.shape(los)
    nlos = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)
    k = rician_factor
    return np.sqrt(gain) * (np.sqrt(k / (1.0 + k)) * los + np.sqrt(1.0 / (1.0 + k)) * nlos)


@dataclass(frozen=True)
class StarConfig:
    """One surface configuration: amplitudes sqrt(zeta) and phases per region.

    Either the per-element vectors or the lifted outer products may be
    present; SDR intermediates carry lifted matrices only.
    """

    amplitudes_t: Optional[np.ndarray] = None   # (M,), sqrt(zeta_t)
    phases_t: Optional[np.ndarray] = None       # (M,), [0, 2*pi)
    amplitudes_r: Optional[np.ndarray] = None
    phases_r: Optional[np.ndarray] = None
    lifted_t: Optional[np.ndarray] = None       # (M, M) Hermitian PSD
    lifted_r: Optional[np.ndarray] = None

    @classmethod
    def from_amplitudes_phases(cls, amplitudes_t, phases_t, amplitudes_r, phases_r,
                               coupling_tol: float = 1e-9) -> "StarConfig":
        a_t = np.asarray(amplitudes_t, dtype=float)
        a_r = np.asarray(amplitudes_r, dtype=float)
        p_t = np.mod(np.asarray(phases_t, dtype=float), 2 * np.pi)
        p_r = np.mod(np.asarray(phases_r, dtype=float), 2 * np.pi)
        if a_t.min() < -1e-12 or a_r.min() < -1e-12:
            raise ValueError("amplitudes must be non-negative")
        resid = np.abs(a_t ** 2 + a_r ** 2 - 1.0).max()
        if resid > coupling_tol:
            raise ValueError(f"energy-splitting coupling violated by {resid:.3e}")
        e_t = a_t * np.exp(1j * p_t)
        e_r = a_r * np.exp(1j * p_r)
        return cls(amplitudes_t=a_t, phases_t=p_t, amplitudes_r=a_r, phases_r=p_r,
                   lifted_t=np.outer(e_t, e_t.conj()), lifted_r=np.outer(e_r, e_r.conj()))

    @classmethod
    def from_vectors(cls, e_t, e_r, coupling_tol: float = 1e-9) -> "StarConfig":
        e_t = np.asarray(e_t, dtype=complex)
        e_r = np.asarray(e_r, dtype=complex)
        return cls.from_amplitudes_phases(np.abs(e_t), np.angle(e_t),
                                          np.abs(e_r), np.angle(e_r), coupling_tol)

    @classmethod
    def from_lifted(cls, lifted_t, lifted_r) -> "StarConfig":
        return cls(lifted_t=np.asarray(lifted_t, dtype=complex),
                   lifted_r=np.asarray(lifted_r, dtype=complex))

    @property
    def has_vectors(self) -> bool:
        return self.amplitudes_t is not None

    @property
    def n_elements(self) -> int:
        if self.has_vectors:
            return self.amplitudes_t.shape[0]
        return self.lifted_t.shape[0]

    def vector(self, region: str) -> np.ndarray:
        if not self.has_vectors:
            raise ValueError("configuration carries lifted matrices only")
        if region == TRANSMISSION:
            return self.amplitudes_t * np.exp(1j * self.phases_t)
        if region == REFLECTION:
            return self.amplitudes_r * np.exp(1j * self.phases_r)
        raise ValueError(f"unknown region {region!r}")

    def lifted(self, region: str) -> np.ndarray:
        mat = self.lifted_t if region == TRANSMISSION else self.lifted_r
        if mat is None:
            e = self.vector(region)
            mat = np.outer(e, e.conj())
        return mat

    def coupling_residual(self) -> float:
        """Max deviation of zeta_t + zeta_r from 1, from vectors or lifted diagonals."""
        if self.has_vectors:
            return float(np.abs(self.amplitudes_t ** 2 + self.amplitudes_r ** 2 - 1.0).max())
        d = np.diag(self.lifted_t).real + np.diag(self.lifted_r).real
        return float(np.abs(d - 1.0).max())


@dataclass(frozen=True)
class ChannelSet:
    """Raw channels plus the surface-dependent derived quantities.

    ``effective``, ``cov_estimated`` and ``uncertainty_radius_sq`` are only
    populated after ``attach_star``; they are per-user and recomputed for
    every surface configuration (an optimizer may pin the radii instead).
    """

    h_bs_ris: np.ndarray                    # (M, N) BS -> surface
    h_ris_user: np.ndarray                  # (Q, M) surface -> user
    region: tuple                           # per-user 't' / 'r'
    star: Optional[StarConfig] = None
    effective: Optional[np.ndarray] = None              # (Q, N)
    cov_estimated: Optional[np.ndarray] = None          # (Q, N, N)
    uncertainty_radius_sq: Optional[np.ndarray] = None  # (Q,)

    @property
    def n_users(self) -> int:
        return self.h_ris_user.shape[0]

    @property
    def n_bs(self) -> int:
        return self.h_bs_ris.shape[1]

    @property
    def n_ris(self) -> int:
        return self.h_bs_ris.shape[0]

    def users_in(self, region: str) -> list:
        return [q for q, x in enumerate(self.region) if x == region]

    def restrict_users(self, users: Sequence[int]) -> "ChannelSet":
        """View of the raw channels for a subset of users (derived fields drop)."""
        idx = list(users)
        return ChannelSet(h_bs_ris=self.h_bs_ris,
                          h_ris_user=self.h_ris_user[idx],
                          region=tuple(self.region[q] for q in idx))


def draw_channel_set(params: SystemParams, scenario: Scenario,
                     rng: np.random.Generator) -> ChannelSet:
    """Draw all Rician links with geometry-derived LOS steering."""
    if scenario.n_users != params.n_users:
        raise ValueError("scenario and params disagree on the user count")
    m, n = params.n_ris, params.n_bs
    bs = np.asarray(scenario.bs_position, dtype=float)
    ris = np.asarray(scenario.ris_position, dtype=float)
    d_br = float(np.linalg.norm(ris - bs))
    g_br = path_loss(d_br, scenario.pl_exponent_bs_ris, scenario.pl_ref_gain)

    rows, cols = ura_grid(m)
    aod_bs = float(np.arctan2(ris[1] - bs[1], ris[0] - bs[0]))
    aoa_ris = float(np.arctan2(bs[1] - ris[1], bs[0] - ris[0]))
    a_ris_in = steering_vector_ura(rows, cols, aoa_ris)          # (M,)
    a_bs = steering_vector_ula(n, aod_bs)                        # (N,)
    los_br = np.outer(a_ris_in, a_bs.conj())                     # (M, N)
    h_bs_ris = draw_rician_channel(los_br, params.rician_bs_ris, g_br, rng)

    h_ris_user = np.zeros((params.n_users, m), dtype=complex)
    for q in range(params.n_users):
        u = scenario.user_positions[q]
        d = float(np.linalg.norm(u - ris))
        g = path_loss(d, scenario.pl_exponent_ris_user, scenario.pl_ref_gain)
        az = float(np.arctan2(u[1] - ris[1], u[0] - ris[0]))
        los = steering_vector_ura(rows, cols, az)
        h_ris_user[q] = draw_rician_channel(los, params.rician_ris_user, g, rng)
    return ChannelSet(h_bs_ris=h_bs_ris, h_ris_user=h_ris_user,
                      region=tuple(scenario.region))


def effective_channel(h_bs_ris: np.ndarray, h_ris_user: np.ndarray,
                      star_vector: np.ndarray) -> np.ndarray:
    """Effective BS->user channel through the surface: Hd^H diag(e) h. (N,)"""
    return h_bs_ris.conj().T @ (star_vector * h_ris_user)


def lifted_effective_cov(h_bs_ris: np.ndarray, h_ris_user: np.ndarray,
                         lifted: np.ndarray) -> np.ndarray:
    """Effective-channel covariance Hd^H diag(h) E diag(h)^H Hd for lifted E.

    Coincides with the outer product of ``effective_channel`` when E = e e^H.
    """
    t = h_ris_user.conj()[:, None] * h_bs_ris   # t = diag(h)^H Hd, (M x N)
    return t.conj().T @ lifted @ t


def uncertainty_radius(cov: np.ndarray, epsilon_level: float) -> float:
    """Squared uncertainty radius eps * ||cov||_2 (largest eigenvalue, PSD input)."""
    if epsilon_level == 0.0:
        return 0.0
    lam = float(np.linalg.eigvalsh(cov)[-1])
    return epsilon_level * max(lam, 0.0)


def attach_star(channels: ChannelSet, star: StarConfig, epsilon_level: float,
                radii_sq: Optional[np.ndarray] = None) -> ChannelSet:
    """Populate the surface-dependent fields for one configuration.

    With a vector configuration the covariance is the rank-one outer product
    of the effective channel; with a lifted-only configuration it is the
    congruence through the lifted matrix. ``radii_sq`` overrides the
    recomputed radii (used to pin them across an optimization run).
    """
    q_n = channels.n_users
    cov = np.zeros((q_n, channels.n_bs, channels.n_bs), dtype=complex)
    eff = None
    if star.has_vectors:
        eff = np.zeros((q_n, channels.n_bs), dtype=complex)
        for q in range(q_n):
            e = star.vector(channels.region[q])
            eff[q] = effective_channel(channels.h_bs_ris, channels.h_ris_user[q], e)
            cov[q] = np.outer(eff[q], eff[q].conj())
    else:
        for q in range(q_n):
            cov[q] = lifted_effective_cov(channels.h_bs_ris, channels.h_ris_user[q],
                                          star.lifted(channels.region[q]))
    if radii_sq is None:
        radii_sq = np.array([uncertainty_radius(cov[q], epsilon_level)
                             for q in range(q_n)])
    else:
        radii_sq = np.asarray(radii_sq, dtype=float).copy()
    return ChannelSet(h_bs_ris=channels.h_bs_ris, h_ris_user=channels.h_ris_user,
                      region=channels.region, star=star, effective=eff,
                      cov_estimated=cov, uncertainty_radius_sq=radii_sq)
