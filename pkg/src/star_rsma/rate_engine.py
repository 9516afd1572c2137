"""Closed-form SINRs, distortion aggregates, and worst-case robust rates.

The downlink superimposes one common stream (decoded first by everyone,
then cancelled) and one private stream per user. Transceiver distortion
enters through kappa_t (per-antenna transmit noise proportional to the
per-antenna signal power) and kappa_r (receive noise proportional to the
received power). Bounded spectral-norm CSI error of radius^2 around the
estimated covariance is absorbed by the +/- radius^2 * I substitution,
which is the exact worst case for PSD weight matrices.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .system_model import ChannelSet, SystemParams


def diag_extract(a: np.ndarray) -> np.ndarray:
    """Zero the off-diagonal entries (the transmit-distortion covariance shape)."""
    return np.diag(np.diag(a))


def _hermitize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.conj().T)


@dataclass(frozen=True)
class PrecoderSolution:
    """Common + private precoders, lifted and (when extracted) as vectors."""

    w_common_mat: np.ndarray          # (N, N) Hermitian PSD
    w_private_mat: np.ndarray         # (Q, N, N) Hermitian PSD
    common_rate_share: np.ndarray     # (Q,) non-negative, bit/s/Hz
    w_common: Optional[np.ndarray] = None    # (N,) rank-one factor
    w_private: Optional[np.ndarray] = None   # (Q, N)

    @classmethod
    def from_vectors(cls, w_common, w_private, common_rate_share) -> "PrecoderSolution":
        wc = np.asarray(w_common, dtype=complex)
        wp = np.atleast_2d(np.asarray(w_private, dtype=complex))
        shares = np.asarray(common_rate_share, dtype=float)
        return cls(w_common_mat=np.outer(wc, wc.conj()),
                   w_private_mat=np.einsum("qi,qj->qij", wp, wp.conj()),
                   common_rate_share=shares, w_common=wc, w_private=wp)

    @property
    def n_users(self) -> int:
        return self.w_private_mat.shape[0]

    @property
    def has_vectors(self) -> bool:
        return self.w_common is not None

    def total_power(self) -> float:
        return float(np.trace(self.w_common_mat).real
                     + np.einsum("qii->", self.w_private_mat).real)

    def validate(self, tol: float = 1e-9):
        if self.common_rate_share.min() < -tol:
            raise ValueError("common-rate shares must be non-negative")
        for w in [self.w_common_mat] + list(self.w_private_mat):
            if np.abs(w - w.conj().T).max() > tol * max(1.0, np.abs(w).max()):
                raise ValueError("precoder matrices must be Hermitian")


@dataclass(frozen=True)
class DistortionAggregates:
    """The three interference-plus-distortion weight matrices.

    pi1: all-stream receive-side aggregate seen by the common decoder;
    pi2: transmit-distortion image (1+kappa_r)*kappa_t*diag(sum W + W_c);
    pi3[q]: private-decoding aggregate after common-stream cancellation.
    """

    pi1: np.ndarray            # (N, N)
    pi2: np.ndarray            # (N, N)
    pi3: np.ndarray            # (Q, N, N)

    @property
    def pi_common(self) -> np.ndarray:
        return self.pi1 + self.pi2

    def pi_private(self, q: int) -> np.ndarray:
        return self.pi2 + self.pi3[q]


def distortion_aggregates(w_common_mat: np.ndarray, w_private_mat: np.ndarray,
                          kappa_t: float, kappa_r: float) -> DistortionAggregates:
    sw = w_private_mat.sum(axis=0)
    pi1 = (1.0 + kappa_r) * sw + kappa_r * w_common_mat
    pi2 = (1.0 + kappa_r) * kappa_t * diag_extract(sw + w_common_mat)
    q_n = w_private_mat.shape[0]
    pi3 = np.stack([sw - w_private_mat[q] + kappa_r * sw + kappa_r * w_common_mat
                    for q in range(q_n)])
    return DistortionAggregates(pi1=pi1, pi2=pi2, pi3=pi3)


def _perfect_denominator_terms(h_eff, w_common, w_private, kappa_t, kappa_r, sigma2):
    gains_p = np.abs(w_private @ h_eff.conj()) ** 2        # |h^H w_j|^2 per stream
    gain_c = float(np.abs(h_eff.conj() @ w_common) ** 2)
    d = (np.abs(w_private) ** 2).sum(axis=0) + np.abs(w_common) ** 2  # per-antenna power
    tx_dist = (1.0 + kappa_r) * kappa_t * float((np.abs(h_eff) ** 2 * d).sum())
    rx_floor = (1.0 + kappa_r) * sigma2
    return gains_p, gain_c, tx_dist, rx_floor


def sinr_common_perfect(h_eff: np.ndarray, w_common: np.ndarray, w_private: np.ndarray,
                        kappa_t: float, kappa_r: float, sigma2: float) -> float:
    """Common-stream SINR under perfect CSI with transceiver distortion."""
    gains_p, gain_c, tx_dist, rx_floor = _perfect_denominator_terms(
        h_eff, w_common, w_private, kappa_t, kappa_r, sigma2)
    den = gains_p.sum() + kappa_r * (gains_p.sum() + gain_c) + tx_dist + rx_floor
    return gain_c / den


def sinr_private_perfect(h_eff: np.ndarray, w_common: np.ndarray, w_private: np.ndarray,
                         q: int, kappa_t: float, kappa_r: float, sigma2: float) -> float:
    """Private-stream SINR of user q after ideal common-stream cancellation.

    The receive-distortion power keeps the common stream's contribution:
    its variance is set by the full received power before cancellation.
    """
    gains_p, gain_c, tx_dist, rx_floor = _perfect_denominator_terms(
        h_eff, w_common, w_private, kappa_t, kappa_r, sigma2)
    den = (gains_p.sum() - gains_p[q]
           + kappa_r * (gains_p.sum() + gain_c) + tx_dist + rx_floor)
    return float(gains_p[q]) / den


def worst_case_trace_bound(a: np.ndarray, radius_sq: float) -> float:
    """max over Hermitian ||B||_2 <= radius_sq of tr(a B), rank-one PSD a.

    Equals radius_sq * tr(a). Rejects inputs that are not numerically
    rank-one PSD (eigenvalue ratio below 1e9 and second eigenvalue above
    1e-9 of the trace).
    """
    if radius_sq < 0:
        raise ValueError("radius_sq must be non-negative")
    lam = np.linalg.eigvalsh(_hermitize(a))
    tr = float(lam.sum())
    if lam[-1] < 0 or lam[0] < -1e-9 * max(abs(tr), 1.0):
        raise ValueError("matrix must be PSD")
    if a.shape[0] > 1:
        lam2 = abs(lam[-2])
        if lam2 > 1e-9 * max(abs(tr), 1e-300) and lam2 * 1e9 > lam[-1]:
            raise ValueError("matrix must be numerically rank-one")
    return radius_sq * tr


def rate_common_worst_case(cov: np.ndarray, radius_sq: float, w_common_mat: np.ndarray,
                           pi_common: np.ndarray, sigma2_tilde: float) -> float:
    """Worst-case common rate log2(1 + tr((C-r2 I)Wc) / (tr((C+r2 I)Pi_c) + s2)).

    The numerator is clamped at zero: radii large enough to swallow the
    whole signal term pin the rate at zero instead of going negative.
    """
    n = cov.shape[0]
    num = np.trace((cov - radius_sq * np.eye(n)) @ w_common_mat).real
    den = np.trace((cov + radius_sq * np.eye(n)) @ pi_common).real + sigma2_tilde
    return float(np.log2(1.0 + max(num, 0.0) / den))


def rate_private_worst_case(cov: np.ndarray, radius_sq: float, w_private_mat_q: np.ndarray,
                            pi_private_q: np.ndarray, sigma2_tilde: float) -> float:
    """Worst-case private rate of one user; same structure as the common rate."""
    n = cov.shape[0]
    num = np.trace((cov - radius_sq * np.eye(n)) @ w_private_mat_q).real
    den = np.trace((cov + radius_sq * np.eye(n)) @ pi_private_q).real + sigma2_tilde
    return float(np.log2(1.0 + max(num, 0.0) / den))


def worst_case_rates(channels: ChannelSet, solution: PrecoderSolution,
                     params: SystemParams,
                     noise_power_w=None) -> tuple:
    """Per-user worst-case (common, private) rates. (2 arrays of length Q.)

    Uses the covariances and radii attached to ``channels``; pass a scalar
    or per-user ``noise_power_w`` to override the parameter value.
    """
    if channels.cov_estimated is None:
        raise ValueError("attach a surface configuration first")
    q_n = channels.n_users
    noise = np.broadcast_to(
        np.asarray(params.noise_power_w if noise_power_w is None else noise_power_w,
                   dtype=float), (q_n,))
    agg = distortion_aggregates(solution.w_common_mat, solution.w_private_mat,
                                params.kappa_t, params.kappa_r)
    common = np.zeros(q_n)
    private = np.zeros(q_n)
    for q in range(q_n):
        s2t = (1.0 + params.kappa_r) * noise[q]
        cov, r2 = channels.cov_estimated[q], float(channels.uncertainty_radius_sq[q])
        common[q] = rate_common_worst_case(cov, r2, solution.w_common_mat,
                                           agg.pi_common, s2t)
        private[q] = rate_private_worst_case(cov, r2, solution.w_private_mat[q],
                                             agg.pi_private(q), s2t)
    return common, private


def sum_rate(common_rate_share: np.ndarray, private_rates: np.ndarray) -> float:
    """Total rate: every user's common share plus its private rate."""
    return float(np.sum(common_rate_share) + np.sum(private_rates))


def common_rate_feasible(common_rate_share: np.ndarray, common_rates: np.ndarray,
                         tol: float = 1e-9) -> bool:
    """Shares are non-negative and their sum fits under every user's common rate."""
    shares = np.asarray(common_rate_share, dtype=float)
    if shares.size == 0:
        return True
    return bool(shares.min() >= -tol
                and shares.sum() <= float(np.min(common_rates)) + tol)


def repair_shares(common_rates: np.ndarray, private_rates: np.ndarray,
                  r_min: float) -> tuple:
    """Best common-rate split for a fixed configuration.

    Gives each user the share its QoS floor still needs, spreads the
    remaining common capacity evenly, and reports feasibility honestly:
    if the needs exceed the capacity the shares fill the capacity
    proportionally to need and the flag comes back False.
    """
    common_rates = np.asarray(common_rates, dtype=float)
    private_rates = np.asarray(private_rates, dtype=float)
    q_n = private_rates.shape[0]
    cap = max(float(np.min(common_rates)), 0.0)
    need = np.maximum(0.0, r_min - private_rates)
    total_need = float(need.sum())
    if total_need <= cap + 1e-12:
        shares = need + (cap - total_need) / q_n
        return np.maximum(shares, 0.0), True
    if total_need > 0 and cap > 0:
        return need * (cap / total_need), False
    return np.zeros(q_n), cap >= 0 and total_need == 0


@dataclass(frozen=True)
class CascadeMatrices:
    """Lifted M x M cascades: quadratic forms in the surface vector.

    For user q with T_q = diag(h_q)^H Hd, the congruence T_q X T_q^H maps a
    BS-side weight X to the surface domain so that tr(E * G(X)) equals
    h_hat^H X h_hat whenever E = e e^H. g1/g2 carry the common stream's
    signal/denominator weights, b1/b2 the user's private pair.
    """

    g1: np.ndarray      # (Q, M, M) cascade of W_c
    g2: np.ndarray      # (Q, M, M) cascade of Pi_common
    b1: np.ndarray      # (Q, M, M) cascade of W_q
    b2: np.ndarray      # (Q, M, M) cascade of Pi_private(q)


def build_cascade_matrices(channels: ChannelSet, solution: PrecoderSolution,
                           params: SystemParams) -> CascadeMatrices:
    agg = distortion_aggregates(solution.w_common_mat, solution.w_private_mat,
                                params.kappa_t, params.kappa_r)
    q_n, m = channels.n_users, channels.n_ris
    g1 = np.zeros((q_n, m, m), dtype=complex)
    g2 = np.zeros_like(g1)
    b1 = np.zeros_like(g1)
    b2 = np.zeros_like(g1)
    for q in range(q_n):
        t = channels.h_ris_user[q].conj()[:, None] * channels.h_bs_ris   # (M, N)
        th = t.conj().T
        g1[q] = t @ solution.w_common_mat @ th
        g2[q] = t @ agg.pi_common @ th
        b1[q] = t @ solution.w_private_mat[q] @ th
        b2[q] = t @ agg.pi_private(q) @ th
    return CascadeMatrices(g1=g1, g2=g2, b1=b1, b2=b2)
