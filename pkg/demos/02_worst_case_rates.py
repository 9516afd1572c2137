"""
Worst-case rates under bounded channel error
============================================

Shows the three rate views the optimizer juggles: perfect-CSI SINRs with
hardware distortion, their Monte-Carlo counterparts from a signal-level
simulation, and the worst-case rates over the norm-bounded error ball.
"""

import numpy as np

from star_rsma import (SystemParams, draw_scenario, draw_channel_set,
                       attach_star, substream, worst_case_rates,
                       repair_shares, sum_rate)
from star_rsma.oracles import simulate_sinr_monte_carlo
from star_rsma.rate_engine import (PrecoderSolution, sinr_common_perfect,
                                   sinr_private_perfect,
                                   worst_case_trace_bound)
from star_rsma.stage2 import initial_star

params = SystemParams(n_bs=4, n_ris=8, n_users=4)
scenario = draw_scenario(params, seed=3)
channels = draw_channel_set(params, scenario, substream(3, "channels"))
attached = attach_star(channels, initial_star(channels, params),
                       params.epsilon_level)

# random unit-budget precoders, just to have a fixed operating point
rng = substream(3, "precoders")
w = rng.standard_normal((5, 4)) + 1j * rng.standard_normal((5, 4))
w *= np.sqrt(params.power_budget_w / np.sum(np.abs(w) ** 2))
w_c, w_p = w[0], w[1:]

print("closed-form vs simulated SINR (user 0, kappa = 0.01):")
h = attached.effective[0]
sc = sinr_common_perfect(h, w_c, w_p, params.kappa_t, params.kappa_r,
                         params.noise_power_w)
sp = sinr_private_perfect(h, w_c, w_p, 0, params.kappa_t, params.kappa_r,
                          params.noise_power_w)
mc_c, mc_p = simulate_sinr_monte_carlo(attached, w_c, w_p, params, 0,
                                       10 ** 5, substream(3, "mc"))
print(f"  common : {sc:9.4f}  simulated {mc_c:9.4f}")
print(f"  private: {sp:9.4f}  simulated {mc_p:9.4f}")

# the robust counterpart: every rate evaluated at its worst admissible error
solution = PrecoderSolution.from_vectors(w_c, w_p,
                                         np.zeros(params.n_users))
common, private = worst_case_rates(attached, solution, params)
shares, ok = repair_shares(common, private, params.r_min)
print(f"\nworst-case per-user rates (b/s/Hz), floor {params.r_min}:")
for q in range(params.n_users):
    print(f"  user {q}: common {common[q]:.4f}  private {private[q]:.4f}  "
          f"share {shares[q]:.4f}")
print(f"sum rate {sum_rate(shares, private):.4f}, floors met: {ok}")

# the bound behind those rates: max of tr(a B) over ||B||_2 <= r2
a = np.outer(h, h.conj())
r2 = attached.uncertainty_radius_sq[0]
print(f"\ntrace bound at user 0's radius: {worst_case_trace_bound(a, r2):.3e}"
      f" (= r2 * tr(a) = {r2 * np.trace(a).real:.3e})")
