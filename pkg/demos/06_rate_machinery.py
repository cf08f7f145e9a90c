"""The subgeometric rate machinery, end to end on synthetic certificates.

Ingredients: the concave gauge psi_n, the return-time weight W_n, the
weighted distance d~, the one-step contraction factor, the decreasing chart
g_n whose inverse bounds the contraction recursion, and the index schedule
m_k <= 2k.  Feeding a contraction certificate (rho1 at time t0 on the set
{Phi^n <= R}) plus drift constants (K1, K2) through the pipeline yields the
polynomial decay exponent 3 (n - 1 + gamma) / (4 (1 - gamma)).

Run:  python3 demos/06_rate_machinery.py
"""

import numpy as np

from ergowave.integrator import StepperConfig
from ergowave.model import default_model_spec, sample_state
from ergowave.ratekit import (
    RateParams,
    d_tilde,
    g_n,
    g_n_inverse,
    mk_schedule,
    one_step_contraction_factor,
    psi_n,
    psi_n_inverse,
    psi_n_prime,
    w_n_estimate,
)

params = RateParams.from_certificates(rho1=0.5, t0=5.0, R=10.0, K1=0.1,
                                      K2=1.0, n=4, gamma=0.25)
print("certificate -> parameters:")
print(f"  p_n = {params.p_n},  beta = {params.beta:.4f},  "
      f"c* = {params.cn_star},  exponent = {params.mixing_exponent}")
print("  JSON:", params.certificate_json())

print("\n== gauge and chart ==")
print("psi_4(16) =", float(psi_n(16.0, params)), " (= 2^3.25)")
print("g_4(0.5)  =", float(g_n(0.5, params)),
      "   g_4^{-1}(g_4(0.5)) =", float(g_n_inverse(float(g_n(0.5, params)),
                                                   params)))

print("\n== contraction recursion vs chart inverse ==")
a = 1.0
for k in range(1, 1001):
    arg = psi_n_inverse(params.Cn_star * a ** (-4.0 / 3.0), params)
    a *= 1.0 - params.cn_star * float(psi_n_prime(arg, params))
    if k in (1, 10, 100, 1000):
        print(f"  k = {k:5d}:  a_k = {a:.4e}   g^-1(k) = "
              f"{float(g_n_inverse(float(k), params)):.4e}")

print("\n== one-step contraction factor ==")
for wd in (10.0, 1.0, 0.1):
    factor, in_regime = one_step_contraction_factor(params, (1.5, 1.5), wd)
    print(f"  wd = {wd:5.1f}:  factor = {factor:.4f}  (in regime: {in_regime})")

print("\n== index schedule ==")
rng = np.random.default_rng(6)
w = rng.uniform(1.0, 30.0, size=42)
k2 = 1.0
vals = np.maximum((w[:-1] - w[1:] + k2) * rng.uniform(0, 1, 41), 0.0)
idx, checked = mk_schedule(vals[1:], 2 * k2 + float(w[0]), k_max=None,
                           w_n=float(w[0]), k2=k2, value_at_zero=float(vals[0]))
print("  m_k:", list(idx[:10]), "...  (bound m_k <= 2k holds on admissible",
      "sequences)")

print("\n== return-time weight and weighted distance ==")
spec = default_model_spec(64)
cfg = StepperConfig(dt=1e-2, seed=60)
rng = np.random.default_rng(7)
U = sample_state(spec, rng, 0.4)
V = sample_state(spec, rng, 0.4)
wU = w_n_estimate(U, spec, cfg, params, n_paths=8)
wV = w_n_estimate(V, spec, cfg, params, n_paths=8, path_offset=10_000)
from ergowave.model import pair_distance

d0 = pair_distance(U, V)
print(f"  W_n(U) = {wU.value:.3f} (+- {wU.stderr:.3f}), "
      f"W_n(V) = {wV.value:.3f}")
print(f"  d(U, V) = {d0:.4f}   d~(U, V) = "
      f"{d_tilde(d0, wU.value, wV.value, params):.4f}")

print("\ntheoretical bound shape: W_d(t) <= C (1 + Phi(U)^n) t^-"
      f"{params.mixing_exponent} for t >= {params.t_star}")
