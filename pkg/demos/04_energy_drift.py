"""Energy drift certification and stationary moments.

The energy Phi(u, v) = |u|_{H2}^2 + |v|_{H1}^2 + <u,v>_{H1} + |u|_{H1}^2/2
+ |phi(v)|_L1 satisfies, along ensembles,

  E[Phi^n(t)] + c int_0^t E[Phi^(n-1+gamma)] ds <= Phi^n(0) + C t.

This script fits (c, C) for several powers n from a single ensemble per
initial state, then estimates stationary moments of the regularity scalar
from a thinned long run with two independent seeds.

Run:  python3 demos/04_energy_drift.py   (about a minute)
"""

from ergowave.integrator import StepperConfig
from ergowave.lyapunov import (
    collect_phi_paths,
    drift_report_from_paths,
    invariant_moment_estimate,
    stationary_pool,
)
from ergowave.model import big_phi, default_model_spec, model_ops, \
    scaled_mode_state

spec = default_model_spec(64)
ops = model_ops(spec)
cfg = StepperConfig(dt=5e-3, seed=4)

print("== drift curves and feasibility ==")
reports = []
for phi0 in (0.0, 10.0):
    U0 = scaled_mode_state(spec, phi0)
    times, paths = collect_phi_paths(U0, spec, cfg, T=20.0, n_paths=96)
    for n in (1, 2, 4):
        rep = drift_report_from_paths(times, paths, n=n, gamma=0.25,
                                      phi0=float(big_phi(spec, U0)),
                                      trace_reference=ops.trace_qaq)
        reports.append(rep)
        print(f"  Phi(U0)={phi0:5.1f}  n={n}:  c={rep.c_fit:8.4f}  "
              f"C={rep.C_fit:8.4f}  feasible={rep.feasible}  "
              f"sup E[Phi^n]={rep.phi_n.max():10.3f}")

print("\n== stationary moments (two seeds) ==")
for seed in (400, 401):
    pool = stationary_pool(spec, StepperConfig(dt=5e-3, seed=seed),
                           chains=4, horizon=200.0, thin=5.0, discard=50.0)
    for p in (2.0, 4.0):
        est = invariant_moment_estimate(spec, StepperConfig(dt=5e-3, seed=seed),
                                        p=p, pool=pool, n_samples=120)
        print(f"  seed {seed}  p={p:.0f}:  {est.value:9.4f}  "
              f"95% CI [{est.ci_lo:.4f}, {est.ci_hi:.4f}]")

try:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rep = reports[3]  # phi0 = 10, n = 1
    fig, ax = plt.subplots(figsize=(5.5, 3.4))
    ax.plot(rep.times, rep.phi_n, lw=1, label="E[Phi(t)]")
    ax.axhline(rep.C_fit / rep.c_fit, ls="--",
               label="C/c envelope")
    ax.set_xlabel("t")
    ax.legend()
    ax.set_title("energy relaxation from Phi(U0) = 10")
    fig.tight_layout()
    fig.savefig("demos/04_energy_drift.png", dpi=120)
    print("\nwrote demos/04_energy_drift.png")
except ImportError:
    pass
