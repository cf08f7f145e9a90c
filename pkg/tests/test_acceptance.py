"""Acceptance criteria, one test per criterion at its stated tolerance.

The terminal summary hook in conftest prints one PASS/FAIL line per
criterion at the end of the run.
"""

import itertools
import time

import numpy as np
import pytest
from scipy.integrate import quad as adaptive_quad
from scipy.linalg import expm

from ergowave.coupling import contraction_estimate, dsmall_estimate, \
    nonexpansive_check
from ergowave.integrator import StepperConfig, build_mode_flows, \
    paired_refinement_run
from ergowave.lyapunov import collect_phi_paths, drift_report_from_paths, \
    invariant_moment_estimate
from ergowave.model import (
    big_phi,
    mode_state_with_h2_norm,
    model_ops,
    sample_state,
    scaled_mode_state,
    validate_assumptions,
)
from ergowave.ratekit import RateParams, g_n, g_n_inverse, psi_n_inverse, \
    psi_n_prime, mk_schedule
from ergowave.spectral import sine_grid
from ergowave.transport import assignment_min_cost, mixing_curve


def test_criterion_01_spectral_exactness(spec):
    """Round trip and Parseval to rel 1e-10 on 1000 random fields, K=64."""
    start = time.perf_counter()
    rng = np.random.default_rng(101)
    K = 64
    grid = sine_grid(K, 2 * K, spec.domain_length)
    coeffs = rng.standard_normal((1000, K)) * rng.uniform(0.1, 10.0, (1000, 1))
    values = coeffs @ grid.synth
    back = values @ grid.project
    modal = np.sum(coeffs**2, axis=1)
    quad_l2 = grid.weight * np.sum(values**2, axis=1)
    assert np.all(np.abs(quad_l2 - modal) <= 1e-10 * modal)
    err = np.max(np.abs(back - coeffs), axis=1)
    scale = np.maximum(np.max(np.abs(coeffs), axis=1), 1.0)
    assert np.all(err <= 1e-10 * scale)
    assert time.perf_counter() - start < 5.0


def test_criterion_02_assumption_validation(spec):
    """Default model certified for d=1 with witnesses (1,1,0,3,0);
    lambda = 3 rejected for d=3."""
    report = validate_assumptions(spec, dimension=1)
    assert report.all_ok
    assert report.witnesses == {"a1": 1.0, "a2": 1.0, "a3": 0.0, "a4": 3.0,
                                "a5": 0.0}
    report3 = validate_assumptions(spec, dimension=3)
    assert not report3.check("exponent_range").ok


def test_criterion_03_linear_flow_exactness(spec):
    """Per-mode E_k and Sigma_k match expm / quadrature oracles to 1e-12
    for k <= 64, dt in {1e-2, 1e-3}."""
    xg, wg = np.polynomial.legendre.leggauss(80)
    for dt in (1e-2, 1e-3):
        flows = build_mode_flows(spec, dt)
        for i in range(spec.n_modes):
            alpha = float(flows.alphas[i])
            lam = float(flows.lambdas[i])
            M = np.array([[0.0, 1.0], [-alpha, -1.0]])
            E_oracle = expm(dt * M)
            assert np.max(np.abs(flows.matrix_e(i) - E_oracle)) <= 1e-12 * \
                max(1.0, np.max(np.abs(E_oracle)))
            b = np.array([0.0, lam])
            s = 0.5 * dt * (xg + 1.0)
            S_oracle = np.zeros((2, 2))
            for wgt, si in zip(wg, s):
                vec = expm(si * M) @ b
                S_oracle += wgt * np.outer(vec, vec)
            S_oracle *= 0.5 * dt
            scale = max(np.max(np.abs(S_oracle)), 1e-300)
            assert np.max(np.abs(flows.matrix_sigma(i) - S_oracle)) <= 1e-12 * scale


def test_criterion_04_pathwise_energy_balance(spec):
    """Energy-balance residual shrinks by a factor in [1.7, 2.3] between
    dt = 1e-3 and dt = 5e-4 over 100 paths, within the runtime budget."""
    start = time.perf_counter()
    cfg = StepperConfig(dt=1e-3, seed=104)
    (_, _, diag_c), (_, _, diag_f) = paired_refinement_run(
        spec.zero_state(), spec, cfg, n_paths=100, T=2.0)
    ratio = float(np.abs(diag_c.residual).mean()
                  / np.abs(diag_f.residual).mean())
    assert 1.7 <= ratio <= 2.3
    assert time.perf_counter() - start < 120.0


def test_criterion_05_nonexpansiveness(spec):
    """Zero violations beyond 1e-8 per step across 100 coupled pairs,
    T = 20, dt = 1e-3."""
    rng = np.random.default_rng(105)
    first = sample_state(spec, rng, 0.8)
    second = sample_state(spec, rng, 0.8)
    rep = nonexpansive_check(first, second, spec,
                             StepperConfig(dt=1e-3, seed=1050),
                             n_pairs=100, T=20.0, tolerance=1e-8)
    assert rep.n_violations == 0
    assert rep.max_violation <= 1e-8


def test_criterion_06_contraction_exponent(spec):
    """Fitted decay rate of the coupled epsilon-functional at eps = 0.05 is
    at least 0.8 * eps/8 with 64 pairs over T = 100."""
    start = time.perf_counter()
    rng = np.random.default_rng(106)
    first = sample_state(spec, rng, 0.6)
    second = sample_state(spec, rng, 0.6)
    eps = 0.05
    curve = contraction_estimate(first, second, spec,
                                 StepperConfig(dt=5e-3, seed=1060),
                                 n_pairs=64, T=100.0, epsilon=eps)
    assert curve.fitted_rate >= 0.8 * eps / 8.0
    assert time.perf_counter() - start < 600.0


def test_criterion_07_drift_feasibility(spec):
    """Feasible (c, C) with c > 0 for n in {1, 2, 4}, gamma = 0.25,
    256 paths, T = 50, from states with Phi(U0) in {0, 10, 100}."""
    ops = model_ops(spec)
    for j, phi0 in enumerate((0.0, 10.0, 100.0)):
        U0 = scaled_mode_state(spec, phi0)
        cfg = StepperConfig(dt=5e-3, seed=107)
        times, paths = collect_phi_paths(U0, spec, cfg, T=50.0, n_paths=256,
                                         grid_dt=0.1,
                                         path_offset=j * 1_000_000)
        actual = float(big_phi(spec, U0))
        for n in (1, 2, 4):
            rep = drift_report_from_paths(times, paths, n=n, gamma=0.25,
                                          phi0=actual,
                                          trace_reference=ops.trace_qaq)
            assert rep.feasible, (phi0, n)
            assert rep.c_fit > 0.0, (phi0, n)


def test_criterion_08_dsmall_certificate(spec):
    """rho_hat > 0 beyond 3 SE at t = 5 for the sublevel set Phi^4 <= 10."""
    cert = dsmall_estimate(spec, StepperConfig(dt=5e-3, seed=108),
                           radius=10.0, t=5.0, n=4, n_pairs=32,
                           n_paths_per_pair=16)
    assert cert.ok
    assert cert.rho_hat > 3.0 * cert.stderr
    assert 0.0 < cert.rho_hat < 1.0


def test_criterion_09_assignment_exactness():
    """Exact optimal cost vs brute force for all N <= 7 on 100 random
    matrices."""
    rng = np.random.default_rng(109)
    for _ in range(100):
        n = int(rng.integers(1, 8))
        C = rng.uniform(0.0, 10.0, size=(n, n))
        _, total = assignment_min_cost(C)
        brute = min(sum(C[i, p[i]] for i in range(n))
                    for p in itertools.permutations(range(n)))
        assert total == pytest.approx(brute, abs=1e-10)


def test_criterion_10_chart_closed_form():
    """Chart matches its quadrature oracle to rel 1e-8 at 20 random points
    for 5 random parameter sets; the contraction recursion agrees with the
    chart inverse within a factor of 2 up to k = 1e3.

    The recursion clause runs at certificate-range contraction scales
    (c* = rho2/4 < 1/4); a per-step decrement near one contracts faster in
    its first steps than any continuum chart and no two-sided band exists.
    """
    rng = np.random.default_rng(110)
    for _ in range(5):
        params = RateParams(n=int(rng.integers(4, 9)),
                            gamma=float(rng.uniform(0.05, 0.32)),
                            cn_star=float(rng.uniform(0.025, 0.24)),
                            Cn_star=float(rng.uniform(0.2, 2.0)))

        def integrand(t):
            return 1.0 / (t * params.cn_star * float(psi_n_prime(
                psi_n_inverse(params.Cn_star * t ** (-4.0 / 3.0), params),
                params)))

        for x in rng.uniform(0.02, 1.0, size=20):
            oracle, _ = adaptive_quad(integrand, float(x), 1.0,
                                      epsabs=1e-13, epsrel=1e-12)
            closed = float(g_n(float(x), params))
            assert closed == pytest.approx(oracle, rel=1e-8)

        a = 1.0
        for k in range(1, 1001):
            arg = psi_n_inverse(params.Cn_star * a ** (-4.0 / 3.0), params)
            a *= 1.0 - params.cn_star * float(psi_n_prime(arg, params))
            bound = float(g_n_inverse(float(k), params))
            assert bound / 2.0 <= a <= bound * 2.0


def test_criterion_11_schedule_bound():
    """m_k <= 2k for k <= 100 on 1000 generated admissible sequences."""
    rng = np.random.default_rng(111)
    for _ in range(1000):
        k_max = 100
        w = rng.uniform(1.0, 50.0, size=2 * k_max + 2)
        k2 = float(rng.uniform(0.1, 5.0))
        raw = (w[:-1] - w[1:] + k2) * rng.uniform(0.0, 1.0, 2 * k_max + 1)
        vals = np.maximum(raw, 0.0)
        idx, checked = mk_schedule(vals[1:], 2.0 * k2 + float(w[0]),
                                   k_max=None, w_n=float(w[0]), k2=k2,
                                   value_at_zero=float(vals[0]))
        for k, m in enumerate(idx, start=1):
            if 2 * k < len(vals) and checked[k - 1]:
                assert m <= 2 * k


def test_criterion_12_mixing_decay(spec, pool_a, pool_b):
    """W_d from |U0|_{H2 x H1} = 10 vs the stationary reference, N = 128,
    times {1, 2, 5, 10, 20, 50}: non-increasing up to CI overlap, final
    value below 5% of the initial one, fitted tail exponent >= 1."""
    start = time.perf_counter()
    U0 = mode_state_with_h2_norm(spec, 10.0)
    cfg = StepperConfig(dt=5e-3, seed=112)
    curve = mixing_curve(U0, spec, cfg, times=[1.0, 2.0, 5.0, 10.0, 20.0, 50.0],
                         n_samples=128, reference=pool_a,
                         reference_check=pool_b, n=4, gamma=0.25, n_boot=200)
    assert not curve.stale
    for i in range(len(curve.times) - 1):
        non_increasing = curve.wd[i + 1] <= curve.wd[i]
        overlap = curve.ci_lo[i + 1] <= curve.ci_hi[i]
        assert non_increasing or overlap, f"increase at t={curve.times[i+1]}"
    assert curve.wd[-1] / curve.wd[0] < 0.05
    assert curve.slope >= 1.0
    assert curve.theoretical_exponent == pytest.approx(3.25)
    assert time.perf_counter() - start < 1800.0


def test_criterion_13_invariant_moment_self_consistency(spec, pool_a, pool_b):
    """p = 2 and p = 4 moment estimates from two independent seeds agree
    within overlapping 95% CIs."""
    cfg_a = StepperConfig(dt=5e-3, seed=5500)
    cfg_b = StepperConfig(dt=5e-3, seed=5501)
    for p in (2.0, 4.0):
        est_a = invariant_moment_estimate(spec, cfg_a, p=p, n_samples=256,
                                          pool=pool_a)
        est_b = invariant_moment_estimate(spec, cfg_b, p=p, n_samples=256,
                                          pool=pool_b)
        assert est_a.overlaps(est_b), (p, est_a, est_b)
        assert est_a.value > 0.0 and est_b.value > 0.0
