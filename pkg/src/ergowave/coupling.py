"""Synchronous coupling of trajectory pairs and contraction estimates.

Two copies of the dynamics driven by the identical noise path: the noise
cancels in the difference, which then obeys the deterministic damped system

    d/dt ubar = vbar,
    d/dt vbar = -A ubar - vbar - [phi'(v) - phi'(vtilde)],

so the difference energy N = |ubar|_{H1}^2 + |vbar|_H^2 is non-increasing
pathwise whenever phi'' >= -1.  Coupled pairs upper-bound the transport
distance between the laws: any coupling is admissible in the infimum, so the
Monte Carlo mean of d(U(t), Utilde(t)) dominates W_d of the two time-t laws.
The epsilon-weighted functional N + eps <ubar, vbar> decays exponentially in
expectation; pairs started inside a bounded energy set certify a uniform
one-step contraction factor (a d-small set certificate).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .integrator import (
    StepperConfig,
    WaveStepper,
    _broadcast_initial,
    _sample_steps,
    noise_stream,
)
from .model import ModelSpec, State, big_phi, model_ops, sample_state

__all__ = [
    "CoupledPair",
    "CouplingConfig",
    "couple_step",
    "run_coupled_ensemble",
    "nonexpansive_check",
    "contraction_estimate",
    "dsmall_estimate",
    "epsilon_functional",
    "sample_ball_state",
]


@dataclass
class CoupledPair:
    """Two states sharing discretization and one noise stream."""

    first: State
    second: State
    rng: np.random.Generator
    time: float = 0.0

    def __post_init__(self):
        if (self.first.n_modes != self.second.n_modes
                or self.first.domain_length != self.second.domain_length):
            raise ValueError("coupled states must share (K, L)")


@dataclass(frozen=True)
class CouplingConfig:
    """Cross-term weight and observation horizon for coupled runs.

    epsilon must stay below 2*min(alpha_1, 1) so that
    N + eps <ubar, vbar> is positive definite.
    """

    epsilon: float = 0.05
    horizon: float = 100.0
    sample_times: tuple = ()

    def validate_against(self, spec: ModelSpec):
        bound = 2.0 * min(float(spec.alphas()[0]), 1.0)
        if not 0.0 <= self.epsilon < bound:
            raise ValueError(
                f"epsilon={self.epsilon} violates positivity bound {bound}")


def couple_step(pair: CoupledPair, flows, spec: ModelSpec,
                cfg: StepperConfig) -> CoupledPair:
    """Advance both members one step with identical Gaussian increments."""
    stepper = WaveStepper(spec, cfg, flows)
    noise = pair.rng.standard_normal((1, spec.n_modes, 2))
    ua, va = stepper.step_arrays(pair.first.u.coeffs[None, :],
                                 pair.first.v.coeffs[None, :], noise)
    ub, vb = stepper.step_arrays(pair.second.u.coeffs[None, :],
                                 pair.second.v.coeffs[None, :], noise)
    return CoupledPair(spec.state(ua[0], va[0]), spec.state(ub[0], vb[0]),
                       pair.rng, pair.time + cfg.dt)


def epsilon_functional(alphas: np.ndarray, du: np.ndarray, dv: np.ndarray,
                       epsilon: float) -> np.ndarray:
    """|du|_{H1}^2 + |dv|_H^2 + eps <du, dv> on coefficient arrays."""
    return (np.sum(alphas * du**2, axis=-1) + np.sum(dv**2, axis=-1)
            + epsilon * np.sum(du * dv, axis=-1))


def run_coupled_ensemble(first0, second0, spec: ModelSpec, cfg: StepperConfig, *,
                         n_pairs: int, T: float, sample_times=None,
                         reduce_fn=None, path_offset: int = 0):
    """n_pairs synchronous couplings; reduce_fn(i, t, ua, va, ub, vb) per
    sampled time (full arrays when omitted).  Pair i draws from the stream
    keyed (cfg.seed, path_offset + i)."""
    stepper = WaveStepper(spec, cfg)
    steps = _sample_steps(T, cfg.dt, sample_times)
    n_steps = int(round(T / cfg.dt))
    K = spec.n_modes
    ua, va = _broadcast_initial(first0, spec, n_pairs)
    ub, vb = _broadcast_initial(second0, spec, n_pairs)
    streams = [noise_stream(cfg.seed, path_offset + i) for i in range(n_pairs)]
    chunk = int(max(16, min(512, 4e6 / max(1, n_pairs * K * 2))))
    buf = np.empty((n_pairs, chunk, K, 2))

    collect = reduce_fn is None
    out = ([], [], [], []) if collect else None
    emit = {int(s): i for i, s in enumerate(steps)}

    def _emit(si, t):
        if collect:
            for arr, val in zip(out, (ua, va, ub, vb)):
                arr.append(val.copy())
        else:
            reduce_fn(si, t, ua, va, ub, vb)

    if 0 in emit:
        _emit(emit[0], 0.0)
    done = 0
    while done < n_steps:
        this = min(chunk, n_steps - done)
        for i, g in enumerate(streams):
            buf[i, :this].reshape(-1)[...] = g.standard_normal(this * K * 2)
        for j in range(this):
            idx = done + j + 1
            noise = buf[:, j]
            ua, va = stepper.step_arrays(ua, va, noise)
            ub, vb = stepper.step_arrays(ub, vb, noise)
            if idx in emit:
                _emit(emit[idx], idx * cfg.dt)
        done += this
    times = steps * cfg.dt
    if collect:
        return times, tuple(np.stack(a) for a in out)
    return times, None


@dataclass
class NonexpansiveReport:
    """Per-step increments of the coupled difference energy."""

    max_violation: float
    n_violations: int
    n_steps: int
    tolerance: float

    @property
    def ok(self) -> bool:
        return self.n_violations == 0


def nonexpansive_check(first0, second0, spec: ModelSpec, cfg: StepperConfig, *,
                       n_pairs: int, T: float, tolerance: float = 1e-8,
                       path_offset: int = 0) -> NonexpansiveReport:
    """Assert the coupled difference energy never increases by more than
    tolerance in any step of any pair; reports the worst signed increment."""
    stepper = WaveStepper(spec, cfg)
    n_steps = int(round(T / cfg.dt))
    if abs(n_steps * cfg.dt - T) > 1e-9 * max(1.0, T):
        raise ValueError("dt must divide T")
    K = spec.n_modes
    alphas = stepper.flows.alphas
    ua, va = _broadcast_initial(first0, spec, n_pairs)
    ub, vb = _broadcast_initial(second0, spec, n_pairs)
    streams = [noise_stream(cfg.seed, path_offset + i) for i in range(n_pairs)]
    chunk = int(max(16, min(512, 4e6 / max(1, n_pairs * K * 2))))
    buf = np.empty((n_pairs, chunk, K, 2))
    energy = epsilon_functional(alphas, ua - ub, va - vb, 0.0)
    worst = -math.inf
    violations = 0
    done = 0
    while done < n_steps:
        this = min(chunk, n_steps - done)
        for i, g in enumerate(streams):
            buf[i, :this].reshape(-1)[...] = g.standard_normal(this * K * 2)
        for j in range(this):
            noise = buf[:, j]
            ua, va = stepper.step_arrays(ua, va, noise)
            ub, vb = stepper.step_arrays(ub, vb, noise)
            new_energy = epsilon_functional(alphas, ua - ub, va - vb, 0.0)
            inc = new_energy - energy
            worst = max(worst, float(np.max(inc)))
            violations += int(np.sum(inc > tolerance))
            energy = new_energy
        done += this
    return NonexpansiveReport(worst, violations, n_steps * n_pairs, tolerance)


@dataclass
class DecayCurve:
    """Monte Carlo decay of the coupled epsilon-functional."""

    times: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    n_pairs: int
    epsilon: float
    fitted_rate: float
    window_adjusted: bool
    degenerate: bool


def contraction_estimate(first0, second0, spec: ModelSpec, cfg: StepperConfig, *,
                         n_pairs: int, T: float, epsilon: float = 0.05,
                         sample_times=None, path_offset: int = 0) -> DecayCurve:
    """Decay curve of E[N + eps <ubar, vbar>] under synchronous coupling with
    an exponential rate fitted on the tail window [T/2, T].

    Coupled differences eventually reach the double-precision cancellation
    floor (the two members become bitwise equal); the log-linear fit uses
    only strictly positive means, widening the window backward when fewer
    than four positive points remain (window_adjusted).
    """
    CouplingConfig(epsilon).validate_against(spec)
    if sample_times is None:
        n = int(round(T / cfg.dt))
        stride = max(1, n // 200)
        sample_times = [i * stride * cfg.dt for i in range(1, n // stride + 1)]
    alphas = spec.alphas()
    means = np.zeros(len(sample_times))
    sqs = np.zeros(len(sample_times))

    def reducer(i, t, ua, va, ub, vb):
        vals = epsilon_functional(alphas, ua - ub, va - vb, epsilon)
        means[i] = vals.mean()
        sqs[i] = vals.std(ddof=1) / math.sqrt(len(vals)) if len(vals) > 1 else 0.0

    times, _ = run_coupled_ensemble(first0, second0, spec, cfg,
                                    n_pairs=n_pairs, T=T,
                                    sample_times=sample_times,
                                    reduce_fn=reducer, path_offset=path_offset)
    degenerate = bool(means[0] <= 0.0)
    rate, adjusted = _fit_exponential_rate(times, means, T) if not degenerate \
        else (math.nan, False)
    return DecayCurve(times, means, sqs, n_pairs, epsilon, rate, adjusted,
                      degenerate)


def _fit_exponential_rate(times, means, T):
    pos = means > 0.0
    tail = (times >= T / 2.0) & pos
    adjusted = False
    if np.sum(tail) < 4:
        adjusted = True
        idx = np.nonzero(pos)[0]
        tail = np.zeros_like(pos)
        tail[idx[-max(4, len(idx) // 4):]] = True
        tail &= pos
    if np.sum(tail) < 2:
        return math.inf, True
    t = times[tail]
    y = np.log(means[tail])
    slope = np.polyfit(t, y, 1)[0]
    return float(-slope), adjusted


@dataclass
class DSmallCertificate:
    """Empirical uniform-contraction certificate on a Phi^n sublevel set."""

    radius: float
    time: float
    rho_hat: float
    stderr: float
    n_pairs: int
    n_paths_per_pair: int
    worst_pair: int
    ok: bool
    ratios: np.ndarray = field(repr=False, default=None)


def sample_ball_state(spec: ModelSpec, rng: np.random.Generator, n: int,
                      radius: float) -> State:
    """Random state with Phi^n <= radius: rescale a random draw so that
    Phi^n lands uniformly in (0, radius]."""
    target = radius * rng.uniform(0.05, 1.0) ** 1.0
    U = sample_state(spec, rng, amplitude=1.0)
    ops = model_ops(spec)
    u, v = U.u.coeffs.copy(), U.v.coeffs.copy()
    phin = float(ops.big_phi(u, v)) ** n
    if phin <= 0.0:
        return spec.zero_state()
    lo, hi = 0.0, 1.0
    while float(ops.big_phi(hi * u, hi * v)) ** n < target:
        hi *= 2.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if float(ops.big_phi(mid * u, mid * v)) ** n < target:
            lo = mid
        else:
            hi = mid
    s = 0.5 * (lo + hi)
    return spec.state(s * u, s * v)


def dsmall_estimate(spec: ModelSpec, cfg: StepperConfig, *, radius: float,
                    t: float, n: int = 4, n_pairs: int = 32,
                    n_paths_per_pair: int = 16, seed: int | None = None,
                    min_separation: float = 1e-8) -> DSmallCertificate:
    """Estimate the uniform contraction factor over pairs drawn from the
    sublevel set {Phi^n <= radius}.

    For each sampled pair, coupled Monte Carlo estimates
    E d(U(t), Utilde(t)) / d(U0, Utilde0); rho_hat = 1 - max over pairs.
    Success requires rho_hat > 0 beyond three standard errors of the worst
    pair's ratio.  Identical pairs (0/0) are excluded by construction.
    """
    if t < 0:
        raise ValueError("time must be >= 0")
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    pairs = []
    attempts = 0
    while len(pairs) < n_pairs:
        attempts += 1
        if attempts > 50 * n_pairs:
            raise ValueError("could not sample enough separated pairs in the set")
        A = sample_ball_state(spec, rng, n, radius)
        B = sample_ball_state(spec, rng, n, radius)
        d0 = (A.u - B.u).sobolev_norm_sq(1.0) + (A.v - B.v).sobolev_norm_sq(0.0)
        if d0 > min_separation:
            pairs.append((A, B, d0))

    if t == 0.0:
        return DSmallCertificate(radius, 0.0, 0.0, 0.0, n_pairs,
                                 n_paths_per_pair, -1, False,
                                 np.ones(n_pairs))

    alphas = spec.alphas()
    K = spec.n_modes
    ua0 = np.concatenate([np.tile(A.u.coeffs, (n_paths_per_pair, 1))
                          for A, _, _ in pairs])
    va0 = np.concatenate([np.tile(A.v.coeffs, (n_paths_per_pair, 1))
                          for A, _, _ in pairs])
    ub0 = np.concatenate([np.tile(B.u.coeffs, (n_paths_per_pair, 1))
                          for _, B, _ in pairs])
    vb0 = np.concatenate([np.tile(B.v.coeffs, (n_paths_per_pair, 1))
                          for _, B, _ in pairs])
    d0 = np.repeat([p[2] for p in pairs], n_paths_per_pair)

    final = {}

    def reducer(i, tt, ua, va, ub, vb):
        final["d"] = epsilon_functional(alphas, ua - ub, va - vb, 0.0)

    run_coupled_ensemble((ua0, va0), (ub0, vb0), spec, cfg,
                         n_pairs=len(d0), T=t, sample_times=[t],
                         reduce_fn=reducer)
    ratios = (final["d"] / d0).reshape(n_pairs, n_paths_per_pair)
    pair_means = ratios.mean(axis=1)
    pair_se = ratios.std(axis=1, ddof=1) / math.sqrt(n_paths_per_pair)
    worst = int(np.argmax(pair_means))
    rho_hat = 1.0 - float(pair_means[worst])
    se = float(pair_se[worst])
    return DSmallCertificate(radius, t, rho_hat, se, n_pairs, n_paths_per_pair,
                             worst, bool(rho_hat > 3.0 * se), pair_means)
