"""Time stepping for the truncated velocity-damped wave system.

Each Galerkin mode k carries the 2-d linear SDE

    d z_k = M_k z_k dt + b_k dW_k,   M_k = [[0, 1], [-alpha_k, -1]],
    b_k = (0, lambda_k)^T,

whose transition over a step h is sampled exactly: z' = E_k z + G_k n with
E_k = exp(h M_k) and G_k G_k^T = Sigma_k = int_0^h e^{sM} b b^T e^{sM^T} ds.
The nonlinear damping dv/dt = -phi'(v) is solved pointwise on a dealiased
collocation grid (closed form for the power family) and composed with the
linear flow by Lie or Strang splitting, so only the splitting carries
discretization error.

Closed forms use the Cayley-Hamilton reduction (M + I/2)^2 = (q/4) I with
q = 1 - 4 alpha:

    exp(hM) = e^{-h/2} [ C(q h^2/4) I + h S(q h^2/4) (M + I/2) ],

where C(x) = cosh(sqrt(x)) and S(x) = sinh(sqrt(x))/sqrt(x) are entire in x
(trigonometric for x < 0), so oscillatory and overdamped modes share one
stable formula.  Sigma_k is assembled from the same exponentials, with a
Taylor branch in q near the critically damped point q = 0.

Noise streams are counter-based: path i of a run seeded with s draws from
Philox keyed by (s, i), so ensembles are reproducible and independent of
scheduling or worker count.  Diagnostics that need the raw Wiener increments
sample them from a salted side stream, conditionally on the state increment,
leaving trajectories bit-identical whether diagnostics run or not.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from .model import ModelSpec, State
from .spectral import SpectralField, sine_grid, synthesize

__all__ = [
    "StepperConfig",
    "ModeFlows",
    "PathDiagnostics",
    "Ensemble",
    "build_mode_flows",
    "WaveStepper",
    "step",
    "simulate",
    "sample_ensemble",
    "noise_stream",
    "worker_count",
]

_DIAG_SALT = 0x9E3779B97F4A7C15
_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class StepperConfig:
    """Step size, splitting order, base seed, and dealiasing factor."""

    dt: float
    splitting: str = "lie"
    seed: int = 0
    oversample: int = 2

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.splitting not in ("lie", "strang"):
            raise ValueError(f"unknown splitting {self.splitting!r}")
        if self.oversample < 2:
            raise ValueError("oversample must be >= 2 for cubic dealiasing")

    def validate_against(self, spec: ModelSpec):
        stiff = self.dt * math.sqrt(float(spec.alphas()[-1]))
        if stiff > 10.0:
            raise ValueError(
                f"dt * sqrt(max alpha) = {stiff:.3g} exceeds the sanity bound 10")


def _entire_cs(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """C(x) = cosh(sqrt x), S(x) = sinh(sqrt x)/sqrt x, entire in x."""
    x = np.asarray(x, dtype=float)
    c = np.empty_like(x)
    s = np.empty_like(x)
    big = np.abs(x) > 1e-8
    pos = big & (x > 0)
    neg = big & (x < 0)
    r = np.sqrt(x[pos])
    c[pos] = np.cosh(r)
    s[pos] = np.sinh(r) / r
    r = np.sqrt(-x[neg])
    c[neg] = np.cos(r)
    s[neg] = np.sin(r) / r
    small = ~big
    xs = x[small]
    c[small] = 1.0 + xs / 2.0 + xs**2 / 24.0
    s[small] = 1.0 + xs / 6.0 + xs**2 / 120.0
    return c, s


def _exp_integrals(h: float, n_max: int) -> np.ndarray:
    """G_m = int_0^h s^m e^{-s} ds for m = 0..n_max (stable upward recursion)."""
    out = np.empty(n_max + 1)
    eh = math.exp(-h)
    out[0] = 1.0 - eh
    hm = 1.0
    for m in range(1, n_max + 1):
        hm *= h
        out[m] = m * out[m - 1] - hm * eh
    return out


_Q_SERIES_CUTOFF = 3e-3


@dataclass(frozen=True)
class ModeFlows:
    """Exact one-step operators of the linear-plus-noise flow, all modes.

    Entries are (K,) arrays: E = [[e11, e12], [e21, e22]], Sigma =
    [[s11, s12], [s12, s22]], its lower Cholesky factor G = [[g11, 0],
    [g21, g22]], and the regression of the raw Wiener increment on the state
    increment (coefficients w1, w2 and conditional standard deviation),
    used by side-stream diagnostics.
    """

    dt: float
    alphas: np.ndarray
    lambdas: np.ndarray
    e11: np.ndarray
    e12: np.ndarray
    e21: np.ndarray
    e22: np.ndarray
    s11: np.ndarray
    s12: np.ndarray
    s22: np.ndarray
    g11: np.ndarray
    g21: np.ndarray
    g22: np.ndarray
    w1: np.ndarray
    w2: np.ndarray
    wiener_cond_sd: np.ndarray

    def matrix_e(self, k_index: int) -> np.ndarray:
        i = k_index
        return np.array([[self.e11[i], self.e12[i]], [self.e21[i], self.e22[i]]])

    def matrix_sigma(self, k_index: int) -> np.ndarray:
        i = k_index
        return np.array([[self.s11[i], self.s12[i]], [self.s12[i], self.s22[i]]])


def _sigma_closed_form(alphas, q, h):
    """Sigma / lambda^2 via complex exponentials (|q| away from 0)."""
    d = np.sqrt(q.astype(complex))
    ep = np.exp((-1.0 + d) * h)
    em = np.exp((-1.0 - d) * h)
    # 2 mu+ = -1 + d vanishes when alpha = 0 (harness-only); the integral of
    # exp(2 mu+ s) degenerates to h there
    twomu_p = -1.0 + d
    degenerate = np.abs(twomu_p) < 1e-12
    jp = np.where(degenerate, h, (ep - 1.0) / np.where(degenerate, 1.0, twomu_p))
    jm = (em - 1.0) / (-1.0 - d)
    j0 = 1.0 - math.exp(-h)
    s11 = ((jp + jm - 2.0 * j0) / q).real
    mu_p = 0.5 * (-1.0 + d)
    mu_m = 0.5 * (-1.0 - d)
    s22 = ((mu_p**2 * jp + mu_m**2 * jm - 2.0 * alphas * j0) / q).real
    return s11, s22


def _sigma_series(q, h):
    """Sigma / lambda^2 by Taylor expansion in q (|q| < cutoff)."""
    g = _exp_integrals(h, 10)
    s11 = (g[2] + q * g[4] / 12.0 + q**2 * g[6] / 360.0
           + q**3 * g[8] / 20160.0 + q**4 * g[10] / 1814400.0)
    s22 = ((g[0] - g[1] + g[2] / 4.0)
           + q * (g[2] / 4.0 - g[3] / 6.0 + g[4] / 48.0)
           + q**2 * (g[4] / 48.0 - g[5] / 120.0 + g[6] / 1440.0)
           + q**3 * (g[6] / 1440.0 - g[7] / 5040.0 + g[8] / 80640.0)
           + q**4 * (g[8] / 80640.0 - g[9] / 362880.0 + g[10] / 7257600.0))
    return s11, s22


def build_mode_flows(spec: ModelSpec, dt: float,
                     alphas: np.ndarray | None = None,
                     lambdas: np.ndarray | None = None) -> ModeFlows:
    """Assemble the exact per-mode flow table for step size dt.

    alphas/lambdas may be overridden (test harnesses use alpha = 0, which the
    spectrum itself never produces).
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    h = float(dt)
    alphas = np.asarray(spec.alphas() if alphas is None else alphas, dtype=float)
    lambdas = np.asarray(spec.lambdas() if lambdas is None else lambdas, dtype=float)
    if alphas.shape != lambdas.shape:
        raise ValueError("alphas and lambdas must have matching shapes")
    q = 1.0 - 4.0 * alphas
    x = q * h * h / 4.0
    c, s = _entire_cs(x)
    damp = math.exp(-h / 2.0)
    hs = h * s
    e11 = damp * (c + 0.5 * hs)
    e12 = damp * hs
    e21 = damp * (-alphas * hs)
    e22 = damp * (c - 0.5 * hs)

    f1h = damp * hs                      # (e^{mu+ h} - e^{mu- h}) / (mu+ - mu-)
    f2h = damp * (c - 0.5 * hs)          # its derivative; both entire in q

    lam2 = lambdas**2
    s11 = np.empty_like(alphas)
    s22 = np.empty_like(alphas)
    series = np.abs(q) < _Q_SERIES_CUTOFF
    if np.any(~series):
        a, b = _sigma_closed_form(alphas[~series], q[~series], h)
        s11[~series], s22[~series] = a, b
    for i in np.nonzero(series)[0]:
        s11[i], s22[i] = _sigma_series(q[i], h)
    s12 = 0.5 * f1h**2
    s11 = lam2 * s11
    s12 = lam2 * s12
    s22 = lam2 * s22

    g11 = np.sqrt(np.maximum(s11, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        g21 = np.where(g11 > 0.0, s12 / np.where(g11 > 0.0, g11, 1.0), 0.0)
    g22 = np.sqrt(np.maximum(s22 - g21**2, 0.0))

    # Cov(z-increment, lambda dW) = lambda^2 (int f1, f1(h)); regression of the
    # raw Wiener increment dW ~ N(0, h) on the sampled state increment.
    with np.errstate(divide="ignore", invalid="ignore"):
        int_f1 = np.where(alphas > 0.0,
                          (1.0 - f2h - f1h) / np.where(alphas > 0.0, alphas, 1.0),
                          h - (1.0 - math.exp(-h)))
    c1 = lambdas * int_f1
    c2 = lambdas * f1h
    det = s11 * s22 - s12**2
    noisy = (lambdas > 0.0) & (det > 0.0)
    inv = np.where(noisy, 1.0 / np.where(det > 0.0, det, 1.0), 0.0)
    w1 = inv * (s22 * c1 - s12 * c2)
    w2 = inv * (-s12 * c1 + s11 * c2)
    cond_var = np.where(noisy, h - (w1 * c1 + w2 * c2), h)
    wiener_cond_sd = np.sqrt(np.maximum(cond_var, 0.0))
    w1 = np.where(noisy, w1, 0.0)
    w2 = np.where(noisy, w2, 0.0)

    flows = ModeFlows(h, alphas, lambdas, e11, e12, e21, e22,
                      s11, s12, s22, g11, g21, g22, w1, w2, wiener_cond_sd)
    for arr in (flows.e11, flows.e12, flows.e21, flows.e22, flows.s11, flows.s12,
                flows.s22, flows.g11, flows.g21, flows.g22, flows.w1, flows.w2,
                flows.wiener_cond_sd):
        arr.setflags(write=False)
    return flows


# ---------------------------------------------------------------------------
# RNG streams


def noise_stream(seed: int, path_index: int, salt: int = 0) -> np.random.Generator:
    """Counter-based stream for one trajectory, keyed by (seed, path)."""
    key = (((seed ^ salt) & _MASK64) << 64) | (path_index & _MASK64)
    return np.random.Generator(np.random.Philox(key=key))


def worker_count(requested: int | None = None) -> int:
    """Worker cap: requested count clipped by the ERGOWAVE_THREADS variable."""
    n = 1 if requested is None else max(1, int(requested))
    env = os.environ.get("ERGOWAVE_THREADS")
    if env:
        n = min(n, max(1, int(env)))
    return n


# ---------------------------------------------------------------------------
# stepping


class IntegrationError(RuntimeError):
    def __init__(self, step_index: int, message: str = "non-finite state"):
        super().__init__(f"{message} at step {step_index}")
        self.step_index = step_index


class WaveStepper:
    """Vectorized stepper bound to one (spec, config) pair.

    State arrays have shape (n_paths, K); one call advances every path by dt
    using caller-supplied standard normals of shape (n_paths, K, 2).
    """

    def __init__(self, spec: ModelSpec, cfg: StepperConfig,
                 flows: ModeFlows | None = None):
        cfg.validate_against(spec)
        self.spec = spec
        self.cfg = cfg
        self.flows = flows if flows is not None else build_mode_flows(spec, cfg.dt)
        K = spec.n_modes
        self.grid = sine_grid(K, cfg.oversample * K, spec.domain_length)
        self.nl = spec.nonlinearity
        self.lam2 = self.flows.lambdas**2
        self.trace_qq = float(np.sum(self.lam2))

    def nonlinear_substep(self, v: np.ndarray, h: float) -> np.ndarray:
        vg = synthesize(v, self.grid)
        return self.nl.damping_flow(vg, h) @ self.grid.project

    def apply_linear(self, u: np.ndarray, v: np.ndarray,
                     xi1: np.ndarray, xi2: np.ndarray):
        f = self.flows
        return f.e11 * u + f.e12 * v + xi1, f.e21 * u + f.e22 * v + xi2

    def linear_substep(self, u: np.ndarray, v: np.ndarray, noise: np.ndarray):
        f = self.flows
        xi1 = f.g11 * noise[..., 0]
        xi2 = f.g21 * noise[..., 0] + f.g22 * noise[..., 1]
        un, vn = self.apply_linear(u, v, xi1, xi2)
        return un, vn, xi1, xi2

    def step_arrays(self, u: np.ndarray, v: np.ndarray, noise: np.ndarray):
        h = self.cfg.dt
        if self.cfg.splitting == "strang":
            v = self.nonlinear_substep(v, 0.5 * h)
            u, v, _, _ = self.linear_substep(u, v, noise)
            v = self.nonlinear_substep(v, 0.5 * h)
        else:
            v = self.nonlinear_substep(v, h)
            u, v, _, _ = self.linear_substep(u, v, noise)
        return u, v

    # scalar velocity functionals used by the pathwise energy balance
    def _dissipation_terms(self, v: np.ndarray):
        vg = synthesize(v, self.grid)
        w = self.grid.weight
        v_sq = np.sum(v**2, axis=-1)
        v_dphi = w * np.sum(vg * self.nl.dphi(vg), axis=-1)
        v_lp = w * np.sum(np.abs(vg) ** (self.nl.lam + 1.0), axis=-1)
        return v_sq, v_dphi, v_lp


@dataclass
class PathDiagnostics:
    """Per-path accumulators of the energy balance along a trajectory.

    martingale approximates int 2<v, Q dw> by the within-step trapezoid with
    Ito correction; int_v_sq and int_v_lp are trapezoid quadratures of
    |v|_H^2 and |v|_{L^(lam+1)}^(lam+1); residual is the defect of

      E(T) - E(0) + int (2|v|^2 + 2<phi'(v), v>) ds - M(T) - Tr(QQ*) T

    with E = |u|_{H1}^2 + |v|_H^2, which vanishes at rate O(dt).
    """

    martingale: np.ndarray
    int_v_sq: np.ndarray
    int_v_lp: np.ndarray
    int_dissipation: np.ndarray
    energy_start: np.ndarray
    energy_end: np.ndarray
    elapsed: float
    trace_qq: float

    @property
    def residual(self) -> np.ndarray:
        return (self.energy_end - self.energy_start + self.int_dissipation
                - self.martingale - self.trace_qq * self.elapsed)


@dataclass
class Ensemble:
    """States of n paths at a common time, with provenance."""

    u: np.ndarray
    v: np.ndarray
    time: float
    domain_length: float
    provenance: dict = field(default_factory=dict)

    @property
    def n_paths(self) -> int:
        return self.u.shape[0]

    @property
    def n_modes(self) -> int:
        return self.u.shape[1]

    def state(self, i: int) -> State:
        return State(SpectralField(self.u[i], self.domain_length),
                     SpectralField(self.v[i], self.domain_length))

    def subset(self, idx) -> "Ensemble":
        return Ensemble(self.u[idx], self.v[idx], self.time, self.domain_length,
                        dict(self.provenance))


def _broadcast_initial(state0, spec: ModelSpec, n_paths: int):
    if isinstance(state0, State):
        u0 = np.tile(state0.u.coeffs, (n_paths, 1))
        v0 = np.tile(state0.v.coeffs, (n_paths, 1))
        return u0, v0
    u0, v0 = state0
    u0 = np.array(u0, dtype=float, copy=True)
    v0 = np.array(v0, dtype=float, copy=True)
    if u0.ndim == 1:
        u0 = np.tile(u0, (n_paths, 1))
        v0 = np.tile(v0, (n_paths, 1))
    if u0.shape != (n_paths, spec.n_modes):
        raise ValueError("initial condition shape does not match (n_paths, K)")
    return u0, v0


def _sample_steps(T: float, dt: float, sample_times) -> np.ndarray:
    n_steps = int(round(T / dt))
    if abs(n_steps * dt - T) > 1e-9 * max(1.0, T):
        raise ValueError(f"dt={dt} does not divide the horizon T={T}")
    if sample_times is None:
        sample_times = [T]
    steps = []
    for t in sample_times:
        n = int(round(t / dt))
        if abs(n * dt - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"dt={dt} does not divide the sample time t={t}")
        if n < 0 or n > n_steps:
            raise ValueError(f"sample time {t} outside [0, {T}]")
        steps.append(n)
    if any(b <= a for a, b in zip(steps, steps[1:])):
        raise ValueError("sample times must be strictly increasing")
    return np.asarray(steps, dtype=int)


def _noise_chunk(streams, chunk: int, K: int, out: np.ndarray):
    for i, g in enumerate(streams):
        out[i, : chunk].reshape(-1)[...] = g.standard_normal(chunk * K * 2)
    return out


def sample_ensemble(state0, spec: ModelSpec, cfg: StepperConfig, *,
                    n_paths: int, T: float, sample_times=None,
                    reduce_fn=None, path_offset: int = 0,
                    diagnostics: bool = False,
                    workers: int | None = None,
                    chunk_steps: int | None = None):
    """Drive n_paths trajectories to time T, reporting states at sample_times.

    reduce_fn(sample_index, t, u, v, path_slice) is invoked once per sampled
    time per path block; when omitted, full (S, n_paths, K) sample arrays are
    returned.  Path i draws from the stream keyed (cfg.seed, path_offset + i),
    so results do not depend on block or worker layout.  Returns
    (times, samples_u, samples_v, diagnostics | None).
    """
    stepper = WaveStepper(spec, cfg)
    steps = _sample_steps(T, cfg.dt, sample_times)
    n_steps = int(round(T / cfg.dt))
    K = spec.n_modes
    h = cfg.dt
    if chunk_steps is None:
        # keep the per-block noise buffer around 32 MB
        chunk_steps = int(max(16, min(512, 4e6 / max(1, n_paths * K * 2))))

    collect = reduce_fn is None
    s_u = np.empty((len(steps), n_paths, K)) if collect else None
    s_v = np.empty((len(steps), n_paths, K)) if collect else None
    diag = None
    if diagnostics:
        diag = PathDiagnostics(
            martingale=np.zeros(n_paths), int_v_sq=np.zeros(n_paths),
            int_v_lp=np.zeros(n_paths), int_dissipation=np.zeros(n_paths),
            energy_start=np.zeros(n_paths), energy_end=np.zeros(n_paths),
            elapsed=T, trace_qq=stepper.trace_qq)

    def run_block(lo: int, hi: int):
        nb = hi - lo
        u, v = _broadcast_initial(state0, spec, n_paths)
        u, v = u[lo:hi], v[lo:hi]
        streams = [noise_stream(cfg.seed, path_offset + i) for i in range(lo, hi)]
        diag_streams = ([noise_stream(cfg.seed, path_offset + i, _DIAG_SALT)
                         for i in range(lo, hi)] if diagnostics else None)
        buf = np.empty((nb, chunk_steps, K, 2))
        dbuf = np.empty((nb, chunk_steps, K)) if diagnostics else None

        if diagnostics:
            diag.energy_start[lo:hi] = stepper.flows.alphas @ (u**2).T + np.sum(v**2, axis=-1)
            prev_vsq, prev_vdphi, prev_vlp = stepper._dissipation_terms(v)

        emit = {int(s): i for i, s in enumerate(steps)}
        if 0 in emit:
            _emit(emit[0], 0.0, u, v, lo, hi)

        done = 0
        while done < n_steps:
            this = min(chunk_steps, n_steps - done)
            _noise_chunk(streams, this, K, buf)
            if diagnostics:
                for i, g in enumerate(diag_streams):
                    dbuf[i, :this].reshape(-1)[...] = g.standard_normal(this * K)
            for j in range(this):
                idx = done + j + 1
                if diagnostics:
                    v_before = v
                    if cfg.splitting == "strang":
                        v_mid = stepper.nonlinear_substep(v, 0.5 * h)
                    else:
                        v_mid = stepper.nonlinear_substep(v, h)
                    u, v_lin, xi1, xi2 = stepper.linear_substep(u, v_mid, buf[:, j])
                    if cfg.splitting == "strang":
                        v = stepper.nonlinear_substep(v_lin, 0.5 * h)
                    else:
                        v = v_lin
                    f = stepper.flows
                    dW = f.w1 * xi1 + f.w2 * xi2 + f.wiener_cond_sd * dbuf[:, j]
                    mk = f.lambdas * ((v_before + v) * dW) - stepper.lam2 * h
                    diag.martingale[lo:hi] += np.sum(mk, axis=-1)
                    vsq, vdphi, vlp = stepper._dissipation_terms(v)
                    diag.int_v_sq[lo:hi] += 0.5 * h * (prev_vsq + vsq)
                    diag.int_v_lp[lo:hi] += 0.5 * h * (prev_vlp + vlp)
                    diag.int_dissipation[lo:hi] += 0.5 * h * (
                        2.0 * (prev_vsq + vsq) + 2.0 * (prev_vdphi + vdphi))
                    prev_vsq, prev_vdphi, prev_vlp = vsq, vdphi, vlp
                else:
                    u, v = stepper.step_arrays(u, v, buf[:, j])
                if idx in emit:
                    if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
                        raise IntegrationError(idx)
                    _emit(emit[idx], idx * h, u, v, lo, hi)
            done += this
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            raise IntegrationError(n_steps)
        if diagnostics:
            diag.energy_end[lo:hi] = stepper.flows.alphas @ (u**2).T + np.sum(v**2, axis=-1)

    def _emit(sample_index, t, u, v, lo, hi):
        if collect:
            s_u[sample_index, lo:hi] = u
            s_v[sample_index, lo:hi] = v
        else:
            reduce_fn(sample_index, t, u, v, slice(lo, hi))

    n_workers = worker_count(workers)
    bounds = np.linspace(0, n_paths, n_workers + 1, dtype=int)
    blocks = [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    if len(blocks) <= 1:
        run_block(0, n_paths)
    else:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=len(blocks)) as pool:
            list(pool.map(lambda ab: run_block(*ab), blocks))

    times = steps * cfg.dt
    return times, s_u, s_v, diag


def paired_refinement_run(state0, spec: ModelSpec, cfg: StepperConfig, *,
                          n_paths: int, T: float, path_offset: int = 0):
    """Coarse (dt) and fine (dt/2) chains driven by the same Brownian path.

    The exact linear flow composes over substeps, so the fine noise
    increments aggregate exactly into coarse ones: xi_c = E_{h/2} xi_1 + xi_2
    and dW_c = dW_1 + dW_2.  Both chains carry full energy-balance
    diagnostics; the coarse residual then measures pure splitting plus
    quadrature error against a shared path and halves cleanly under dt
    refinement.  Returns ((u_c, v_c, diag_c), (u_f, v_f, diag_f)).
    """
    if cfg.splitting != "lie":
        raise ValueError("paired refinement is implemented for Lie splitting")
    from dataclasses import replace

    cfg_f = replace(cfg, dt=cfg.dt / 2.0)
    st_c = WaveStepper(spec, cfg)
    st_f = WaveStepper(spec, cfg_f)
    h = cfg.dt
    hf = h / 2.0
    n_steps = int(round(T / h))
    if abs(n_steps * h - T) > 1e-9 * max(1.0, T):
        raise ValueError(f"dt={h} does not divide the horizon T={T}")
    K = spec.n_modes

    uc, vc = _broadcast_initial(state0, spec, n_paths)
    uf, vf = uc.copy(), vc.copy()
    streams = [noise_stream(cfg.seed, path_offset + i) for i in range(n_paths)]
    dstreams = [noise_stream(cfg.seed, path_offset + i, _DIAG_SALT)
                for i in range(n_paths)]

    def fresh_diag(stepper):
        return PathDiagnostics(
            martingale=np.zeros(n_paths), int_v_sq=np.zeros(n_paths),
            int_v_lp=np.zeros(n_paths), int_dissipation=np.zeros(n_paths),
            energy_start=stepper.flows.alphas @ (uc**2).T + np.sum(vc**2, axis=-1),
            energy_end=np.zeros(n_paths), elapsed=T, trace_qq=stepper.trace_qq)

    diag_c, diag_f = fresh_diag(st_c), fresh_diag(st_f)
    prev_c = st_c._dissipation_terms(vc)
    prev_f = prev_c

    ff = st_f.flows
    chunk = int(max(8, min(256, 2e6 / max(1, n_paths * K * 2))))
    buf = np.empty((n_paths, chunk, 2, K, 2))
    dbuf = np.empty((n_paths, chunk, 2, K))

    def accumulate(diag, stepper, hloc, v_before, v_after, dW, prev):
        f = stepper.flows
        mk = f.lambdas * ((v_before + v_after) * dW) - stepper.lam2 * hloc
        diag.martingale += np.sum(mk, axis=-1)
        vsq, vdphi, vlp = stepper._dissipation_terms(v_after)
        diag.int_v_sq += 0.5 * hloc * (prev[0] + vsq)
        diag.int_v_lp += 0.5 * hloc * (prev[2] + vlp)
        diag.int_dissipation += 0.5 * hloc * (
            2.0 * (prev[0] + vsq) + 2.0 * (prev[1] + vdphi))
        return (vsq, vdphi, vlp)

    done = 0
    while done < n_steps:
        this = min(chunk, n_steps - done)
        for i, g in enumerate(streams):
            buf[i, :this].reshape(-1)[...] = g.standard_normal(this * 2 * K * 2)
        for i, g in enumerate(dstreams):
            dbuf[i, :this].reshape(-1)[...] = g.standard_normal(this * 2 * K)
        for j in range(this):
            xi_keep = []
            dW_sum = np.zeros((n_paths, K))
            for half in range(2):
                v_before = vf
                v_mid = st_f.nonlinear_substep(vf, hf)
                uf, vf, xi1, xi2 = st_f.linear_substep(uf, v_mid, buf[:, j, half])
                dW = ff.w1 * xi1 + ff.w2 * xi2 + ff.wiener_cond_sd * dbuf[:, j, half]
                prev_f = accumulate(diag_f, st_f, hf, v_before, vf, dW, prev_f)
                xi_keep.append((xi1, xi2))
                dW_sum += dW
            (x1a, x2a), (x1b, x2b) = xi_keep
            xi1c = ff.e11 * x1a + ff.e12 * x2a + x1b
            xi2c = ff.e21 * x1a + ff.e22 * x2a + x2b
            vc_before = vc
            v_mid = st_c.nonlinear_substep(vc, h)
            uc, vc = st_c.apply_linear(uc, v_mid, xi1c, xi2c)
            prev_c = accumulate(diag_c, st_c, h, vc_before, vc, dW_sum, prev_c)
        done += this

    diag_c.energy_end = st_c.flows.alphas @ (uc**2).T + np.sum(vc**2, axis=-1)
    diag_f.energy_end = st_f.flows.alphas @ (uf**2).T + np.sum(vf**2, axis=-1)
    return (uc, vc, diag_c), (uf, vf, diag_f)


# -- single-state wrappers ---------------------------------------------------


def step(state: State, flows: ModeFlows, spec: ModelSpec, cfg: StepperConfig,
         rng: np.random.Generator) -> State:
    """One step of one trajectory; deterministic given the generator state."""
    if state.n_modes != spec.n_modes:
        raise ValueError("state dimension does not match the spec")
    stepper = WaveStepper(spec, cfg, flows)
    noise = rng.standard_normal((1, spec.n_modes, 2))
    u, v = stepper.step_arrays(state.u.coeffs[None, :], state.v.coeffs[None, :], noise)
    if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
        raise IntegrationError(0)
    return spec.state(u[0], v[0])


@dataclass
class Trajectory:
    times: np.ndarray
    states: list
    diagnostics: PathDiagnostics | None


def simulate(U0: State, T: float, spec: ModelSpec, cfg: StepperConfig,
             sample_times=None, diagnostics: bool = False,
             path_index: int = 0) -> Trajectory:
    """Single trajectory sampled on the requested grid (dt must divide it)."""
    if T < 0:
        raise ValueError("horizon must be >= 0")
    if T == 0.0:
        return Trajectory(np.array([0.0]), [U0], None)
    times, s_u, s_v, diag = sample_ensemble(
        U0, spec, cfg, n_paths=1, T=T, sample_times=sample_times,
        diagnostics=diagnostics, path_offset=path_index)
    states = [spec.state(s_u[i, 0], s_v[i, 0]) for i in range(len(times))]
    return Trajectory(times, states, diag)
