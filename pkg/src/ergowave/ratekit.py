"""Subgeometric-rate bookkeeping: concave gauge, return-time weights,
weighted distance, one-step contraction factor, and the index schedule.

The machinery turns empirical certificates (a uniform contraction factor
rho_1 on an energy sublevel set at time t_0, plus drift constants K_1, K_2
for the return-time weight W_n) into a polynomial decay bound with exponent
3 (n - 1 + gamma) / (4 (1 - gamma)).  The pieces:

  psi_n(x) = |x|^p_n with p_n = (n - 1 + gamma)/n,  concave, increasing;
  W_n(U)   = E[ sum_{i=0}^{sigma} Phi(U(i t_0))^n ] + 1, sigma the first
             i with Phi^n <= R (estimated by Monte Carlo with a horizon cap);
  d~(U, V) = sqrt( d(U, V) [1 + beta psi_n(W_n(U) + W_n(V))] );
  factor   = 1 - c* psi_n'( psi_n^{-1}( C* m^{4/3} w^{-4/3} ) ), the one-step
             contraction of the weighted transport distance at value w and
             moment mass m;
  g_n(x)   = 3/(4 c* (1-p_n)) [ (C* x^{-4/3})^{(1-p_n)/p_n} - C*^{(1-p_n)/p_n} ],
             the decreasing chart in which the contraction recursion
             a_{k+1} <= (1 - c* psi_n'(psi_n^{-1}(C* a_k^{-4/3}))) a_k yields
             a_k <= g_n^{-1}(k) ~ k^{-3 p_n / (4 (1 - p_n))};
  m_k      = k-th index where the drift observable falls below
             2 K_2 + W_n(U); admissible sequences force m_k <= 2k.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .integrator import StepperConfig, sample_ensemble
from .model import ModelSpec, State, model_ops

__all__ = [
    "RateParams",
    "psi_n",
    "psi_n_prime",
    "psi_n_inverse",
    "g_n",
    "g_n_inverse",
    "d_tilde",
    "one_step_contraction_factor",
    "mk_schedule",
    "w_n_estimate",
    "WnEstimate",
    "fit_w_drift",
]


@dataclass(frozen=True)
class RateParams:
    """Parameters of the abstract rate machinery.

    n >= 4 and gamma in (0, 1/lam) select the polynomial order; beta weights
    the return-time gauge inside the distance; K1, K2 are the fitted drift
    constants of W_n; cn_star, Cn_star calibrate the one-step contraction;
    t0 is the certified contraction time and R the sublevel radius.
    """

    n: int = 4
    gamma: float = 0.25
    beta: float = 1.0
    K1: float = 1.0
    K2: float = 1.0
    cn_star: float = 1.0
    Cn_star: float = 1.0
    t0: float = 5.0
    R: float = 10.0
    rho1: float | None = None

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if min(self.beta, self.K1, self.K2, self.cn_star, self.Cn_star,
               self.t0, self.R) <= 0:
            raise ValueError("all rate parameters must be positive")
        if not 0.0 < self.p_n < 1.0:
            raise ValueError("p_n = (n-1+gamma)/n must lie in (0, 1)")

    @property
    def p_n(self) -> float:
        return (self.n - 1.0 + self.gamma) / self.n

    @property
    def mixing_exponent(self) -> float:
        return 3.0 * (self.n - 1.0 + self.gamma) / (4.0 * (1.0 - self.gamma))

    @property
    def tail_exponent(self) -> float:
        """3 p_n / (4 (1 - p_n)); equals mixing_exponent identically."""
        return 3.0 * self.p_n / (4.0 * (1.0 - self.p_n))

    @property
    def t_star(self) -> float:
        """Onset time of the polynomial bound: two contraction periods."""
        return 2.0 * self.t0

    @staticmethod
    def from_certificates(rho1: float, t0: float, R: float, K1: float,
                          K2: float, n: int = 4, gamma: float = 0.25,
                          rho2: float | None = None,
                          Cn_star: float = 1.0) -> "RateParams":
        """Assemble parameters from empirical certificates: beta is the
        sublevel-set choice rho1 / psi_n(R + 2 K2); cn_star defaults to
        rho2 / 4 (rho2 itself defaults to rho1^2, the bounded-set factor)."""
        if not 0.0 < rho1 < 1.0:
            raise ValueError("rho1 must lie in (0, 1)")
        p = (n - 1.0 + gamma) / n
        beta = rho1 / (R + 2.0 * K2) ** p
        rho2 = rho1**2 if rho2 is None else rho2
        return RateParams(n, gamma, beta, K1, K2, rho2 / 4.0, Cn_star, t0, R,
                          rho1)

    def certificate_json(self) -> str:
        payload = {
            "rho1": self.rho1, "t0": self.t0, "R": self.R,
            "K1": self.K1, "K2": self.K2,
            "cn_star": self.cn_star, "Cn_star": self.Cn_star,
            "n": self.n, "gamma": self.gamma,
            "exponent": self.mixing_exponent,
        }
        return json.dumps(payload, sort_keys=True)

    @staticmethod
    def from_certificate_json(text: str) -> "RateParams":
        d = json.loads(text)
        return RateParams(int(d["n"]), float(d["gamma"]), 1.0, float(d["K1"]),
                          float(d["K2"]), float(d["cn_star"]),
                          float(d["Cn_star"]), float(d["t0"]), float(d["R"]),
                          d.get("rho1"))


def psi_n(x, params: RateParams):
    """Concave gauge |x|^p_n."""
    return np.abs(x) ** params.p_n


def psi_n_prime(x, params: RateParams):
    """Derivative p_n x^(p_n - 1) on x > 0 (decreasing, blows up at 0+)."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore"):
        return params.p_n * x ** (params.p_n - 1.0)


def psi_n_inverse(y, params: RateParams):
    return np.abs(y) ** (1.0 / params.p_n)


def g_n(x, params: RateParams):
    """Decreasing chart on (0, 1] with g_n(1) = 0 (closed form of the
    integral 1 / (t c* psi'(psi^{-1}(C* t^{-4/3}))) from x to 1)."""
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0.0) or np.any(x > 1.0):
        raise ValueError("g_n is defined on (0, 1]")
    p = params.p_n
    e = (1.0 - p) / p
    pref = 3.0 / (4.0 * params.cn_star * (1.0 - p))
    out = pref * ((params.Cn_star * x ** (-4.0 / 3.0)) ** e
                  - params.Cn_star**e)
    return out if out.ndim else float(out)


def g_n_inverse(y, params: RateParams):
    """Inverse of g_n on [0, inf) -> (0, 1]."""
    y = np.asarray(y, dtype=float)
    if np.any(y < 0.0):
        raise ValueError("g_n_inverse is defined on y >= 0")
    p = params.p_n
    e = (1.0 - p) / p
    z = y * (4.0 * params.cn_star * (1.0 - p)) / 3.0 + params.Cn_star**e
    out = (params.Cn_star / z ** (1.0 / e)) ** 0.75
    return out if out.ndim else float(out)


def d_tilde(dist_sq: float, w_first: float, w_second: float,
            params: RateParams) -> float:
    """Weighted distance sqrt(d * (1 + beta psi_n(W(U) + W(V)))).

    dist_sq is the squared product-norm cost d(U, V); the W values must be
    >= 1 by construction of the return-time weight.
    """
    if dist_sq < 0:
        raise ValueError("distance cost must be >= 0")
    if min(w_first, w_second) < 1.0:
        raise ValueError("return-time weights are >= 1 by construction")
    return math.sqrt(dist_sq * (1.0 + params.beta
                                * float(psi_n(w_first + w_second, params))))


def one_step_contraction_factor(params: RateParams, moments: tuple[float, float],
                                wd: float) -> tuple[float, bool]:
    """Contraction factor 1 - c* psi'(psi^{-1}(C* (m1+m2)^{4/3} wd^{-4/3})).

    Returns (factor, in_regime).  The derivative blows up as its argument
    approaches 0 (wd -> infinity), which lies outside the lemma's regime;
    there the factor is clamped into [0, 1] and flagged.
    """
    m1, m2 = moments
    if wd == 0.0:
        raise ValueError("wd = 0: the two laws coincide, factor undefined")
    if min(m1, m2) < float(psi_n(1.0, params)):
        raise ValueError("moment masses must be >= psi_n(1) = 1")
    arg = psi_n_inverse(params.Cn_star * (m1 + m2) ** (4.0 / 3.0)
                        * wd ** (-4.0 / 3.0), params)
    raw = 1.0 - params.cn_star * float(psi_n_prime(arg, params))
    factor = min(1.0, max(0.0, raw))
    return factor, bool(factor == raw)


def mk_schedule(drift_values, threshold: float, *, k_max: int | None = None,
                w_n: float | None = None, k2: float | None = None,
                value_at_zero: float | None = None):
    """Indices m_1 < m_2 < ... where the drift observable is <= threshold.

    drift_values[m-1] is the observable at index m >= 1.  When the weight
    w_n, constant k2 and the index-0 value are supplied, each k is checked
    against the cumulative admissibility bound

        sum_{i=0}^{2k} values_i <= w_n + (2k + 1) k2,

    and the schedule bound m_k <= 2k is asserted whenever it applies.
    Returns (indices, bound_checked) where bound_checked[k-1] is True,
    False (inadmissible, bound not applicable) or None (no data).
    """
    values = np.asarray(drift_values, dtype=float)
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    qualifying = np.nonzero(values <= threshold)[0] + 1
    if k_max is None:
        k_max = len(qualifying)
    if len(qualifying) < k_max:
        raise ValueError(
            f"only {len(qualifying)} qualifying indices within the horizon, "
            f"need {k_max}")
    indices = qualifying[:k_max]
    bound_checked = [None] * k_max
    if w_n is not None and k2 is not None and value_at_zero is not None:
        prefix = np.concatenate([[value_at_zero], values])
        csum = np.cumsum(prefix)
        for k in range(1, k_max + 1):
            upto = 2 * k
            if upto >= len(prefix):
                bound_checked[k - 1] = None
                continue
            admissible = csum[upto] <= w_n + (2 * k + 1) * k2 + 1e-9
            if admissible and indices[k - 1] > 2 * k:
                raise AssertionError(
                    f"schedule bound violated: m_{k} = {indices[k-1]} > {2*k} "
                    "on an admissible sequence")
            bound_checked[k - 1] = bool(admissible)
    return indices, bound_checked


@dataclass
class WnEstimate:
    """Monte Carlo estimate of the return-time weight W_n."""

    value: float
    stderr: float
    mean_return_index: float
    censored_fraction: float
    n_paths: int
    reliable: bool


def w_n_estimate(U0: State, spec: ModelSpec, cfg: StepperConfig,
                 params: RateParams, *, n_paths: int = 32,
                 sigma_cap: int = 10_000, path_offset: int = 0) -> WnEstimate:
    """Estimate W_n(U0) = E[sum_{i=0}^{sigma} Phi(U(i t0))^n] + 1 with
    sigma the first index i where Phi(U(i t0))^n <= R.

    Paths are advanced in t0 blocks until they return to the sublevel set;
    paths still outside after sigma_cap blocks are censored (their partial
    sum is kept) and the estimate is flagged unreliable when more than 1%
    of paths were censored.
    """
    ops = model_ops(spec)
    phi0 = float(ops.big_phi(U0.u.coeffs, U0.v.coeffs))
    totals = np.full(n_paths, phi0**params.n, dtype=float)
    if phi0**params.n <= params.R:
        return WnEstimate(float(totals.mean() + 1.0), 0.0, 0.0, 0.0, n_paths,
                          True)

    u = np.tile(U0.u.coeffs, (n_paths, 1))
    v = np.tile(U0.v.coeffs, (n_paths, 1))
    active = np.ones(n_paths, dtype=bool)
    returns = np.zeros(n_paths, dtype=float)
    block = 0
    while np.any(active) and block < sigma_cap:
        block += 1
        idx = np.nonzero(active)[0]
        holder = {}

        def reducer(i, t, uu, vv, sl):
            holder["u"], holder["v"] = uu.copy(), vv.copy()

        sample_ensemble((u[idx], v[idx]), spec, cfg, n_paths=len(idx),
                        T=params.t0, sample_times=[params.t0],
                        reduce_fn=reducer,
                        path_offset=path_offset + block * n_paths)
        u[idx], v[idx] = holder["u"], holder["v"]
        phin = ops.big_phi(u[idx], v[idx]) ** params.n
        totals[idx] += phin
        returned = phin <= params.R
        returns[idx[returned]] = block
        active[idx[returned]] = False
    censored = float(np.mean(active))
    returns[active] = block
    est = totals + 1.0
    se = float(est.std(ddof=1) / math.sqrt(n_paths)) if n_paths > 1 else 0.0
    return WnEstimate(float(est.mean()), se, float(returns.mean()), censored,
                      n_paths, bool(censored <= 0.01))


def fit_w_drift(w_values: np.ndarray, pw_values: np.ndarray,
                params: RateParams, k1_grid=None) -> tuple[float, float]:
    """Fit (K1, K2) so that P_{t0} W <= W - psi_n(K1 W) + K2 on the samples.

    For each K1 on a grid the minimal K2 is max(PW - W + psi_n(K1 W)); the
    returned pair maximizes the drift signal psi_n(K1) / K2 (strongest
    usable inequality), with K2 floored at a small positive value.
    """
    w = np.asarray(w_values, dtype=float)
    pw = np.asarray(pw_values, dtype=float)
    if k1_grid is None:
        k1_grid = np.logspace(-3.0, 0.0, 31)
    best = None
    for k1 in k1_grid:
        k2 = float(max(1e-6, np.max(pw - w + psi_n(k1 * w, params))))
        score = float(psi_n(k1, params)) / k2
        if best is None or score > best[2]:
            best = (float(k1), k2, score)
    return best[0], best[1]
