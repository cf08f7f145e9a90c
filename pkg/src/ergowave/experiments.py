"""Experiment orchestration and persistence.

Five canonical experiments (validate, simulate, couple, lyapunov, mixing)
plus the rate-machinery self-check.  Each run writes its artifacts
atomically (temp file + rename), then a manifest recording the resolved
configuration, seed, code version and the SHA-256 digest of every artifact.
Artifacts contain no timestamps, so identical (config, seed) produce
byte-identical files regardless of worker count; timestamps live only in
the manifest.

Snapshot format: magic "SWAVE1", then little-endian u32 format version, u32
mode count K, u32 sample count, followed per sample by one f64 time and 2K
f64 coefficients (position block then velocity block).  A companion JSON
manifest carries the model configuration, seed, dt and the snapshot digest.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import struct
import tempfile
from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np

from . import __version__
from .config import ConfigError, render
from .coupling import contraction_estimate, dsmall_estimate
from .integrator import StepperConfig, simulate
from .lyapunov import (
    collect_phi_paths,
    drift_report_from_paths,
    invariant_moment_estimate,
    stationary_pool,
)
from .model import (
    ModelSpec,
    Nonlinearity,
    NoiseSpec,
    mode_state_with_h2_norm,
    model_ops,
    sample_state,
    scaled_mode_state,
    validate_assumptions,
)
from .ratekit import RateParams, g_n, g_n_inverse, mk_schedule, \
    psi_n_inverse, psi_n_prime
from .transport import mixing_curve

__all__ = [
    "RunManifest",
    "run_experiment",
    "model_spec_from_config",
    "stepper_from_config",
    "write_snapshot",
    "read_snapshot",
    "EXPERIMENTS",
]

SNAPSHOT_MAGIC = b"SWAVE1"
SNAPSHOT_VERSION = 1
SCHEMA_VERSION = 1


def model_spec_from_config(cfg: dict) -> ModelSpec:
    nl = Nonlinearity(cfg["phi.family"], cfg["phi.lambda"], cfg["phi.smoothing"])
    noise = NoiseSpec(cfg["noise.amplitude"], cfg["noise.decay"])
    return ModelSpec(nl, noise, cfg["K"], cfg["L"])


def stepper_from_config(cfg: dict, dt_key: str, seed_offset: int = 0) -> StepperConfig:
    return StepperConfig(dt=cfg[dt_key], splitting=cfg.get("sim.splitting", "lie"),
                         seed=cfg["seed"] + seed_offset,
                         oversample=cfg.get("sim.oversample", 2))


def initial_state_from_config(cfg: dict, spec: ModelSpec):
    kind = cfg["init.kind"]
    if kind == "zero":
        return spec.zero_state()
    if kind == "mode":
        return scaled_mode_state(spec, cfg["init.phi"], cfg["init.mode"],
                                 cfg["init.velocity_fraction"])
    raise ConfigError(f"unknown init.kind: {kind!r}")


# ---------------------------------------------------------------------------
# atomic persistence


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _write_atomic(path: str, data: bytes) -> str:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return _sha256(data)


def _json_bytes(payload) -> bytes:
    return (json.dumps(payload, sort_keys=True, indent=2) + "\n").encode()


def _csv_bytes(header, rows) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(x) if isinstance(x, float) else x for x in row])
    return buf.getvalue().encode()


@dataclass
class RunManifest:
    experiment: str
    config_text: str
    seed: int
    code_version: str
    started: str
    finished: str
    artifacts: dict

    def to_json(self) -> bytes:
        return _json_bytes({
            "schema_version": SCHEMA_VERSION,
            "experiment": self.experiment,
            "config": self.config_text,
            "seed": self.seed,
            "code_version": self.code_version,
            "started": self.started,
            "finished": self.finished,
            "artifacts": self.artifacts,
        })


class _Emitter:
    """Collects artifacts, writes them atomically, remembers digests."""

    def __init__(self, out_dir: str):
        self.out_dir = out_dir
        self.digests: dict[str, str] = {}

    def write(self, name: str, data: bytes):
        self.digests[name] = _write_atomic(os.path.join(self.out_dir, name), data)


# ---------------------------------------------------------------------------
# snapshot format


def write_snapshot(path: str, times: np.ndarray, coeff_rows: np.ndarray) -> str:
    """Serialize sampled states; coeff_rows has shape (n_samples, 2K)."""
    times = np.asarray(times, dtype="<f8")
    rows = np.asarray(coeff_rows, dtype="<f8")
    if rows.ndim != 2 or rows.shape[0] != times.size or rows.shape[1] % 2:
        raise ValueError("need (n_samples, 2K) coefficients matching the times")
    K = rows.shape[1] // 2
    blob = bytearray()
    blob += SNAPSHOT_MAGIC
    blob += struct.pack("<III", SNAPSHOT_VERSION, K, times.size)
    for t, row in zip(times, rows):
        blob += struct.pack("<d", float(t))
        blob += row.tobytes()
    return _write_atomic(path, bytes(blob))


def read_snapshot(path: str):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:6] != SNAPSHOT_MAGIC:
        raise ValueError("not a snapshot file (bad magic)")
    version, K, count = struct.unpack_from("<III", raw, 6)
    if version != SNAPSHOT_VERSION:
        raise ValueError(f"unsupported snapshot version {version}")
    offset = 6 + 12
    rec = 8 + 16 * K
    if len(raw) != offset + rec * count:
        raise ValueError("snapshot length does not match its header")
    times = np.empty(count)
    rows = np.empty((count, 2 * K))
    for i in range(count):
        times[i] = struct.unpack_from("<d", raw, offset)[0]
        rows[i] = np.frombuffer(raw, dtype="<f8", count=2 * K, offset=offset + 8)
        offset += rec
    return times, rows


# ---------------------------------------------------------------------------
# experiment bodies (each returns (violations, summary_lines))


def _run_validate(cfg, emit: _Emitter):
    spec = model_spec_from_config(cfg)
    report = validate_assumptions(spec, cfg["dim"])
    payload = {
        "schema_version": SCHEMA_VERSION,
        "dimension": report.dimension,
        "certified": report.certified,
        "witnesses": report.witnesses,
        "checks": [{"name": c.name, "ok": c.ok,
                    "details": {k: (None if isinstance(v, float) and not math.isfinite(v)
                                    else v) for k, v in c.details.items()}}
                   for c in report.checks],
        "all_ok": report.all_ok,
    }
    emit.write("validation.json", _json_bytes(payload))
    violations = [f"assumption check failed: {c.name}"
                  for c in report.checks if not c.ok]
    return violations, report.describe().splitlines()


def _run_simulate(cfg, emit: _Emitter):
    spec = model_spec_from_config(cfg)
    scfg = stepper_from_config(cfg, "sim.dt")
    U0 = initial_state_from_config(cfg, spec)
    T = cfg["sim.T"]
    every = cfg["sim.sample_every"]
    if T == 0.0:
        sample_times = [0.0]
    else:
        count = int(round(T / every))
        sample_times = [i * every for i in range(count + 1)]
    traj = simulate(U0, T, spec, scfg, sample_times=sample_times,
                    diagnostics=T > 0.0)
    rows = np.stack([np.concatenate([s.u.coeffs, s.v.coeffs])
                     for s in traj.states])
    digest = write_snapshot(os.path.join(emit.out_dir, "snapshot.bin"),
                            traj.times, rows)
    emit.digests["snapshot.bin"] = digest
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "model": {k: cfg[k] for k in ("L", "K", "phi.family", "phi.lambda",
                                      "phi.smoothing", "noise.amplitude",
                                      "noise.decay")},
        "seed": cfg["seed"],
        "dt": cfg["sim.dt"],
        "snapshot_sha256": digest,
        "samples": len(traj.states),
    }
    if traj.diagnostics is not None:
        manifest["energy_balance_residual"] = float(traj.diagnostics.residual[0])
    emit.write("snapshot.json", _json_bytes(manifest))
    lines = [f"wrote {len(traj.states)} samples, K={spec.n_modes}, digest {digest[:12]}"]
    return [], lines


def _run_couple(cfg, emit: _Emitter):
    spec = model_spec_from_config(cfg)
    scfg = stepper_from_config(cfg, "couple.dt")
    rng = np.random.default_rng(cfg["seed"])
    first = sample_state(spec, rng, cfg["couple.amplitude"])
    second = sample_state(spec, rng, cfg["couple.amplitude"])
    eps = cfg["couple.epsilon"]
    curve = contraction_estimate(first, second, spec, scfg,
                                 n_pairs=cfg["couple.pairs"],
                                 T=cfg["couple.T"], epsilon=eps)
    emit.write("decay.csv", _csv_bytes(
        ("t", "mean", "stderr", "n_paths"),
        [(float(t), float(m), float(s), curve.n_pairs)
         for t, m, s in zip(curve.times, curve.mean, curve.stderr)]))

    cert = dsmall_estimate(spec, scfg, radius=cfg["couple.dsmall_R"],
                           t=cfg["couple.dsmall_t"], n=cfg["couple.dsmall_n"],
                           n_pairs=cfg["couple.dsmall_pairs"],
                           n_paths_per_pair=cfg["couple.dsmall_paths"])
    emit.write("dsmall.csv", _csv_bytes(
        ("R", "t", "rho_hat", "stderr"),
        [(float(cert.radius), float(cert.time), float(cert.rho_hat),
          float(cert.stderr))]))
    emit.write("dsmall.json", _json_bytes({
        "schema_version": SCHEMA_VERSION,
        "R": cert.radius, "t": cert.time, "n": cfg["couple.dsmall_n"],
        "rho_hat": cert.rho_hat, "stderr": cert.stderr,
        "n_pairs": cert.n_pairs, "n_paths_per_pair": cert.n_paths_per_pair,
        "certified": cert.ok,
        "note": "empirical certificate over sampled pairs, not a supremum proof",
    }))

    violations = []
    target = eps / 8.0 * 0.8
    if not (curve.fitted_rate >= target):
        violations.append(
            f"contraction rate {curve.fitted_rate:.4g} below 0.8*eps/8 = {target:.4g}")
    if not cert.ok:
        violations.append("contraction certificate not positive beyond 3 SE")
    lines = [
        f"epsilon-functional decay rate {curve.fitted_rate:.4g} "
        f"(target >= {target:.4g}, window_adjusted={curve.window_adjusted})",
        f"sublevel contraction rho_hat = {cert.rho_hat:.4f} +- {cert.stderr:.4f} "
        f"at t={cert.time}, R={cert.radius} (certified={cert.ok})",
    ]
    return violations, lines


def _run_lyapunov(cfg, emit: _Emitter):
    spec = model_spec_from_config(cfg)
    scfg = stepper_from_config(cfg, "lyapunov.dt")
    ops = model_ops(spec)
    gamma = cfg["lyapunov.gamma"]
    violations = []
    lines = []
    reports = []
    for j, phi0 in enumerate(cfg["lyapunov.phi0"]):
        U0 = scaled_mode_state(spec, phi0)
        times, paths = collect_phi_paths(
            U0, spec, scfg, T=cfg["lyapunov.T"], n_paths=cfg["lyapunov.paths"],
            grid_dt=cfg["lyapunov.grid_dt"], path_offset=j * cfg["lyapunov.paths"],
            workers=cfg["threads"])
        actual_phi0 = float(ops.big_phi(U0.u.coeffs, U0.v.coeffs))
        for n in cfg["lyapunov.n"]:
            rep = drift_report_from_paths(times, paths, n=n, gamma=gamma,
                                          phi0=actual_phi0,
                                          trace_reference=ops.trace_qaq)
            reports.append((phi0, rep))
            emit.write(f"drift_phi{j}_n{n}.csv", _csv_bytes(
                ("t", "E_phi_n", "stderr", "running_integral"),
                [(float(t), float(m), float(s), float(I)) for t, m, s, I in
                 zip(rep.times, rep.phi_n, rep.phi_n_se, rep.integral)]))
            if not rep.feasible:
                violations.append(f"drift infeasible at phi0={phi0}, n={n}")
            lines.append(f"phi0={phi0} n={n}: c={rep.c_fit:.4g} C={rep.C_fit:.4g} "
                         f"feasible={rep.feasible}")

    moments = {}
    for s_off in (0, 1):
        pool = stationary_pool(spec, stepper_from_config(cfg, "lyapunov.dt",
                                                         seed_offset=1000 * s_off),
                               chains=cfg["lyapunov.chains"],
                               horizon=cfg["lyapunov.horizon"],
                               thin=cfg["lyapunov.thin"],
                               discard=cfg["lyapunov.burn_in"],
                               workers=cfg["threads"])
        for p in cfg["lyapunov.moment_p"]:
            est = invariant_moment_estimate(
                spec, stepper_from_config(cfg, "lyapunov.dt", 1000 * s_off),
                p=p, n_samples=cfg["lyapunov.samples"], pool=pool)
            moments.setdefault(p, []).append(est)
    moment_payload = {}
    for p, (a, b) in moments.items():
        agree = a.overlaps(b)
        if not agree:
            violations.append(f"stationary moment p={p} seeds disagree")
        moment_payload[str(p)] = {
            "estimates": [{"value": e.value, "ci_lo": e.ci_lo, "ci_hi": e.ci_hi,
                           "n_samples": e.n_samples} for e in (a, b)],
            "ci_overlap": agree,
        }
        lines.append(f"moment p={p}: {a.value:.4g} [{a.ci_lo:.4g},{a.ci_hi:.4g}] vs "
                     f"{b.value:.4g} [{b.ci_lo:.4g},{b.ci_hi:.4g}] overlap={agree}")

    emit.write("drift_report.json", _json_bytes({
        "schema_version": SCHEMA_VERSION,
        "gamma": gamma,
        "reports": [{"phi0": phi0, "n": rep.n, "c": rep.c_fit, "C": rep.C_fit,
                     "feasible": rep.feasible, "n_paths": rep.n_paths}
                    for phi0, rep in reports],
        "stationary_moments": moment_payload,
        "all_feasible": all(rep.feasible for _, rep in reports),
    }))
    return violations, lines


def _run_mixing(cfg, emit: _Emitter):
    spec = model_spec_from_config(cfg)
    scfg = stepper_from_config(cfg, "mixing.dt")
    pool_a = stationary_pool(spec, stepper_from_config(cfg, "mixing.dt", 500),
                             chains=cfg["mixing.chains"],
                             horizon=cfg["mixing.horizon"],
                             thin=cfg["mixing.thin"],
                             discard=cfg["mixing.burn_in"],
                             workers=cfg["threads"])
    pool_b = stationary_pool(spec, stepper_from_config(cfg, "mixing.dt", 501),
                             chains=cfg["mixing.chains"],
                             horizon=cfg["mixing.horizon"],
                             thin=cfg["mixing.thin"],
                             discard=cfg["mixing.burn_in"],
                             workers=cfg["threads"])
    U0 = mode_state_with_h2_norm(spec, cfg["mixing.u0_norm"])
    curve = mixing_curve(U0, spec, scfg, times=list(cfg["mixing.times"]),
                         n_samples=cfg["mixing.samples"], reference=pool_a,
                         reference_check=pool_b, n=cfg["mixing.n"],
                         gamma=cfg["mixing.gamma"], n_boot=cfg["mixing.boot"],
                         workers=cfg["threads"])
    emit.write("mixing_curve.csv", _csv_bytes(
        ("t", "wd_hat", "ci_lo", "ci_hi", "n_samples"),
        [(float(t), float(w), float(l), float(h), curve.n_samples)
         for t, w, l, h in zip(curve.times, curve.wd, curve.ci_lo, curve.ci_hi)]))
    emit.write("report.json", _json_bytes({
        "schema_version": SCHEMA_VERSION,
        "n": cfg["mixing.n"], "gamma": cfg["mixing.gamma"],
        "fitted_slope": curve.slope,
        "theoretical_exponent": curve.theoretical_exponent,
        "t_star": curve.t_star,
        "stale_reference": curve.stale,
        "reference_discrepancy": curve.reference_discrepancy,
        "final_over_initial": float(curve.wd[-1] / curve.wd[0]),
    }))
    violations = []
    if curve.stale:
        violations.append("stationary references disagree (stale)")
    for i in range(len(curve.times) - 1):
        if curve.wd[i + 1] > curve.wd[i] and curve.ci_lo[i + 1] > curve.ci_hi[i]:
            violations.append(f"curve increased beyond CI overlap at t={curve.times[i+1]}")
    if not (curve.slope > 0):
        violations.append(f"fitted slope {curve.slope:.4g} not a decay")
    lines = [
        f"W_d: {curve.wd[0]:.4g} -> {curve.wd[-1]:.4g} "
        f"(ratio {curve.wd[-1]/curve.wd[0]:.3g})",
        f"fitted tail exponent {curve.slope:.3g} "
        f"(theoretical upper-bound exponent {curve.theoretical_exponent:.3g}, "
        "slope equality not expected)",
        f"t* = {curve.t_star}, stale={curve.stale}",
    ]
    return violations, lines


def _run_ratekit_check(cfg, emit: _Emitter):
    from scipy.integrate import quad

    rng = np.random.default_rng(cfg["seed"])
    violations = []
    lines = []

    # closed-form chart vs adaptive quadrature of its defining integral
    worst_rel = 0.0
    for _ in range(5):
        params = RateParams(n=int(rng.integers(4, 9)),
                            gamma=float(rng.uniform(0.05, 0.32)),
                            cn_star=float(rng.uniform(0.2, 2.0)),
                            Cn_star=float(rng.uniform(0.2, 2.0)))

        def integrand(t, p=params):
            return 1.0 / (t * p.cn_star * float(psi_n_prime(
                psi_n_inverse(p.Cn_star * t ** (-4.0 / 3.0), p), p)))

        for x in rng.uniform(0.02, 1.0, size=cfg["ratekit.quad_points"]):
            val, _err = quad(integrand, float(x), 1.0, epsabs=1e-13, epsrel=1e-12)
            closed = float(g_n(float(x), params))
            if val != 0.0:
                worst_rel = max(worst_rel, abs(closed - val) / abs(val))
    if worst_rel > 1e-8:
        violations.append(f"chart closed form off by rel {worst_rel:.2e}")
    lines.append(f"chart vs quadrature: worst rel err {worst_rel:.2e}")

    # contraction recursion vs the chart inverse
    params = RateParams(n=cfg["ratekit.n"], gamma=cfg["ratekit.gamma"],
                        cn_star=cfg["ratekit.cn_star"],
                        Cn_star=cfg["ratekit.Cn_star"],
                        K1=cfg["ratekit.K1"], K2=cfg["ratekit.K2"],
                        t0=cfg["ratekit.t0"], R=cfg["ratekit.R"])
    a = 1.0
    worst_ratio = 0.0
    for k in range(1, 1001):
        arg = psi_n_inverse(params.Cn_star * a ** (-4.0 / 3.0), params)
        a *= 1.0 - params.cn_star * float(psi_n_prime(arg, params))
        bound = float(g_n_inverse(float(k), params))
        worst_ratio = max(worst_ratio, a / bound)
    if worst_ratio > 2.0:
        violations.append(f"recursion exceeds chart bound by {worst_ratio:.3f}x")
    lines.append(f"recursion vs chart inverse: worst ratio {worst_ratio:.3f}")

    # schedule bound on random admissible sequences
    k_max = cfg["ratekit.k_max"]
    checked = 0
    for _ in range(cfg["ratekit.sequences"]):
        w = rng.uniform(1.0, 50.0, size=2 * k_max + 2)
        k2 = float(rng.uniform(0.1, 5.0))
        vals = np.maximum((w[:-1] - w[1:] + k2) * rng.uniform(0, 1, 2 * k_max + 1),
                          0.0)
        threshold = 2.0 * k2 + w[0]
        try:
            mk_schedule(vals[1:], threshold, k_max=None, w_n=float(w[0]), k2=k2,
                        value_at_zero=float(vals[0]))
            checked += 1
        except AssertionError as exc:
            violations.append(str(exc))
            break
    lines.append(f"schedule bound held on {checked} admissible sequences")

    cert = RateParams.from_certificates(
        rho1=cfg["ratekit.rho1"], t0=cfg["ratekit.t0"], R=cfg["ratekit.R"],
        K1=cfg["ratekit.K1"], K2=cfg["ratekit.K2"], n=cfg["ratekit.n"],
        gamma=cfg["ratekit.gamma"], Cn_star=cfg["ratekit.Cn_star"])
    emit.write("rate_certificate.json", cert.certificate_json().encode() + b"\n")
    ts = np.array([cert.t_star * 2.0**j for j in range(12)])
    emit.write("theoretical_curve.csv", _csv_bytes(
        ("t", "bound_factor"),
        [(float(t), float((t + 1.0) ** -cert.mixing_exponent)) for t in ts]))
    lines.append(f"certificate: beta={cert.beta:.4g}, exponent={cert.mixing_exponent:.4g}")

    emit.write("ratekit_report.json", _json_bytes({
        "schema_version": SCHEMA_VERSION,
        "chart_worst_rel_err": worst_rel,
        "recursion_worst_ratio": worst_ratio,
        "schedule_sequences_checked": checked,
        "certificate": json.loads(cert.certificate_json()),
        "all_ok": not violations,
    }))
    return violations, lines


EXPERIMENTS = {
    "validate": _run_validate,
    "simulate": _run_simulate,
    "couple": _run_couple,
    "lyapunov": _run_lyapunov,
    "mixing": _run_mixing,
    "ratekit-check": _run_ratekit_check,
}


def run_experiment(name: str, cfg: dict, out_dir: str):
    """Execute one experiment; returns (manifest, violations, summary lines).

    Artifacts land in out_dir; the manifest is written last so a complete
    manifest implies complete artifacts.
    """
    if name not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {name!r}")
    started = datetime.now(timezone.utc).isoformat()
    emit = _Emitter(out_dir)
    violations, lines = EXPERIMENTS[name](cfg, emit)
    manifest = RunManifest(
        experiment=name,
        config_text=render(cfg),
        seed=cfg["seed"],
        code_version=__version__,
        started=started,
        finished=datetime.now(timezone.utc).isoformat(),
        artifacts=emit.digests,
    )
    _write_atomic(os.path.join(out_dir, "manifest.json"), manifest.to_json())
    return manifest, violations, lines
