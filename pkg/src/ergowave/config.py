"""Flat key-value configuration with a closed schema.

Files hold one `key = value` pair per line (dotted keys, # comments); every
module default is overridable and unknown keys are rejected by name, so a
config diff always means a real change.  Values round-trip losslessly
through render()/parse.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Callable

__all__ = ["ConfigError", "Schema", "SCHEMA", "load_config", "parse_text",
           "apply_overrides", "render"]


class ConfigError(ValueError):
    """Bad key or unparsable value; the message names the offender."""


def _parse_bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _parse_float_list(s: str) -> tuple[float, ...]:
    return tuple(float(tok) for tok in s.replace(",", " ").split())


def _parse_int_list(s: str) -> tuple[int, ...]:
    return tuple(int(tok) for tok in s.replace(",", " ").split())


def _render(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(_render(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass(frozen=True)
class Item:
    default: Any
    parse: Callable[[str], Any]
    doc: str


def _f(default, doc):
    return Item(default, float, doc)


def _i(default, doc):
    return Item(default, int, doc)


def _s(default, doc):
    return Item(default, str, doc)


SCHEMA: dict[str, Item] = {
    # model
    "L": _f(math.pi, "domain length"),
    "K": _i(64, "number of retained sine modes"),
    "phi.family": _s("power", "damping family: power | smoothed | zero"),
    "phi.lambda": _f(3.0, "damping exponent"),
    "phi.smoothing": _f(0.0, "smoothing width for the smoothed family"),
    "noise.amplitude": _f(1.0, "noise spectrum amplitude A0"),
    "noise.decay": _f(3.0, "noise spectrum decay s in lambda_k = A0 k^-s"),
    "seed": _i(20260809, "base seed of all noise streams"),
    "dim": _i(1, "spatial dimension used by the exponent-range check"),
    "threads": _i(1, "worker count (capped by ERGOWAVE_THREADS)"),
    # single-trajectory simulation
    "sim.dt": _f(5e-3, "simulation step size"),
    "sim.T": _f(10.0, "simulation horizon"),
    "sim.splitting": _s("lie", "splitting order: lie | strang"),
    "sim.oversample": _i(2, "dealiasing factor of the damping substep"),
    "sim.sample_every": _f(1.0, "snapshot spacing in time units"),
    "init.kind": _s("zero", "initial state: zero | mode"),
    "init.phi": _f(0.0, "energy Phi of the initial state (mode kind)"),
    "init.mode": _i(1, "mode index carrying the initial state"),
    "init.velocity_fraction": _f(0.0, "share of the initial state in v"),
    # coupled-pair experiments
    "couple.epsilon": _f(0.05, "cross-term weight of the decay functional"),
    "couple.pairs": _i(64, "number of coupled pairs"),
    "couple.T": _f(100.0, "coupling horizon"),
    "couple.dt": _f(5e-3, "coupling step size"),
    "couple.amplitude": _f(0.7, "amplitude of the random initial pair states"),
    "couple.dsmall_R": _f(10.0, "sublevel radius of the contraction set"),
    "couple.dsmall_t": _f(5.0, "contraction time of the certificate"),
    "couple.dsmall_n": _i(4, "energy power defining the sublevel set"),
    "couple.dsmall_pairs": _i(32, "pairs sampled in the sublevel set"),
    "couple.dsmall_paths": _i(16, "coupled paths per sampled pair"),
    # drift / stationary moments
    "lyapunov.n": Item((1, 2, 4), _parse_int_list, "energy powers to certify"),
    "lyapunov.gamma": _f(0.25, "drift exponent gamma"),
    "lyapunov.paths": _i(256, "ensemble size per initial state"),
    "lyapunov.T": _f(50.0, "drift horizon"),
    "lyapunov.dt": _f(5e-3, "drift step size"),
    "lyapunov.grid_dt": _f(0.1, "sampling grid spacing of the drift curves"),
    "lyapunov.phi0": Item((0.0, 10.0, 100.0), _parse_float_list,
                          "initial energies Phi(U0)"),
    "lyapunov.moment_p": Item((2.0, 4.0), _parse_float_list,
                              "stationary moment orders"),
    "lyapunov.burn_in": _f(100.0, "discarded prefix of the stationary pool"),
    "lyapunov.horizon": _f(500.0, "length of each stationary chain"),
    "lyapunov.chains": _i(8, "stationary chains"),
    "lyapunov.thin": _f(5.0, "thinning interval of the pool"),
    "lyapunov.samples": _i(256, "samples entering each moment estimate"),
    # mixing curve
    "mixing.n": _i(4, "polynomial order of the reference exponent"),
    "mixing.gamma": _f(0.25, "gamma of the reference exponent"),
    "mixing.samples": _i(128, "ensemble / reference sample size"),
    "mixing.times": Item((1.0, 2.0, 5.0, 10.0, 20.0, 50.0), _parse_float_list,
                         "observation times"),
    "mixing.dt": _f(5e-3, "mixing step size"),
    "mixing.u0_norm": _f(10.0, "product-space norm of the initial state"),
    "mixing.boot": _i(200, "bootstrap replicates per time point"),
    "mixing.burn_in": _f(100.0, "discarded prefix of the reference pool"),
    "mixing.horizon": _f(500.0, "length of each reference chain"),
    "mixing.chains": _i(8, "reference chains"),
    "mixing.thin": _f(5.0, "thinning interval of the reference pool"),
    # rate machinery checks
    "ratekit.n": _i(4, "order n of the rate parameters"),
    "ratekit.gamma": _f(0.25, "gamma of the rate parameters"),
    "ratekit.R": _f(10.0, "sublevel radius"),
    "ratekit.t0": _f(5.0, "contraction period"),
    "ratekit.cn_star": _f(1.0, "one-step contraction scale c*"),
    "ratekit.Cn_star": _f(1.0, "one-step contraction scale C*"),
    "ratekit.rho1": _f(0.5, "contraction certificate fed to the pipeline"),
    "ratekit.K1": _f(0.1, "drift constant K1 of the return-time weight"),
    "ratekit.K2": _f(1.0, "drift constant K2 of the return-time weight"),
    "ratekit.k_max": _i(100, "schedule length checked per sequence"),
    "ratekit.sequences": _i(1000, "random admissible sequences tested"),
    "ratekit.quad_points": _i(20, "random arguments for the chart cross-check"),
}


class Schema:
    """The closed key set; parsing, defaults and rendering."""

    def __init__(self, items: dict[str, Item] = SCHEMA):
        self.items = items

    def defaults(self) -> dict[str, Any]:
        return {k: it.default for k, it in self.items.items()}

    def parse_value(self, key: str, raw: str) -> Any:
        if key not in self.items:
            raise ConfigError(f"unknown configuration key: {key!r}")
        try:
            return self.items[key].parse(raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key!r}: {raw!r} ({exc})") from exc


def parse_text(text: str, schema: Schema | None = None,
               base: dict[str, Any] | None = None) -> dict[str, Any]:
    schema = schema or Schema()
    cfg = dict(schema.defaults() if base is None else base)
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, raw = stripped.partition("=")
        cfg[key.strip()] = schema.parse_value(key.strip(), raw.strip())
    return cfg


def load_config(path: str | None, overrides=(), schema: Schema | None = None):
    schema = schema or Schema()
    cfg = schema.defaults()
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            cfg = parse_text(fh.read(), schema, cfg)
    return apply_overrides(cfg, overrides, schema)


def apply_overrides(cfg: dict[str, Any], overrides, schema: Schema | None = None):
    schema = schema or Schema()
    cfg = dict(cfg)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        key, _, raw = item.partition("=")
        cfg[key.strip()] = schema.parse_value(key.strip(), raw.strip())
    return cfg


def render(cfg: dict[str, Any]) -> str:
    """Canonical text form (sorted keys); parse(render(c)) == c."""
    return "\n".join(f"{k} = {_render(v)}" for k, v in sorted(cfg.items())) + "\n"
