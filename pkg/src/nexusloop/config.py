"""JSON run configuration with unit-suffixed keys.

Every section is optional; missing keys take the reference device and loop
values.  Values are validated at parse time and unknown keys are rejected.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields

from .errors import ConfigError
from .loop import Direction, FluctMode, LoopSpec
from .model import FreqConvention, PhysicalParams
from .stability import DMode

_pos = ("> 0", lambda v: v > 0)
_nonneg = (">= 0", lambda v: v >= 0)
_finite = ("finite", lambda v: True)


def _choice(*opts):
    return (f"one of {list(opts)}", lambda v: v in opts)


@dataclass(frozen=True)
class PhysicalSection:
    mass_ng: float = 80.0
    omega_m_khz: float = 136.0
    kappa_over_omega_m: float = 0.1
    lambda_nm: float = 1064.0
    g_omega_khz_per_nm: float = 196.57
    g_kappa_khz_per_nm: float = 17.47
    temperature_mk: float = 0.5
    quality: float = 5.8e5


@dataclass(frozen=True)
class LoopSection:
    p0_uw: float = 15.0
    delta0_over_omega_m: float = 0.3
    a0_uw: float = 15.0
    b0_over_omega_m: float = 0.45
    theta0_over_pi: float = 0.28
    delta_fluct: float = 0.0
    n_steps: int = 256
    direction: str = "ccw"
    fluct_mode: str = "constant"


@dataclass(frozen=True)
class RunSection:
    seed: int = 1
    output_dir: str = "out"
    d_mode: str = "paper"
    freq_convention: str = "angular"
    start: str = "lower"
    admissibility: str = "static"
    map_resolution: int = 64
    map_p_range_uw: tuple | None = None
    map_delta_range_over_omega_m: tuple | None = None
    mc_n_traj: int = 200
    mc_t_total_s: float | None = None
    dynamic_t_total_s: float = 0.05
    delta_sweep: bool = False
    e_n: bool = True


_RULES = {
    "physical": {
        "mass_ng": (float, _pos),
        "omega_m_khz": (float, _pos),
        "kappa_over_omega_m": (float, _pos),
        "lambda_nm": (float, _pos),
        "g_omega_khz_per_nm": (float, _finite),
        "g_kappa_khz_per_nm": (float, _finite),
        "temperature_mk": (float, _nonneg),
        "quality": (float, _pos),
    },
    "loop": {
        "p0_uw": (float, _finite),
        "delta0_over_omega_m": (float, _finite),
        "a0_uw": (float, _nonneg),
        "b0_over_omega_m": (float, _nonneg),
        "theta0_over_pi": (float, _finite),
        "delta_fluct": (float, ("> -1", lambda v: v > -1)),
        "n_steps": (int, (">= 16", lambda v: v >= 16)),
        "direction": (str, _choice(*(d.value for d in Direction))),
        "fluct_mode": (str, _choice(*(m.value for m in FluctMode))),
    },
    "run": {
        "seed": (int, _nonneg),
        "output_dir": (str, ("non-empty", lambda v: len(v) > 0)),
        "d_mode": (str, _choice(*(m.value for m in DMode))),
        "freq_convention": (str, _choice(*(c.value for c in FreqConvention))),
        "start": (str, _choice("upper", "lower")),
        "admissibility": (str, _choice("static", "dynamic")),
        "map_resolution": (int, (">= 16", lambda v: v >= 16)),
        "map_p_range_uw": ("range", ("lo <= hi, lo >= 0", lambda v: v[0] <= v[1] and v[0] >= 0)),
        "map_delta_range_over_omega_m": ("range", ("lo <= hi", lambda v: v[0] <= v[1])),
        "mc_n_traj": (int, (">= 2", lambda v: v >= 2)),
        "mc_t_total_s": ("opt_float", _pos),
        "dynamic_t_total_s": (float, _pos),
        "delta_sweep": (bool, _finite),
        "e_n": (bool, _finite),
    },
}

_SECTIONS = {"physical": PhysicalSection, "loop": LoopSection, "run": RunSection}


@dataclass(frozen=True)
class RunConfig:
    physical: PhysicalSection = field(default_factory=PhysicalSection)
    loop: LoopSection = field(default_factory=LoopSection)
    run: RunSection = field(default_factory=RunSection)

    def params(self) -> PhysicalParams:
        return PhysicalParams.from_quoted(**asdict(self.physical), freq_convention=self.run.freq_convention)

    def loop_spec(self, p: PhysicalParams | None = None) -> LoopSpec:
        p = p or self.params()
        lp = self.loop
        return LoopSpec(
            p0=lp.p0_uw / 1e6,
            delta0=lp.delta0_over_omega_m * p.omega_m,
            a0=lp.a0_uw / 1e6,
            b0=lp.b0_over_omega_m * p.omega_m,
            theta0=lp.theta0_over_pi * math.pi,
            delta_fluct=lp.delta_fluct,
            n_steps=lp.n_steps,
            direction=lp.direction,
            fluct_mode=lp.fluct_mode,
            seed=self.run.seed,
        )

    def with_overrides(self, section: str, **values) -> "RunConfig":
        """Copy with some keys replaced; values are validated like parsed input."""
        cur = asdict(getattr(self, section))
        cur.update(values)
        data = {name: asdict(getattr(self, name)) for name in _SECTIONS}
        data[section] = cur
        return _build(data)


def _coerce(section, key, value):
    kind, (desc, check) = _RULES[section][key]
    where = f"{section}.{key}"
    if kind in (float, "opt_float"):
        if value is None and kind == "opt_float":
            return None
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}", key)
        value = float(value)
        if not math.isfinite(value):
            raise ConfigError(f"{where}: must be finite", key)
    elif kind is int:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or float(value) != int(value):
            raise ConfigError(f"{where}: expected an integer, got {value!r}", key)
        value = int(value)
    elif kind is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}", key)
    elif kind is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}", key)
    elif kind == "range":
        if value is None:
            return None
        if (
            not isinstance(value, (list, tuple))
            or len(value) != 2
            or any(isinstance(x, bool) or not isinstance(x, (int, float)) or not math.isfinite(x) for x in value)
        ):
            raise ConfigError(f"{where}: expected [lo, hi], got {value!r}", key)
        value = (float(value[0]), float(value[1]))
    if not check(value):
        raise ConfigError(f"{where}: out of range ({desc}), got {value!r}", key)
    return value


def _build(data) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a JSON object")
    sections = {}
    for name in data:
        if name not in _SECTIONS:
            raise ConfigError(f"unknown section {name!r}", name)
    for name, cls in _SECTIONS.items():
        raw = data.get(name, {})
        if not isinstance(raw, dict):
            raise ConfigError(f"section {name!r} must be an object", name)
        known = {f.name for f in fields(cls)}
        for key in raw:
            if key not in known:
                raise ConfigError(f"unknown key {name}.{key}", key)
        sections[name] = cls(**{k: _coerce(name, k, v) for k, v in raw.items()})
    return RunConfig(**sections)


def parse_config(text: str) -> RunConfig:
    """Parse a JSON document into a validated :class:`RunConfig`."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON: {exc}") from exc
    return _build(data)


def serialize(cfg: RunConfig) -> str:
    out = {}
    for name in _SECTIONS:
        sec = asdict(getattr(cfg, name))
        out[name] = {k: list(v) if isinstance(v, tuple) else v for k, v in sec.items()}
    return json.dumps(out, indent=2, sort_keys=True) + "\n"
