"""Scenario configuration: flat ``key = value`` files plus command-line overrides.

All inputs are SI. ``detuning`` is angular (rad/s), ``mu`` is in 1/(s T),
``delta_b0``, ``b_mean`` and ``b_true`` are in tesla.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from pathlib import Path

from .constants import BOHR_MAGNETON
from .filter import TRUTH_MODES, FilterConfig
from .model import EffectiveCouplings, PhysicalParams, derive_couplings

PHYSICAL_KEYS = (
    "wavelength",
    "dipole_moment",
    "linewidth",
    "detuning",
    "beam_area",
    "photon_flux",
    "atom_number",
    "magnetic_moment",
)
EFFECTIVE_KEYS = ("kappa_sq", "mu", "eta")


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, source: str | None = None):
        self.line = line
        self.source = source
        where = ""
        if source and line is not None:
            where = f"{source}:{line}: "
        elif line is not None:
            where = f"line {line}: "
        elif source:
            where = f"{source}: "
        super().__init__(where + message)


def _bool(text: str) -> bool:
    v = text.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _optional(conv):
    def parse(text):
        if isinstance(text, str) and text.strip().lower() in ("", "none"):
            return None
        return conv(text)

    return parse


def _truth(text: str) -> str:
    if text not in TRUTH_MODES:
        raise ValueError(f"expected one of {', '.join(TRUTH_MODES)}")
    return text


def _int(text) -> int:
    value = float(text)
    if not value.is_integer():
        raise ValueError(f"not an integer: {text!r}")
    return int(value)


@dataclass
class ScenarioConfig:
    """Fully resolved scenario. Field order is the order echoed into output headers."""

    wavelength: float = 852e-9
    dipole_moment: float = 2.61e-29
    linewidth: float = 3.1e7
    detuning: float = 2 * math.pi * 1e9
    beam_area: float = 2e-6
    photon_flux: float = 5e12
    atom_number: float = 2e12
    magnetic_moment: float = BOHR_MAGNETON
    kappa_sq: float | None = None
    mu: float | None = None
    eta: float | None = None
    delta_b0: float = 1e-12
    b_mean: float = 0.0
    r: float = 1.0
    tau: float = 1e-8
    t_final: float = 1e-2
    decay: bool = True
    sg_time: float | None = None
    truth: str = "ground-truth"
    b_true: float | None = None
    seed: int = 0
    n: int = 100
    workers: int = 1
    n_records: int = 200
    record_stride: int | None = None
    out: str | None = None
    source: str = "physical"

    def physical(self) -> PhysicalParams:
        return PhysicalParams(
            **{k: getattr(self, k) for k in PHYSICAL_KEYS}, delta_b0=self.delta_b0, r=self.r
        )

    def couplings(self) -> EffectiveCouplings:
        if self.source == "effective":
            return EffectiveCouplings.from_kappa_sq(self.kappa_sq, self.mu, self.eta)
        return derive_couplings(self.physical())

    def filter_config(self, **changes) -> FilterConfig:
        kw = dict(
            couplings=self.couplings(),
            tau=self.tau,
            t_final=self.t_final,
            decay=self.decay,
            r=self.r,
            delta_b0=self.delta_b0,
            b_mean=self.b_mean,
            sg_time=self.sg_time,
            truth_mode=self.truth,
            b_true=self.b_true,
            seed=self.seed,
            n_records=self.n_records,
            record_stride=self.record_stride,
        )
        kw.update(changes)
        return FilterConfig(**kw)

    def items(self):
        """Resolved ``(key, value)`` pairs that determine the results.

        The unused parameter source, the output path and the worker count
        are left out.
        """
        skip = PHYSICAL_KEYS if self.source == "effective" else EFFECTIVE_KEYS
        for f in fields(self):
            if f.name in skip or f.name in ("out", "workers"):
                continue
            yield f.name, getattr(self, f.name)


CONVERTERS = {
    **{k: float for k in PHYSICAL_KEYS},
    **{k: float for k in EFFECTIVE_KEYS},
    "delta_b0": float,
    "b_mean": float,
    "r": float,
    "tau": float,
    "t_final": float,
    "decay": _bool,
    "sg_time": _optional(float),
    "truth": _truth,
    "b_true": _optional(float),
    "seed": _int,
    "n": _int,
    "workers": _int,
    "n_records": _int,
    "record_stride": _optional(_int),
    "out": _optional(str),
}

KEYS = tuple(CONVERTERS)


def read_config_file(path) -> dict:
    """Parse a ``key = value`` file into ``{key: (raw value, line number)}``."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", source=str(path)) from exc
    entries = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno, str(path))
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in CONVERTERS:
            raise ConfigError(f"unknown key {key!r}", lineno, str(path))
        if key in entries:
            raise ConfigError(f"duplicate key {key!r}", lineno, str(path))
        entries[key] = (value, lineno)
    return entries


def parse_config(path=None, overrides: dict | None = None) -> ScenarioConfig:
    """Resolve a scenario from an optional file and flag overrides.

    ``overrides`` maps keys to already-typed values (``None`` means unset).
    Flags win over file values. Physical and effective parameter sources
    are mutually exclusive; effective keys missing from an effective
    configuration take the values derived from the default physical
    scenario.
    """
    values = {}
    origin = {}
    src = str(path) if path is not None else None
    if path is not None:
        for key, (raw, lineno) in read_config_file(path).items():
            try:
                values[key] = CONVERTERS[key](raw)
            except ValueError as exc:
                raise ConfigError(f"bad value for {key!r}: {exc}", lineno, src) from None
            origin[key] = f"line {lineno}"
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in CONVERTERS:
            raise ConfigError(f"unknown key {key!r}")
        values[key] = value
        origin[key] = "--" + key.replace("_", "-")

    phys = [k for k in PHYSICAL_KEYS if k in values]
    eff = [k for k in EFFECTIVE_KEYS if k in values]
    if phys and eff:
        a, b = phys[0], eff[0]
        line = None
        for k in (a, b):
            o = origin[k]
            if o.startswith("line "):
                line = max(line or 0, int(o[5:]))
        raise ConfigError(
            f"conflicting parameter sources: physical {a!r} ({origin[a]}) "
            f"and effective {b!r} ({origin[b]})",
            line,
            src,
        )

    cfg = ScenarioConfig(**values)
    if eff:
        cfg.source = "effective"
        defaults = derive_couplings(PhysicalParams())
        if cfg.kappa_sq is None:
            cfg.kappa_sq = defaults.kappa_sq
        if cfg.mu is None:
            cfg.mu = defaults.mu
        if cfg.eta is None:
            cfg.eta = defaults.eta
    try:
        cfg.couplings()
        if cfg.n < 1 or cfg.workers < 1:
            raise ValueError("n and workers must be positive")
    except ValueError as exc:
        raise ConfigError(str(exc), source=src) from None
    return cfg
