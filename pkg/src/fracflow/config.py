"""Flat ``key = value`` experiment configuration."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace
from typing import Optional

from .kernel import FlowParams, QuadratureConfig


class ConfigError(ValueError):
    """Invalid configuration; the message names the field and its expected range."""

    def __init__(self, key: str, value, expected: str):
        super().__init__(f"invalid config field '{key}' = {value!r}: expected {expected}")
        self.key = key


# key -> help text, in serialization order
CONFIG_KEYS = {
    "experiment": "registered experiment name (see `fracflow list`)",
    "d": "ambient dimension, integer >= 2 (grids are planar: 2)",
    "s": "fractional order, 0 < s < 1",
    "L": "Lipschitz scale of the modulus family, L >= 0",
    "n": "grid points per axis; 0 selects the experiment default",
    "inner_refinement": "sub-cells per axis near the kernel singularity, integer >= 1",
    "pv_cutoff": "principal-value pairing radius (length) or none for two cells",
    "truncation_radius": "kernel truncation radius R_max (length) or none for exact lattice sums",
    "cfl": "Courant number of the level-set scheme, 0 < cfl <= 1.2",
    "record_every": "steps between recorded states, integer >= 1",
    "seed": "seed of the xorshift64* generator, integer >= 0",
    "trials": "randomized trials; 0 selects the experiment default",
    "output_dir": "directory for CSV files and the report",
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything that determines an experiment run."""

    experiment: str = "half-space-curvature"
    d: int = 2
    s: float = 0.5
    L: float = 0.0
    n: int = 0
    inner_refinement: int = 8
    pv_cutoff: Optional[float] = None
    truncation_radius: Optional[float] = None
    cfl: float = 0.5
    record_every: int = 5
    seed: int = 1
    trials: int = 0
    output_dir: str = "fracflow-out"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not isinstance(self.experiment, str) or not self.experiment:
            raise ConfigError("experiment", self.experiment, "a non-empty name")
        if not _is_int(self.d) or self.d < 2:
            raise ConfigError("d", self.d, "an integer >= 2")
        if not (isinstance(self.s, (int, float)) and 0.0 < self.s < 1.0):
            raise ConfigError("s", self.s, "a number in the open range (0, 1)")
        if not (isinstance(self.L, (int, float)) and math.isfinite(self.L) and self.L >= 0):
            raise ConfigError("L", self.L, "a finite number >= 0")
        if not _is_int(self.n) or self.n < 0:
            raise ConfigError("n", self.n, "an integer >= 0")
        if not _is_int(self.inner_refinement) or self.inner_refinement < 1:
            raise ConfigError("inner_refinement", self.inner_refinement, "an integer >= 1")
        for key in ("pv_cutoff", "truncation_radius"):
            v = getattr(self, key)
            if v is not None and not (isinstance(v, (int, float)) and v > 0 and math.isfinite(v)):
                raise ConfigError(key, v, "a positive length or none")
        if not (isinstance(self.cfl, (int, float)) and 0.0 < self.cfl <= 1.2):
            raise ConfigError("cfl", self.cfl, "a number in the range (0, 1.2]")
        if not _is_int(self.record_every) or self.record_every < 1:
            raise ConfigError("record_every", self.record_every, "an integer >= 1")
        if not _is_int(self.seed) or self.seed < 0:
            raise ConfigError("seed", self.seed, "an integer >= 0")
        if not _is_int(self.trials) or self.trials < 0:
            raise ConfigError("trials", self.trials, "an integer >= 0")

    @property
    def params(self) -> FlowParams:
        return FlowParams(int(self.d), float(self.s), float(self.L))

    @property
    def quadrature(self) -> QuadratureConfig:
        try:
            return QuadratureConfig(self.pv_cutoff, self.truncation_radius, int(self.inner_refinement))
        except ValueError as exc:
            raise ConfigError("pv_cutoff", self.pv_cutoff, str(exc)) from None

    def with_overrides(self, **kw) -> "ExperimentConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})

    def dumps(self) -> str:
        """Serialize as ``key = value`` lines; :func:`loads` inverts it exactly."""
        lines = ["# fracflow experiment config"]
        for key in CONFIG_KEYS:
            lines.append(f"{key} = {_format(getattr(self, key))}")
        return "\n".join(lines) + "\n"


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _format(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, float):
        return repr(v)
    return str(v)


_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _parse_value(key: str, text: str):
    kind = _TYPES[key]
    if kind == "str":
        return text
    if text.lower() == "none":
        if "Optional" in kind:
            return None
        raise ConfigError(key, text, "a value, not none")
    try:
        if kind == "int":
            return int(text)
        return float(text)
    except ValueError:
        raise ConfigError(key, text, "an integer" if kind == "int" else "a number") from None


def parse_assignment(line: str):
    """Split ``key = value`` and convert the value to the field's type."""
    if "=" not in line:
        raise ConfigError(line.strip(), None, "a 'key = value' line")
    key, text = (p.strip() for p in line.split("=", 1))
    if key not in CONFIG_KEYS:
        raise ConfigError(key, text, f"one of {', '.join(CONFIG_KEYS)}")
    return key, _parse_value(key, text)


def loads(text: str, base: Optional[ExperimentConfig] = None) -> ExperimentConfig:
    """Parse a config file body; ``#`` starts a comment, blank lines are ignored."""
    values = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, val = parse_assignment(line)
        values[key] = val
    return replace(base or ExperimentConfig(), **values)


def load(path: str, base: Optional[ExperimentConfig] = None) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return loads(fh.read(), base)
