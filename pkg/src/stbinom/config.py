"""Flat ``key = value`` run configuration.

One file covers the prior hyperparameters, the chain settings, the
simulation design and a few fit options. Keys are the dataclass field names;
``seed`` is shared by the chain and the simulation design. Lines starting
with ``#`` are comments and unknown keys are errors.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field, replace
from pathlib import Path

from .gibbs import ChainConfig
from .model import HyperParams
from .sim import SimDesign


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class FitOptions:
    """Knot placement and summary settings for the ``fit`` command.

    ``knot_grid_side > 0`` places a square grid of knots over the bounding
    box of the centroids; otherwise ``knots_per_surface`` K-means knots are
    used (one count per varying coefficient, or one count shared by all).
    """

    knots_per_surface: tuple[int, ...] = (25,)
    knot_seed: int = 0
    knot_grid_side: int = 0
    level: float = 0.95
    min_draws: int = 100

    def __post_init__(self):
        if not 0 < self.level < 1:
            raise ValueError("level must lie in (0, 1)")
        if self.knot_grid_side < 0:
            raise ValueError("knot_grid_side must be non-negative")


_SECTIONS = {"priors": HyperParams, "chain": ChainConfig, "design": SimDesign, "fit": FitOptions}


def _key_targets() -> dict[str, list[str]]:
    keys: dict[str, list[str]] = {}
    for section, cls in _SECTIONS.items():
        for f in dataclasses.fields(cls):
            keys.setdefault(f.name, []).append(section)
    return keys


KEYS = _key_targets()


def _parse_scalar(text: str, like):
    text = text.strip()
    if isinstance(like, bool):
        low = text.lower()
        if low in ("true", "yes", "1"):
            return True
        if low in ("false", "no", "0"):
            return False
        raise ValueError(f"expected a boolean, got {text!r}")
    if isinstance(like, int):
        return int(text)
    if isinstance(like, float):
        return float(text)
    return text


def _parse_value(text: str, default):
    if isinstance(default, tuple):
        like = default[0] if default else 0
        return tuple(_parse_scalar(v, like) for v in text.split(",") if v.strip())
    if "," in text and isinstance(default, (int, float)) and not isinstance(default, bool):
        # per-coefficient overrides such as a_sigma = 2, 3
        return tuple(_parse_scalar(v, default) for v in text.split(","))
    return _parse_scalar(text, default)


def _format_value(v) -> str:
    if isinstance(v, tuple):
        return ", ".join(_format_value(x) for x in v)
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass(frozen=True)
class RunConfig:
    priors: HyperParams = field(default_factory=HyperParams)
    chain: ChainConfig = field(default_factory=ChainConfig)
    design: SimDesign = field(default_factory=SimDesign)
    fit: FitOptions = field(default_factory=FitOptions)

    def with_values(self, values: dict[str, str]) -> "RunConfig":
        """Apply textual ``key -> value`` overrides, validating every key."""
        updates: dict[str, dict] = {s: {} for s in _SECTIONS}
        for key, text in values.items():
            if key not in KEYS:
                raise ConfigError(f"unknown configuration key {key!r}")
            for section in KEYS[key]:
                default = getattr(getattr(self, section), key)
                try:
                    updates[section][key] = _parse_value(text, default)
                except ValueError as exc:
                    raise ConfigError(f"bad value for {key!r}: {exc}") from exc
        try:
            return RunConfig(**{s: replace(getattr(self, s), **updates[s]) for s in _SECTIONS})
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def lines(self) -> list[str]:
        """Every key with its resolved value, sorted; re-readable by :func:`load_config`."""
        out = {}
        for section in _SECTIONS:
            obj = getattr(self, section)
            for f in dataclasses.fields(obj):
                out[f.name] = _format_value(getattr(obj, f.name))
        return [f"{k} = {out[k]}" for k in sorted(out)]

    def text(self) -> str:
        return "\n".join(self.lines()) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.text().encode()).hexdigest()


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown configuration key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        values[key] = value
    return values


def load_config(path=None, overrides: dict[str, str] | None = None) -> RunConfig:
    """Defaults, then the file at ``path``, then ``overrides``."""
    values: dict[str, str] = {}
    if path is not None:
        p = Path(path)
        values.update(parse_config_text(p.read_text(encoding="utf-8"), str(p)))
    values.update(overrides or {})
    return RunConfig().with_values(values)
