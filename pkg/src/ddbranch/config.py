"""Run configuration: an INI-style document with one flat section per block.

Example::

    [model]
    family = ricker
    rho = 2.0
    base = poisson

    [experiment]
    k_grid = 1024, 4096, 16384, 65536
    replicates = 2000

Every key has a default, so an empty document is valid.  Errors name the
offending ``section.key`` and, when it came from the text, its line.
"""

from __future__ import annotations

import configparser
import math
import re
from dataclasses import dataclass, field, fields, replace
from typing import Any, Optional

from .errors import ConfigError, DomainError
from .offspring import Family, OffspringModel, make_model

DEFAULT_K_GRID = tuple(2**e for e in range(10, 21, 2))


def _int(text: str) -> int:
    text = text.strip().replace("_", "")
    m = re.fullmatch(r"(\d+)\s*(?:\*\*|\^)\s*(\d+)", text)
    if m:
        return int(m.group(1)) ** int(m.group(2))
    try:
        return int(text)
    except ValueError:
        # accept 1e4-style integers
        value = float(text)
        if not value.is_integer():
            raise ValueError(f"{text!r} is not an integer") from None
        return int(value)


def _float(text: str) -> float:
    text = text.strip()
    m = re.fullmatch(r"([-+]?\d+)\s*/\s*(\d+)", text)
    if m:
        return int(m.group(1)) / int(m.group(2))
    return float(text)


def _optional_int(text: str) -> Optional[int]:
    return None if text.strip().lower() in ("", "none", "auto") else _int(text)


def _optional_str(text: str) -> Optional[str]:
    text = text.strip()
    return None if text.lower() in ("", "none") else text


def _split(text: str) -> list[str]:
    return [p for p in re.split(r"[,\s]+", text.strip()) if p]


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(_int(p) for p in _split(text))


def _float_list(text: str) -> tuple[float, ...]:
    return tuple(_float(p) for p in _split(text))


def _render(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(_render(v) for v in value)
    return str(value)


@dataclass(frozen=True)
class ModelBlock:
    family: str = field(default="geometric", metadata={"parse": str.strip})
    rho: float = field(default=2.0, metadata={"parse": _float})
    base: Optional[str] = field(default=None, metadata={"parse": _optional_str})

    def check(self, err):
        if self.family not in {f.value for f in Family}:
            err("family", f"unknown family {self.family!r}; choose from "
                f"{sorted(f.value for f in Family)}")
        if not self.rho > 1 or not math.isfinite(self.rho):
            err("rho", f"rho > 1 required, got {self.rho!r}")

    def build(self) -> OffspringModel:
        params = {} if self.base is None else {"base": self.base}
        return make_model(self.family, self.rho, **params)


@dataclass(frozen=True)
class ConjugacyBlock:
    x_max: float = field(default=4.0, metadata={"parse": _float})
    step: float = field(default=0.01, metadata={"parse": _float})
    tol: float = field(default=1e-10, metadata={"parse": _float})

    def check(self, err):
        if not self.tol > 0:
            err("tol", f"tol > 0 required, got {self.tol!r}")
        if not self.x_max > 0:
            err("x_max", f"x_max > 0 required, got {self.x_max!r}")
        if not 0 < self.step <= self.x_max:
            err("step", f"step must lie in (0, x_max], got {self.step!r}")


@dataclass(frozen=True)
class SimulateBlock:
    K: int = field(default=10_000, metadata={"parse": _int})
    steps: Optional[int] = field(default=None, metadata={"parse": _optional_int})
    replicates: int = field(default=1, metadata={"parse": _int})
    seed: int = field(default=0, metadata={"parse": _int})
    population_cap: int = field(default=10**8, metadata={"parse": _int})
    z0: int = field(default=1, metadata={"parse": _int})

    def check(self, err):
        if self.K < 2:
            err("K", f"K >= 2 required, got {self.K}")
        if self.steps is not None and self.steps < 1:
            err("steps", f"steps >= 1 required, got {self.steps}")
        if self.replicates < 1:
            err("replicates", f"replicates >= 1 required, got {self.replicates}")
        if self.seed < 0:
            err("seed", "seed must be non-negative")
        if self.population_cap < 1:
            err("population_cap", "population_cap must be positive")
        if self.z0 < 1:
            err("z0", f"z0 >= 1 required, got {self.z0}")


@dataclass(frozen=True)
class ExperimentBlock:
    k_grid: tuple = field(default=DEFAULT_K_GRID, metadata={"parse": _int_list})
    replicates: int = field(default=2000, metadata={"parse": _int})
    c: float = field(default=5 / 8, metadata={"parse": _float})
    quantile_levels: tuple = field(default=(0.5, 0.9), metadata={"parse": _float_list})
    master_seed: int = field(default=0, metadata={"parse": _int})
    output_dir: str = field(default="results", metadata={"parse": str.strip})
    extra_generations: int = field(default=0, metadata={"parse": _int})
    n_jobs: int = field(default=1, metadata={"parse": _int})

    def check(self, err):
        if not self.k_grid:
            err("k_grid", "k_grid must not be empty")
        if any(k < 2 for k in self.k_grid):
            err("k_grid", "every K must be at least 2")
        if any(b <= a for a, b in zip(self.k_grid, self.k_grid[1:])):
            err("k_grid", "k_grid must be strictly ascending")
        if self.replicates < 1:
            err("replicates", f"replicates >= 1 required, got {self.replicates}")
        if not 0.5 < self.c < 1:
            err("c", f"c must lie in the open interval (0.5, 1), got {self.c!r}")
        if not self.quantile_levels or any(not 0 < q < 1 for q in self.quantile_levels):
            err("quantile_levels", "quantile levels must lie in (0, 1)")
        if self.master_seed < 0:
            err("master_seed", "master_seed must be non-negative")
        if self.extra_generations < 0:
            err("extra_generations", "extra_generations must be non-negative")
        if self.n_jobs == 0:
            err("n_jobs", "n_jobs must be nonzero (-1 uses every core)")


@dataclass(frozen=True)
class ValidateBlock:
    grid_max: float = field(default=3.0, metadata={"parse": _float})
    grid_points: int = field(default=61, metadata={"parse": _int})
    t_max: int = field(default=50, metadata={"parse": _int})

    def check(self, err):
        if not self.grid_max > 0:
            err("grid_max", "grid_max must be positive")
        if self.grid_points < 2:
            err("grid_points", "grid_points must be at least 2")
        if self.t_max < 1:
            err("t_max", "t_max must be at least 1")


@dataclass(frozen=True)
class RunConfig:
    model: ModelBlock = field(default_factory=ModelBlock)
    conjugacy: ConjugacyBlock = field(default_factory=ConjugacyBlock)
    simulate: SimulateBlock = field(default_factory=SimulateBlock)
    experiment: ExperimentBlock = field(default_factory=ExperimentBlock)
    validate: ValidateBlock = field(default_factory=ValidateBlock)

    def build_model(self) -> OffspringModel:
        try:
            return self.model.build()
        except DomainError as exc:
            raise ConfigError(str(exc), key="model") from None

    def with_overrides(self, overrides) -> "RunConfig":
        """Apply ``section.key=value`` strings (or ``(dotted, value)`` pairs)."""
        updates: dict[str, dict[str, Any]] = {}
        for item in overrides:
            if isinstance(item, str):
                dotted, sep, value = item.partition("=")
                if not sep:
                    raise ConfigError(f"override {item!r} is not of the form section.key=value")
            else:
                dotted, value = item
            section, dot, key = dotted.strip().partition(".")
            if not dot:
                raise ConfigError(f"override key {dotted!r} needs a section prefix")
            block = _block(self, section, dotted, None)
            spec = _field(block, key, dotted, None)
            updates.setdefault(section, {})[key] = _convert(spec, value, dotted, None)
        cfg = self
        for section, values in updates.items():
            cfg = replace(cfg, **{section: replace(getattr(cfg, section), **values)})
        return validate(cfg)


SECTIONS = tuple(f.name for f in fields(RunConfig))


def _block(cfg, section, key, line):
    if section not in SECTIONS:
        raise ConfigError(f"unknown section {section!r}; expected one of {list(SECTIONS)}",
                          key=key, line=line)
    return getattr(cfg, section)


def _field(block, key, dotted, line):
    for f in fields(block):
        if f.name == key:
            return f
    raise ConfigError(f"unknown key {key!r}; expected one of {[f.name for f in fields(block)]}",
                      key=dotted, line=line)


def _convert(spec, value, dotted, line):
    if not isinstance(value, str):
        return value
    try:
        return spec.metadata["parse"](value)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"cannot read {value!r} for {spec.name}: {exc}", key=dotted,
                          line=line) from None


def validate(cfg: RunConfig, lines: Optional[dict] = None) -> RunConfig:
    """Check every block's invariants; raises :class:`ConfigError`."""
    lines = lines or {}
    for section in SECTIONS:
        def err(key, message, section=section):
            dotted = f"{section}.{key}"
            raise ConfigError(message, key=dotted, line=lines.get(dotted))
        getattr(cfg, section).check(err)
    return cfg


def _key_lines(text: str) -> dict[str, int]:
    # configparser drops positions; recover them for error messages
    out, section = {}, None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        m = re.fullmatch(r"\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip()
            out.setdefault(section, lineno)
        elif section is not None:
            m = re.match(r"([^=:]+?)\s*[=:]", line)
            if m:
                out.setdefault(f"{section}.{m.group(1).strip()}", lineno)
    return out


def parse_config(text: str) -> RunConfig:
    """Parse and validate a configuration document, applying defaults."""
    parser = configparser.ConfigParser(
        interpolation=None, inline_comment_prefixes=("#", ";"), default_section="\x00"
    )
    parser.optionxform = str  # keys are case sensitive (K)
    try:
        parser.read_string(text)
    except configparser.DuplicateOptionError as exc:
        raise ConfigError(f"duplicate key {exc.option!r}", key=f"{exc.section}.{exc.option}",
                          line=exc.lineno) from None
    except configparser.DuplicateSectionError as exc:
        raise ConfigError(f"duplicate section {exc.section!r}", key=exc.section,
                          line=exc.lineno) from None
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError("key outside any [section]", line=exc.lineno) from None
    except configparser.Error as exc:
        raise ConfigError(f"malformed configuration: {exc.message}") from None
    lines = _key_lines(text)
    cfg = RunConfig()
    for section in parser.sections():
        block = _block(cfg, section, section, lines.get(section))
        values = {}
        for key, raw in parser.items(section):
            dotted = f"{section}.{key}"
            spec = _field(block, key, dotted, lines.get(dotted))
            values[key] = _convert(spec, raw, dotted, lines.get(dotted))
        cfg = replace(cfg, **{section: replace(block, **values)})
    return validate(cfg, lines)


def load_config(path) -> RunConfig:
    with open(path) as fh:
        return parse_config(fh.read())


def render_config(cfg: RunConfig) -> str:
    """Serialize every key; ``parse_config(render_config(c)) == c``."""
    out = []
    for section in SECTIONS:
        block = getattr(cfg, section)
        out.append(f"[{section}]")
        out.extend(f"{f.name} = {_render(getattr(block, f.name))}" for f in fields(block))
        out.append("")
    return "\n".join(out)
