"""Experiment configuration: INI-style sections ``problem``, ``study``, ``integrator``, ``output``.

Every key is optional and falls back to the default experiment; unknown
sections or keys are errors.  Keys are case-insensitive.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .expr import ExpressionError, resolve_initial_data
from .integrate import IntegratorConfig
from .mol import ProblemSpec

__all__ = ["ConfigError", "ExperimentConfig", "StudyConfig", "OutputConfig", "load_config", "parse_config", "default_config"]

FORMATS = ("csv", "json", "svg")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ProblemConfig:
    k1: float = 1.0
    k_minus1: float = 2.0
    kA: float = 0.1
    kB: float = 0.15
    kC: float = 0.2
    a0: str = "2 + cos(pi*x)"
    b0: str = "1 + 0.5*cos(2*pi*x)"
    c0: str = "0.5*(1 - x*(1 - x))"
    T: float = 1.0

    def to_spec(self) -> ProblemSpec:
        try:
            data = [resolve_initial_data(s) for s in (self.a0, self.b0, self.c0)]
            return ProblemSpec(self.k1, self.k_minus1, self.kA, self.kB, self.kC, *data, T=self.T)
        except (ExpressionError, ValueError) as exc:
            raise ConfigError(f"[problem] {exc}") from None


@dataclass(frozen=True)
class StudyConfig:
    Ns: tuple[int, ...] = (8, 16, 32, 64, 128)
    N_ref: int = 512
    times: tuple[float, ...] = (0.1, 0.25, 0.5, 1.0)
    convergence_time: float = 0.25
    consistency_times: tuple[float, ...] = (0.1, 0.25, 0.5)
    delta: float = 0.01


@dataclass(frozen=True)
class OutputConfig:
    directory: str = "rdmol-out"
    formats: tuple[str, ...] = ("csv", "json")


@dataclass(frozen=True)
class ExperimentConfig:
    problem: ProblemConfig = field(default_factory=ProblemConfig)
    study: StudyConfig = field(default_factory=StudyConfig)
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def to_dict(self) -> dict:
        return {
            name: {k: list(v) if isinstance(v, tuple) else v for k, v in dataclasses.asdict(getattr(self, name)).items()}
            for name in ("problem", "study", "integrator", "output")
        }


_SECTIONS = {"problem": ProblemConfig, "study": StudyConfig, "integrator": IntegratorConfig, "output": OutputConfig}


def _convert(raw: str, annotation: str, where: str):
    try:
        if annotation == "float":
            return float(raw)
        if annotation == "int":
            return int(raw)
        if annotation == "str":
            return raw.strip()
        items = [s.strip() for s in raw.split(",") if s.strip()]
        if annotation == "tuple[int, ...]":
            return tuple(int(s) for s in items)
        if annotation == "tuple[float, ...]":
            return tuple(float(s) for s in items)
        if annotation == "tuple[str, ...]":
            return tuple(items)
    except ValueError:
        raise ConfigError(f"{where}: cannot read {raw!r} as {annotation}") from None
    raise AssertionError(annotation)


def _validate(cfg: ExperimentConfig) -> ExperimentConfig:
    cfg.problem.to_spec()
    s = cfg.study
    if not s.Ns or any(N < 2 for N in s.Ns):
        raise ConfigError("[study] Ns must be grid sizes >= 2")
    if any(b <= a for a, b in zip(s.Ns, s.Ns[1:])):
        raise ConfigError("[study] Ns must be strictly increasing")
    if s.N_ref < 2:
        raise ConfigError("[study] N_ref must be >= 2")
    if not s.times or any(t <= 0 for t in s.times):
        raise ConfigError("[study] times must be positive")
    if max(s.times) > cfg.problem.T:
        raise ConfigError("[study] times must not exceed the final time T")
    if s.delta <= 0:
        raise ConfigError("[study] delta must be positive")
    bad = [f for f in cfg.output.formats if f not in FORMATS]
    if bad:
        raise ConfigError(f"[output] unknown formats {bad}; choose from {list(FORMATS)}")
    return cfg


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    parts = {}
    for section in parser.sections():
        cls = _SECTIONS.get(section.lower())
        if cls is None:
            raise ConfigError(f"{source}: unknown section [{section}]")
        fields = {f.name.lower(): f for f in dataclasses.fields(cls)}
        values = {}
        for key, raw in parser.items(section):
            f = fields.get(key.lower())
            if f is None:
                raise ConfigError(f"{source}: unknown key {key!r} in [{section}]")
            ann = f.type if isinstance(f.type, str) else f.type.__name__
            values[f.name] = _convert(raw, ann, f"{source} [{section}] {key}")
        try:
            parts[section.lower()] = cls(**values)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{source} [{section}]: {exc}") from None
    return _validate(ExperimentConfig(**parts))


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {str(path)!r}: {exc.strerror}") from None
    return parse_config(text, str(path))


def default_config() -> ExperimentConfig:
    return ExperimentConfig()
