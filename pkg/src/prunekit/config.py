"""Run configuration for the command-line tool.

A run is described by an INI file with one section per component::

    [train]
    reg_lambda = 0.01

    [anneal]
    iterations = 50000
    restarts = 3

    [run]
    max_prune_fraction = 0.25

Every key has a default (the dataclass defaults below), unknown sections and
keys are rejected, and ``none`` clears an optional value. Environment
variables named ``PRUNEKIT_<SECTION>_<KEY>`` override the file, and explicit
command-line flags override both.
"""

from __future__ import annotations

import configparser
import dataclasses
import os
import typing
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping, Optional, Union

from .data_io import SyntheticSpec
from .errors import ConfigError
from .influence import IhvpConfig
from .pruner import AnnealConfig
from .trainer import TrainConfig

ENV_PREFIX = "PRUNEKIT_"


@dataclass(frozen=True)
class PathsConfig:
    data: Optional[str] = None
    test: Optional[str] = None
    out: Optional[str] = None


@dataclass(frozen=True)
class RunOptions:
    """Mode flags shared by the subcommands.

    ``max_prune_fraction`` caps the generalization-guaranteed search (see
    :func:`prunekit.pruner.prune_generalization`); ``1.0`` disables the cap.
    """

    epsilon: Optional[float] = None
    keep_m: Optional[int] = None
    max_prune_fraction: float = 0.25
    hessian_mode: str = "dense"
    test_fraction: float = 0.2
    plots: bool = True


@dataclass(frozen=True)
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    ihvp: IhvpConfig = field(default_factory=IhvpConfig)
    anneal: AnnealConfig = field(default_factory=AnnealConfig)
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)
    paths: PathsConfig = field(default_factory=PathsConfig)
    run: RunOptions = field(default_factory=RunOptions)

    def check(self) -> None:
        self.anneal.check()
        self.ihvp.check()
        self.synthetic.check()
        if not self.train.reg_lambda >= 0:
            raise ConfigError("train.reg_lambda must be >= 0")
        if not 0.0 <= self.run.max_prune_fraction <= 1.0:
            raise ConfigError("run.max_prune_fraction must be in [0, 1]")
        if not 0.0 < self.run.test_fraction < 1.0:
            raise ConfigError("run.test_fraction must be in (0, 1)")
        if self.run.hessian_mode not in ("dense", "implicit"):
            raise ConfigError(f"run.hessian_mode must be 'dense' or 'implicit', got {self.run.hessian_mode!r}")

    def with_overrides(self, overrides: Mapping[str, Any]) -> "RunConfig":
        """Apply ``{"section.key": value}`` overrides; ``None`` values are skipped."""
        cfg = self
        for dotted, value in overrides.items():
            if value is None:
                continue
            section, key = _split(dotted)
            sub = getattr(cfg, section)
            cfg = replace(cfg, **{section: replace(sub, **{key: _coerce(type(sub), key, value)})})
        return cfg

    def to_dict(self) -> dict:
        return {f.name: dataclasses.asdict(getattr(self, f.name)) for f in fields(self)}


SECTIONS = {f.name: f for f in fields(RunConfig)}


def _section_type(name: str) -> type:
    return typing.get_type_hints(RunConfig)[name]


def _split(dotted: str) -> tuple[str, str]:
    section, _, key = dotted.partition(".")
    if section not in SECTIONS:
        raise ConfigError(f"unknown config section {section!r}")
    known = {f.name for f in fields(_section_type(section))}
    if key not in known:
        raise ConfigError(f"unknown key {key!r} in section [{section}]; known: {', '.join(sorted(known))}")
    return section, key


def _coerce(cls: type, key: str, value: Any) -> Any:
    """Convert ``value`` to the annotated type of ``cls.key``."""
    hint = typing.get_type_hints(cls)[key]
    optional = False
    if typing.get_origin(hint) is Union:
        args = [a for a in typing.get_args(hint) if a is not type(None)]
        optional = len(args) < len(typing.get_args(hint))
        hint = args[0]
    if isinstance(value, str):
        text = value.strip()
        if text.lower() in ("none", "null", ""):
            if optional:
                return None
            raise ConfigError(f"{key} cannot be empty")
        try:
            if hint is bool:
                lowered = text.lower()
                if lowered in ("1", "true", "yes", "on"):
                    return True
                if lowered in ("0", "false", "no", "off"):
                    return False
                raise ValueError(text)
            if hint is int:
                return int(text.replace("_", ""))
            if hint is float:
                return float(text)
        except ValueError:
            raise ConfigError(f"{key}: cannot parse {value!r} as {hint.__name__}") from None
        return text
    if hint is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if hint is not Any and not isinstance(value, hint):
        raise ConfigError(f"{key}: expected {hint.__name__}, got {type(value).__name__}")
    return value


def _file_overrides(path: Union[str, Path]) -> dict:
    parser = configparser.ConfigParser(interpolation=None, default_section="__unused__")
    parser.optionxform = str
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except (configparser.Error, UnicodeDecodeError) as exc:
        raise ConfigError(f"malformed config file {path}: {exc}") from None
    out = {}
    for section in parser.sections():
        for key, value in parser.items(section):
            dotted = f"{section}.{key}"
            _split(dotted)
            out[dotted] = value
    return out


def _env_overrides(environ: Mapping[str, str]) -> dict:
    out = {}
    for name, value in environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        rest = name[len(ENV_PREFIX):].lower()
        section = next((s for s in SECTIONS if rest.startswith(s + "_")), None)
        if section is None:
            raise ConfigError(f"environment variable {name} names no config section")
        dotted = f"{section}.{rest[len(section) + 1:]}"
        _split(dotted)
        out[dotted] = value
    return out


def load_config(
    path: Optional[Union[str, Path]] = None,
    environ: Optional[Mapping[str, str]] = None,
    overrides: Optional[Mapping[str, Any]] = None,
    sources: Optional[set] = None,
) -> RunConfig:
    """Defaults, then the file, then the environment, then ``overrides``.

    When ``sources`` is a set it receives the dotted keys that were set
    explicitly by any of the three layers.
    """
    layers = []
    if path is not None:
        layers.append(_file_overrides(path))
    layers.append(_env_overrides(os.environ if environ is None else environ))
    if overrides:
        layers.append({k: v for k, v in overrides.items() if v is not None})
    cfg = RunConfig()
    for layer in layers:
        cfg = cfg.with_overrides(layer)
        if sources is not None:
            sources.update(layer)
    cfg.check()
    return cfg


def dump_config(cfg: RunConfig) -> str:
    """INI text that :func:`load_config` reads back to an equal configuration."""
    lines = []
    for section, values in cfg.to_dict().items():
        lines.append(f"[{section}]")
        for key, value in values.items():
            lines.append(f"{key} = {'none' if value is None else value}")
        lines.append("")
    return "\n".join(lines)
