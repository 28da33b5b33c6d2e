"""Run configuration files.

A run config is an INI file with the sections ``system``, ``data``,
``train``, ``weights``, ``eval`` and ``paths``.  Each line is
``key = value``; values are Python literals (numbers, strings, lists,
tuples, ``None``, ``True``/``False``) and bare words are read as strings.
Unknown sections and keys are rejected.
"""
from __future__ import annotations

import ast
import configparser
import math
import os
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from typing import Any, Optional

from .systems import DEFAULT_BOXES, DEFAULT_WINDOWS, Box, SystemSpec
from .training import LossWeights, TrainConfig

OUTPUT_ROOT_ENV = "SYMPLIFT_OUTPUT_ROOT"


class ConfigError(ValueError):
    """Invalid or unknown configuration entries."""


@dataclass
class DataConfig:
    num_trajectories: int = 10
    seed: int = 0
    T: float = 10.0
    dt: float = 0.1
    num_points: Optional[int] = None
    initial_condition: str = "random"
    bounds: Optional[list] = None
    energy_window: Optional[list] = None
    train_fraction: float = 1.0
    newton_tol: float = 1e-10
    newton_max_iter: int = 50
    jacobian_mode: str = "analytic"
    normalize: bool = False

    def validate(self) -> None:
        if self.num_trajectories < 1:
            raise ConfigError("data.num_trajectories must be positive")
        if not (self.T > 0 and self.dt > 0):
            raise ConfigError("data.T and data.dt must be positive")
        if self.num_points is not None and self.num_points < 2:
            raise ConfigError("data.num_points must be at least 2")
        if self.initial_condition not in ("random", "sech"):
            raise ConfigError("data.initial_condition must be 'random' or 'sech'")
        if not 0 < self.train_fraction <= 1:
            raise ConfigError("data.train_fraction must lie in (0, 1]")
        if self.jacobian_mode not in ("analytic", "finite-difference"):
            raise ConfigError("data.jacobian_mode must be 'analytic' or 'finite-difference'")

    def step(self) -> float:
        """Sample spacing of the generated trajectories."""
        return self.T / (self.num_points - 1) if self.num_points else self.dt

    def box(self, kind: str) -> Box:
        if self.bounds is None:
            return DEFAULT_BOXES[kind]
        lower, upper = self.bounds
        return Box(tuple(map(float, lower)), tuple(map(float, upper)))

    def window(self, kind: str) -> tuple[float, float]:
        if self.energy_window is None:
            return DEFAULT_WINDOWS[kind]
        lo, hi = self.energy_window
        return (-math.inf if lo is None else float(lo), math.inf if hi is None else float(hi))


@dataclass
class EvalConfig:
    num_trajectories: int = 3
    seed: Optional[int] = None
    horizon: Optional[float] = None
    dt: Optional[float] = None
    newton_tol: float = 1e-8
    trajectory: Optional[str] = None

    def validate(self) -> None:
        if self.num_trajectories < 0:
            raise ConfigError("eval.num_trajectories must be nonnegative")
        if self.horizon is not None and self.horizon < 0:
            raise ConfigError("eval.horizon must be nonnegative")
        if self.dt is not None and self.dt <= 0:
            raise ConfigError("eval.dt must be positive")


@dataclass
class PathsConfig:
    """File locations.  Relative entries live in the run directory.

    The run directory is ``root`` when given, otherwise
    ``$SYMPLIFT_OUTPUT_ROOT/<run name>`` (``./runs/<run name>`` when the
    variable is unset).
    """

    root: Optional[str] = None
    dataset: str = "dataset"
    bundle: str = "bundle.json"
    history: str = "history.csv"
    report: str = "report"

    def run_dir(self, name: str) -> str:
        if self.root:
            return self.root
        return os.path.join(os.environ.get(OUTPUT_ROOT_ENV) or "runs", name)

    def resolve(self, key: str, name: str) -> str:
        p = getattr(self, key)
        return p if os.path.isabs(p) else os.path.join(self.run_dir(name), p)


@dataclass
class RunConfig:
    system: SystemSpec
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    weights: Optional[LossWeights] = None
    eval: EvalConfig = field(default_factory=EvalConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)
    name: str = "custom"

    def path(self, key: str) -> str:
        return self.paths.resolve(key, self.name)

    def loss_weights(self) -> LossWeights:
        return self.weights or LossWeights.for_mode(self.train.mode)

    def to_dict(self) -> dict:
        out = {"name": self.name, "system": self.system.to_dict(), "data": asdict(self.data),
               "train": self.train.to_dict(), "eval": asdict(self.eval),
               "paths": asdict(self.paths)}
        w = self.loss_weights()
        out["weights"] = {"lambda1": w.lambda1, "lambda2": w.lambda2, "lambda3": w.lambda3}
        return out


_SYSTEM_KEYS = {"kind", "n_grid", "c", "alpha", "beta", "domain"}
_WEIGHT_KEYS = {"lambda1", "lambda2", "lambda3"}


def _value(raw: str) -> Any:
    raw = raw.strip()
    try:
        return ast.literal_eval(raw)
    except (ValueError, SyntaxError):
        return raw


def _keys(cls) -> set[str]:
    return {f.name for f in fields(cls)}


def _section(parser: configparser.ConfigParser, name: str, allowed: set[str]) -> dict:
    if not parser.has_section(name):
        return {}
    items = {k: _value(v) for k, v in parser.items(name)}
    unknown = set(items) - allowed
    if unknown:
        raise ConfigError(f"[{name}]: unknown keys {sorted(unknown)}")
    return items


def _build(cls, section: str, values: dict):
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}]: {exc}") from None


def parse_config(text: str, name: str = "custom") -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    known = {"system", "data", "train", "weights", "eval", "paths"}
    unknown = set(parser.sections()) - known
    if unknown:
        raise ConfigError(f"unknown sections {sorted(unknown)}")
    if not parser.has_section("system"):
        raise ConfigError("missing [system] section")
    sysd = _section(parser, "system", _SYSTEM_KEYS)
    if "domain" in sysd and sysd["domain"] is not None:
        sysd["domain"] = tuple(sysd["domain"])
    system = _build(SystemSpec, "system", sysd)
    data = _build(DataConfig, "data", _section(parser, "data", _keys(DataConfig)))
    train = _build(TrainConfig, "train", _section(parser, "train", _keys(TrainConfig)))
    wd = _section(parser, "weights", _WEIGHT_KEYS)
    weights = None
    if wd:
        base = LossWeights.for_mode(train.mode)
        weights = _build(LossWeights, "weights", {
            "lambda1": wd.get("lambda1", base.lambda1), "lambda2": wd.get("lambda2", base.lambda2),
            "lambda3": wd.get("lambda3", base.lambda3)})
    ev = _build(EvalConfig, "eval", _section(parser, "eval", _keys(EvalConfig)))
    paths = _build(PathsConfig, "paths", _section(parser, "paths", _keys(PathsConfig)))
    cfg = RunConfig(system, data, train, weights, ev, paths, name)
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    cfg.data.validate()
    cfg.eval.validate()
    if cfg.system.is_pde and cfg.data.initial_condition != "sech":
        raise ConfigError("PDE systems use data.initial_condition = sech")
    if not cfg.system.is_pde and cfg.data.initial_condition != "random":
        raise ConfigError("planar systems use data.initial_condition = random")
    if cfg.train.architecture == "conv" and cfg.system.n_grid * 2 % cfg.train.conv_in_channels:
        raise ConfigError("state dimension must be divisible by train.conv_in_channels")


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, os.path.splitext(os.path.basename(path))[0])


def list_presets() -> list[str]:
    root = resources.files("symplift") / "presets"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".ini"))


def preset_text(name: str) -> str:
    res = resources.files("symplift") / "presets" / f"{name}.ini"
    if not res.is_file():
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(list_presets())}")
    return res.read_text()


def load_preset(name: str) -> RunConfig:
    return parse_config(preset_text(name), name)


def resolve_config(ref: str) -> RunConfig:
    """A path to an INI file, or the name of a bundled preset."""
    if os.path.isfile(ref) or ref.endswith(".ini"):
        return load_config(ref)
    return load_preset(ref)
