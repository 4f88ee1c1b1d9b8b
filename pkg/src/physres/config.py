"""Run configuration: one JSON document, strict keys, every field defaulted."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from pathlib import Path
from typing import Optional, Union

from .dataset import DEFAULT_CLASSES, DEFAULT_LOADS, DatasetConfig
from .evaluation import DEFAULT_SHIFT_LEVELS, DEFAULT_TEST_FRACTION
from .baseline import DEFAULT_HIDDEN
from .pipeline import PipelineConfig
from .priors import DEFAULT_TAU
from .readout import ReadoutError, TrainConfig
from .reservoir import DEFAULT_NODES_PER_CLASS, DEFAULT_T_DRIVE, ReservoirError
from .signals import SignalError, SynthConfig, as_label


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetOptions:
    classes: tuple = DEFAULT_CLASSES
    loads: tuple = DEFAULT_LOADS
    windows_per_class: int = 200
    window_len: int = 1000
    hop: int = 1000


@dataclass(frozen=True)
class FeatureOptions:
    tau: float = DEFAULT_TAU
    density_kind: str = "histogram"  # or "kde"
    raw_feature_priors: bool = False


@dataclass(frozen=True)
class ReservoirOptions:
    nodes_per_class: int = DEFAULT_NODES_PER_CLASS
    leak_alpha: float = 0.8
    spectral_radius: float = 0.9
    input_scaling: float = 1.0
    density: float = 0.1
    t_drive: int = DEFAULT_T_DRIVE


@dataclass(frozen=True)
class ExplainOptions:
    use_shap: bool = True
    validation_fraction: float = 0.25


@dataclass(frozen=True)
class EvalOptions:
    held_out: Optional[int] = 5
    test_fraction: float = DEFAULT_TEST_FRACTION
    mc_samples: int = 100
    shift_levels: tuple = DEFAULT_SHIFT_LEVELS
    baseline_hidden: int = DEFAULT_HIDDEN
    workers: int = 1


@dataclass(frozen=True)
class PathOptions:
    data_dir: Optional[str] = None
    out_dir: str = "out"
    artifact: Optional[str] = None


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    synth: SynthConfig = field(default_factory=SynthConfig)
    dataset: DatasetOptions = field(default_factory=DatasetOptions)
    features: FeatureOptions = field(default_factory=FeatureOptions)
    reservoir: ReservoirOptions = field(default_factory=ReservoirOptions)
    train: TrainConfig = field(default_factory=TrainConfig)
    explain: ExplainOptions = field(default_factory=ExplainOptions)
    eval: EvalOptions = field(default_factory=EvalOptions)
    paths: PathOptions = field(default_factory=PathOptions)

    def validate(self) -> "RunConfig":
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError(f"seed must be a nonnegative integer, got {self.seed!r}")
        try:
            self.synth.validate()
            for c in self.dataset.classes:
                as_label(c)
        except SignalError as e:
            raise ConfigError(str(e)) from None
        if len(set(self.dataset.classes)) < 2:
            raise ConfigError("dataset.classes needs at least 2 distinct labels")
        if not self.dataset.loads or any(not 0 <= x <= 1 for x in self.dataset.loads):
            raise ConfigError("dataset.loads must be nonempty and within [0, 1]")
        d = self.dataset
        if min(d.windows_per_class, d.window_len, d.hop) < 1 or d.window_len < 4:
            raise ConfigError("windows_per_class >= 1, window_len >= 4 and hop >= 1 required")
        if d.window_len > self.synth.num_samples:
            raise ConfigError("dataset.window_len exceeds the synthesized recording length")
        if self.features.density_kind not in ("histogram", "kde"):
            raise ConfigError(f"features.density_kind must be 'histogram' or 'kde', got {self.features.density_kind!r}")
        if self.features.tau < 0:
            raise ConfigError("features.tau must be nonnegative")
        r = self.reservoir
        if not 0 < r.leak_alpha <= 1 or not 0 < r.spectral_radius < 1:
            raise ConfigError("reservoir needs leak_alpha in (0, 1] and spectral_radius in (0, 1)")
        if r.nodes_per_class < 1 or r.t_drive < 1 or r.input_scaling <= 0 or not 0 < r.density <= 1:
            raise ConfigError("reservoir sizes, t_drive, input_scaling and density must be positive")
        if not 0 < self.explain.validation_fraction < 1:
            raise ConfigError("explain.validation_fraction must be in (0, 1)")
        e = self.eval
        if e.held_out is not None and e.held_out not in self.dataset.classes:
            raise ConfigError(f"eval.held_out {e.held_out} is not one of dataset.classes")
        if not 0 < e.test_fraction < 1 or e.mc_samples < 1 or e.baseline_hidden < 1 or e.workers < 1:
            raise ConfigError("eval needs test_fraction in (0, 1) and positive mc_samples, baseline_hidden, workers")
        return self

    def dataset_config(self) -> DatasetConfig:
        d = self.dataset
        return DatasetConfig(
            tuple(d.classes), tuple(d.loads), d.windows_per_class, d.window_len, d.hop, self.synth
        )

    def pipeline_config(self) -> PipelineConfig:
        r = self.reservoir
        return PipelineConfig(
            tau=self.features.tau,
            density_kind=self.features.density_kind,
            raw_feature_priors=self.features.raw_feature_priors,
            nodes_per_class=r.nodes_per_class,
            leak_alpha=r.leak_alpha,
            spectral_radius=r.spectral_radius,
            input_scaling=r.input_scaling,
            reservoir_density=r.density,
            t_drive=r.t_drive,
            use_shap=self.explain.use_shap,
            shap_validation_fraction=self.explain.validation_fraction,
            train=self.train,
        )

    def to_dict(self) -> dict:
        return _plain(asdict(self))

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        return _build(cls, d, "config").validate()

    @classmethod
    def load(cls, path: Union[str, Path]) -> "RunConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e.strerror}") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e.msg} at line {e.lineno})") from None
        return cls.from_dict(doc)

    def updated(self, **changes) -> "RunConfig":
        return replace(self, **changes).validate()


def _plain(v):
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    return v


_SCALAR_TYPES = {int: (int,), float: (int, float), bool: (bool,), str: (str,)}


def _check_scalar(value, default, where, nullable=False):
    if value is None:
        if default is None or nullable:
            return None
        raise ConfigError(f"{where} may not be null")
    if default is None:
        return value
    expected = type(default)
    if expected is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where} must be a boolean")
        return value
    if isinstance(value, bool) or not isinstance(value, _SCALAR_TYPES.get(expected, (expected,))):
        raise ConfigError(f"{where} must be of type {expected.__name__}, got {type(value).__name__}")
    return expected(value)


def _build(cls, d, where: str):
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be a JSON object")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(d) - set(known))
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    default = cls()
    kwargs = {}
    for name, value in d.items():
        current = getattr(default, name)
        path = f"{where}.{name}"
        if is_dataclass(current):
            kwargs[name] = _build(type(current), value, path)
        elif isinstance(current, tuple):
            if not isinstance(value, list):
                raise ConfigError(f"{path} must be a list")
            kwargs[name] = tuple(_check_scalar(v, current[0], path) if current else v for v in value)
        else:
            kwargs[name] = _check_scalar(value, current, path, "Optional" in str(known[name].type))
    try:
        return cls(**kwargs)
    except (ReadoutError, ReservoirError, SignalError, TypeError) as e:
        raise ConfigError(f"{where}: {e}") from None
