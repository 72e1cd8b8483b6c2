"""Run configuration: documented defaults, TOML loading and validation."""
from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    input_size: int = 75
    retina_channels: int = 16
    lamina_channels: int = 32
    medulla_channels: int = 64
    lobula_channels: int = 128
    kernel_size: int = 3
    retina_stride: int = 1
    stride: int = 2
    leaky_slope: float = 0.01
    lrn_n: int = 5
    lrn_k: float = 1.0
    lrn_alpha: float = 1e-4
    lrn_beta: float = 0.75
    gn_groups: int = 8
    gn_eps: float = 1e-5
    kc_dim: int = 1024
    fan_in: int = 10
    kc_bias: bool = True
    init_seed: int = 0

    def validate(self):
        _positive(self, "input_size", "retina_channels", "lamina_channels", "medulla_channels",
                  "kernel_size", "retina_stride", "stride", "lrn_n", "gn_groups", "fan_in")
        if self.lobula_channels != 128:
            raise ConfigError("model.lobula_channels must be 128 (total VPN feature channels)")
        if self.kc_dim != 1024:
            raise ConfigError("model.kc_dim must be 1024")
        if self.lrn_k < 1.0:
            raise ConfigError("model.lrn_k must be >= 1")


@dataclass
class AKWTAConfig:
    rho: float = 0.05
    momentum: float = 0.9

    def validate(self):
        _open_unit(self, "rho", "momentum")


@dataclass
class SNNConfig:
    timesteps: int = 25
    beta: float = 0.95
    threshold: float = 1.0
    reset: str = "subtract"
    rate_scale: float = 1.0
    surrogate_slope: float = 25.0
    resistance: float = 20.0
    learn_kc_threshold: bool = True
    detach_reset: bool = True

    def validate(self):
        _positive(self, "timesteps", "threshold", "rate_scale", "surrogate_slope",
                  "resistance")
        _open_unit(self, "beta")
        if self.reset not in ("subtract", "zero"):
            raise ConfigError("snn.reset must be 'subtract' or 'zero'")


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 128
    snn_batch_size: int = 16
    snn_grad_chunk: int = 4
    lr: float = 1e-4
    weight_decay: float = 1e-4
    temperature: float = 0.5
    n_images: int = 100000
    seed: int = 0
    crop_scale_min: float = 0.5
    crop_scale_max: float = 1.0
    flip_p: float = 0.5
    brightness: float = 0.2
    contrast: float = 0.2
    blur_p: float = 0.2
    blur_sigma: float = 1.0

    def validate(self):
        _positive(self, "epochs", "batch_size", "snn_batch_size", "snn_grad_chunk",
                  "temperature", "n_images")
        if self.lr < 0 or self.weight_decay < 0:
            raise ConfigError("train.lr and train.weight_decay must be non-negative")
        if not 0 < self.crop_scale_min <= self.crop_scale_max <= 1:
            raise ConfigError("train.crop_scale_min/max must satisfy 0 < min <= max <= 1")
        for name in ("flip_p", "blur_p"):
            if not 0 <= getattr(self, name) <= 1:
                raise ConfigError(f"train.{name} must lie in [0, 1]")


@dataclass
class EvalConfig:
    kappa: float = 0.9
    scan_paths: int = 10
    scan_steps: int = 16
    scan_max_step: int = 40
    patch_size: int = 75
    classifier_seeds: int = 8
    test_fraction: float = 0.2
    classifier_c: float = 1.0
    tolerance: int = 3
    ks: list = field(default_factory=lambda: [1, 5, 10, 15, 20, 25])
    sad_res: int = 32
    si_epsilon: float = 1e-9
    si_mode: str = "verbatim"
    topk: int = 32

    def validate(self):
        _positive(self, "scan_paths", "scan_steps", "scan_max_step", "patch_size",
                  "classifier_seeds", "sad_res", "topk")
        if not 0 <= self.kappa < 1:
            raise ConfigError("eval.kappa must lie in [0, 1)")
        if self.tolerance < 0:
            raise ConfigError("eval.tolerance must be non-negative")
        if self.si_mode not in ("verbatim", "contrast"):
            raise ConfigError("eval.si_mode must be 'verbatim' or 'contrast'")
        if not 0 < self.test_fraction < 1:
            raise ConfigError("eval.test_fraction must lie in (0, 1)")


SECTIONS = {"model": ModelConfig, "akwta": AKWTAConfig, "snn": SNNConfig,
            "train": TrainConfig, "eval": EvalConfig}

DESK_SCALE = {"n_images": 2000, "epochs": 3, "batch_size": 32}


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    akwta: AKWTAConfig = field(default_factory=AKWTAConfig)
    snn: SNNConfig = field(default_factory=SNNConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def validate(self):
        for name in SECTIONS:
            getattr(self, name).validate()
        return self

    def to_dict(self):
        return dataclasses.asdict(self)

    def to_json(self):
        """Canonical serialisation embedded in checkpoints."""
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, data, base=None):
        cfg = base if base is not None else cls()
        if not isinstance(data, dict):
            raise ConfigError("configuration must be a table of sections")
        for section, values in data.items():
            if section not in SECTIONS:
                raise ConfigError(f"unknown section [{section}]")
            if not isinstance(values, dict):
                raise ConfigError(f"[{section}] must be a table")
            target = getattr(cfg, section)
            fields = {f.name: f for f in dataclasses.fields(target)}
            for key, value in values.items():
                if key not in fields:
                    raise ConfigError(f"unknown key {section}.{key}")
                setattr(target, key, _coerce(f"{section}.{key}", value,
                                             getattr(target, key)))
        return cfg.validate()

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def desk_scale(self):
        for key, value in DESK_SCALE.items():
            setattr(self.train, key, value)
        return self


def _coerce(key, value, default):
    expected = type(default)
    if expected is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected bool, got {type(value).__name__}")
        return value
    if expected is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected float, got {type(value).__name__}")
        return float(value)
    if expected is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected int, got {type(value).__name__}")
        return value
    if expected is list:
        if not isinstance(value, list) or not all(
                isinstance(v, int) and not isinstance(v, bool) for v in value):
            raise ConfigError(f"{key}: expected list of int")
        return list(value)
    if not isinstance(value, expected):
        raise ConfigError(f"{key}: expected {expected.__name__}, got {type(value).__name__}")
    return value


def _positive(obj, *names):
    section = _section_name(obj)
    for name in names:
        if not getattr(obj, name) > 0:
            raise ConfigError(f"{section}.{name} must be positive")


def _open_unit(obj, *names):
    section = _section_name(obj)
    for name in names:
        if not 0 < getattr(obj, name) < 1:
            raise ConfigError(f"{section}.{name} must lie in (0, 1)")


def _section_name(obj):
    for name, cls in SECTIONS.items():
        if isinstance(obj, cls):
            return name
    return type(obj).__name__


def load_config(path=None, desk_scale=False):
    """Merge a TOML file over the defaults; ``APIA_SEED`` overrides train.seed.

    With ``desk_scale`` the small-CPU training preset replaces the defaults
    first, so keys set explicitly in the file still win.
    """
    data = {}
    if path is not None:
        with open(path, "rb") as fh:
            try:
                data = tomllib.load(fh)
            except tomllib.TOMLDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from None
    base = RunConfig().desk_scale() if desk_scale else None
    cfg = RunConfig.from_dict(data, base=base)
    seed = os.environ.get("APIA_SEED")
    if seed is not None:
        try:
            cfg.train.seed = int(seed)
        except ValueError:
            raise ConfigError(f"APIA_SEED must be an integer, got {seed!r}") from None
    return cfg
