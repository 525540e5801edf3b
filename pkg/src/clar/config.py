"""Run configuration: JSON file, strict validation, dotted overrides.

Every section is a dataclass; unknown keys and out-of-range values are
rejected before any stage runs. ``None`` for ``guidance.lambda_h``,
``guidance.lambda_l`` and ``weighting.H`` means "derive from T or L".
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

SEED_ENV = "CLAR_SEED"

# named sub-streams of the master seed
STREAMS = {"ddpm": 1, "pretrain": 2, "probe": 3, "augment": 4, "templates": 5}


class ConfigError(ValueError):
    pass


def substream(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng([seed, STREAMS[name]])


@dataclass
class DataConfig:
    num_classes: int = 5
    per_class: int = 50
    subjects: int = 5
    length: int = 128
    noise_std: float = 0.05
    test_fraction: float = 0.2
    labeled_fraction: float = 0.25
    split_mode: str = "random"
    static_pool: int = 20
    k_neighbors: int = 10
    active_fraction: float = 0.6

    def validate(self):
        _require(self.num_classes >= 1 and self.per_class >= 1 and self.subjects >= 1, "data counts must be >= 1")
        _require(self.length >= 32, "data.length must be >= 32")
        _require(self.noise_std >= 0, "data.noise_std must be >= 0")
        _require(0 <= self.test_fraction < 1, "data.test_fraction must be in [0, 1)")
        _require(0 < self.labeled_fraction <= 1, "data.labeled_fraction must be in (0, 1]")
        _require(self.split_mode in ("random", "subject"), "data.split_mode must be 'random' or 'subject'")
        _require(self.static_pool >= 1 and self.k_neighbors >= 1, "data.static_pool and data.k_neighbors must be >= 1")
        _require(0.1 <= self.active_fraction <= 0.7, "data.active_fraction must be in [0.1, 0.7]")


@dataclass
class DDPMConfig:
    T: int = 100
    beta_start: float = 1e-4
    beta_end: float = 0.02
    scale_betas: bool = True
    steps: int = 20000
    batch: int = 64
    lr: float = 2e-3
    cosine_decay: bool = True
    hidden: int = 128
    emb_dim: int = 16

    def validate(self):
        _require(self.T >= 1, "ddpm.T must be >= 1")
        scale = 1000.0 / self.T if self.scale_betas else 1.0
        _require(0 < self.beta_start * scale < self.beta_end * scale < 1, "ddpm betas must satisfy 0 < start < end < 1")
        _require(self.steps >= 0 and self.batch >= 1, "ddpm.steps must be >= 0 and ddpm.batch >= 1")
        _require(self.lr > 0, "ddpm.lr must be positive")
        _require(self.hidden >= 1 and self.emb_dim >= 2 and self.emb_dim % 2 == 0, "ddpm.hidden >= 1, ddpm.emb_dim even")


@dataclass
class GuidanceSection:
    lambda_h: float | None = None
    lambda_l: float | None = None
    n_h: float = 1.0
    n_l: float = 1.0

    def validate(self):
        for name in ("lambda_h", "lambda_l"):
            v = getattr(self, name)
            _require(v is None or v > 0, f"guidance.{name} must be positive")
        _require(0 <= self.n_h <= 1 and 0 <= self.n_l <= 1, "guidance.n_h and guidance.n_l must be in [0, 1]")


@dataclass
class WeightingConfig:
    H: int | None = None
    K: int = 5
    alpha: float = 0.5
    floor: float = 0.0

    def validate(self):
        _require(self.H is None or self.H >= 1, "weighting.H must be >= 1")
        _require(self.K >= 1, "weighting.K must be >= 1")
        _require(self.alpha > 0, "weighting.alpha must be positive")
        _require(0 <= self.floor <= 1, "weighting.floor must be in [0, 1]")


@dataclass
class PretrainSection:
    tau: float = 0.1
    batch: int = 50
    epochs: int = 50
    lr: float = 1e-3
    crop_min: float = 0.6
    crop_max: float = 0.9
    bank_size: int = 4
    augment: bool = True
    weighting: bool = True

    def validate(self):
        _require(self.tau > 0, "pretrain.tau must be positive")
        _require(self.batch >= 2, "pretrain.batch must be >= 2")
        _require(self.epochs >= 1 and self.lr > 0, "pretrain.epochs >= 1 and pretrain.lr > 0")
        _require(0 < self.crop_min <= self.crop_max <= 1, "crop fractions must satisfy 0 < crop_min <= crop_max <= 1")
        _require(self.bank_size >= 2, "pretrain.bank_size must be >= 2")


@dataclass
class ProbeConfig:
    epochs: int = 300
    lr: float = 1e-2

    def validate(self):
        _require(self.epochs >= 1 and self.lr > 0, "probe.epochs >= 1 and probe.lr > 0")


@dataclass
class AugmentConfig:
    n: int = 50
    zero_guidance: bool = False

    def validate(self):
        _require(self.n >= 1, "augment.n must be >= 1")


@dataclass
class AblateConfig:
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2])
    arms: list[str] = field(default_factory=lambda: ["Base", "Aug", "Weight", "Full"])

    def validate(self):
        _require(len(self.seeds) >= 1, "ablate.seeds must be non-empty")
        _require(len(set(self.seeds)) == len(self.seeds), "ablate.seeds must be distinct")
        bad = set(self.arms) - set(ARMS)
        _require(not bad and self.arms, f"unknown ablation arms {sorted(bad)}")


ARMS = {"Base": (False, False), "Aug": (True, False), "Weight": (False, True), "Full": (True, True)}


SECTIONS = {
    "data": DataConfig,
    "ddpm": DDPMConfig,
    "guidance": GuidanceSection,
    "weighting": WeightingConfig,
    "pretrain": PretrainSection,
    "probe": ProbeConfig,
    "augment": AugmentConfig,
    "ablate": AblateConfig,
}


@dataclass
class RunConfig:
    seed: int = 0
    out_dir: str = "runs/default"
    data: DataConfig = field(default_factory=DataConfig)
    ddpm: DDPMConfig = field(default_factory=DDPMConfig)
    guidance: GuidanceSection = field(default_factory=GuidanceSection)
    weighting: WeightingConfig = field(default_factory=WeightingConfig)
    pretrain: PretrainSection = field(default_factory=PretrainSection)
    probe: ProbeConfig = field(default_factory=ProbeConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    ablate: AblateConfig = field(default_factory=AblateConfig)

    def validate(self) -> "RunConfig":
        _require(isinstance(self.seed, int) and self.seed >= 0, "seed must be a non-negative integer")
        for name in SECTIONS:
            getattr(self, name).validate()
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def out(self) -> Path:
        return Path(self.out_dir)


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ConfigError(message)


def _check_type(where: str, value, default):
    # defaults fix the expected type; None-valued defaults accept int or float
    if default is None:
        ok = value is None or (isinstance(value, (int, float)) and not isinstance(value, bool))
    elif isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif isinstance(default, str):
        ok = isinstance(value, str)
    elif isinstance(default, list):
        ok = isinstance(value, list) and all(isinstance(v, type(default[0])) for v in value) if default else True
    else:
        ok = True
    if not ok:
        raise ConfigError(f"{where}: expected {type(default).__name__}, got {value!r}")
    return float(value) if isinstance(default, float) else value


def _build_section(cls, raw, where: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"{where} must be an object")
    proto = cls()
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    kwargs = {k: _check_type(f"{where}.{k}", v, getattr(proto, k)) for k, v in raw.items()}
    return cls(**kwargs)


def from_dict(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    top = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(raw) - top)
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    kwargs = {}
    for k, v in raw.items():
        if k in SECTIONS:
            kwargs[k] = _build_section(SECTIONS[k], v, k)
        else:
            kwargs[k] = _check_type(k, v, getattr(RunConfig(), k))
    return RunConfig(**kwargs)


def apply_override(raw: dict, assignment: str) -> None:
    """Apply ``section.key=value`` (value parsed as JSON, else taken as a string) to a raw dict."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not of the form key=value")
    key, text = assignment.split("=", 1)
    try:
        value = json.loads(text)
    except json.JSONDecodeError:
        value = text
    parts = key.strip().split(".")
    if len(parts) > 2 or not all(parts):
        raise ConfigError(f"override key {key!r} must be 'name' or 'section.name'")
    target = raw
    if len(parts) == 2:
        target = raw.setdefault(parts[0], {})
        if not isinstance(target, dict):
            raise ConfigError(f"{parts[0]} is not a section")
    target[parts[-1]] = value


def load_config(
    path: str | Path | None = None,
    overrides: list[str] | None = None,
    env: dict | None = None,
) -> RunConfig:
    """File values, then ``key=value`` overrides, then the seed environment variable."""
    raw: dict = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e})") from None
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e.strerror}") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
    for item in overrides or []:
        apply_override(raw, item)
    env = os.environ if env is None else env
    if env.get(SEED_ENV):
        try:
            raw["seed"] = int(env[SEED_ENV])
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env[SEED_ENV]!r}") from None
    return from_dict(raw).validate()
