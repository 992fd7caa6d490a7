"""
Configuration Management for the Sobolev Alignment Toolkit

Process-level settings come from environment variables (optionally a .env
file). Experiment, data-generation and adversary parameters live in plain-text
key=value files parsed into dataclasses; the raw text is kept as the config echo.

Created: October 2026
Changes: key=value experiment files with per-field validation
"""

import dataclasses
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Type, TypeVar

from dotenv import load_dotenv

from colored_noise import derive_seed
from errors import ConfigError


T = TypeVar("T")

VARIANTS = ("sft_only", "dpo_l2", "sdpo", "asdpo")
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")


@dataclass
class Config:
    """Process-level settings read from the environment."""

    seed: int = 42
    log_level: str = "INFO"
    output_dir: str = "output"
    log_color: bool = True

    def __init__(self):
        """Initialize configuration from environment variables."""
        load_dotenv()

        try:
            self.seed = int(os.getenv("SOBOLEV_SEED", "42"))
        except ValueError:
            logging.getLogger(__name__).warning("SOBOLEV_SEED is not an integer, using 42")
            self.seed = 42
        self.log_level = os.getenv("SOBOLEV_LOG_LEVEL", "INFO").upper()
        self.output_dir = os.getenv("SOBOLEV_OUTPUT_DIR", "output")
        self.log_color = os.getenv("SOBOLEV_LOG_COLOR", "true").lower() == "true"

    def validate(self) -> None:
        """Fall back to defaults for out-of-range soft settings."""
        logger = logging.getLogger(__name__)

        if self.log_level not in LOG_LEVELS:
            logger.warning(f"Invalid log level '{self.log_level}', using 'INFO'")
            self.log_level = "INFO"

        if not 0 <= self.seed < 2 ** 64:
            logger.warning(f"Seed {self.seed} is outside the unsigned 64-bit range, using 42")
            self.seed = 42

        logger.debug(f"Seed: {self.seed}, output dir: {self.output_dir}")

    def get_logging_settings(self) -> Dict[str, Any]:
        return {"level": self.log_level, "color": self.log_color}


def _parse_grid(text: str) -> Tuple[int, int]:
    parts = text.lower().split("x")
    if len(parts) != 2:
        raise ValueError(f"expected HxW, got '{text}'")
    return int(parts[0]), int(parts[1])


def _parse_bool(text: str) -> bool:
    lowered = text.lower()
    if lowered in ("true", "1", "yes"):
        return True
    if lowered in ("false", "0", "no"):
        return False
    raise ValueError(f"expected true or false, got '{text}'")


def _parse_floats(text: str) -> Tuple[float, ...]:
    return tuple(float(part) for part in text.split(",") if part.strip())


def _parse_ints(text: str) -> Tuple[int, ...]:
    return tuple(int(part) for part in text.split(",") if part.strip())


def _optional_int(text: str) -> Optional[int]:
    return None if text.lower() in ("", "none") else int(text)


def format_value(value: Any) -> str:
    """Inverse of the field parsers, used when echoing derived configs."""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple) and len(value) == 2 and all(isinstance(v, int) for v in value):
        return f"{value[0]}x{value[1]}"
    if isinstance(value, tuple):
        return ",".join(repr(v) if isinstance(v, float) else str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return "none" if value is None else str(value)


def parse_key_values(text: str, path: Optional[Path] = None) -> Dict[str, str]:
    """key=value lines; '#' starts a comment, blank lines are skipped."""
    values: Dict[str, str] = {}
    for number, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {number}: expected key=value, got '{stripped}'", path)
        key, value = (part.strip() for part in stripped.split("=", 1))
        if not key:
            raise ConfigError(f"line {number}: empty key", path)
        if key in values:
            raise ConfigError(f"line {number}: duplicate key '{key}'", path, key)
        values[key] = value
    return values


def build_dataclass(cls: Type[T], values: Dict[str, str], path: Optional[Path] = None) -> T:
    """Instantiate a config dataclass from string values using its PARSERS table."""
    parsers = getattr(cls, "PARSERS")
    known = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, raw in values.items():
        if key not in known:
            raise ConfigError(f"unknown key '{key}'", path, key)
        try:
            kwargs[key] = parsers[key](raw)
        except ValueError as e:
            raise ConfigError(f"bad value for '{key}': {e}", path, key)
    try:
        return cls(**kwargs)
    except ConfigError as e:
        if path is not None and e.path is None:
            raise ConfigError(str(e), path, e.key)
        raise


def _require(condition: bool, message: str, key: str) -> None:
    if not condition:
        raise ConfigError(message, key=key)


@dataclass(frozen=True)
class SynthConfig:
    """Power-law image generation settings."""
    spectral_slope: float = 1.2
    grid: Tuple[int, int] = (32, 32)
    count: int = 100
    seed: int = 42

    PARSERS = {"spectral_slope": float, "grid": _parse_grid, "count": int, "seed": int}

    def __post_init__(self):
        _require(self.spectral_slope >= 0, f"spectral_slope must be >= 0, got {self.spectral_slope}", "spectral_slope")
        _require(self.count >= 1, f"count must be >= 1, got {self.count}", "count")
        _require(min(self.grid) >= 1, f"grid must be positive, got {self.grid}", "grid")


@dataclass(frozen=True)
class DegradeConfig:
    """Blur, downscale and noise settings of the degradation operator."""
    blur_sigma: float = 1.0
    downscale_factor: int = 4
    noise_sigma: float = 0.05

    PARSERS = {"blur_sigma": float, "downscale_factor": int, "noise_sigma": float}

    def __post_init__(self):
        _require(self.blur_sigma >= 0, f"blur_sigma must be >= 0, got {self.blur_sigma}", "blur_sigma")
        _require(self.downscale_factor >= 1, f"downscale_factor must be >= 1, got {self.downscale_factor}",
                 "downscale_factor")
        _require(self.noise_sigma >= 0, f"noise_sigma must be >= 0, got {self.noise_sigma}", "noise_sigma")


@dataclass(frozen=True)
class ArtifactConfig:
    """Settings of the synthetic artifact proxy used for static losers."""
    blur_sigma: float = 1.0
    factor: int = 2
    levels: int = 8
    texture: float = 0.1

    def __post_init__(self):
        _require(self.blur_sigma >= 0, f"loser blur must be >= 0, got {self.blur_sigma}", "loser_blur")
        _require(self.factor >= 1, f"loser factor must be >= 1, got {self.factor}", "loser_factor")
        _require(self.levels >= 2, f"loser levels must be >= 2, got {self.levels}", "loser_levels")
        _require(self.texture >= 0, f"loser texture must be >= 0, got {self.texture}", "loser_texture")


@dataclass(frozen=True)
class AdversaryTrainingConfig:
    """Optimizer settings for training the parametric adversary."""
    steps: int = 2000
    lr: float = 1e-3
    width: int = 64
    epsilon: float = 0.1
    schedule: str = "constant"
    optimizer: str = "adam"
    batch: int = 8
    seed: int = 42
    weight_decay: float = 0.0
    log_every: int = 100

    PARSERS = {
        "steps": int, "lr": float, "width": int, "epsilon": float, "schedule": str,
        "optimizer": str, "batch": int, "seed": int, "weight_decay": float, "log_every": int,
    }

    def __post_init__(self):
        _require(self.steps >= 0, f"steps must be >= 0, got {self.steps}", "steps")
        _require(self.lr >= 0, f"lr must be >= 0, got {self.lr}", "lr")
        _require(self.width >= 1, f"width must be >= 1, got {self.width}", "width")
        _require(self.epsilon > 0, f"epsilon must be > 0, got {self.epsilon}", "epsilon")
        _require(self.schedule in ("constant", "linear"), f"unknown schedule '{self.schedule}'", "schedule")
        _require(self.optimizer in ("adam", "sgd"), f"unknown optimizer '{self.optimizer}'", "optimizer")
        _require(self.batch >= 1, f"batch must be >= 1, got {self.batch}", "batch")


@dataclass(frozen=True)
class ExperimentConfig:
    """One training run: variant, Sobolev order, optimizer and evaluation settings."""
    variant: str = "sdpo"
    sobolev_s: float = 1.5
    beta: float = 2000.0
    steps: int = 500
    batch: int = 8
    lr: float = 1e-3
    seed: int = 42
    grid: Tuple[int, int] = (16, 16)
    dataset: str = "data"
    output: str = "output"
    hidden: int = 64
    t_max: float = 0.99
    horizon: float = 0.99
    stratified: bool = False
    euler_steps: int = 28
    warmup_steps: int = 0
    grad_accum: int = 1
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    eval_count: int = 8
    eval_seed: Optional[int] = None
    trust_epsilon: float = 0.1
    trust_schedule: str = "constant"
    adversary_steps: int = 500
    adversary_lr: float = 1e-3
    adversary_width: int = 64
    loser_blur: float = 1.0
    loser_factor: int = 2
    loser_levels: int = 8
    loser_texture: float = 0.1
    log_every: int = 50

    PARSERS = {
        "variant": lambda v: v.replace("-", "_"), "sobolev_s": float, "beta": float, "steps": int,
        "batch": int, "lr": float, "seed": int, "grid": _parse_grid, "dataset": str, "output": str,
        "hidden": int, "t_max": float, "horizon": float, "stratified": _parse_bool, "euler_steps": int,
        "warmup_steps": int, "grad_accum": int, "weight_decay": float, "beta1": float, "beta2": float,
        "adam_eps": float, "eval_count": int, "eval_seed": _optional_int, "trust_epsilon": float,
        "trust_schedule": str, "adversary_steps": int, "adversary_lr": float, "adversary_width": int,
        "loser_blur": float, "loser_factor": int, "loser_levels": int, "loser_texture": float,
        "log_every": int,
    }

    def __post_init__(self):
        _require(self.variant in VARIANTS, f"unknown variant '{self.variant}', expected one of {VARIANTS}", "variant")
        _require(self.sobolev_s >= 0, f"sobolev_s must be >= 0, got {self.sobolev_s}", "sobolev_s")
        _require(self.beta > 0, f"beta must be > 0, got {self.beta}", "beta")
        _require(self.steps >= 0, f"steps must be >= 0, got {self.steps}", "steps")
        _require(self.batch >= 1, f"batch must be >= 1, got {self.batch}", "batch")
        _require(self.lr >= 0, f"lr must be >= 0, got {self.lr}", "lr")
        _require(min(self.grid) >= 1, f"grid must be positive, got {self.grid}", "grid")
        _require(0 < self.t_max <= 1, f"t_max must lie in (0, 1], got {self.t_max}", "t_max")
        _require(0 < self.horizon <= self.t_max, f"horizon must lie in (0, t_max], got {self.horizon}", "horizon")
        _require(self.euler_steps >= 1, f"euler_steps must be >= 1, got {self.euler_steps}", "euler_steps")
        _require(self.grad_accum >= 1, f"grad_accum must be >= 1, got {self.grad_accum}", "grad_accum")
        _require(self.eval_count >= 1, f"eval_count must be >= 1, got {self.eval_count}", "eval_count")
        _require(self.trust_schedule in ("constant", "linear"), f"unknown trust schedule '{self.trust_schedule}'",
                 "trust_schedule")
        # remaining bounds are checked by the dataclasses built from these fields
        self.adversary()
        self.artifact()

    def with_changes(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def resolved_eval_seed(self) -> int:
        return self.eval_seed if self.eval_seed is not None else derive_seed(self.seed, "eval")

    def adversary(self) -> AdversaryTrainingConfig:
        return AdversaryTrainingConfig(
            steps=self.adversary_steps, lr=self.adversary_lr, width=self.adversary_width,
            epsilon=self.trust_epsilon, schedule=self.trust_schedule, batch=self.batch, seed=self.seed,
            weight_decay=self.weight_decay, log_every=self.log_every,
        )

    def artifact(self) -> ArtifactConfig:
        return ArtifactConfig(
            blur_sigma=self.loser_blur, factor=self.loser_factor, levels=self.loser_levels,
            texture=self.loser_texture,
        )

    def echo(self) -> str:
        """key=value text of every field, in declaration order."""
        return "".join(f"{f.name}={format_value(getattr(self, f.name))}\n" for f in dataclasses.fields(self))


@dataclass(frozen=True)
class LoadedConfig:
    """A parsed config together with the exact text it came from."""
    value: Any
    echo: str
    path: Optional[Path] = None


def _read_text(path: Path) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as e:
        raise ConfigError(f"not a UTF-8 text file ({e})", Path(path))


def load_experiment_config(path: Path, **overrides) -> LoadedConfig:
    """Parse an experiment file; overrides (e.g. variant, seed) replace file values."""
    text = _read_text(path)
    cfg = build_dataclass(ExperimentConfig, parse_key_values(text, path), path)
    if overrides:
        cfg = cfg.with_changes(**overrides)
    return LoadedConfig(value=cfg, echo=text, path=Path(path))


def load_data_config(path: Path) -> LoadedConfig:
    """Parse a data-generation file holding SynthConfig and DegradeConfig keys.

    Returns a LoadedConfig whose value is the (SynthConfig, DegradeConfig) pair.
    """
    text = _read_text(path)
    values = parse_key_values(text, path)
    synth_keys = {f.name for f in dataclasses.fields(SynthConfig)}
    synth = build_dataclass(SynthConfig, {k: v for k, v in values.items() if k in synth_keys}, path)
    degrade = build_dataclass(DegradeConfig, {k: v for k, v in values.items() if k not in synth_keys}, path)
    return LoadedConfig(value=(synth, degrade), echo=text, path=Path(path))


def parse_float_list(text: str) -> Tuple[float, ...]:
    try:
        values = _parse_floats(text)
    except ValueError as e:
        raise ConfigError(f"bad number list '{text}': {e}")
    if not values:
        raise ConfigError(f"empty number list '{text}'")
    return values


def parse_int_list(text: str) -> Tuple[int, ...]:
    try:
        values = _parse_ints(text)
    except ValueError as e:
        raise ConfigError(f"bad integer list '{text}': {e}")
    if not values:
        raise ConfigError(f"empty integer list '{text}'")
    return values
