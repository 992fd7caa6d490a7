"""
Synthetic Data

Power-law images with a known spectrum, the single-order degradation operator
(blur → average pool → noise → bilinear upscale), the artifact proxy used as a
static loser, and dataset archives of (condition, target) pairs.

Item i of a dataset draws its image from derive_seed(seed, "data", i) and its
degradation noise from derive_seed(seed, "degrade", i), so items can be
generated independently and in any order.

Created: October 2026
Changes: Artifact proxy stands in for baseline restoration outputs
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import scipy.ndimage

from colored_noise import NoiseSampler, derive_seed
from config import ArtifactConfig, DegradeConfig, SynthConfig, format_value
from data_models import Field2D
from errors import ValidationError
from file_manager import ArchiveManager
from spectral_core import dct2, idct2, make_sobolev


logger = logging.getLogger(__name__)

ARCHIVE_FORMAT = "SOBFLD01"
BLUR_TRUNCATE = 3.0


def make_powerlaw_image(cfg: SynthConfig, index: int = 0) -> Field2D:
    """Zero-mean, unit-variance field whose bin-ω power is ∝ (1+‖ω‖²)^{-α}."""
    height, width = cfg.grid
    op = make_sobolev(cfg.spectral_slope, height, width)
    sampler = NoiseSampler(derive_seed(cfg.seed, "data", index), cfg.grid, op)
    coeffs = dct2(sampler.colored_batch(1)[0])
    coeffs[0, 0] = 0.0
    values = idct2(coeffs)
    std = float(np.std(values))
    if std == 0.0:
        raise ValidationError("Generated image is constant; the grid needs more than one cell")
    return Field2D(values / std)


def normalize_peak(x: Field2D) -> Field2D:
    """Scale into [−1, 1] by the peak magnitude; the zero field is returned as is."""
    peak = float(np.max(np.abs(x.values)))
    return x if peak == 0.0 else x / peak


def _check_factor(shape: Tuple[int, int], factor: int) -> None:
    if factor < 1:
        raise ValidationError(f"Downscale factor must be >= 1, got {factor}")
    if shape[0] % factor or shape[1] % factor:
        raise ValidationError(f"Grid {shape[0]}x{shape[1]} is not divisible by factor {factor}")


def average_pool(x: Field2D, factor: int) -> Field2D:
    """Mean over non-overlapping factor×factor blocks."""
    _check_factor(x.shape, factor)
    height, width = x.shape
    blocks = x.values.reshape(height // factor, factor, width // factor, factor)
    return Field2D(blocks.mean(axis=(1, 3)))


def gaussian_blur(values: np.ndarray, sigma: float) -> np.ndarray:
    if sigma <= 0:
        return np.array(values)
    return scipy.ndimage.gaussian_filter(values, sigma, mode="reflect", truncate=BLUR_TRUNCATE)


def resample(values: np.ndarray, shape: Tuple[int, int], order: int = 1) -> np.ndarray:
    """Resample a grid to `shape` with spline interpolation of the given order."""
    if values.shape == tuple(shape):
        return np.array(values)
    zoom = (shape[0] / values.shape[0], shape[1] / values.shape[1])
    return scipy.ndimage.zoom(values, zoom, order=order, mode="nearest", grid_mode=True)


def degrade(x: Field2D, cfg: DegradeConfig, seed: int = 0, index: int = 0) -> Field2D:
    """Blur, average-pool, add white noise, then upscale back to the input grid."""
    _check_factor(x.shape, cfg.downscale_factor)
    blurred = gaussian_blur(x.values, cfg.blur_sigma)
    pooled = average_pool(Field2D(blurred), cfg.downscale_factor).values
    if cfg.noise_sigma > 0:
        sampler = NoiseSampler(derive_seed(seed, "degrade", index), pooled.shape)
        pooled = pooled + cfg.noise_sigma * sampler.white_batch(1)[0]
    return Field2D(resample(pooled, x.shape, order=1))


def quantize(values: np.ndarray, levels: int) -> np.ndarray:
    """Round [−1, 1] values onto `levels` evenly spaced levels."""
    steps = levels - 1
    return np.round((np.clip(values, -1.0, 1.0) + 1.0) * steps / 2.0) * 2.0 / steps - 1.0


def make_artifact_proxy(x1: Field2D, cfg: ArtifactConfig, seed: int = 0, index: int = 0) -> Field2D:
    """Plausible restoration failure of x₁: blur, bicubic down/up resampling,
    intensity quantization and binary texture injection."""
    height, width = x1.shape
    blurred = gaussian_blur(x1.values, cfg.blur_sigma)
    small_shape = (max(1, height // cfg.factor), max(1, width // cfg.factor))
    resampled = resample(resample(blurred, small_shape, order=3), x1.shape, order=3)
    result = quantize(resampled, cfg.levels)
    if cfg.texture > 0:
        sampler = NoiseSampler(derive_seed(seed, "loser", index), x1.shape)
        result = result + cfg.texture * np.sign(sampler.white_batch(1)[0])
    return Field2D(result)


@dataclass
class Dataset:
    """(condition, target) pairs with the manifest that describes them."""
    pairs: List[Tuple[Field2D, Field2D]]
    manifest: Dict[str, str] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def shape(self) -> Tuple[int, int]:
        if not self.pairs:
            raise ValidationError("Dataset holds no pairs")
        return self.pairs[0][0].shape

    def conditions(self) -> List[Field2D]:
        return [c for c, _ in self.pairs]

    def targets(self) -> List[Field2D]:
        return [x1 for _, x1 in self.pairs]


def dataset_manifest(synth: SynthConfig, deg: DegradeConfig) -> Dict[str, str]:
    return {
        "format": ARCHIVE_FORMAT,
        "count": str(synth.count),
        "grid": format_value(synth.grid),
        "seed": str(synth.seed),
        "spectral_slope": format_value(synth.spectral_slope),
        "blur_sigma": format_value(deg.blur_sigma),
        "downscale_factor": str(deg.downscale_factor),
        "noise_sigma": format_value(deg.noise_sigma),
        "image_seed": "derive(seed, data, index)",
        "noise_seed": "derive(seed, degrade, index)",
    }


def build_dataset(synth: SynthConfig, deg: DegradeConfig, archive_dir: Optional[Path] = None) -> Dataset:
    """Generate `count` pairs (c = degrade(x₁), x₁ in [−1, 1]); write an archive if asked."""
    _check_factor(synth.grid, deg.downscale_factor)
    pairs = []
    for index in range(synth.count):
        target = normalize_peak(make_powerlaw_image(synth, index))
        pairs.append((degrade(target, deg, synth.seed, index), target))
    manifest = dataset_manifest(synth, deg)
    logger.info(f"Generated {len(pairs)} pairs on a {synth.grid[0]}x{synth.grid[1]} grid, alpha={synth.spectral_slope}")

    if archive_dir is not None:
        ArchiveManager(archive_dir).write(manifest, pairs)
    return Dataset(pairs=pairs, manifest=manifest)


def load_dataset(path: Path) -> Dataset:
    """Read an archive written by build_dataset."""
    manager = ArchiveManager(path)
    return Dataset(pairs=manager.load_pairs(), manifest=manager.read_manifest())
