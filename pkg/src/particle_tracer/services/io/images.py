"""
8-bit PNG input/output. Radiance is linear everywhere else in the package; the sRGB
transfer curve is applied on write and inverted on read.
"""
import logging
from pathlib import Path
from typing import Union

import numpy as np
from PIL import Image, UnidentifiedImageError

from src.particle_tracer.exceptions import ImageFormatError

logger = logging.getLogger(__name__)


def linear_to_srgb(x: np.ndarray) -> np.ndarray:
    x = np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0)
    return np.where(x <= 0.0031308, 12.92 * x, 1.055 * np.power(x, 1.0 / 2.4) - 0.055)


def srgb_to_linear(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.where(x <= 0.04045, x / 12.92, np.power((x + 0.055) / 1.055, 2.4))


def to_srgb8(pixels: np.ndarray) -> np.ndarray:
    """Linear radiance (H, W, 3) to 8-bit sRGB, clamping out-of-range values."""
    return np.round(linear_to_srgb(pixels) * 255.0).astype(np.uint8)


def write_image(pixels: np.ndarray, path: Union[str, Path]):
    pixels = np.asarray(pixels)
    if pixels.ndim == 2:
        pixels = np.repeat(pixels[:, :, None], 3, axis=2)
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise ImageFormatError(f"expected an (H, W, 3) image, got shape {pixels.shape}")
    if not np.all(np.isfinite(pixels)):
        logger.warning(f"Non-finite pixels written as 0 to {path}.")
        pixels = np.nan_to_num(pixels, nan=0.0, posinf=1.0, neginf=0.0)
    Image.fromarray(to_srgb8(pixels)).save(path, format='PNG')
    logger.debug(f"Wrote {pixels.shape[1]}x{pixels.shape[0]} image to {path}.")


def read_image(path: Union[str, Path]) -> np.ndarray:
    """Linear RGB (H, W, 3) float64 in [0, 1]; alpha is dropped, 16-bit images are rejected."""
    try:
        with Image.open(path) as img:
            if img.mode in ('I', 'F') or img.mode.startswith('I;16'):
                raise ImageFormatError(f"{path}: {img.mode} images are not supported, expected 8-bit RGB")
            rgb = np.asarray(img.convert('RGB'), dtype=np.float64) / 255.0
    except UnidentifiedImageError as e:
        logger.error(f"Cannot identify image {path}: {e}")
        raise ImageFormatError(f"{path}: not a readable image") from e
    return srgb_to_linear(rgb)
