"""
Image losses with analytic gradients w.r.t. the prediction. SSIM uses an 11x11 Gaussian
window (sigma 1.5) with zero padding; every loss is averaged over all pixels and channels.
"""
from typing import Tuple

import numpy as np
from scipy.ndimage import gaussian_filter

from src.particle_tracer.services.io.images import to_srgb8

SSIM_SIGMA = 1.5
SSIM_RADIUS = 5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


def l1_loss(pred: np.ndarray, target: np.ndarray) -> Tuple[float, np.ndarray]:
    diff = np.asarray(pred, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    return float(np.abs(diff).mean()), np.sign(diff) / diff.size


def _window(x: np.ndarray) -> np.ndarray:
    sigma = (SSIM_SIGMA, SSIM_SIGMA) + (0.0,) * (x.ndim - 2)
    return gaussian_filter(x, sigma=sigma, mode='constant', cval=0.0, truncate=SSIM_RADIUS / SSIM_SIGMA)


def ssim(pred: np.ndarray, target: np.ndarray) -> Tuple[float, np.ndarray]:
    """Mean SSIM of (H, W, C) images and its gradient w.r.t. ``pred``."""
    x = np.asarray(pred, dtype=np.float64)
    y = np.asarray(target, dtype=np.float64)
    mx, my = _window(x), _window(y)
    sxx = _window(x * x) - mx * mx
    syy = _window(y * y) - my * my
    sxy = _window(x * y) - mx * my
    a1 = 2.0 * mx * my + SSIM_C1
    a2 = 2.0 * sxy + SSIM_C2
    b1 = mx * mx + my * my + SSIM_C1
    b2 = sxx + syy + SSIM_C2
    s = (a1 * a2) / (b1 * b2)

    # S through m_x = G*x, e_xx = G*x^2, e_xy = G*(xy)
    d_mx = s * (2.0 * my / a1 - 2.0 * my / a2 - 2.0 * mx / b1 + 2.0 * mx / b2)
    d_exx = -s / b2
    d_exy = 2.0 * s / a2
    grad = _window(d_mx) + 2.0 * x * _window(d_exx) + y * _window(d_exy)
    return float(s.mean()), grad / s.size


def image_loss(pred: np.ndarray, target: np.ndarray, lambda_ssim: float) -> Tuple[float, np.ndarray]:
    """(1 - lambda) * L1 + lambda * (1 - SSIM)."""
    l1, g_l1 = l1_loss(pred, target)
    if lambda_ssim == 0.0:
        return l1, g_l1
    value, g_ssim = ssim(pred, target)
    return (1.0 - lambda_ssim) * l1 + lambda_ssim * (1.0 - value), (1.0 - lambda_ssim) * g_l1 - lambda_ssim * g_ssim


def psnr(pred: np.ndarray, target: np.ndarray) -> float:
    """PSNR in dB between the 8-bit sRGB encodings of two linear images; inf when identical."""
    a = to_srgb8(pred).astype(np.float64)
    b = to_srgb8(target).astype(np.float64)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return float('inf')
    return 10.0 * np.log10(255.0 ** 2 / mse)
