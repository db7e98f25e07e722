"""Confidence-weighted metric depth loss, photometric losses, and the total objective."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.ndimage import convolve
from scipy.signal import convolve2d

from .cameras import DepthMap

logger = logging.getLogger(__name__)

LAPLACIAN_KERNEL = np.array([[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]])
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])

SSIM_WIN = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


@dataclass(frozen=True)
class LossWeights:
    lambda_depth: float = 1.0
    lambda_rgb: float = 0.8
    lambda_ssim: float = 0.2
    lambda_normal: float = 0.01

    def __post_init__(self):
        for name in ("lambda_depth", "lambda_rgb", "lambda_ssim", "lambda_normal"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be non-negative")


@dataclass(frozen=True)
class ConfidenceMap:
    """Per-pixel depth-supervision weights in [0, 1] over the LiDAR-valid set."""

    weights: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=np.float64)
        valid = np.asarray(self.valid, dtype=bool)
        if weights.shape != valid.shape:
            raise ValueError("weights and valid mask must share a shape")
        on = weights[valid]
        if on.size and (on.min() < 0.0 or on.max() > 1.0):
            raise ValueError("weights must lie in [0, 1] on valid pixels")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "valid", valid)


def to_luminance(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        return image
    if image.ndim == 3 and image.shape[2] == 3:
        return image @ LUMA_WEIGHTS
    raise ValueError(f"expected (H, W) or (H, W, 3), got {image.shape}")


def laplacian(image: np.ndarray) -> np.ndarray:
    """Discrete 5-point Laplacian with replicate borders; RGB goes through luminance."""
    gray = to_luminance(image)
    if gray.size == 0:
        raise ValueError("empty image")
    if not np.isfinite(gray).all():
        raise ValueError("image contains non-finite values")
    return convolve(gray, LAPLACIAN_KERNEL, mode="nearest")


def confidence_weights(image: np.ndarray, valid: np.ndarray) -> ConfidenceMap:
    """Downweight depth supervision where the image Laplacian is strong.

    w = 1 - |lap| / max over the valid set; a zero max (flat image) yields
    all-ones so featureless frames keep full supervision.
    """
    valid = np.asarray(valid, dtype=bool)
    if not valid.any():
        raise ValueError("confidence weights need at least one valid pixel")
    lap = np.abs(laplacian(image))
    peak = float(lap[valid].max())
    if peak == 0.0:
        weights = np.ones_like(lap)
    else:
        weights = np.clip(1.0 - lap / peak, 0.0, 1.0)
    return ConfidenceMap(weights=weights, valid=valid)


def depth_loss(lidar: DepthMap, rendered: DepthMap, conf: ConfidenceMap) -> float:
    """Confidence-weighted mean absolute depth error over jointly valid pixels."""
    if lidar.shape != rendered.shape or conf.weights.shape != lidar.shape:
        raise ValueError(
            f"resolution mismatch: lidar {lidar.shape}, rendered {rendered.shape}, "
            f"confidence {conf.weights.shape}"
        )
    both = lidar.valid & rendered.valid
    if not both.any():
        logger.warning("depth_loss: no jointly valid pixels; returning 0")
        return 0.0
    resid = np.abs(lidar.depth[both] - rendered.depth[both])
    return float(np.mean(conf.weights[both] * resid))


def l1_rgb(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.mean(np.abs(a - b)))


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) // 2
    x = np.arange(-half, half + 1, dtype=np.float64)
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    g = g / g.sum()
    return np.outer(g, g)


_SSIM_WINDOW = _gaussian_window(SSIM_WIN, SSIM_SIGMA)


def _ssim_single(a: np.ndarray, b: np.ndarray) -> float:
    win = _SSIM_WINDOW

    def filt(img):
        return convolve2d(img, win, mode="valid")

    mu_a = filt(a)
    mu_b = filt(b)
    mu_aa = filt(a * a)
    mu_bb = filt(b * b)
    mu_ab = filt(a * b)
    var_a = mu_aa - mu_a * mu_a
    var_b = mu_bb - mu_b * mu_b
    cov = mu_ab - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2)
    den = (mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return float(np.mean(num / den))


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean SSIM with an 11x11 Gaussian window (sigma 1.5) on [0, 1] images.

    RGB inputs are averaged over per-channel SSIM. Symmetric in its
    arguments; identical images score 1.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if min(a.shape[0], a.shape[1]) < SSIM_WIN:
        raise ValueError(f"image sides must be >= {SSIM_WIN} pixels")
    if a.ndim == 2:
        return _ssim_single(a, b)
    if a.ndim == 3:
        return float(np.mean([_ssim_single(a[..., c], b[..., c]) for c in range(a.shape[2])]))
    raise ValueError(f"expected 2-D or 3-D image, got shape {a.shape}")


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio on [0, 1] images; identical images give inf."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(1.0 / mse))


def total_loss(
    rgb_l1: float,
    ssim_loss: float,
    depth: float,
    weights: LossWeights,
    normal: Optional[float] = None,
) -> float:
    """Weighted objective; the normal term joins only when supplied."""
    for name, value in (("rgb", rgb_l1), ("ssim", ssim_loss), ("depth", depth)):
        if not np.isfinite(value):
            raise ValueError(f"non-finite {name} loss component")
    out = (
        weights.lambda_rgb * rgb_l1
        + weights.lambda_ssim * ssim_loss
        + weights.lambda_depth * depth
    )
    if normal is not None:
        if not np.isfinite(normal):
            raise ValueError("non-finite normal loss component")
        out += weights.lambda_normal * normal
    return float(out)
