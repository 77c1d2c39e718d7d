"""Algorithmic line art extraction (XDoG) and brightness augmentation.

The XDoG response is a soft-thresholded difference of two Gaussian blurs:
``D = blur(I, sigma) - tau * blur(I, k * sigma)``; pixels with ``D >= eps``
render white, the rest fall off as ``1 + tanh(phi * (D - eps))``. Dark
values trace edges and the background stays near white.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np


@dataclass(frozen=True)
class XdogParams:
    sigma: float
    k: float
    tau: float
    eps: float
    phi: float

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if self.k <= 1:
            raise ValueError(f"k must exceed 1, got {self.k}")
        if self.phi <= 0:
            raise ValueError(f"phi must be positive, got {self.phi}")


def sprite_default(size: int) -> XdogParams:
    """Preset tuned so sprite region boundaries yield closed dark contours."""
    return XdogParams(sigma=max(0.45, 0.8 * size / 256), k=1.6,
                      tau=0.95, eps=0.01, phi=150.0)


def jitter_params(params: XdogParams, rng: np.random.Generator) -> XdogParams:
    """Randomize sigma and line strength by +-10% to diversify sketches.

    Tau is jittered through its distance to 1 so it never crosses 1, which
    would invert the page to black.
    """
    return replace(params,
                   sigma=params.sigma * float(rng.uniform(0.9, 1.1)),
                   tau=1.0 - (1.0 - params.tau) * float(rng.uniform(0.9, 1.1)))


def gaussian_kernel(sigma: float) -> np.ndarray:
    """1-D Gaussian taps truncated at radius ceil(3*sigma), normalized."""
    radius = max(1, math.ceil(3.0 * sigma))
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    w = np.exp(-(xs**2) / (2.0 * sigma**2))
    return w / w.sum()


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with reflect padding (no edge duplication)."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError("expected a 2-D image")
    kernel = gaussian_kernel(sigma)
    radius = len(kernel) // 2
    h, w = img.shape
    if radius >= h or radius >= w:
        raise ValueError(f"blur radius {radius} too large for {h}x{w} image")
    padded = np.pad(img, ((radius, radius), (0, 0)), mode="reflect")
    out = np.zeros_like(img)
    for i, kv in enumerate(kernel):
        out += kv * padded[i:i + h, :]
    padded = np.pad(out, ((0, 0), (radius, radius)), mode="reflect")
    out = np.zeros_like(img)
    for i, kv in enumerate(kernel):
        out += kv * padded[:, i:i + w]
    return out


def grayscale(color_image: np.ndarray) -> np.ndarray:
    """Rec. 601 luminance: 0.299 R + 0.587 G + 0.114 B."""
    img = np.asarray(color_image, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError("expected an RGB image of shape (H, W, 3)")
    return img @ np.array([0.299, 0.587, 0.114])


def xdog(gray_image: np.ndarray, params: XdogParams) -> np.ndarray:
    """Soft-thresholded DoG line art; dark strokes on a white background."""
    gray = np.asarray(gray_image, dtype=np.float64)
    if gray.ndim != 2:
        raise ValueError("expected a grayscale image")
    d = (gaussian_blur(gray, params.sigma)
         - params.tau * gaussian_blur(gray, params.k * params.sigma))
    soft = 1.0 + np.tanh(params.phi * (d - params.eps))
    out = np.where(d >= params.eps, 1.0, soft)
    return np.clip(out, 0.0, 1.0)


def extract_lineart(color_image: np.ndarray, params: XdogParams) -> np.ndarray:
    return xdog(grayscale(color_image), params)


def brightness_scale(line_art: np.ndarray, factor: float) -> np.ndarray:
    """Scale pixel values toward white, clamped at 1. Weakens dark strokes."""
    if factor < 1.0:
        raise ValueError(f"brightness factor must be >= 1, got {factor}")
    img = np.asarray(line_art, dtype=np.float64)
    return np.minimum(1.0, img * factor)
