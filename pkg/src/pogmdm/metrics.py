"""Image quality metrics and root-sum-of-squares weighting."""

from __future__ import annotations

import numpy as np
from scipy import ndimage

__all__ = ["psnr", "nmse", "ssim", "rss_weight"]

PSNR_CAP = 99.0


def _as_real_pair(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(estimate: np.ndarray, reference: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB against the reference peak, capped at 99."""
    estimate, reference = _as_real_pair(estimate, reference)
    mse = np.mean((estimate - reference) ** 2)
    peak = reference.max()
    if mse == 0:
        return PSNR_CAP
    return float(min(10.0 * np.log10(peak**2 / mse), PSNR_CAP))


def nmse(estimate: np.ndarray, reference: np.ndarray) -> float:
    """Squared error normalised by the squared reference norm."""
    estimate, reference = _as_real_pair(estimate, reference)
    denom = np.sum(reference**2)
    if denom == 0:
        raise ValueError("reference has zero norm")
    return float(np.sum((estimate - reference) ** 2) / denom)


def ssim(estimate: np.ndarray, reference: np.ndarray, win: int = 7,
         k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean structural similarity with a uniform window.

    The dynamic range is taken from the reference peak, which keeps the
    measure symmetric whenever both images share it.
    """
    x, y = _as_real_pair(estimate, reference)
    drange = y.max()
    c1 = (k1 * drange) ** 2
    c2 = (k2 * drange) ** 2
    uf = lambda a: ndimage.uniform_filter(a, size=win, mode="reflect")
    mx, my = uf(x), uf(y)
    vx = uf(x * x) - mx * mx
    vy = uf(y * y) - my * my
    cxy = uf(x * y) - mx * my
    num = (2 * mx * my + c1) * (2 * cxy + c2)
    den = (mx**2 + my**2 + c1) * (vx + vy + c2)
    return float(np.mean(num / den))


def rss_weight(estimate: np.ndarray, sens: np.ndarray) -> np.ndarray:
    """Magnitude image weighted by the root sum of squares of the coil maps."""
    estimate = np.asarray(estimate)
    sens = np.asarray(sens)
    if sens.shape[-2:] != estimate.shape[-2:]:
        raise ValueError("sensitivities do not match the image shape")
    return np.abs(estimate) * np.sqrt(np.sum(np.abs(sens) ** 2, axis=-3))
