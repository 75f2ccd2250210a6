"""PSNR and SSIM on [0, 1] images, in RGB or on the BT.601 luma (Y) channel."""
from __future__ import annotations

from functools import lru_cache

import numpy as np

from .data import gaussian_kernel1d
from .errors import ShapeMismatchError

PSNR_CAP = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
K1, K2 = 0.01, 0.03


def rgb_to_y(img):
    """(..., 3, H, W) in [0, 1] -> (..., 1, H, W): Y = (65.481 R + 128.553 G + 24.966 B + 16) / 255."""
    img = np.asarray(img, dtype=np.float64)
    r, g, b = img[..., 0, :, :], img[..., 1, :, :], img[..., 2, :, :]
    return ((65.481 * r + 128.553 * g + 24.966 * b + 16.0) / 255.0)[..., None, :, :]


def _select(a, b, mode):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatchError("metric", a.shape, b.shape)
    mode = mode.lower()
    if mode == "y":
        return rgb_to_y(a), rgb_to_y(b)
    if mode == "rgb":
        return a, b
    raise ValueError(f"mode must be 'rgb' or 'y', got {mode!r}")


def psnr(a, b, mode="rgb"):
    """10 log10(1 / MSE) over the selected channels; 100 dB when the inputs are identical."""
    a, b = _select(a, b, mode)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))


@lru_cache(maxsize=32)
def _valid_filter(n):
    g = gaussian_kernel1d(SSIM_SIGMA, SSIM_WINDOW)
    m = np.zeros((n - SSIM_WINDOW + 1, n))
    for i in range(m.shape[0]):
        m[i, i:i + SSIM_WINDOW] = g
    return m


def _ssim_plane(x, y):
    h, w = x.shape
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise ShapeMismatchError("ssim", x.shape, (SSIM_WINDOW, SSIM_WINDOW), detail="image smaller than window")
    fh, fw = _valid_filter(h), _valid_filter(w)

    def filt(z):
        return fh @ z @ fw.T

    c1 = K1 ** 2
    c2 = K2 ** 2
    mx, my = filt(x), filt(y)
    sxx = filt(x * x) - mx * mx
    syy = filt(y * y) - my * my
    sxy = filt(x * y) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def ssim(a, b, mode="rgb"):
    """Mean SSIM: 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03, range 1, valid windows only.

    RGB mode averages the per-channel values.
    """
    a, b = _select(a, b, mode)
    a = a.reshape(-1, *a.shape[-2:])
    b = b.reshape(-1, *b.shape[-2:])
    return float(np.mean([_ssim_plane(x, y) for x, y in zip(a, b)]))


def sequence_metrics(pred, gt, mode="rgb", sequence_id="seq"):
    """Per-frame rows (sequence_id, frame_index, psnr_db, ssim, mode)."""
    if len(pred) != len(gt):
        raise ShapeMismatchError("evaluate", (len(pred),), (len(gt),), detail="frame count")
    return [
        {"sequence_id": sequence_id, "frame_index": i, "psnr_db": psnr(p, g, mode), "ssim": ssim(p, g, mode), "mode": mode}
        for i, (p, g) in enumerate(zip(pred, gt))
    ]
