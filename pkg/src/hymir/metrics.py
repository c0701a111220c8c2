"""Evaluation metrics over numpy arrays: PSNR, SSIM, and the YCbCr protocol.

These operate on plain arrays and return floats; nothing here participates
in differentiation.  Inputs are image stacks with the two trailing axes
spatial; any leading axes (batch, channel) are averaged over.
"""

import math

import numpy as np

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _as_planes(pred, gt, caller):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"{caller}: shape {pred.shape} != {gt.shape}")
    if pred.ndim < 2:
        raise ValueError(f"{caller}: need at least 2 spatial axes, got shape {pred.shape}")
    return pred, gt


def psnr(pred, gt, max_val=1.0):
    """10*log10(max^2 / MSE); +inf when the images are identical."""
    pred, gt = _as_planes(pred, gt, "psnr")
    mse = float(np.mean((pred - gt) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(max_val * max_val / mse)


def _gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    half = (size - 1) / 2.0
    x = np.arange(size, dtype=np.float64) - half
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _filter_valid(img, kernel):
    """Separable correlation over the two trailing axes, valid region only."""
    k = len(kernel)
    h, w = img.shape[-2:]
    out = np.zeros(img.shape[:-2] + (h - k + 1, w), dtype=img.dtype)
    for i in range(k):
        out += kernel[i] * img[..., i : h - k + 1 + i, :]
    final = np.zeros(out.shape[:-1] + (w - k + 1,), dtype=img.dtype)
    for j in range(k):
        final += kernel[j] * out[..., :, j : w - k + 1 + j]
    return final


def ssim(pred, gt, max_val=1.0):
    """Mean local SSIM with an 11x11 Gaussian window, sigma 1.5.

    Computed per plane over the valid region (no border padding), then
    averaged across all leading axes.
    """
    pred, gt = _as_planes(pred, gt, "ssim")
    h, w = pred.shape[-2:]
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise ValueError(f"ssim needs extents >= {SSIM_WINDOW}, got {h}x{w}")
    k = _gaussian_window()
    c1 = (SSIM_K1 * max_val) ** 2
    c2 = (SSIM_K2 * max_val) ** 2

    mu_p = _filter_valid(pred, k)
    mu_g = _filter_valid(gt, k)
    var_p = _filter_valid(pred * pred, k) - mu_p * mu_p
    var_g = _filter_valid(gt * gt, k) - mu_g * mu_g
    cov = _filter_valid(pred * gt, k) - mu_p * mu_g

    num = (2.0 * mu_p * mu_g + c1) * (2.0 * cov + c2)
    den = (mu_p * mu_p + mu_g * mu_g + c1) * (var_p + var_g + c2)
    return float(np.mean(num / den))


def rgb_to_ycbcr(img):
    """BT.601 full-range RGB -> YCbCr, channels on axis -3, inputs in [0, 1]."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim < 3 or img.shape[-3] != 3:
        raise ValueError(f"expected 3 channels on axis -3, got shape {img.shape}")
    r, g, b = img[..., 0, :, :], img[..., 1, :, :], img[..., 2, :, :]
    y = 0.299 * r + 0.587 * g + 0.114 * b
    cb = (b - y) / 1.772 + 0.5
    cr = (r - y) / 1.402 + 0.5
    return np.stack([y, cb, cr], axis=-3)


def luma(img):
    """Y plane only, keeping a singleton channel axis."""
    return rgb_to_ycbcr(img)[..., 0:1, :, :]
