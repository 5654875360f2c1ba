"""PSNR and SSIM over sub-aperture view grids."""

from __future__ import annotations

import math

import numpy as np

from .resample import gaussian_kernel

__all__ = [
    "psnr",
    "psnr_per_view",
    "mean_psnr",
    "ssim",
    "lightfield_ssim",
]

# ITU-R BT.601 luma weights, used whenever a field carries RGB channels.
_LUMA = np.array([0.299, 0.587, 0.114])


def _to_luma(data):
    """Collapse the channel axis: luma for RGB, passthrough for 1 channel."""
    if data.shape[0] == 3:
        return np.tensordot(_LUMA.astype(data.dtype), data, axes=(0, 0))
    if data.shape[0] == 1:
        return data[0]
    return data.mean(axis=0)


def _psnr_from_mse(mse, peak):
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def psnr(pred, truth, peak=1.0):
    """Single PSNR over every element (luma when RGB); +inf if identical."""
    if pred.shape != truth.shape:
        raise ValueError(f"extent mismatch: {pred.shape} vs {truth.shape}")
    diff = _to_luma(pred.data) - _to_luma(truth.data)
    return _psnr_from_mse(float(np.mean(diff * diff)), peak)


def psnr_per_view(pred, truth, peak=1.0):
    """PSNR of each sub-aperture view, row-major in (s, t)."""
    if pred.shape != truth.shape:
        raise ValueError(f"extent mismatch: {pred.shape} vs {truth.shape}")
    dp = _to_luma(pred.data)
    dt = _to_luma(truth.data)
    values = []
    for s in range(pred.S):
        for t in range(pred.T):
            diff = dp[s, t] - dt[s, t]
            values.append(_psnr_from_mse(float(np.mean(diff * diff)), peak))
    return values

def mean_psnr(pred, truth, peak=1.0):
    """Average of the per-view PSNRs."""
    values = psnr_per_view(pred, truth, peak)
    return sum(values) / len(values)


def ssim(pred_view, truth_view, peak=1.0, window=11, sigma=1.5, k1=0.01, k2=0.03):
    """Structural similarity between two 2D views.

    Gaussian-weighted 11x11 windows (sigma 1.5), averaged over the valid
    window positions; dynamic range defaults to 1.0.
    """
    a = np.asarray(pred_view, dtype=np.float64)
    b = np.asarray(truth_view, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise ValueError(f"views must be matching 2D arrays, got {a.shape} vs {b.shape}")
    if min(a.shape) < window:
        raise ValueError(f"view {a.shape} smaller than SSIM window {window}")
    w = gaussian_kernel(window, sigma)

    def _filter(img):
        win = np.lib.stride_tricks.sliding_window_view(img, (window, window))
        return np.tensordot(win, w, axes=([2, 3], [0, 1]))

    mu_a = _filter(a)
    mu_b = _filter(b)
    var_a = _filter(a * a) - mu_a * mu_a
    var_b = _filter(b * b) - mu_b * mu_b
    cov = _filter(a * b) - mu_a * mu_b
    c1 = (k1 * peak) ** 2
    c2 = (k2 * peak) ** 2
    score = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / (
        (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    )
    return float(score.mean())


def lightfield_ssim(pred, truth, peak=1.0):
    """Mean SSIM over all sub-aperture views (luma when RGB)."""
    if pred.shape != truth.shape:
        raise ValueError(f"extent mismatch: {pred.shape} vs {truth.shape}")
    dp = _to_luma(pred.data)
    dt = _to_luma(truth.data)
    scores = [
        ssim(dp[s, t], dt[s, t], peak)
        for s in range(pred.S)
        for t in range(pred.T)
    ]
    return sum(scores) / len(scores)
