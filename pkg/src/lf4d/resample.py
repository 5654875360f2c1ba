"""Separable resampling primitives shared by the data pipeline and network.

Every resize here is a linear map expressed as an explicit per-axis matrix,
so adjoints (for backprop) are plain transposes and test oracles can check
the matrices directly.

Two anchor conventions are used on purpose:

* integer upscaling ("grid" anchor): output index k samples input position
  k / r, so every input sample is reproduced exactly at stride r. This is
  the inverse bookkeeping of nearest-neighbour decimation anchored at 0.
* arbitrary rescaling ("center" anchor): pixel centers are aligned via
  src = (dst + 0.5) / scale - 0.5, the usual image-resize convention.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "linear_upscale_matrix",
    "bicubic_upscale_matrix",
    "bicubic_resize_matrix",
    "resize_views",
    "upsample_views",
    "gaussian_kernel_1d",
    "gaussian_kernel",
    "gaussian_blur",
]


def linear_upscale_matrix(n_in, r, dtype=np.float64):
    """Endpoint-preserving linear interpolation matrix, n_in -> r*(n_in-1)+1.

    Rows at multiples of r are exact unit rows, so original samples pass
    through bit-identically.
    """
    if r < 1:
        raise ValueError("upscale factor must be >= 1")
    if r == 1:
        return np.eye(n_in, dtype=dtype)
    if n_in < 2:
        raise ValueError("linear upscaling needs at least 2 samples per axis")
    n_out = r * (n_in - 1) + 1
    mat = np.zeros((n_out, n_in), dtype=dtype)
    for k in range(n_out):
        j, rem = divmod(k, r)
        if rem == 0:
            mat[k, j] = 1.0
        else:
            f = rem / r
            mat[k, j] = 1.0 - f
            mat[k, j + 1] = f
    return mat


def _keys_cubic(u):
    """Catmull-Rom cubic kernel (Keys, a = -0.5)."""
    u = abs(u)
    if u < 1.0:
        return 1.5 * u**3 - 2.5 * u**2 + 1.0
    if u < 2.0:
        return -0.5 * u**3 + 2.5 * u**2 - 4.0 * u + 2.0
    return 0.0


def _cubic_row(n_in, src):
    """One resize-matrix row: cubic weights around src, edge-clamped."""
    row = np.zeros(n_in)
    base = int(np.floor(src))
    for j in range(base - 1, base + 3):
        w = _keys_cubic(src - j)
        row[min(max(j, 0), n_in - 1)] += w
    total = row.sum()
    if total != 0.0:
        row /= total
    return row


def bicubic_upscale_matrix(n_in, r, dtype=np.float64):
    """Cubic interpolation matrix for integer upscaling, n_in -> r*n_in.

    Grid-anchored: output k samples input position k / r, so rows at
    multiples of r are exact unit rows (kept samples pass through).
    """
    if r < 1:
        raise ValueError("upscale factor must be >= 1")
    n_out = r * n_in
    mat = np.zeros((n_out, n_in), dtype=dtype)
    for k in range(n_out):
        j, rem = divmod(k, r)
        if rem == 0:
            mat[k, j] = 1.0
        else:
            mat[k] = _cubic_row(n_in, k / r)
    return mat


def bicubic_resize_matrix(n_in, n_out, dtype=np.float64):
    """Cubic resize matrix for arbitrary extents, pixel-center aligned."""
    if n_out < 1:
        raise ValueError("output extent must be positive")
    scale = n_out / n_in
    mat = np.zeros((n_out, n_in), dtype=dtype)
    for k in range(n_out):
        src = (k + 0.5) / scale - 0.5
        mat[k] = _cubic_row(n_in, src)
    return mat


def _apply_rows(mat, arr, axis):
    """Apply a (n_out, n_in) matrix along one axis of arr."""
    moved = np.moveaxis(arr, axis, -1)
    out = moved @ mat.T.astype(arr.dtype, copy=False)
    return np.moveaxis(out, -1, axis)


def resize_views(arr, out_y, out_x):
    """Bicubic-resize the trailing (Y, X) axes of an array to (out_y, out_x)."""
    my = bicubic_resize_matrix(arr.shape[-2], out_y)
    mx = bicubic_resize_matrix(arr.shape[-1], out_x)
    return _apply_rows(mx, _apply_rows(my, arr, -2), -1)


def upsample_views(arr, r_s):
    """Grid-anchored bicubic upscale of the trailing (Y, X) axes by r_s."""
    if r_s == 1:
        return arr.copy()
    my = bicubic_upscale_matrix(arr.shape[-2], r_s)
    mx = bicubic_upscale_matrix(arr.shape[-1], r_s)
    return _apply_rows(mx, _apply_rows(my, arr, -2), -1)


def gaussian_kernel_1d(window, sigma, dtype=np.float64):
    if window % 2 == 0 or window < 1:
        raise ValueError(f"blur window must be odd and positive, got {window}")
    if sigma <= 0:
        raise ValueError(f"blur sigma must be positive, got {sigma}")
    half = window // 2
    offsets = np.arange(-half, half + 1, dtype=np.float64)
    g = np.exp(-(offsets**2) / (2.0 * sigma * sigma))
    g /= g.sum()
    return g.astype(dtype)


def gaussian_kernel(window, sigma, dtype=np.float64):
    """Separable 2D Gaussian kernel, normalized to sum 1, symmetric."""
    g = gaussian_kernel_1d(window, sigma, dtype=np.float64)
    return np.outer(g, g).astype(dtype)


def _correlate_axis(arr, kernel, axis):
    """1D correlation along ``axis`` with reflective (mirror) padding."""
    half = len(kernel) // 2
    pad = [(0, 0)] * arr.ndim
    pad[axis] = (half, half)
    padded = np.pad(arr, pad, mode="reflect")
    moved = np.moveaxis(padded, axis, -1)
    win = np.lib.stride_tricks.sliding_window_view(moved, len(kernel), axis=-1)
    out = win @ kernel.astype(arr.dtype, copy=False)
    return np.moveaxis(out, -1, axis)


def gaussian_blur(arr, window, sigma):
    """Separable Gaussian blur over the trailing (Y, X) axes.

    Boundary handling is mirror reflection (no edge duplication), which
    avoids the darkened borders zero padding would introduce.
    """
    k = gaussian_kernel_1d(window, sigma)
    return _correlate_axis(_correlate_axis(arr, k, -2), k, -1)
