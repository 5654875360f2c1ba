"""Differentiable 4D primitives: convolution, activation, normalization, upscaling.

Each operation is a pure function with a forward and an exact analytic
backward. The 4D convolution is the written-out cross-correlation

    out(n, j, s, t, y, x) = b_j + sum_{i,u,v,m,p} w(j,i,u,v,m,p)
                            * in(n, i, s+u, t+v, y+m, x+p)

over the zero-padded input. The production kernel lowers this to a window
matrix gathered with one strided traversal per angular tap, followed by a
single GEMM against the flattened kernel bank; the forward's window matrix
is reusable by the backward. Tests hold the lowering to the explicit
six-deep loop oracle at 1e-12. Reductions happen inside BLAS calls, whose
accumulation order is fixed for one thread configuration, so repeated runs
in one configuration are bit-identical.

Aperture-group batch normalization pools its per-channel statistics over
batch, both angular axes, and both spatial axes together: all views of a
channel are whitened by one (mean, variance) pair, preserving cross-view
coherence of the features.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .resample import linear_upscale_matrix
from .tensor import FeatureTensor

__all__ = [
    "Conv4DLayer",
    "AgbnState",
    "make_conv4d",
    "make_agbn",
    "same_padding",
    "glorot_init",
    "conv4d_forward",
    "conv4d_backward",
    "leaky_relu",
    "leaky_relu_backward",
    "agbn_forward",
    "agbn_backward",
    "angular_interpolate",
    "angular_interpolate_backward",
    "channel_to_space",
    "space_to_channel",
    "upscale",
    "upscale_backward",
]


@dataclass
class Conv4DLayer:
    """One 4D convolution layer: kernel bank, bias, zero-padding amounts.

    ``weights`` is indexed (out_channel, in_channel, u, v, m, p) with
    angular extents a1 x a2 and spatial extents s1 x s2. ``padding`` gives
    the zero-padding applied to both sides of each of the four sliding
    axes, ordered (angular s, angular t, spatial y, spatial x).
    """

    weights: np.ndarray
    bias: np.ndarray
    padding: tuple = (0, 0, 0, 0)

    def __post_init__(self):
        self.weights = np.asarray(self.weights)
        self.bias = np.asarray(self.bias)
        if self.weights.ndim != 6:
            raise ValueError(f"conv weights must be 6D, got ndim={self.weights.ndim}")
        if self.bias.shape != (self.weights.shape[0],):
            raise ValueError(
                f"bias length {self.bias.shape} != out-channel count {self.weights.shape[0]}"
            )
        self.padding = tuple(int(p) for p in self.padding)
        if len(self.padding) != 4 or any(p < 0 for p in self.padding):
            raise ValueError(f"padding must be 4 non-negative ints, got {self.padding}")

    @property
    def out_channels(self):
        return self.weights.shape[0]

    @property
    def in_channels(self):
        return self.weights.shape[1]

    @property
    def kernel_extents(self):
        return self.weights.shape[2:]


def same_padding(angular, spatial):
    """Padding that keeps extents fixed; requires odd kernel extents."""
    extents = (*angular, *spatial)
    if any(k % 2 == 0 for k in extents):
        raise ValueError(f"'same' padding needs odd kernel extents, got {extents}")
    return tuple((k - 1) // 2 for k in extents)


def make_conv4d(in_channels, out_channels, angular=(1, 1), spatial=(3, 3),
                padding="same", dtype=np.float64):
    """Zero-initialized layer; pass through :func:`glorot_init` to fill it."""
    if padding == "same":
        padding = same_padding(angular, spatial)
    weights = np.zeros((out_channels, in_channels, *angular, *spatial), dtype=dtype)
    bias = np.zeros(out_channels, dtype=dtype)
    return Conv4DLayer(weights, bias, padding)


def glorot_init(layer, seed):
    """Uniform Glorot fill: w ~ U[-b, b], b = sqrt(6 / (fan_in + fan_out)).

    Fans count every kernel tap: fan_in = in_channels * a1*a2*s1*s2 and
    fan_out = out_channels * a1*a2*s1*s2. Bias starts at zero. Deterministic
    for a given seed.
    """
    rng = np.random.default_rng(seed)
    taps = int(np.prod(layer.kernel_extents))
    fan_in = layer.in_channels * taps
    fan_out = layer.out_channels * taps
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    weights = rng.uniform(-bound, bound, size=layer.weights.shape).astype(layer.weights.dtype)
    bias = np.zeros_like(layer.bias)
    return Conv4DLayer(weights, bias, layer.padding)


def _pad_sliding(x, padding):
    pa1, pa2, ps1, ps2 = padding
    if not any(padding):
        return x
    return np.pad(x, ((0, 0), (0, 0), (pa1, pa1), (pa2, pa2), (ps1, ps1), (ps2, ps2)))


def _check_conv_shapes(x, layer):
    if x.shape[1] != layer.in_channels:
        raise ValueError(
            f"input has {x.shape[1]} channels, layer expects {layer.in_channels}"
        )
    padded = [e + 2 * p for e, p in zip(x.shape[2:], layer.padding)]
    if any(pe < ke for pe, ke in zip(padded, layer.kernel_extents)):
        raise ValueError(
            f"kernel {layer.kernel_extents} larger than padded extents {tuple(padded)}"
        )


def _gather_cols(xpad, kernel_extents):
    """Lower the padded input to a (taps, positions) window matrix.

    Rows run over (in_channel, u, v, m, p) to match the flattened kernel
    bank; columns over (n, s, t, y, x) with x fastest. The buffer is filled
    with one strided traversal per angular tap (the spatial x runs stay
    contiguous), which is what the memory-bound hosts this targets care
    about; the final reshape is a view, not a copy.
    """
    a1, a2, k1, k2 = kernel_extents
    n, ci = xpad.shape[:2]
    So, To = xpad.shape[2] - a1 + 1, xpad.shape[3] - a2 + 1
    Yo, Xo = xpad.shape[4] - k1 + 1, xpad.shape[5] - k2 + 1
    buf = np.empty((ci, a1, a2, k1, k2, n, So, To, Yo, Xo), dtype=xpad.dtype)
    for u in range(a1):
        for v in range(a2):
            win = np.lib.stride_tricks.sliding_window_view(
                xpad[:, :, u:u + So, v:v + To], (k1, k2), axis=(4, 5)
            )
            np.copyto(buf[:, u, v], win.transpose(1, 6, 7, 0, 2, 3, 4, 5))
    cols = buf.reshape(ci * a1 * a2 * k1 * k2, n * So * To * Yo * Xo)
    return cols, (So, To, Yo, Xo)


def _corr4d_valid(xpad, w):
    """Valid 4D cross-correlation: gather windows once, one GEMM."""
    n = xpad.shape[0]
    co = w.shape[0]
    cols, (So, To, Yo, Xo) = _gather_cols(xpad, w.shape[2:])
    out = w.reshape(co, -1) @ cols
    return out.reshape(co, n, So, To, Yo, Xo).transpose(1, 0, 2, 3, 4, 5)


def conv4d_forward(input, layer, _cache=None):
    """4D cross-correlation over the zero-padded input, plus bias.

    ``_cache``, when given an empty list, receives the internal window
    matrix for reuse by the matching backward inside the training loop.
    """
    x = input.data
    _check_conv_shapes(x, layer)
    dtype = np.result_type(x.dtype, layer.weights.dtype)
    xpad = _pad_sliding(x.astype(dtype, copy=False), layer.padding)
    cols, (So, To, Yo, Xo) = _gather_cols(xpad, layer.kernel_extents)
    if _cache is not None:
        _cache.append(cols)
    out = layer.weights.reshape(layer.out_channels, -1).astype(dtype, copy=False) @ cols
    out += layer.bias.astype(dtype, copy=False)[:, None]
    out = out.reshape(layer.out_channels, x.shape[0], So, To, Yo, Xo)
    return FeatureTensor(np.ascontiguousarray(out.transpose(1, 0, 2, 3, 4, 5)))


def conv4d_backward(input, layer, grad_output, _cache=None):
    """Exact adjoints of :func:`conv4d_forward`.

    Returns (grad_input, grad_weights, grad_bias). grad_bias sums the
    output gradient per channel; grad_weights contracts the output
    gradient against the same window matrix the forward used (reused when
    the forward cached it); grad_input is the full correlation of the
    output gradient with the channel-transposed, axis-flipped kernel, run
    through the identical gather+GEMM kernel.
    """
    x = input.data
    _check_conv_shapes(x, layer)
    g = grad_output.data
    dtype = np.result_type(x.dtype, layer.weights.dtype, g.dtype)
    a1, a2, k1, k2 = layer.kernel_extents
    So = x.shape[2] + 2 * layer.padding[0] - a1 + 1
    To = x.shape[3] + 2 * layer.padding[1] - a2 + 1
    Yo = x.shape[4] + 2 * layer.padding[2] - k1 + 1
    Xo = x.shape[5] + 2 * layer.padding[3] - k2 + 1
    expected = (x.shape[0], layer.out_channels, So, To, Yo, Xo)
    if g.shape != expected:
        raise ValueError(f"grad_output shape {g.shape} != forward output shape {expected}")
    g = g.astype(dtype, copy=False)

    grad_bias = g.sum(axis=(0, 2, 3, 4, 5))

    if _cache:
        cols = _cache[0]
    else:
        xpad = _pad_sliding(x.astype(dtype, copy=False), layer.padding)
        cols, _ = _gather_cols(xpad, layer.kernel_extents)
    gmat = np.ascontiguousarray(g.transpose(1, 0, 2, 3, 4, 5)).reshape(layer.out_channels, -1)
    grad_weights = (gmat @ cols.T).reshape(layer.weights.shape)

    # grad wrt the padded input is the full correlation with the flipped,
    # channel-transposed kernel; strip the forward padding afterwards.
    w_flip = np.ascontiguousarray(
        layer.weights.astype(dtype, copy=False)
        .transpose(1, 0, 2, 3, 4, 5)[:, :, ::-1, ::-1, ::-1, ::-1]
    )
    gpad = _pad_sliding(g, (a1 - 1, a2 - 1, k1 - 1, k2 - 1))
    gx_pad = _corr4d_valid(gpad, w_flip)
    pa1, pa2, ps1, ps2 = layer.padding
    grad_input = np.ascontiguousarray(
        gx_pad[:, :, pa1:pa1 + x.shape[2], pa2:pa2 + x.shape[3],
               ps1:ps1 + x.shape[4], ps2:ps2 + x.shape[5]]
    )
    return FeatureTensor(grad_input), grad_weights, grad_bias


def leaky_relu(input, alpha=0.2):
    """x if x >= 0 else alpha * x, elementwise."""
    x = input.data
    return FeatureTensor(np.where(x >= 0, x, x * alpha))


def leaky_relu_backward(input, alpha, grad_output):
    """Multiplies by 1 on x >= 0 and alpha below; the kink at 0 takes slope 1."""
    x = input.data
    return FeatureTensor(np.where(x >= 0, grad_output.data, grad_output.data * alpha))


@dataclass
class AgbnState:
    """Learnable scale/shift plus running statistics for aperture-group norm."""

    gamma: np.ndarray
    beta: np.ndarray
    eps: float = 1e-3
    momentum: float = 0.9
    running_mean: np.ndarray = None
    running_var: np.ndarray = None

    def __post_init__(self):
        self.gamma = np.asarray(self.gamma)
        self.beta = np.asarray(self.beta)
        if self.eps <= 0:
            raise ValueError(f"eps must be positive, got {self.eps}")
        c = self.gamma.shape[0]
        if self.gamma.ndim != 1 or self.beta.shape != (c,):
            raise ValueError("gamma and beta must be 1D with equal length")
        if self.running_mean is None:
            self.running_mean = np.zeros(c, dtype=self.gamma.dtype)
        if self.running_var is None:
            self.running_var = np.ones(c, dtype=self.gamma.dtype)
        if self.running_mean.shape != (c,) or self.running_var.shape != (c,):
            raise ValueError("running statistics must match channel count")

    @property
    def channels(self):
        return self.gamma.shape[0]


def make_agbn(channels, eps=1e-3, momentum=0.9, dtype=np.float64):
    return AgbnState(np.ones(channels, dtype=dtype), np.zeros(channels, dtype=dtype),
                     eps=eps, momentum=momentum)


def _agbn_check(x, state):
    if x.shape[1] != state.channels:
        raise ValueError(f"input has {x.shape[1]} channels, norm state has {state.channels}")


_POOL_AXES = (0, 2, 3, 4, 5)


def agbn_forward(input, state, mode="train"):
    """Normalize each channel over its full aperture group.

    In train mode the per-channel mean and variance pool over batch, both
    angular axes, and all spatial positions; running statistics are updated
    in place with the configured momentum. Eval mode applies the stored
    running statistics instead.
    """
    x = input.data
    _agbn_check(x, state)
    shape = (1, state.channels, 1, 1, 1, 1)
    if mode == "train":
        count = x.size // x.shape[1]
        if count < 2:
            raise ValueError(f"aperture group has {count} values per channel; need >= 2")
        mean = x.mean(axis=_POOL_AXES)
        var = x.var(axis=_POOL_AXES)
        state.running_mean = state.momentum * state.running_mean + (1 - state.momentum) * mean
        state.running_var = state.momentum * state.running_var + (1 - state.momentum) * var
    elif mode == "eval":
        mean = state.running_mean
        var = state.running_var
    else:
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    inv = 1.0 / np.sqrt(var + state.eps)
    out = (x - mean.reshape(shape)) * (state.gamma * inv).reshape(shape) + state.beta.reshape(shape)
    return FeatureTensor(out)


def agbn_backward(input, state, grad_output):
    """Train-mode adjoint; returns (grad_input, grad_gamma, grad_beta)."""
    x = input.data
    _agbn_check(x, state)
    g = grad_output.data
    if g.shape != x.shape:
        raise ValueError(f"grad_output shape {g.shape} != input shape {x.shape}")
    shape = (1, state.channels, 1, 1, 1, 1)
    count = x.size // x.shape[1]
    mean = x.mean(axis=_POOL_AXES)
    var = x.var(axis=_POOL_AXES)
    inv = 1.0 / np.sqrt(var + state.eps)
    xhat = (x - mean.reshape(shape)) * inv.reshape(shape)
    grad_beta = g.sum(axis=_POOL_AXES)
    grad_gamma = (g * xhat).sum(axis=_POOL_AXES)
    gx = (state.gamma * inv).reshape(shape) * (
        g - (grad_beta / count).reshape(shape) - xhat * (grad_gamma / count).reshape(shape)
    )
    return FeatureTensor(gx), grad_gamma, grad_beta


def angular_interpolate(input, r_a):
    """Endpoint-preserving linear upscale of both angular axes.

    Extents map S -> r_a*(S-1)+1 (3x3 becomes 5x5 at r_a=2) and the
    original views are reproduced bit-exactly at stride r_a.
    """
    if r_a == 1:
        return input
    x = input.data
    if x.shape[2] < 2 or x.shape[3] < 2:
        raise ValueError(f"angular extents {x.shape[2:4]} too small to interpolate")
    ms = linear_upscale_matrix(x.shape[2], r_a).astype(x.dtype)
    mt = linear_upscale_matrix(x.shape[3], r_a).astype(x.dtype)
    out = np.moveaxis(np.moveaxis(x, 2, -1) @ ms.T, -1, 2)
    out = np.moveaxis(np.moveaxis(out, 3, -1) @ mt.T, -1, 3)
    return FeatureTensor(np.ascontiguousarray(out))


def angular_interpolate_backward(grad_output, S, T, r_a):
    """Adjoint of :func:`angular_interpolate` onto an (S, T) angular grid."""
    if r_a == 1:
        return grad_output
    g = grad_output.data
    ms = linear_upscale_matrix(S, r_a).astype(g.dtype)
    mt = linear_upscale_matrix(T, r_a).astype(g.dtype)
    out = np.moveaxis(np.moveaxis(g, 2, -1) @ ms, -1, 2)
    out = np.moveaxis(np.moveaxis(out, 3, -1) @ mt, -1, 3)
    return FeatureTensor(np.ascontiguousarray(out))


def channel_to_space(input, r_s):
    """Trade r_s^2 channels for an r_s-fold increase of both spatial axes.

    out(n, c, s, t, r*y + dy, r*x + dx) = in(n, c*r^2 + dy*r + dx, s, t, y, x);
    a pure element permutation, inverted by :func:`space_to_channel`.
    """
    if r_s == 1:
        return input
    n, c, S, T, Y, X = input.shape
    r2 = r_s * r_s
    if c % r2:
        raise ValueError(f"channel count {c} not divisible by r_s^2 = {r2}")
    x = input.data.reshape(n, c // r2, r_s, r_s, S, T, Y, X)
    x = x.transpose(0, 1, 4, 5, 6, 2, 7, 3)
    return FeatureTensor(np.ascontiguousarray(x).reshape(n, c // r2, S, T, Y * r_s, X * r_s))


def space_to_channel(input, r_s):
    """Inverse shuffle; bit-exact round trip with :func:`channel_to_space`."""
    if r_s == 1:
        return input
    n, c, S, T, Y, X = input.shape
    if Y % r_s or X % r_s:
        raise ValueError(f"spatial extents ({Y},{X}) not divisible by r_s = {r_s}")
    x = input.data.reshape(n, c, S, T, Y // r_s, r_s, X // r_s, r_s)
    x = x.transpose(0, 1, 5, 7, 2, 3, 4, 6)
    return FeatureTensor(np.ascontiguousarray(x).reshape(n, c * r_s * r_s, S, T, Y // r_s, X // r_s))


def upscale(input, layer, r_s, r_a, _cache=None):
    """Spatio-angular upscaling: channel-expanding 4D convolution over the
    zero-padded input, linear angular interpolation by r_a, then the
    channel-to-space shuffle by r_s."""
    if layer.out_channels % (r_s * r_s):
        raise ValueError(
            f"upscale conv must emit a multiple of r_s^2 channels, got {layer.out_channels}"
        )
    out = conv4d_forward(input, layer, _cache)
    out = angular_interpolate(out, r_a)
    return channel_to_space(out, r_s)


def upscale_backward(input, layer, r_s, r_a, grad_output, _cache=None):
    """Adjoint chain of :func:`upscale`: unshuffle, angular adjoint, conv adjoint."""
    g = space_to_channel(grad_output, r_s)
    # Angular extents as they were at the interpolation input (conv output).
    pa1, pa2 = layer.padding[0], layer.padding[1]
    a1, a2 = layer.kernel_extents[0], layer.kernel_extents[1]
    S_conv = input.S + 2 * pa1 - a1 + 1
    T_conv = input.T + 2 * pa2 - a2 + 1
    g = angular_interpolate_backward(g, S_conv, T_conv, r_a)
    return conv4d_backward(input, layer, g, _cache)
