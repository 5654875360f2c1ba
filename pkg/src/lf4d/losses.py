"""Composite training objective: angular MSE plus aperture-wise feature loss.

The angular term is the raw sum of squared differences over every light
field sample; regrouping that sum over (y, t) shows it equals the summed
energies of the horizontal EPI differences, which is what ties the pixel
loss to cross-view structure. The spatial term compares fixed deep features
of each sub-aperture view and averages over the aperture grid.

The feature extractor here is a frozen, seeded stack of small convolutions.
It stands in for a pretrained perceptual network (out of scope for this
package) while keeping the loss shape identical: feature-space squared
error, averaged per view. Swap in any object with the same three methods
to use real pretrained features.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ops import (
    conv4d_backward,
    conv4d_forward,
    glorot_init,
    leaky_relu,
    leaky_relu_backward,
    make_conv4d,
)
from .tensor import FeatureTensor

__all__ = [
    "LossWeights",
    "FeatureExtractor",
    "angular_loss",
    "spatial_loss",
    "combined_loss",
]


@dataclass(frozen=True)
class LossWeights:
    """alpha scales the spatial (feature) loss, beta the angular MSE loss."""

    alpha: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("loss weights must be non-negative")
        if self.alpha == 0 and self.beta == 0:
            raise ValueError("at least one loss weight must be positive")


class FeatureExtractor:
    """Frozen per-view feature stack: three valid 3x3 convs with LeakyReLU.

    Channels run in_channels -> 8 -> 16 -> 16. Views are processed jointly
    by expressing each 2D convolution as a 4D convolution with 1x1 angular
    extent. Identical seeds build identical extractors; parameters never
    train.
    """

    STAGE_CHANNELS = (8, 16, 16)

    def __init__(self, in_channels=1, seed=0, alpha=0.2, dtype=np.float64):
        self.in_channels = in_channels
        self.alpha = alpha
        seeds = np.random.SeedSequence(seed).spawn(len(self.STAGE_CHANNELS))
        self.layers = []
        prev = in_channels
        for ch, s in zip(self.STAGE_CHANNELS, seeds):
            layer = make_conv4d(prev, ch, angular=(1, 1), spatial=(3, 3),
                                padding=(0, 0, 0, 0), dtype=dtype)
            self.layers.append(glorot_init(layer, s))
            prev = ch

    @property
    def receptive_field(self):
        """Spatial support of one output feature, in input pixels."""
        return 1 + sum(layer.kernel_extents[2] - 1 for layer in self.layers)

    def forward(self, tensor):
        """Features for every view; returns (features, cache for backward)."""
        if min(tensor.Y, tensor.X) < self.receptive_field:
            raise ValueError(
                f"views {tensor.Y}x{tensor.X} smaller than extractor receptive "
                f"field {self.receptive_field}"
            )
        cache = []
        h = tensor
        for layer in self.layers:
            z = conv4d_forward(h, layer)
            cache.append((h, z))
            h = leaky_relu(z, self.alpha)
        return h, cache

    def backward(self, cache, grad_output):
        """Pull a feature-space gradient back to the input views."""
        g = grad_output
        for layer, (h, z) in zip(reversed(self.layers), reversed(cache)):
            g = leaky_relu_backward(z, self.alpha, g)
            g, _, _ = conv4d_backward(h, layer, g)
        return g


def _check_same_extents(pred, truth):
    if pred.shape != truth.shape:
        raise ValueError(f"extent mismatch: prediction {pred.shape} vs truth {truth.shape}")


def angular_loss(pred, truth):
    """Sum of squared differences over every (c, s, t, y, x) sample.

    Returns (loss, gradient w.r.t. pred). The gradient is 2*(pred - truth).
    """
    _check_same_extents(pred, truth)
    diff = pred.data - truth.data
    return float(np.sum(diff * diff)), 2.0 * diff


def spatial_loss(pred, truth, extractor):
    """Aperture-averaged squared feature difference.

    Applies the extractor to each sub-aperture view of both fields, sums
    the squared feature differences, and divides by the number of views.
    Returns (loss, gradient w.r.t. pred).
    """
    _check_same_extents(pred, truth)
    n_views = pred.S * pred.T
    fp, cache = extractor.forward(FeatureTensor(pred.data[None]))
    ft, _ = extractor.forward(FeatureTensor(truth.data[None]))
    diff = fp.data - ft.data
    loss = float(np.sum(diff * diff)) / n_views
    grad = extractor.backward(cache, FeatureTensor((2.0 / n_views) * diff))
    return loss, grad.data[0]


def combined_loss(pred, truth, weights, extractor=None):
    """alpha * spatial + beta * angular; gradient is the same combination.

    Returns (total, gradient, {"spatial": ..., "angular": ...}). The
    extractor may be omitted when alpha is zero.
    """
    total = 0.0
    grad = np.zeros_like(pred.data)
    parts = {"spatial": 0.0, "angular": 0.0}
    if weights.alpha > 0:
        if extractor is None:
            raise ValueError("spatial loss requested but no feature extractor given")
        ls, gs = spatial_loss(pred, truth, extractor)
        total += weights.alpha * ls
        grad += weights.alpha * gs
        parts["spatial"] = ls
    if weights.beta > 0:
        la, ga = angular_loss(pred, truth)
        total += weights.beta * la
        grad += weights.beta * ga
        parts["angular"] = la
    return total, grad, parts
