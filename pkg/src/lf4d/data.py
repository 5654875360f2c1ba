"""Degradation model, synthetic scene generator, and training samplers.

The low-resolution observation model is: Gaussian blur per sub-aperture
view (reflective boundary), nearest-neighbour decimation of the spatial
axes, optional additive Gaussian noise. Angular decimation keeps the views
at stride r_a counted from the corner view, i.e. the exact inverse of the
endpoint-preserving angular interpolation used for upscaling.

The synthetic generator composites fronto-parallel textured layers whose
per-view shift is proportional to their disparity, so EPI line slopes of
rendered features equal the scripted disparities -- that is the geometric
ground truth the tests lean on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .resample import gaussian_blur, resize_views
from .tensor import LightField

__all__ = [
    "DegradeSpec",
    "SceneLayer",
    "SyntheticScene",
    "MultiRangeSpec",
    "degrade",
    "degrade_reference",
    "render_synthetic",
    "make_random_scene",
    "sample_patch",
    "angular_selection",
    "feasible_selections",
    "multi_range_sample",
]


@dataclass(frozen=True)
class DegradeSpec:
    """Observation model parameters for producing LR fields from HR fields."""

    blur_window: int = 7
    blur_sigma: float = 1.2
    r_s: int = 1
    r_a: int = 1
    noise_sigma: float = 0.0
    blur: bool = True

    def __post_init__(self):
        if self.blur_window % 2 == 0 or self.blur_window < 1:
            raise ValueError(f"blur window must be odd, got {self.blur_window}")
        if self.blur_sigma <= 0:
            raise ValueError(f"blur sigma must be positive, got {self.blur_sigma}")
        if self.r_s < 1 or self.r_a < 1:
            raise ValueError("scale factors must be >= 1")
        if self.noise_sigma < 0:
            raise ValueError("noise sigma must be non-negative")


def _crop_to_multiple(data, r_s):
    Y, X = data.shape[-2:]
    return data[..., : (Y // r_s) * r_s, : (X // r_s) * r_s]


def degrade(field, spec, seed=None):
    """Blur, decimate, and optionally perturb an HR field into its LR pair.

    Spatial extents not divisible by r_s are cropped to the largest
    multiple first (keeps HR/LR grids aligned at pixel 0). Angular
    decimation keeps views {0, r_a, 2*r_a, ...} on each axis.
    """
    data = _crop_to_multiple(field.data, spec.r_s)
    if data.shape[-1] == 0 or data.shape[-2] == 0:
        raise ValueError(f"degradation of {field.shape} by r_s={spec.r_s} leaves no pixels")
    data = data[:, :: spec.r_a, :: spec.r_a]
    if spec.blur:
        data = gaussian_blur(data, spec.blur_window, spec.blur_sigma)
    data = data[..., :: spec.r_s, :: spec.r_s]
    if spec.noise_sigma > 0:
        rng = np.random.default_rng(seed)
        data = data + rng.normal(0.0, spec.noise_sigma, size=data.shape)
    return LightField(np.ascontiguousarray(data.astype(field.dtype, copy=False)))


def degrade_reference(field, spec, seed=None):
    """Degrade plus the matching HR reference: (lr, hr_ref).

    hr_ref is the HR field cropped so that super-resolving lr by
    (r_s, r_a) reproduces exactly its extents: spatial to a multiple of
    r_s, angular to r_a*(S_lr - 1) + 1 views from the corner.
    """
    lr = degrade(field, spec, seed)
    data = _crop_to_multiple(field.data, spec.r_s)
    s_keep = spec.r_a * (lr.S - 1) + 1
    t_keep = spec.r_a * (lr.T - 1) + 1
    return lr, LightField(np.ascontiguousarray(data[:, :s_keep, :t_keep]))


@dataclass(frozen=True)
class SceneLayer:
    """One fronto-parallel plane: texture canvas, disparity, optional mask.

    The canvas is larger than the render extent by the scene margin on
    every side. ``mask`` is None for an opaque (background) layer.
    """

    texture: np.ndarray
    disparity: float
    mask: np.ndarray = None

    def __post_init__(self):
        object.__setattr__(self, "texture", np.asarray(self.texture, dtype=np.float64))
        if self.texture.ndim != 3:
            raise ValueError("layer texture must be (c, Y, X)")
        if self.mask is not None:
            mask = np.asarray(self.mask, dtype=np.float64)
            if mask.shape != self.texture.shape[1:]:
                raise ValueError("mask extent must match the texture canvas")
            object.__setattr__(self, "mask", mask)
        if not math.isfinite(self.disparity):
            raise ValueError("layer disparity must be finite")


@dataclass(frozen=True)
class SyntheticScene:
    """Layers ordered back to front; later layers occlude earlier ones."""

    layers: tuple
    margin: int

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if not self.layers:
            raise ValueError("a scene needs at least one layer")
        if self.layers[0].mask is not None:
            raise ValueError("the rearmost layer must be opaque (mask None)")


def _sample_shifted(canvas, dy, dx, Y, X, margin):
    """Bilinear crop of a canvas at a scalar sub-pixel offset."""
    y0 = margin - dy
    x0 = margin - dx
    iy, fy = int(math.floor(y0)), y0 - math.floor(y0)
    ix, fx = int(math.floor(x0)), x0 - math.floor(x0)
    need_y = iy + Y + (1 if fy > 0 else 0)
    need_x = ix + X + (1 if fx > 0 else 0)
    if iy < 0 or ix < 0 or need_y > canvas.shape[-2] or need_x > canvas.shape[-1]:
        raise ValueError(
            f"shift ({dy:.3f}, {dx:.3f}) exceeds the texture canvas margin {margin}"
        )
    block = canvas[..., iy:iy + Y + 1, ix:ix + X + 1]
    if block.shape[-2] == Y:  # at the exact far edge with zero fraction
        block = np.concatenate([block, block[..., -1:, :]], axis=-2)
    if block.shape[-1] == X:
        block = np.concatenate([block, block[..., :, -1:]], axis=-1)
    return ((1 - fy) * (1 - fx) * block[..., :Y, :X]
            + (1 - fy) * fx * block[..., :Y, 1:X + 1]
            + fy * (1 - fx) * block[..., 1:Y + 1, :X]
            + fy * fx * block[..., 1:Y + 1, 1:X + 1])


def render_synthetic(scene, S, T, Y, X):
    """Render a scene into a light field plus its per-view disparity maps.

    View (s, t) sees each layer shifted by its disparity times the offset
    from the central view: x by d*(s - s_c), y by d*(t - t_c). Returns
    (LightField (c,S,T,Y,X), disparity array (S,T,Y,X)) where the disparity
    map records the front-most visible layer at each pixel.
    """
    c = scene.layers[0].texture.shape[0]
    out = np.empty((c, S, T, Y, X), dtype=np.float64)
    disparity = np.empty((S, T, Y, X), dtype=np.float64)
    s_c = (S - 1) / 2.0
    t_c = (T - 1) / 2.0
    for s in range(S):
        for t in range(T):
            for k, layer in enumerate(scene.layers):
                dx = layer.disparity * (s - s_c)
                dy = layer.disparity * (t - t_c)
                tex = _sample_shifted(layer.texture, dy, dx, Y, X, scene.margin)
                if layer.mask is None:
                    out[:, s, t] = tex
                    disparity[s, t] = layer.disparity
                else:
                    mask = _sample_shifted(layer.mask, dy, dx, Y, X, scene.margin) > 0.5
                    out[:, s, t] = np.where(mask, tex, out[:, s, t])
                    disparity[s, t] = np.where(mask, layer.disparity, disparity[s, t])
    return LightField(out), disparity


def _smooth_texture(rng, c, H, W, detail=0.5):
    """Seeded texture: smooth base plus band-limited detail in [0.05, 0.95]."""
    base = gaussian_blur(rng.uniform(0.0, 1.0, (c, H, W)), 9, 2.5)
    fine = gaussian_blur(rng.uniform(-1.0, 1.0, (c, H, W)), 3, 0.8)
    tex = base + detail * fine
    lo, hi = tex.min(), tex.max()
    return 0.05 + 0.9 * (tex - lo) / max(hi - lo, 1e-9)


def make_random_scene(Y, X, disparities, seed=0, channels=1, max_views=9):
    """Background plus one rectangular occluder per extra disparity value.

    The first disparity belongs to the opaque background; each subsequent
    one adds a textured rectangle covering roughly a quarter of the frame.
    The canvas margin is sized for up to ``max_views`` views per axis.
    """
    if not disparities:
        raise ValueError("need at least one layer disparity")
    rng = np.random.default_rng(seed)
    margin = int(math.ceil(max(abs(d) for d in disparities) * (max_views - 1) / 2)) + 2
    H, W = Y + 2 * margin, X + 2 * margin
    layers = [SceneLayer(_smooth_texture(rng, channels, H, W), float(disparities[0]))]
    for d in disparities[1:]:
        mask = np.zeros((H, W))
        h = int(rng.integers(Y // 4, Y // 2 + 1))
        w = int(rng.integers(X // 4, X // 2 + 1))
        top = int(rng.integers(margin, margin + Y - h))
        left = int(rng.integers(margin, margin + X - w))
        mask[top:top + h, left:left + w] = 1.0
        layers.append(SceneLayer(_smooth_texture(rng, channels, H, W), float(d), mask))
    return SyntheticScene(tuple(layers), margin)


def sample_patch(field, patch_spatial=96, patch_angular=5, seed=None):
    """Uniform random crop of (patch_angular^2, patch_spatial^2) extents."""
    if field.Y < patch_spatial or field.X < patch_spatial:
        raise ValueError(f"field spatial {field.Y}x{field.X} smaller than patch {patch_spatial}")
    if field.S < patch_angular or field.T < patch_angular:
        raise ValueError(f"field angular {field.S}x{field.T} smaller than patch {patch_angular}")
    rng = np.random.default_rng(seed)
    s0 = int(rng.integers(0, field.S - patch_angular + 1))
    t0 = int(rng.integers(0, field.T - patch_angular + 1))
    y0 = int(rng.integers(0, field.Y - patch_spatial + 1))
    x0 = int(rng.integers(0, field.X - patch_spatial + 1))
    crop = field.data[:, s0:s0 + patch_angular, t0:t0 + patch_angular,
                      y0:y0 + patch_spatial, x0:x0 + patch_spatial]
    return LightField(np.ascontiguousarray(crop))


@dataclass(frozen=True)
class MultiRangeSpec:
    """Controls the varied-baseline training sampler.

    ``target_views`` is the odd number of views kept per angular axis;
    the selection around a center c with range r is {c + k*r} for
    k in [-(target_views-1)/2, +(target_views-1)/2].
    """

    rescale_lo: float = 0.8
    rescale_hi: float = 1.0
    target_views: int = 5
    draws_per_scene: int = 5

    def __post_init__(self):
        if not 0 < self.rescale_lo <= self.rescale_hi <= 1.0:
            raise ValueError(f"rescale interval must sit in (0, 1], got "
                             f"[{self.rescale_lo}, {self.rescale_hi}]")
        if self.target_views < 1 or self.target_views % 2 == 0:
            raise ValueError("target_views must be odd and positive")
        if self.draws_per_scene < 1:
            raise ValueError("draws_per_scene must be >= 1")


def angular_selection(center, view_range, count):
    """View indices {center + k*range} for k in [-(count-1)/2, (count-1)/2]."""
    if count % 2 == 0 or count < 1:
        raise ValueError("selection count must be odd and positive")
    if view_range < 1:
        raise ValueError("view range must be >= 1")
    half = (count - 1) // 2
    return [center + k * view_range for k in range(-half, half + 1)]


def feasible_selections(S, T, count):
    """All (range, center_s, center_t) triples that stay inside the grid."""
    half = (count - 1) // 2
    if half == 0:
        return [(1, cs, ct) for cs in range(S) for ct in range(T)]
    triples = []
    r = 1
    while 2 * half * r <= min(S, T) - 1:
        for cs in range(half * r, S - half * r):
            for ct in range(half * r, T - half * r):
                triples.append((r, cs, ct))
        r += 1
    return triples


def multi_range_sample(field, spec, seed=None):
    """One varied-baseline draw: angular subgrid plus mild spatial rescale.

    Draws a rescale factor uniformly from the spec interval, then a
    (range, center) configuration uniformly from the feasible set, keeps
    the selected views, and bicubically rescales every view by the factor
    (same factor on both spatial axes). Returns (field, factor).
    """
    rng = np.random.default_rng(seed)
    factor = float(rng.uniform(spec.rescale_lo, spec.rescale_hi))
    triples = feasible_selections(field.S, field.T, spec.target_views)
    if not triples:
        raise ValueError(
            f"no feasible (center, range) pair for {field.S}x{field.T} views "
            f"and target {spec.target_views}"
        )
    r, cs, ct = triples[int(rng.integers(len(triples)))]
    sel_s = angular_selection(cs, r, spec.target_views)
    sel_t = angular_selection(ct, r, spec.target_views)
    sub = field.data[:, sel_s][:, :, sel_t]
    out_y = max(1, int(round(field.Y * factor)))
    out_x = max(1, int(round(field.X * factor)))
    if (out_y, out_x) != (field.Y, field.X):
        sub = resize_views(sub, out_y, out_x)
    return LightField(np.ascontiguousarray(sub)), factor
