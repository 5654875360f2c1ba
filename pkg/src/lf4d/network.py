"""Two-stage 4D super-resolution network.

Pipeline: head convolution -> restoration blocks (at LR extents) -> the
spatio-angular upscaling stage -> refinement blocks (at HR extents) ->
tail convolution back to image channels, plus a global residual path that
adds a plainly-interpolated copy of the input (bicubic spatial, linear
angular) to the output. With that skip, the convolutional path only has to
learn the correction on top of naive interpolation.

Residual blocks are conv -> norm -> LeakyReLU twice; the surrounding stack
decides how skips are wired:

* ``sequential``    y_k = y_{k-1} + B_k(y_{k-1})
* ``shared_source`` y_k = y_0     + B_k(y_{k-1})
* ``dense``         x_k = fuse_k(concat(y_0 .. y_{k-1})), y_k = x_k + B_k(x_k)

where each dense ``fuse_k`` is a learned 1x1x1x1 convolution bounding the
concatenation back to the working channel count.

Forward passes are pure given the parameters (train-mode normalization
updates running statistics in place, which is the only side effect);
everything needed by the analytic backward is carried in explicit caches.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .ops import (
    AgbnState,
    Conv4DLayer,
    agbn_backward,
    agbn_forward,
    conv4d_backward,
    conv4d_forward,
    glorot_init,
    leaky_relu,
    leaky_relu_backward,
    make_agbn,
    make_conv4d,
    upscale,
    upscale_backward,
)
from .resample import bicubic_upscale_matrix, linear_upscale_matrix
from .tensor import FeatureTensor, LightField

__all__ = [
    "ModelConfig",
    "ResidualBlock",
    "BlockStack",
    "Model",
    "TileSpec",
    "connect",
    "build_model",
    "forward",
    "super_resolve",
]

_TOPOLOGIES = ("sequential", "shared_source", "dense")


def coerce_like(default, raw):
    """Parse a key=value string using the type of a dataclass default."""
    if isinstance(raw, str):
        if isinstance(default, bool):
            return raw.strip().lower() in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    return raw


@dataclass(frozen=True)
class ModelConfig:
    in_channels: int = 1
    filters: int = 64
    n_restoration: int = 5
    n_refinement: int = 3
    spatial_kernel: int = 3
    angular_kernel: int = 5
    connection: str = "sequential"
    r_s: int = 2
    r_a: int = 2
    leaky_slope: float = 0.2
    agbn_eps: float = 1e-3
    agbn_momentum: float = 0.9
    tail_init_scale: float = 1.0
    dtype: str = "float64"

    def __post_init__(self):
        if self.r_s < 1 or self.r_a < 1:
            raise ValueError("scale factors must be >= 1")
        if self.n_restoration < 0 or self.n_refinement < 0:
            raise ValueError("block counts must be >= 0")
        if self.connection not in _TOPOLOGIES:
            raise ValueError(f"connection must be one of {_TOPOLOGIES}, got {self.connection!r}")
        if self.spatial_kernel % 2 == 0 or self.angular_kernel % 2 == 0:
            raise ValueError("kernel extents must be odd for same-size padding")

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    def to_header(self):
        return {f"model.{k}": v for k, v in self.__dict__.items()}

    @classmethod
    def from_header(cls, header):
        kwargs = {}
        for f in dataclasses.fields(cls):
            key = f"model.{f.name}"
            if key in header:
                kwargs[f.name] = coerce_like(f.default, header[key])
        return cls(**kwargs)


@dataclass
class ResidualBlock:
    """conv -> norm -> LeakyReLU, twice; in/out channel counts are equal."""

    conv_a: Conv4DLayer
    conv_b: Conv4DLayer
    norm_a: AgbnState
    norm_b: AgbnState
    alpha: float = 0.2

    def __post_init__(self):
        if self.conv_a.in_channels != self.conv_b.out_channels:
            raise ValueError("residual block must preserve its channel count")

    def branch(self, x, mode):
        train = mode == "train"
        ca = [] if train else None
        cb = [] if train else None
        z1 = conv4d_forward(x, self.conv_a, ca)
        n1 = agbn_forward(z1, self.norm_a, mode)
        a1 = leaky_relu(n1, self.alpha)
        z2 = conv4d_forward(a1, self.conv_b, cb)
        n2 = agbn_forward(z2, self.norm_b, mode)
        out = leaky_relu(n2, self.alpha)
        return out, (x, z1, n1, a1, z2, n2, ca, cb)

    def branch_backward(self, cache, grad_out):
        x, z1, n1, a1, z2, n2, ca, cb = cache
        g = leaky_relu_backward(n2, self.alpha, grad_out)
        g, dg2, db2 = agbn_backward(z2, self.norm_b, g)
        g, dwb, dbb = conv4d_backward(a1, self.conv_b, g, cb)
        g = leaky_relu_backward(n1, self.alpha, g)
        g, dg1, db1 = agbn_backward(z1, self.norm_a, g)
        g, dwa, dba = conv4d_backward(x, self.conv_a, g, ca)
        grads = {
            "conv_a.weight": dwa, "conv_a.bias": dba,
            "norm_a.gamma": dg1, "norm_a.beta": db1,
            "conv_b.weight": dwb, "conv_b.bias": dbb,
            "norm_b.gamma": dg2, "norm_b.beta": db2,
        }
        return g, grads


class BlockStack:
    """Residual blocks wired by one of the three skip topologies."""

    def __init__(self, blocks, topology, fusions=None):
        if topology not in _TOPOLOGIES:
            raise ValueError(f"unknown topology {topology!r}")
        if not blocks and topology == "dense":
            fusions = []
        if topology == "dense":
            if fusions is None or len(fusions) != len(blocks):
                raise ValueError("dense topology needs one fusion conv per block")
            for k, fuse in enumerate(fusions):
                expected = (k + 1) * blocks[0].conv_a.in_channels
                if fuse.in_channels != expected:
                    raise ValueError(
                        f"fusion {k} expects {expected} input channels, has {fuse.in_channels}"
                    )
        self.blocks = list(blocks)
        self.topology = topology
        self.fusions = list(fusions) if fusions else None

    def forward(self, x, mode):
        if not self.blocks:
            return x, (x, [])
        steps = []
        if self.topology == "dense":
            outs = [x]
            for block, fuse in zip(self.blocks, self.fusions):
                cat = FeatureTensor(np.concatenate([o.data for o in outs], axis=1))
                cf = [] if mode == "train" else None
                fused = conv4d_forward(cat, fuse, cf)
                br, cache = block.branch(fused, mode)
                y = FeatureTensor(fused.data + br.data)
                steps.append((cat, cache, cf))
                outs.append(y)
            return outs[-1], (x, steps)
        y = x
        source = x
        for block in self.blocks:
            br, cache = block.branch(y, mode)
            base = y if self.topology == "sequential" else source
            steps.append(cache)
            y = FeatureTensor(base.data + br.data)
        return y, (x, steps)

    def backward(self, state, grad_out):
        x, steps = state
        grads = {}
        if not self.blocks:
            return grad_out, grads
        if self.topology == "dense":
            width = self.blocks[0].conv_a.in_channels
            gouts = [np.zeros_like(x.data) for _ in range(len(self.blocks) + 1)]
            gouts[-1] = grad_out.data.copy()
            for k in range(len(self.blocks) - 1, -1, -1):
                block, fuse = self.blocks[k], self.fusions[k]
                cat, cache, cf = steps[k]
                gy = FeatureTensor(gouts[k + 1])
                gb, bgrads = block.branch_backward(cache, gy)
                for name, val in bgrads.items():
                    grads[f"block{k}.{name}"] = val
                gfused = FeatureTensor(gy.data + gb.data)
                gcat, dwf, dbf = conv4d_backward(cat, fuse, gfused, cf)
                grads[f"fuse{k}.weight"] = dwf
                grads[f"fuse{k}.bias"] = dbf
                for j in range(k + 1):
                    gouts[j] += gcat.data[:, j * width:(j + 1) * width]
            return FeatureTensor(gouts[0]), grads
        g_running = grad_out.data.copy()
        g_source = np.zeros_like(grad_out.data)
        for k in range(len(self.blocks) - 1, -1, -1):
            block = self.blocks[k]
            gb, bgrads = block.branch_backward(steps[k], FeatureTensor(g_running))
            for name, val in bgrads.items():
                grads[f"block{k}.{name}"] = val
            if self.topology == "sequential":
                g_running = g_running + gb.data
            else:  # shared_source: the skip feeds from y_0 every time
                g_source += g_running
                g_running = gb.data
        return FeatureTensor(g_running + g_source), grads

    def named_parameters(self):
        for k, block in enumerate(self.blocks):
            if self.fusions is not None:
                yield f"fuse{k}.weight", self.fusions[k].weights
                yield f"fuse{k}.bias", self.fusions[k].bias
            yield f"block{k}.conv_a.weight", block.conv_a.weights
            yield f"block{k}.conv_a.bias", block.conv_a.bias
            yield f"block{k}.norm_a.gamma", block.norm_a.gamma
            yield f"block{k}.norm_a.beta", block.norm_a.beta
            yield f"block{k}.conv_b.weight", block.conv_b.weights
            yield f"block{k}.conv_b.bias", block.conv_b.bias
            yield f"block{k}.norm_b.gamma", block.norm_b.gamma
            yield f"block{k}.norm_b.beta", block.norm_b.beta

    def named_norms(self):
        for k, block in enumerate(self.blocks):
            yield f"block{k}.norm_a", block.norm_a
            yield f"block{k}.norm_b", block.norm_b


def connect(blocks, topology, fusions=None):
    """Compose residual blocks into a forward graph with the given topology."""
    if not blocks:
        raise ValueError("connect needs at least one block")
    return BlockStack(blocks, topology, fusions)


def _upsample_matrices(shape, r_s, r_a, dtype):
    _, _, S, T, Y, X = shape
    return (
        linear_upscale_matrix(S, r_a).astype(dtype) if r_a > 1 else None,
        linear_upscale_matrix(T, r_a).astype(dtype) if r_a > 1 else None,
        bicubic_upscale_matrix(Y, r_s).astype(dtype) if r_s > 1 else None,
        bicubic_upscale_matrix(X, r_s).astype(dtype) if r_s > 1 else None,
    )


def _apply_axis(arr, mat, axis, transpose=False):
    if mat is None:
        return arr
    m = mat if not transpose else mat.T
    return np.moveaxis(np.moveaxis(arr, axis, -1) @ m.T, -1, axis)


def _global_skip(x, r_s, r_a):
    mats = _upsample_matrices(x.shape, r_s, r_a, x.dtype)
    out = x
    for mat, axis in zip(mats, (2, 3, 4, 5)):
        out = _apply_axis(out, mat, axis)
    return np.ascontiguousarray(out)


def _global_skip_adjoint(g, in_shape, r_s, r_a):
    mats = _upsample_matrices(in_shape, r_s, r_a, g.dtype)
    out = g
    for mat, axis in zip(mats, (2, 3, 4, 5)):
        out = _apply_axis(out, mat, axis, transpose=True)
    return np.ascontiguousarray(out)


class Model:
    """Head conv, restoration stack, upscaling stage, refinement stack, tail."""

    def __init__(self, config, head, restoration, up_conv, refinement, tail):
        self.config = config
        self.head = head
        self.restoration = restoration
        self.up_conv = up_conv
        self.refinement = refinement
        self.tail = tail

    # -- forward / backward -------------------------------------------------

    def forward_full(self, x, mode="eval"):
        """Run the whole network; returns (output, cache for backward)."""
        cfg = self.config
        if x.S < 2 or x.T < 2:
            if cfg.r_a > 1:
                raise ValueError("angular upscaling needs at least 2 views per axis")
        train = mode == "train"
        ch = [] if train else None
        cu = [] if train else None
        ct = [] if train else None
        h0 = conv4d_forward(x, self.head, ch)
        a0 = leaky_relu(h0, cfg.leaky_slope)
        r, cache_r = self.restoration.forward(a0, mode)
        u = upscale(r, self.up_conv, cfg.r_s, cfg.r_a, cu)
        au = leaky_relu(u, cfg.leaky_slope)
        d, cache_d = self.refinement.forward(au, mode)
        z = conv4d_forward(d, self.tail, ct)
        skip = _global_skip(x.data, cfg.r_s, cfg.r_a)
        out = FeatureTensor(z.data + skip)
        cache = (x, h0, cache_r, r, u, cache_d, d, ch, cu, ct)
        return out, cache

    def backward(self, cache, grad_out):
        """Gradients of a scalar loss; returns (param grads, grad w.r.t. input)."""
        cfg = self.config
        x, h0, cache_r, r, u, cache_d, d, ch, cu, ct = cache
        grads = {}
        g, dwt, dbt = conv4d_backward(d, self.tail, grad_out, ct)
        grads["tail.weight"] = dwt
        grads["tail.bias"] = dbt
        g, d_grads = self.refinement.backward(cache_d, g)
        for name, val in d_grads.items():
            grads[f"refine.{name}"] = val
        g = leaky_relu_backward(u, cfg.leaky_slope, g)
        g, dwu, dbu = upscale_backward(r, self.up_conv, cfg.r_s, cfg.r_a, g, cu)
        grads["up.weight"] = dwu
        grads["up.bias"] = dbu
        g, r_grads = self.restoration.backward(cache_r, g)
        for name, val in r_grads.items():
            grads[f"restore.{name}"] = val
        g = leaky_relu_backward(h0, cfg.leaky_slope, g)
        g, dwh, dbh = conv4d_backward(x, self.head, g, ch)
        grads["head.weight"] = dwh
        grads["head.bias"] = dbh
        grad_in = g.data + _global_skip_adjoint(grad_out.data, x.shape, cfg.r_s, cfg.r_a)
        return grads, FeatureTensor(grad_in)

    # -- parameter bookkeeping ----------------------------------------------

    def parameters(self):
        """Stable, complete enumeration of every trainable tensor."""
        params = {"head.weight": self.head.weights, "head.bias": self.head.bias}
        for name, arr in self.restoration.named_parameters():
            params[f"restore.{name}"] = arr
        params["up.weight"] = self.up_conv.weights
        params["up.bias"] = self.up_conv.bias
        for name, arr in self.refinement.named_parameters():
            params[f"refine.{name}"] = arr
        params["tail.weight"] = self.tail.weights
        params["tail.bias"] = self.tail.bias
        return params

    def state_dict(self):
        """Parameters plus normalization running statistics."""
        state = dict(self.parameters())
        for prefix, stack in (("restore", self.restoration), ("refine", self.refinement)):
            for name, norm in stack.named_norms():
                state[f"{prefix}.{name}.running_mean"] = norm.running_mean
                state[f"{prefix}.{name}.running_var"] = norm.running_var
        return state

    def load_state(self, state):
        mine = self.state_dict()
        if set(mine) != set(state):
            missing = set(mine) - set(state)
            extra = set(state) - set(mine)
            raise ValueError(f"checkpoint mismatch: missing {sorted(missing)}, "
                             f"unexpected {sorted(extra)}")
        for name, arr in mine.items():
            incoming = state[name]
            if incoming.shape != arr.shape:
                raise ValueError(
                    f"{name}: checkpoint shape {incoming.shape} != model shape {arr.shape}"
                )
            arr[...] = incoming.astype(arr.dtype, copy=False)

    # -- geometry -----------------------------------------------------------

    def receptive_halo(self):
        """Per-axis half-width of the output's dependence on the input.

        Returned in input (LR) pixels/views as (angular, spatial), exact
        for r_s = r_a = 1 and conservative otherwise (HR-stage halos are
        divided by the scale factor and rounded up).
        """
        cfg = self.config
        sp = (cfg.spatial_kernel - 1) // 2
        an = (cfg.angular_kernel - 1) // 2
        pre_convs = 1 + 2 * len(self.restoration.blocks) + 1  # head, R blocks, upscale
        post_convs = 2 * len(self.refinement.blocks) + 1      # D blocks, tail
        spatial = pre_convs * sp + int(np.ceil(post_convs * sp / cfg.r_s))
        angular = (pre_convs + post_convs) * an
        if cfg.r_s > 1:
            spatial += 2  # cubic support of the global skip
        return angular, spatial


def build_model(config, seed=0):
    """Construct and Glorot-initialize a model; deterministic per seed."""
    cfg = config
    dtype = cfg.np_dtype
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)

    def conv(ci, co, angular, spatial, seed_seq):
        layer = make_conv4d(ci, co, angular=angular, spatial=spatial, dtype=dtype)
        return glorot_init(layer, seed_seq)

    ak = (cfg.angular_kernel, cfg.angular_kernel)
    sk = (cfg.spatial_kernel, cfg.spatial_kernel)
    seeds = iter(root.spawn(4 + 10 * (cfg.n_restoration + cfg.n_refinement)))

    def stack(n_blocks):
        blocks = []
        fusions = [] if cfg.connection == "dense" else None
        for k in range(n_blocks):
            if fusions is not None:
                fusions.append(conv((k + 1) * cfg.filters, cfg.filters, (1, 1), (1, 1),
                                    next(seeds)))
            blocks.append(ResidualBlock(
                conv(cfg.filters, cfg.filters, ak, sk, next(seeds)),
                conv(cfg.filters, cfg.filters, ak, sk, next(seeds)),
                make_agbn(cfg.filters, cfg.agbn_eps, cfg.agbn_momentum, dtype),
                make_agbn(cfg.filters, cfg.agbn_eps, cfg.agbn_momentum, dtype),
                cfg.leaky_slope,
            ))
        return BlockStack(blocks, cfg.connection, fusions)

    head = conv(cfg.in_channels, cfg.filters, ak, sk, next(seeds))
    restoration = stack(cfg.n_restoration)
    up_conv = conv(cfg.filters, cfg.filters * cfg.r_s * cfg.r_s, ak, sk, next(seeds))
    refinement = stack(cfg.n_refinement)
    tail = conv(cfg.filters, cfg.in_channels, ak, sk, next(seeds))
    # Shrinking the last layer makes the model start out as its own
    # interpolation skip plus a small correction, which matters a lot for
    # short training budgets; 1.0 leaves the plain Glorot fill untouched.
    tail.weights *= cfg.tail_init_scale
    return Model(cfg, head, restoration, up_conv, refinement, tail)


def forward(model, input, mode="eval"):
    """Whole-network forward pass on a batched tensor."""
    out, _ = model.forward_full(input, mode)
    return out


def baseline_upsample(field, r_s, r_a):
    """Plain interpolation reference: bicubic per view, linear angular.

    This is exactly the network's global residual path, so a model with an
    all-zero convolutional output reproduces it.
    """
    return LightField(_global_skip(field.data[None], r_s, r_a)[0])


@dataclass(frozen=True)
class TileSpec:
    """Spatial tiling for inference; None means the whole extent."""

    tile_y: int = None
    tile_x: int = None
    halo: int = None


def super_resolve(model, field, tiling=None):
    """Super-resolve one light field, optionally tiled over the spatial axes.

    Tiles are expanded by a halo of the model's receptive-field half-width,
    run independently, and trimmed back, so interior seams match untiled
    inference up to roundoff. Runs in eval mode.
    """
    cfg = model.config
    x = FeatureTensor(field.data[None])
    tile_y = tiling.tile_y if tiling and tiling.tile_y else field.Y
    tile_x = tiling.tile_x if tiling and tiling.tile_x else field.X
    if tile_y >= field.Y and tile_x >= field.X:
        out = forward(model, x, mode="eval")
        return LightField(out.data[0])
    halo = tiling.halo if tiling and tiling.halo is not None else model.receptive_halo()[1]
    if tile_y <= 2 * halo or tile_x <= 2 * halo:
        raise ValueError(f"tile {tile_y}x{tile_x} smaller than twice the halo {halo}")
    S_out = cfg.r_a * (field.S - 1) + 1 if cfg.r_a > 1 else field.S
    T_out = cfg.r_a * (field.T - 1) + 1 if cfg.r_a > 1 else field.T
    out = np.empty((cfg.in_channels, S_out, T_out, field.Y * cfg.r_s, field.X * cfg.r_s),
                   dtype=field.dtype)
    for y0 in range(0, field.Y, tile_y):
        y1 = min(y0 + tile_y, field.Y)
        ey0, ey1 = max(0, y0 - halo), min(field.Y, y1 + halo)
        for x0 in range(0, field.X, tile_x):
            x1 = min(x0 + tile_x, field.X)
            ex0, ex1 = max(0, x0 - halo), min(field.X, x1 + halo)
            tile = FeatureTensor(
                np.ascontiguousarray(field.data[None, :, :, :, ey0:ey1, ex0:ex1])
            )
            sr = forward(model, tile, mode="eval").data[0]
            r = cfg.r_s
            out[:, :, :, y0 * r:y1 * r, x0 * r:x1 * r] = \
                sr[:, :, :, (y0 - ey0) * r:(y1 - ey0) * r, (x0 - ex0) * r:(x1 - ex0) * r]
    return LightField(out)
