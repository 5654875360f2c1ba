import numpy as np
import pytest

from lf4d.network import (
    BlockStack,
    Model,
    ModelConfig,
    ResidualBlock,
    TileSpec,
    baseline_upsample,
    build_model,
    connect,
    forward,
    super_resolve,
)
from lf4d.ops import Conv4DLayer, glorot_init, make_agbn, make_conv4d
from lf4d.tensor import FeatureTensor, LightField
from lf4d.train import load_model, save_model

from util import central_difference, grad_close, rel_error


def tiny_config(**kw):
    base = dict(filters=6, n_restoration=1, n_refinement=1, angular_kernel=3,
                spatial_kernel=3, r_s=1, r_a=1)
    base.update(kw)
    return ModelConfig(**base)


def make_block(filters, seed, dtype=np.float64):
    conv = lambda s: glorot_init(
        make_conv4d(filters, filters, angular=(3, 3), spatial=(3, 3), dtype=dtype), s)
    return ResidualBlock(conv(seed), conv(seed + 1), make_agbn(filters),
                         make_agbn(filters), 0.2)


class TestModelConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            ModelConfig(r_s=0)
        with pytest.raises(ValueError):
            ModelConfig(connection="ring")
        with pytest.raises(ValueError):
            ModelConfig(spatial_kernel=4)

    def test_header_round_trip(self):
        cfg = tiny_config(connection="dense", r_s=2, tail_init_scale=0.5)
        assert ModelConfig.from_header(cfg.to_header()) == cfg


class TestForward:
    def test_shape_contract_identity_scale(self, rng):
        model = build_model(tiny_config(), seed=0)
        x = FeatureTensor(rng.random((1, 1, 3, 3, 8, 8)))
        out = forward(model, x)
        assert out.shape == x.shape
        assert np.all(np.isfinite(out.data))

    def test_shape_contract_s2a2(self, rng):
        model = build_model(tiny_config(r_s=2, r_a=2, n_restoration=1, n_refinement=1),
                            seed=1)
        x = FeatureTensor(rng.random((1, 1, 3, 3, 32, 32)))
        assert forward(model, x).shape == (1, 1, 5, 5, 64, 64)

    def test_eval_mode_deterministic(self, rng):
        model = build_model(tiny_config(), seed=2)
        x = FeatureTensor(rng.random((1, 1, 3, 3, 8, 8)))
        a = forward(model, x, mode="eval")
        b = forward(model, x, mode="eval")
        assert np.array_equal(a.data, b.data)

    def test_channels_preserved_rgb(self, rng):
        model = build_model(tiny_config(in_channels=3), seed=3)
        x = FeatureTensor(rng.random((1, 3, 3, 3, 8, 8)))
        assert forward(model, x).shape[1] == 3


class TestConnect:
    def test_needs_blocks(self):
        with pytest.raises(ValueError):
            connect([], "sequential")

    def test_single_block_topologies_coincide(self, rng):
        x = FeatureTensor(rng.standard_normal((1, 6, 3, 3, 5, 5)))
        outs = {}
        for topo in ("sequential", "shared_source", "dense"):
            block = make_block(6, 40)
            fusions = None
            if topo == "dense":
                # identity 1x1x1x1 fusion: dense reduces to the other two
                eye = np.eye(6).reshape(6, 6, 1, 1, 1, 1)
                fusions = [Conv4DLayer(eye, np.zeros(6), (0, 0, 0, 0))]
            stack = connect([block], topo, fusions)
            outs[topo], _ = stack.forward(x, "eval")
        assert np.allclose(outs["sequential"].data, outs["shared_source"].data, atol=0)
        assert np.allclose(outs["sequential"].data, outs["dense"].data, atol=1e-12)

    def test_zero_blocks_reproduce_source(self, rng):
        x = FeatureTensor(rng.standard_normal((1, 6, 3, 3, 4, 4)))
        for topo in ("sequential", "shared_source"):
            blocks = [make_block(6, 50 + i) for i in range(2)]
            for b in blocks:
                b.conv_a.weights[:] = 0
                b.conv_b.weights[:] = 0
            stack = connect(blocks, topo)
            out, _ = stack.forward(x, "train")
            assert np.allclose(out.data, x.data, atol=1e-12)

    def test_dense_fusion_channel_counts(self):
        cfg = tiny_config(connection="dense", n_restoration=3, filters=6)
        model = build_model(cfg, seed=4)
        counts = [f.in_channels for f in model.restoration.fusions]
        assert counts == [(k + 1) * 6 for k in range(3)]

    def test_dense_fusion_count_validated(self):
        blocks = [make_block(6, 60)]
        with pytest.raises(ValueError):
            BlockStack(blocks, "dense", fusions=[])


class TestParameters:
    def test_enumeration_is_stable_and_complete(self):
        cfg = tiny_config(connection="dense", n_restoration=2, n_refinement=1)
        model = build_model(cfg, seed=5)
        names = list(model.parameters())
        assert names == list(model.parameters())
        ids = [id(arr) for arr in model.parameters().values()]
        assert len(set(ids)) == len(ids)  # no tensor listed twice

    def test_closed_form_parameter_count(self):
        # Per conv: co*ci*a^2*k^2 weights + co biases. Per block: 2 convs +
        # 2 norms (gamma, beta). Dense adds one 1x1 fusion per block.
        def conv_count(ci, co, a, k):
            return co * ci * a * a * k * k + co

        for connection in ("sequential", "dense"):
            cfg = ModelConfig(filters=8, n_restoration=2, n_refinement=1,
                              angular_kernel=3, spatial_kernel=3, r_s=2, r_a=1,
                              connection=connection)
            model = build_model(cfg, seed=6)
            F, a, k = 8, 3, 3
            want = conv_count(1, F, a, k)                       # head
            want += conv_count(F, F * 4, a, k)                  # upscale (r_s^2)
            want += conv_count(F, 1, a, k)                      # tail
            blocks = 2 + 1
            want += blocks * (2 * conv_count(F, F, a, k) + 2 * 2 * F)
            if connection == "dense":
                for n_blocks in (2, 1):
                    for j in range(n_blocks):
                        want += conv_count((j + 1) * F, F, 1, 1)
            got = sum(arr.size for arr in model.parameters().values())
            assert got == want

    def test_paper_default_parameter_count(self):
        cfg = ModelConfig()  # 64 filters, 5 R + 3 D, 3x3 spatial, 5x5 angular
        model = build_model(cfg, seed=7)

        def conv_count(ci, co):
            return co * ci * 5 * 5 * 3 * 3 + co

        want = conv_count(1, 64) + conv_count(64, 64 * 4) + conv_count(64, 1)
        want += 8 * (2 * conv_count(64, 64) + 4 * 64)
        got = sum(arr.size for arr in model.parameters().values())
        assert got == want


class TestGradients:
    def test_two_block_model_matches_finite_differences(self, rng):
        cfg = ModelConfig(filters=3, n_restoration=1, n_refinement=1,
                          angular_kernel=3, spatial_kernel=3, r_s=1, r_a=1,
                          connection="sequential")
        model = build_model(cfg, seed=8)
        x = FeatureTensor(rng.standard_normal((1, 1, 3, 3, 5, 5)))
        target = rng.standard_normal(x.shape)

        def loss():
            out, _ = model.forward_full(x, mode="train")
            return float(np.sum((out.data - target) ** 2))

        out, cache = model.forward_full(x, mode="train")
        grads, gx = model.backward(cache, FeatureTensor(2.0 * (out.data - target)))
        params = model.parameters()
        for name in ("head.weight", "tail.bias", "restore.block0.conv_a.weight",
                     "restore.block0.norm_a.gamma", "up.weight",
                     "refine.block0.conv_b.weight", "refine.block0.norm_b.beta"):
            fd = central_difference(loss, params[name])
            assert grad_close(grads[name], fd), name
        assert grad_close(gx.data, central_difference(loss, x.data))

    def test_dense_topology_gradients(self, rng):
        cfg = ModelConfig(filters=3, n_restoration=2, n_refinement=0,
                          angular_kernel=1, spatial_kernel=3, r_s=1, r_a=1,
                          connection="dense")
        model = build_model(cfg, seed=9)
        x = FeatureTensor(rng.standard_normal((1, 1, 2, 2, 5, 5)))
        target = rng.standard_normal(x.shape)

        def loss():
            out, _ = model.forward_full(x, mode="train")
            return float(np.sum((out.data - target) ** 2))

        out, cache = model.forward_full(x, mode="train")
        grads, _ = model.backward(cache, FeatureTensor(2.0 * (out.data - target)))
        params = model.parameters()
        for name in ("restore.fuse1.weight", "restore.block1.conv_a.weight",
                     "restore.block0.conv_b.bias"):
            fd = central_difference(loss, params[name])
            assert grad_close(grads[name], fd), name

    def test_shared_source_gradients(self, rng):
        cfg = ModelConfig(filters=3, n_restoration=2, n_refinement=0,
                          angular_kernel=1, spatial_kernel=3, r_s=1, r_a=1,
                          connection="shared_source")
        model = build_model(cfg, seed=10)
        x = FeatureTensor(rng.standard_normal((1, 1, 2, 2, 5, 5)))
        target = rng.standard_normal(x.shape)

        def loss():
            out, _ = model.forward_full(x, mode="train")
            return float(np.sum((out.data - target) ** 2))

        out, cache = model.forward_full(x, mode="train")
        grads, _ = model.backward(cache, FeatureTensor(2.0 * (out.data - target)))
        params = model.parameters()
        for name in ("head.weight", "restore.block0.conv_a.weight",
                     "restore.block1.conv_b.weight"):
            fd = central_difference(loss, params[name])
            assert grad_close(grads[name], fd), name


class TestReceptiveField:
    def test_perturbation_stays_inside_halo(self, rng):
        cfg = tiny_config(filters=4, n_restoration=1, n_refinement=1)
        model = build_model(cfg, seed=11)
        x = rng.random((1, 1, 3, 3, 21, 21))
        base = forward(model, FeatureTensor(x), mode="eval").data
        _, halo = model.receptive_halo()
        cy = cx = 10
        bumped = x.copy()
        bumped[0, 0, 1, 1, cy, cx] += 1.0
        diff = np.abs(forward(model, FeatureTensor(bumped), mode="eval").data - base)
        changed = np.argwhere(diff[0, 0].sum(axis=(0, 1)) > 1e-12)
        assert changed.size  # the bump does propagate
        assert np.all(np.abs(changed - [cy, cx]) <= halo)


class TestSuperResolve:
    def test_whole_tile_equals_forward(self, rng):
        model = build_model(tiny_config(r_s=2, r_a=2, angular_kernel=3), seed=12)
        field = LightField(rng.random((1, 3, 3, 16, 16)))
        a = super_resolve(model, field)
        b = super_resolve(model, field, TileSpec(tile_y=64, tile_x=64))
        assert np.array_equal(a.data, b.data)

    def test_tiled_matches_untiled(self, rng):
        model = build_model(tiny_config(filters=4, r_s=2, r_a=1), seed=13)
        field = LightField(rng.random((1, 3, 3, 40, 40)))
        full = super_resolve(model, field)
        tiled = super_resolve(model, field, TileSpec(tile_y=20, tile_x=20))
        assert np.max(np.abs(full.data - tiled.data)) < 1e-6

    def test_constant_field_constant_interior(self, rng):
        model = build_model(tiny_config(filters=4, r_s=1, r_a=1), seed=14)
        field = LightField(np.full((1, 3, 3, 30, 30), 0.5))
        out = super_resolve(model, field, TileSpec(tile_y=15, tile_x=15)).data
        h = model.receptive_halo()[1]
        interior = out[0, 1, 1, h:-h, h:-h]
        assert np.max(np.abs(interior - interior[0, 0])) < 1e-10

    def test_tile_smaller_than_receptive_field_rejected(self, rng):
        model = build_model(tiny_config(filters=4), seed=15)
        field = LightField(rng.random((1, 3, 3, 30, 30)))
        with pytest.raises(ValueError):
            super_resolve(model, field, TileSpec(tile_y=4, tile_x=4))


class TestBaselineUpsample:
    def test_identity_at_unit_factors(self, rng):
        field = LightField(rng.random((1, 3, 3, 6, 6)))
        out = baseline_upsample(field, 1, 1)
        assert np.array_equal(out.data, field.data)

    def test_extents(self, rng):
        field = LightField(rng.random((1, 3, 3, 6, 6)))
        assert baseline_upsample(field, 2, 2).shape == (1, 5, 5, 12, 12)


class TestCheckpoint:
    def test_round_trip_bit_identical_forward(self, rng, tmp_path):
        cfg = tiny_config(connection="dense", r_s=2, r_a=2, angular_kernel=3)
        model = build_model(cfg, seed=16)
        # make running stats non-trivial before saving
        x = FeatureTensor(rng.random((1, 1, 3, 3, 8, 8)))
        model.forward_full(x, mode="train")
        path = tmp_path / "model.lf4c"
        save_model(model, path, extra={"train.note": "1"})
        loaded, header = load_model(path)
        assert header["train.note"] == "1"
        assert loaded.config == cfg
        a = forward(model, x, mode="eval")
        b = forward(loaded, x, mode="eval")
        assert np.array_equal(a.data, b.data)

    def test_shape_mismatch_rejected(self, rng, tmp_path):
        model = build_model(tiny_config(), seed=17)
        path = tmp_path / "model.lf4c"
        save_model(model, path)
        other = build_model(tiny_config(filters=8), seed=18)
        from lf4d.fileio import load_checkpoint

        _, params = load_checkpoint(path)
        with pytest.raises(ValueError):
            other.load_state(params)
