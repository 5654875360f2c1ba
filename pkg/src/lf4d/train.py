"""Training loop (plain SGD with step decay), checkpointing, and evaluation.

Runs are fully deterministic for a given seed: every random choice draws
from named child streams of one root seed, and parameter updates happen on
a single coordinator thread. Evaluation may fan out over scenes (bounded
by the LF4D_THREADS environment variable) since scenes are independent and
results are joined in manifest order.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .data import DegradeSpec, MultiRangeSpec, degrade, degrade_reference, multi_range_sample, sample_patch
from .fileio import load_lf4d, read_manifest, save_checkpoint
from .losses import FeatureExtractor, LossWeights, combined_loss
from .metrics import lightfield_ssim, mean_psnr
from .network import ModelConfig, baseline_upsample, build_model, forward, super_resolve
from .perf import enable_heap_reuse
from .tensor import FeatureTensor, LightField, pack_batch

__all__ = [
    "TrainConfig",
    "sgd_step",
    "lr_schedule",
    "train",
    "evaluate",
    "save_model",
    "load_model",
]


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-5
    lr_decay: float = 0.1
    lr_step_epochs: int = 10
    momentum: float = 0.0
    epochs: int = 10
    batch_size: int = 1
    max_steps: int = 0              # 0 = run all epochs
    loss_alpha: float = 1.0
    loss_beta: float = 1.0
    patch_spatial: int = 96
    patch_angular: int = 5
    draws_per_scene: int = 5
    multi_range: bool = False
    rescale_lo: float = 0.8
    rescale_hi: float = 1.0
    blur_window: int = 7
    blur_sigma: float = 1.2
    noise_sigma: float = 0.0
    seed: int = 0
    precision: str = "float64"
    checkpoint_every: int = 0       # epochs between mid-run checkpoints; 0 = final only
    grad_clip: float = 0.0
    val_fraction: float = 0.1

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.precision not in ("float32", "float64"):
            raise ValueError("precision must be float32 or float64")


def lr_schedule(epoch, base=1e-5, decay=0.1, step_epochs=10):
    """Step decay: base * decay^(epoch // step_epochs)."""
    return base * decay ** (epoch // step_epochs)


def sgd_step(params, grads, lr, momentum=0.0, velocity=None):
    """In-place p <- p - lr * g for every enumerated parameter.

    With momentum, the classical velocity update v <- mu*v + g is applied
    first; the velocity dict is returned for the next step.
    """
    missing = set(params) - set(grads)
    if missing:
        raise ValueError(f"gradients missing for parameters: {sorted(missing)}")
    if momentum and velocity is None:
        velocity = {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        if momentum:
            v = momentum * velocity.get(name, 0.0) + g
            velocity[name] = v
            p -= (lr * v).astype(p.dtype, copy=False)
        else:
            p -= (lr * g).astype(p.dtype, copy=False)
    return velocity


def _clip_gradients(grads, max_norm):
    total = np.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values()))
    if total > max_norm > 0:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return grads


def save_model(model, path, extra=None):
    """Checkpoint = readable config header + all parameter/statistics records."""
    header = model.config.to_header()
    if extra:
        header.update(extra)
    save_checkpoint(header, model.state_dict(), path)


def load_model(path):
    """Rebuild a model from a checkpoint; returns (model, header dict)."""
    from .fileio import load_checkpoint

    header, params = load_checkpoint(path)
    config = ModelConfig.from_header(header)
    model = build_model(config, seed=0)
    model.load_state(params)
    return model, header


def _load_scenes(manifest, dtype):
    entries = read_manifest(manifest) if not isinstance(manifest, list) else manifest
    fields = [load_lf4d(e["path"]).astype(dtype) for e in entries]
    return entries, fields


def _split_train_val(n, fraction, rng):
    order = list(rng.permutation(n))
    n_val = int(round(fraction * n))
    n_val = min(n_val, n - 1)  # always keep at least one training scene
    if n_val <= 0:
        return order, []
    return order[:-n_val], order[-n_val:]


def train(model_cfg, train_cfg, manifest, out_dir=None):
    """End-to-end training: patch -> degrade -> forward -> loss -> SGD.

    Returns a dict with the trained model, per-step log rows, per-epoch
    validation PSNR, and the final checkpoint path (when out_dir given).
    """
    enable_heap_reuse()
    cfg = train_cfg
    dtype = np.dtype(cfg.precision)
    model_cfg = replace(model_cfg, dtype=cfg.precision)
    if cfg.patch_spatial % model_cfg.r_s:
        raise ValueError(f"patch_spatial {cfg.patch_spatial} must divide by r_s {model_cfg.r_s}")
    if (cfg.patch_angular - 1) % model_cfg.r_a:
        raise ValueError(
            f"patch_angular {cfg.patch_angular} must satisfy (n-1) % r_a == 0 for r_a "
            f"{model_cfg.r_a}"
        )

    entries, fields = _load_scenes(manifest, dtype)
    seeds = np.random.SeedSequence(cfg.seed).spawn(5)
    rng_split = np.random.default_rng(seeds[0])
    rng_order = np.random.default_rng(seeds[1])
    rng_patch = np.random.default_rng(seeds[2])
    rng_noise = np.random.default_rng(seeds[3])

    train_idx, val_idx = _split_train_val(len(fields), cfg.val_fraction, rng_split)
    model = build_model(model_cfg, seed=seeds[4])
    weights = LossWeights(cfg.loss_alpha, cfg.loss_beta)
    extractor = None
    if cfg.loss_alpha > 0:
        extractor = FeatureExtractor(model_cfg.in_channels, seed=cfg.seed, dtype=dtype)
    dspec = DegradeSpec(cfg.blur_window, cfg.blur_sigma, model_cfg.r_s, model_cfg.r_a,
                        cfg.noise_sigma)
    mrspec = MultiRangeSpec(cfg.rescale_lo, cfg.rescale_hi, cfg.patch_angular,
                            cfg.draws_per_scene)

    header_extra = {
        "train.blur_window": cfg.blur_window,
        "train.blur_sigma": cfg.blur_sigma,
        "train.noise_sigma": cfg.noise_sigma,
        "train.seed": cfg.seed,
    }
    out_dir_path = None
    if out_dir is not None:
        out_dir_path = Path(out_dir)
        out_dir_path.mkdir(parents=True, exist_ok=True)

    velocity = None
    log = []
    val_log = []
    step = 0
    stop = False
    t0 = time.perf_counter()
    for epoch in range(cfg.epochs):
        lr = lr_schedule(epoch, cfg.lr, cfg.lr_decay, cfg.lr_step_epochs)
        for scene_i in rng_order.permutation(train_idx):
            for _ in range(cfg.draws_per_scene):
                if cfg.max_steps and step >= cfg.max_steps:
                    stop = True
                    break
                batch_hr = []
                for _ in range(cfg.batch_size):
                    f = fields[scene_i]
                    if cfg.multi_range:
                        f, _ = multi_range_sample(f, mrspec, rng_patch)
                    batch_hr.append(
                        sample_patch(f, cfg.patch_spatial, cfg.patch_angular, rng_patch)
                    )
                batch_lr = [degrade(p, dspec, rng_noise) for p in batch_hr]
                x = pack_batch(batch_lr)
                out, cache = model.forward_full(x, mode="train")
                grad = np.empty_like(out.data)
                total = 0.0
                part_sums = {"spatial": 0.0, "angular": 0.0}
                for i, hr in enumerate(batch_hr):
                    li, gi, parts = combined_loss(LightField(out.data[i]), hr, weights,
                                                  extractor)
                    grad[i] = gi
                    total += li
                    for key in part_sums:
                        part_sums[key] += parts[key]
                grads, _ = model.backward(cache, FeatureTensor(grad))
                if cfg.grad_clip > 0:
                    _clip_gradients(grads, cfg.grad_clip)
                velocity = sgd_step(model.parameters(), grads, lr, cfg.momentum, velocity)
                step += 1
                log.append({"step": step, "epoch": epoch, "lr": lr, "loss": total,
                            "angular": part_sums["angular"], "spatial": part_sums["spatial"]})
            if stop:
                break
        if val_idx:
            psnrs = []
            for vi in val_idx:
                lr_f, hr_ref = degrade_reference(fields[vi], dspec)
                pred = forward(model, pack_batch([lr_f]), mode="eval")
                pred = LightField(np.clip(pred.data[0], 0.0, 1.0))
                psnrs.append(mean_psnr(pred, hr_ref))
            val_log.append({"epoch": epoch, "psnr": sum(psnrs) / len(psnrs)})
        if (out_dir_path and cfg.checkpoint_every
                and (epoch + 1) % cfg.checkpoint_every == 0 and epoch + 1 < cfg.epochs):
            save_model(model, out_dir_path / f"checkpoint_epoch{epoch + 1:03d}.lf4c",
                       header_extra)
        if stop:
            break

    checkpoint_path = None
    if out_dir_path:
        checkpoint_path = out_dir_path / "checkpoint.lf4c"
        save_model(model, checkpoint_path, header_extra)
    return {
        "model": model,
        "log": log,
        "val": val_log,
        "steps": step,
        "seconds": time.perf_counter() - t0,
        "checkpoint": checkpoint_path,
    }


def _worker_count(workers=None):
    if workers is not None:
        return max(1, int(workers))
    env = os.environ.get("LF4D_THREADS", "")
    try:
        return max(1, int(env))
    except ValueError:
        return 1


def evaluate(model, degrade_spec, manifest, report_path=None, figures=True,
             tiling=None, workers=None):
    """Degrade, super-resolve, and score every manifest scene.

    Emits one row per (scene, method): the trained model plus the plain
    interpolation baseline, which is always present. Values are clipped to
    [0, 1] before scoring against the HR reference. When ``report_path``
    is given the rows are written as delimited text with rendered figures
    alongside.
    """
    enable_heap_reuse()
    dtype = model.config.np_dtype
    entries, fields = _load_scenes(manifest, dtype)

    def score(field):
        lr_f, hr_ref = degrade_reference(field, degrade_spec)
        pred = super_resolve(model, lr_f, tiling)
        pred = LightField(np.clip(pred.data, 0.0, 1.0))
        base = baseline_upsample(lr_f, model.config.r_s, model.config.r_a)
        base = LightField(np.clip(base.data, 0.0, 1.0))
        return (
            (mean_psnr(pred, hr_ref), lightfield_ssim(pred, hr_ref)),
            (mean_psnr(base, hr_ref), lightfield_ssim(base, hr_ref)),
        )

    n_workers = _worker_count(workers)
    if n_workers > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            scored = list(pool.map(score, fields))
    else:
        scored = [score(f) for f in fields]

    rows = []
    for entry, ((mp, ms), (bp, bs)) in zip(entries, scored):
        rows.append({"scene": entry["id"], "method": "model", "psnr": mp, "ssim": ms})
        rows.append({"scene": entry["id"], "method": "bicubic", "psnr": bp, "ssim": bs})
    if report_path is not None:
        from .report import render_report_figures, write_metrics_report

        write_metrics_report(rows, report_path)
        if figures:
            render_report_figures(rows, report_path)
    return rows
