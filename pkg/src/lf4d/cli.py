"""Command-line front end: train / sr / degrade / eval / synth.

Configuration files are flat key=value text; any TrainConfig or ModelConfig
field can be set by name (see README for the full key list). The
LF4D_THREADS environment variable caps evaluation worker count.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from .data import DegradeSpec, degrade, make_random_scene, render_synthetic
from .fileio import load_lf4d, read_keyvalue, save_lf4d
from .network import ModelConfig, TileSpec, coerce_like
from .train import TrainConfig, evaluate, load_model, train


def _configs_from_file(path):
    raw = read_keyvalue(path) if path else {}
    model_kwargs, train_kwargs = {}, {}
    model_fields = {f.name: f for f in dataclasses.fields(ModelConfig)}
    train_fields = {f.name: f for f in dataclasses.fields(TrainConfig)}
    for key, value in raw.items():
        if key in model_fields:
            model_kwargs[key] = coerce_like(model_fields[key].default, value)
        elif key in train_fields:
            train_kwargs[key] = coerce_like(train_fields[key].default, value)
        else:
            raise SystemExit(f"config error: unknown key {key!r}")
    return ModelConfig(**model_kwargs), TrainConfig(**train_kwargs)


def _tile_spec(values):
    if not values:
        return None
    return TileSpec(tile_y=values[0], tile_x=values[1])


def cmd_train(args):
    model_cfg, train_cfg = _configs_from_file(args.config)
    out_dir = Path(args.out)
    result = train(model_cfg, train_cfg, args.data, out_dir=out_dir)
    from .report import render_train_curves, write_train_log

    write_train_log(result["log"], out_dir / "train_log.tsv")
    render_train_curves(result["log"], result["val"], out_dir / "loss_curve.png")
    final = result["log"][-1]["loss"] if result["log"] else float("nan")
    print(f"trained {result['steps']} steps in {result['seconds']:.1f}s; "
          f"final loss {final:.6g}")
    print(f"checkpoint: {result['checkpoint']}")
    if result["val"]:
        print(f"validation PSNR (last epoch): {result['val'][-1]['psnr']:.3f} dB")
    return 0


def cmd_sr(args):
    model, _ = load_model(args.model)
    field = load_lf4d(args.infile).astype(model.config.np_dtype)
    from .network import super_resolve

    out = super_resolve(model, field, _tile_spec(args.tile))
    save_lf4d(out, args.outfile)
    print(f"{args.infile} {field.shape} -> {args.outfile} {out.shape}")
    return 0


def cmd_degrade(args):
    field = load_lf4d(args.infile)
    spec = DegradeSpec(
        blur_window=args.blur_window,
        blur_sigma=args.blur_sigma,
        r_s=args.rs,
        r_a=args.ra,
        noise_sigma=args.sigma_noise,
        blur=not args.no_blur,
    )
    out = degrade(field, spec, seed=args.seed)
    save_lf4d(out, args.outfile)
    print(f"{args.infile} {field.shape} -> {args.outfile} {out.shape}")
    return 0


def cmd_eval(args):
    model, header = load_model(args.model)
    spec = DegradeSpec(
        blur_window=args.blur_window or int(header.get("train.blur_window", 7)),
        blur_sigma=args.blur_sigma or float(header.get("train.blur_sigma", 1.2)),
        r_s=model.config.r_s,
        r_a=model.config.r_a,
        noise_sigma=float(header.get("train.noise_sigma", 0.0)),
    )
    rows = evaluate(model, spec, args.data, report_path=args.report,
                    figures=not args.no_figures, tiling=_tile_spec(args.tile))
    for method in ("model", "bicubic"):
        sel = [r for r in rows if r["method"] == method]
        psnr = sum(r["psnr"] for r in sel) / len(sel)
        print(f"{method}: mean PSNR {psnr:.3f} dB over {len(sel)} scenes")
    print(f"report: {args.report}")
    return 0


def cmd_synth(args):
    spec = read_keyvalue(args.scene)
    views = int(spec.get("views", 5))
    height = int(spec.get("height", 64))
    width = int(spec.get("width", 64))
    channels = int(spec.get("channels", 1))
    seed = int(spec.get("seed", 0))
    disparities = [float(v) for v in spec.get("disparities", "0.0").split(",")]
    scene = make_random_scene(height, width, disparities, seed=seed,
                              channels=channels, max_views=max(views, 9))
    field, _ = render_synthetic(scene, views, views, height, width)
    save_lf4d(field, args.out)
    print(f"synthesized {field.shape} from {len(disparities)} layers -> {args.out}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="lf4d",
                                     description="4D light-field super-resolution")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a manifest")
    p.add_argument("--config", required=True, help="key=value config file")
    p.add_argument("--data", required=True, help="dataset manifest")
    p.add_argument("--out", default="run", help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sr", help="super-resolve one light field")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", dest="outfile", required=True)
    p.add_argument("--tile", nargs=2, type=int, metavar=("H", "W"))
    p.set_defaults(func=cmd_sr)

    p = sub.add_parser("degrade", help="apply the observation model")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", dest="outfile", required=True)
    p.add_argument("--rs", type=int, default=2)
    p.add_argument("--ra", type=int, default=1)
    p.add_argument("--sigma-noise", type=float, default=0.0)
    p.add_argument("--blur-window", type=int, default=7)
    p.add_argument("--blur-sigma", type=float, default=1.2)
    p.add_argument("--no-blur", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_degrade)

    p = sub.add_parser("eval", help="score a checkpoint over a manifest")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--blur-window", type=int, default=0, help="override checkpoint value")
    p.add_argument("--blur-sigma", type=float, default=0.0, help="override checkpoint value")
    p.add_argument("--tile", nargs=2, type=int, metavar=("H", "W"))
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="render a synthetic layered scene")
    p.add_argument("--scene", required=True, help="key=value scene spec")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None):
    from .perf import enable_heap_reuse

    enable_heap_reuse()
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
