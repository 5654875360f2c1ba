"""Delimited metric reports and their companion figures.

Report format (tab-separated, one line per scene/method pair):

    scene<TAB>method<TAB>psnr<TAB>ssim

followed by one MEAN row per method. Figures are rendered next to the
report file: ``<stem>_psnr.png`` (per-scene PSNR bars, model vs baseline)
and, for training runs, ``<stem>_loss.png`` (loss curve with validation
PSNR overlay when available).
"""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

__all__ = [
    "write_metrics_report",
    "render_report_figures",
    "write_train_log",
    "render_train_curves",
]


def _fmt(value):
    if isinstance(value, float):
        return "inf" if math.isinf(value) else f"{value:.6f}"
    return str(value)


def write_metrics_report(rows, path):
    path = Path(path)
    methods = []
    for row in rows:
        if row["method"] not in methods:
            methods.append(row["method"])
    lines = ["scene\tmethod\tpsnr\tssim"]
    for row in rows:
        lines.append("\t".join(_fmt(row[k]) for k in ("scene", "method", "psnr", "ssim")))
    for method in methods:
        sel = [r for r in rows if r["method"] == method]
        psnr = sum(r["psnr"] for r in sel) / len(sel)
        ssim = sum(r["ssim"] for r in sel) / len(sel)
        lines.append(f"MEAN\t{method}\t{_fmt(psnr)}\t{_fmt(ssim)}")
    path.write_text("\n".join(lines) + "\n")
    return path


def render_report_figures(rows, report_path):
    """Bar chart of per-scene PSNR/SSIM next to the report file."""
    report_path = Path(report_path)
    scenes = []
    for row in rows:
        if row["scene"] not in scenes:
            scenes.append(row["scene"])
    methods = sorted({row["method"] for row in rows}, reverse=True)  # model first
    values = {
        m: [next(r["psnr"] for r in rows if r["scene"] == s and r["method"] == m)
            for s in scenes]
        for m in methods
    }
    ssims = {
        m: [next(r["ssim"] for r in rows if r["scene"] == s and r["method"] == m)
            for s in scenes]
        for m in methods
    }

    fig, axes = plt.subplots(1, 2, figsize=(max(6.0, 1.2 * len(scenes) + 3), 3.4))
    width = 0.8 / len(methods)
    xs = range(len(scenes))
    for i, m in enumerate(methods):
        offs = [x + (i - (len(methods) - 1) / 2) * width for x in xs]
        axes[0].bar(offs, values[m], width=width, label=m)
        axes[1].bar(offs, ssims[m], width=width, label=m)
    for ax, label in zip(axes, ("PSNR (dB)", "SSIM")):
        ax.set_xticks(list(xs))
        ax.set_xticklabels(scenes, rotation=45, ha="right", fontsize=8)
        ax.set_ylabel(label)
        ax.spines["right"].set_visible(False)
        ax.spines["top"].set_visible(False)
    axes[0].legend(fontsize=8)
    fig.tight_layout()
    out = report_path.with_name(report_path.stem + "_psnr.png")
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out


def write_train_log(log_rows, path):
    path = Path(path)
    lines = ["step\tepoch\tlr\tloss\tangular\tspatial"]
    for row in log_rows:
        lines.append("\t".join(
            _fmt(row[k]) for k in ("step", "epoch", "lr", "loss", "angular", "spatial")
        ))
    path.write_text("\n".join(lines) + "\n")
    return path


def render_train_curves(log_rows, val_rows, path):
    path = Path(path)
    fig, ax = plt.subplots(figsize=(6.0, 3.4))
    ax.plot([r["step"] for r in log_rows], [r["loss"] for r in log_rows],
            lw=0.8, label="training loss")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.spines["right"].set_visible(False)
    ax.spines["top"].set_visible(False)
    if val_rows:
        steps_per_epoch = max(1, len(log_rows) // max(1, len(val_rows)))
        ax2 = ax.twinx()
        ax2.plot([(r["epoch"] + 1) * steps_per_epoch for r in val_rows],
                 [r["psnr"] for r in val_rows], "o-", color="tab:orange",
                 label="validation PSNR")
        ax2.set_ylabel("validation PSNR (dB)")
        ax2.spines["top"].set_visible(False)
    ax.legend(fontsize=8, loc="upper right")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
