"""Matplotlib figure rendering for the metric and overlap-error reports.

Every report writer pairs a line-delimited JSON record file with a rendered
PNG figure next to it.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .metrics import write_jsonl

FIG_DPI = 130


def _finish(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=FIG_DPI)
    plt.close(fig)


def metrics_report(records: list[dict], out_dir, stem: str = "metrics") -> dict:
    """Write per-frame PSNR/SSIM as JSONL plus a two-panel figure."""
    out_dir = Path(out_dir)
    jsonl = out_dir / f"{stem}.jsonl"
    write_jsonl(records, jsonl)
    frames = [r["frame"] for r in records]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8, 3))
    ax1.plot(frames, [r["psnr"] for r in records], marker="o", color="tab:blue")
    ax1.set_xlabel("frame")
    ax1.set_ylabel("PSNR (dB)")
    ax1.grid(alpha=0.3)
    ax2.plot(frames, [r["ssim"] for r in records], marker="o", color="tab:orange")
    ax2.set_xlabel("frame")
    ax2.set_ylabel("SSIM")
    ax2.grid(alpha=0.3)
    png = out_dir / f"{stem}.png"
    _finish(fig, png)
    return {"jsonl": str(jsonl), "figure": str(png)}


def overlap_report(
    before: list[float],
    after: list[float] | None,
    overlap_frames: list[int],
    out_dir,
    stem: str = "overlap",
    extra: dict | None = None,
) -> dict:
    """Neighbouring-frame L1 curves before/after fine-tuning, overlap frame
    transitions highlighted; JSONL rows carry both series."""
    out_dir = Path(out_dir)
    records = []
    for i, b in enumerate(before):
        rec = {"pair": [i, i + 1], "l1_before": b, "crosses_overlap": (i + 1) in overlap_frames}
        if after is not None:
            rec["l1_after"] = after[i]
        if extra:
            rec.update({k: v[i] for k, v in extra.items() if len(v) == len(before)})
        records.append(rec)
    jsonl = out_dir / f"{stem}.jsonl"
    write_jsonl(records, jsonl)

    fig, ax = plt.subplots(figsize=(6.5, 3.2))
    xs = [i + 0.5 for i in range(len(before))]
    ax.plot(xs, before, marker="o", label="independent windows", color="tab:red")
    if after is not None:
        ax.plot(xs, after, marker="o", label="after fine-tuning", color="tab:green")
    for f in overlap_frames:
        ax.axvline(f - 0.5, color="red", alpha=0.25, linestyle="--")
    ax.set_xlabel("frame pair")
    ax.set_ylabel("mean |I(t+1) - I(t)|")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    png = out_dir / f"{stem}.png"
    _finish(fig, png)
    return {"jsonl": str(jsonl), "figure": str(png)}


def training_curve_figure(metric_rows: list[dict], path) -> None:
    """Loss / PSNR / Gaussian-count curves from a training metrics log."""
    iters = [r["iter"] for r in metric_rows]
    fig, axes = plt.subplots(1, 3, figsize=(10, 3))
    axes[0].plot(iters, [r["loss"] for r in metric_rows], color="tab:blue")
    axes[0].set_ylabel("loss")
    axes[0].set_yscale("log")
    axes[1].plot(iters, [r["psnr"] for r in metric_rows], color="tab:orange")
    axes[1].set_ylabel("batch PSNR (dB)")
    axes[2].plot(iters, [r["n_g"] for r in metric_rows], color="tab:green")
    axes[2].set_ylabel("Gaussians")
    for ax in axes:
        ax.set_xlabel("iteration")
        ax.grid(alpha=0.3)
    _finish(fig, path)
