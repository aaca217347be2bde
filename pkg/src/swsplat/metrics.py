"""Image fidelity metrics and the per-frame / overlap-error series."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import ShapeMismatch
from .render import render, ssim_and_gradient

PSNR_CAP = 99.0


def psnr(img: np.ndarray, ref: np.ndarray) -> float:
    """10*log10(1/MSE) for [0,1] images, capped at 99 dB for identical pairs."""
    img = np.asarray(img)
    ref = np.asarray(ref)
    if img.shape != ref.shape:
        raise ShapeMismatch(f"{img.shape} != {ref.shape}")
    mse = float(np.mean((img - ref) ** 2))
    if mse <= 10 ** (-PSNR_CAP / 10):
        return PSNR_CAP
    return float(10.0 * np.log10(1.0 / mse))


def ssim(img: np.ndarray, ref: np.ndarray) -> float:
    val, _ = ssim_and_gradient(np.asarray(img), np.asarray(ref))
    return float(val)


def compute_metrics(renders, targets) -> list[dict]:
    """Per-frame PSNR/SSIM records for aligned render/target sequences."""
    renders = np.asarray(renders)
    targets = np.asarray(targets)
    if renders.shape != targets.shape:
        raise ShapeMismatch(f"{renders.shape} != {targets.shape}")
    return [
        {"frame": f, "psnr": psnr(renders[f], targets[f]), "ssim": ssim(renders[f], targets[f])}
        for f in range(renders.shape[0])
    ]


def playback_sequence(models, cam, background, n_frames: int) -> np.ndarray:
    """Render every frame from its owning model (later window at overlaps)."""
    frames = np.zeros((n_frames, cam.height, cam.width, 3))
    for f in range(n_frames):
        owner = None
        for k in range(len(models) - 1, -1, -1):
            if models[k].frame_start <= f <= models[k].frame_end:
                owner = models[k]
                break
        if owner is None:
            raise ValueError(f"frame {f} not covered by any window")
        frames[f] = render(owner.deformed(f), cam, background).rgb
    return frames


def neighbor_l1_series(sequence: np.ndarray) -> list[float]:
    """Mean absolute error between each pair of neighbouring frames."""
    return [float(np.abs(sequence[i + 1] - sequence[i]).mean()) for i in range(len(sequence) - 1)]


def overlap_frames_of(models) -> list[int]:
    return [m.frame_start for m in models[1:]]


def write_jsonl(records: list[dict], path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


def read_jsonl(path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
