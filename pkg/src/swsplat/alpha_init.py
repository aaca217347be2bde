"""Binary static/dynamic initialization of the per-Gaussian blending weights.

Each Gaussian is projected into every view; its label votes 1 for every
(view, non-central frame) pair whose pixel at the projection differs from the
central frame by more than a threshold, and the majority over valid pairs
decides. Pairs where the Gaussian falls outside the frustum abstain rather
than vote static, so invisibility cannot outvote real motion.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import NEAR_PLANE, CameraRig, GaussianSet
from .errors import EmptyWindow

PIXEL_THRESHOLD_DEFAULT = 0.05


@dataclass
class DynamicMask:
    """Per-Gaussian binary labels (0 static, 1 dynamic)."""

    labels: np.ndarray  # (N,) in {0, 1}

    def to_alpha(self, num_modes: int = 2) -> np.ndarray:
        """One-hot alpha rows: column 0 carries static weight, column 1 dynamic."""
        if num_modes != 2:
            raise ValueError("binary mask initialization is defined for exactly 2 modes")
        alpha = np.zeros((len(self.labels), 2))
        alpha[self.labels == 0, 0] = 1.0
        alpha[self.labels == 1, 1] = 1.0
        return alpha


def init_alpha(
    gset: GaussianSet,
    rig: CameraRig,
    frames: np.ndarray,
    pixel_threshold: float = PIXEL_THRESHOLD_DEFAULT,
    neighborhood: bool = False,
) -> DynamicMask:
    """Label Gaussians dynamic/static from temporal pixel differences.

    frames has shape (V, F, H, W, 3) aligned with the rig's camera order and
    holds every frame of the window in [0,1]. The central frame is
    floor(F/2). With neighborhood=True the per-pixel difference is averaged
    over a 3x3 patch before thresholding.
    """
    frames = np.asarray(frames)
    if frames.ndim != 5 or frames.shape[0] != len(rig):
        raise ValueError("frames must be (V, F, H, W, 3) aligned with the rig")
    n_frames = frames.shape[1]
    if n_frames < 2:
        raise EmptyWindow(f"alpha init needs >= 2 frames, got {n_frames}")
    central = n_frames // 2

    votes = np.zeros(gset.count)
    counts = np.zeros(gset.count)
    for v, cam in enumerate(rig.cameras):
        pix, depth = cam.project_points(gset.means)
        px = np.round(pix[:, 0]).astype(int)
        py = np.round(pix[:, 1]).astype(int)
        inside = (
            (depth > NEAR_PLANE)
            & (px >= 0)
            & (px < cam.width)
            & (py >= 0)
            & (py < cam.height)
        )
        if not inside.any():
            continue
        diff_stack = np.abs(frames[v] - frames[v, central]).sum(axis=-1)  # (F, H, W)
        if neighborhood:
            diff_stack = _box3_mean(diff_stack)
        idx = np.flatnonzero(inside)
        for f in range(n_frames):
            if f == central:
                continue
            flagged = diff_stack[f, py[idx], px[idx]] > pixel_threshold
            votes[idx] += flagged
            counts[idx] += 1
    labels = np.zeros(gset.count, dtype=int)
    seen = counts > 0
    labels[seen] = (votes[seen] / counts[seen] > 0.5).astype(int)
    return DynamicMask(labels=labels)


def _box3_mean(stack: np.ndarray) -> np.ndarray:
    """3x3 mean over the trailing two axes, edge-replicated."""
    padded = np.pad(stack, ((0, 0), (1, 1), (1, 1)), mode="edge")
    out = np.zeros_like(stack)
    for dy in range(3):
        for dx in range(3):
            out += padded[:, dy : dy + stack.shape[1], dx : dx + stack.shape[2]]
    return out / 9.0
