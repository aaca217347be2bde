"""Flow-driven window planning: per-frame flow summaries and the greedy
partition of a sequence into overlapping windows with balanced motion.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import MissingFlow


@dataclass
class FlowSummary:
    """Mean squared flow magnitude per frame transition, averaged over views.

    values[i] summarizes the flow between frames i and i+1, so len(values)
    is one less than the frame count.
    """

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 1:
            raise ValueError("flow summary must be 1-D")
        if not np.isfinite(self.values).all() or (self.values < 0).any():
            raise ValueError("flow summary entries must be finite and >= 0")

    @property
    def num_frames(self) -> int:
        return len(self.values) + 1


@dataclass
class WindowPlan:
    """Partition into (start, end) inclusive frame ranges.

    Adjacent windows share exactly one frame (window k ends where window k+1
    starts); every window spans at least 2 frames.
    """

    windows: list[tuple[int, int]]
    threshold: float

    def __post_init__(self):
        for (s, e) in self.windows:
            if e <= s:
                raise ValueError(f"window ({s},{e}) shorter than 2 frames")
        for (_, e), (s2, _) in zip(self.windows, self.windows[1:]):
            if s2 != e:
                raise ValueError("adjacent windows must share exactly one frame")

    @property
    def num_frames(self) -> int:
        return self.windows[-1][1] + 1

    def window_of_frame(self, frame: int) -> int:
        """Index of the window owning `frame`; overlap frames resolve to the later window."""
        for k in range(len(self.windows) - 1, -1, -1):
            s, e = self.windows[k]
            if s <= frame <= e:
                return k
        raise ValueError(f"frame {frame} outside plan range")


def summarize_flow(flow_maps: dict[str, list[np.ndarray]]) -> FlowSummary:
    """Reduce per-view, per-transition flow fields to one scalar per transition.

    flow_maps maps view id -> list of (H, W, 2) fields, one per transition.
    Each field is reduced to the mean squared magnitude over pixels; views are
    then averaged, which makes the summary invariant to resolution and camera
    count.

    Raises MissingFlow if any view is missing a transition.
    """
    if not flow_maps:
        raise MissingFlow("<none>", 0)
    lengths = {len(v) for v in flow_maps.values()}
    n = max(lengths)
    per_view = []
    for view_id, fields in flow_maps.items():
        if len(fields) != n:
            raise MissingFlow(view_id, len(fields))
        vals = []
        for t, f in enumerate(fields):
            if f is None:
                raise MissingFlow(view_id, t)
            f = np.asarray(f, dtype=float)
            vals.append(np.mean(np.sum(f * f, axis=-1)))
        per_view.append(vals)
    return FlowSummary(np.mean(np.asarray(per_view), axis=0))


def plan_windows(flow: FlowSummary, threshold: float) -> WindowPlan:
    """Greedy left-to-right partition of the sequence.

    Accumulates flow inside the current window and closes it at the current
    frame when taking the next transition would push the accumulation past the
    threshold; the next window starts at the closing frame. Windows never
    close below 2 frames even if a single transition exceeds the threshold,
    and the final window absorbs the remainder.
    """
    if threshold <= 0:
        raise ValueError("threshold must be > 0")
    n_frames = flow.num_frames
    if n_frames < 2:
        raise ValueError("need at least 2 frames to plan windows")
    windows = []
    start = 0
    acc = 0.0
    for i, v in enumerate(flow.values):
        end = i  # window currently reaches frame i; transition i -> i+1 pending
        if acc + v > threshold and end - start >= 1:
            windows.append((start, end))
            start = end
            acc = 0.0
        acc += v
    windows.append((start, n_frames - 1))
    return WindowPlan(windows=windows, threshold=float(threshold))


def naive_block_flow(
    frame_a: np.ndarray, frame_b: np.ndarray, block: int = 8, radius: int = 4
) -> np.ndarray:
    """Block-matching fallback flow from frame_a to frame_b.

    Splits the image into block x block tiles and assigns each tile the
    integer displacement (dx, dy) within `radius` minimizing the sum of
    absolute differences on grayscale; ties break toward zero displacement
    (then lexicographically). Candidates whose target window leaves the image
    are skipped; (0, 0) is always valid. Returns an (H, W, 2) field.
    """
    a = _to_gray(frame_a)
    b = _to_gray(frame_b)
    if a.shape != b.shape:
        raise ValueError("frames must share a shape")
    h, w = a.shape
    flow = np.zeros((h, w, 2))
    # Candidates sorted so earlier entries win ties: zero first, then by radius.
    cands = sorted(
        ((dx, dy) for dy in range(-radius, radius + 1) for dx in range(-radius, radius + 1)),
        key=lambda d: (d[0] * d[0] + d[1] * d[1], abs(d[1]), abs(d[0]), d[1], d[0]),
    )
    for y0 in range(0, h, block):
        for x0 in range(0, w, block):
            y1 = min(y0 + block, h)
            x1 = min(x0 + block, w)
            ref = a[y0:y1, x0:x1]
            best = (np.inf, 0, 0)
            for dx, dy in cands:
                ty0, ty1 = y0 + dy, y1 + dy
                tx0, tx1 = x0 + dx, x1 + dx
                if ty0 < 0 or tx0 < 0 or ty1 > h or tx1 > w:
                    continue
                sad = np.abs(ref - b[ty0:ty1, tx0:tx1]).sum()
                if sad < best[0]:
                    best = (sad, dx, dy)
            flow[y0:y1, x0:x1, 0] = best[1]
            flow[y0:y1, x0:x1, 1] = best[2]
    return flow


def _to_gray(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=float)
    if img.ndim == 3:
        return img.mean(axis=2)
    return img
