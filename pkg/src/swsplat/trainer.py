"""Single-window training: staggered warm-up on the central frame, joint
optimization of canonical Gaussians + deformation MLP + blending weights, and
adaptive density control that keeps alpha rows and optimizer state aligned
with the Gaussian count.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .alpha_init import init_alpha
from .core import CameraRig, GaussianSet, inverse_sigmoid, normalize_quaternions, quaternions_to_matrices
from .errors import EmptySeedCloud, MissingImage, NumericError
from .mlp import DynamicMlp, apply_deformation, apply_deformation_backward
from .render import render, render_backward, training_loss

PER_GAUSSIAN_PARAMS = ("means", "rotations", "scales", "opacities", "colors", "alpha")


@dataclass
class TrainConfig:
    """Hyperparameters for one window. Defaults are the full-scale schedule;
    desk() scales the phase structure down ~10x for CPU-sized scenes."""

    total_iters: int = 15000
    warmup_iters: int = 2000
    densify_until: int = 8000
    densify_interval: int = 100

    mlp_lr: float = 1e-4
    alpha_lr: float = 1e-4
    mlp_lr_decay_factor: float = 1e-2
    mlp_lr_decay_horizon: int = 20000

    lambda_ssim: float = 0.2
    position_lr_init: float = 1.6e-4   # multiplied by scene extent
    position_lr_final: float = 1.6e-6
    rotation_lr: float = 1e-3
    scale_lr: float = 5e-3
    opacity_lr: float = 5e-2
    color_lr: float = 2.5e-3

    grad_threshold: float = 2e-4
    min_opacity: float = 5e-3
    percent_dense: float = 0.01
    split_factor: float = 1.6

    num_modes: int = 2
    sh_degree: int = 1
    mlp_width: int = 16
    mlp_depth: int = 4
    freq_m: int = 6
    pixel_threshold: float = 0.05
    alpha_neighborhood: bool = False
    mlp_mode: str = "dynamic"  # dynamic | regular | off
    background: tuple = (0.0, 0.0, 0.0)
    seed: int = 0
    log_every: int = 50

    def __post_init__(self):
        if not (self.warmup_iters < self.densify_until < self.total_iters):
            raise ValueError("need warmup_iters < densify_until < total_iters")
        for name in ("mlp_lr", "alpha_lr", "position_lr_init", "rotation_lr", "scale_lr",
                     "opacity_lr", "color_lr"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if self.mlp_mode not in ("dynamic", "regular", "off"):
            raise ValueError(f"unknown mlp_mode {self.mlp_mode!r}")

    @staticmethod
    def paper(**overrides) -> "TrainConfig":
        return TrainConfig(**overrides)

    @staticmethod
    def desk(**overrides) -> "TrainConfig":
        base = dict(
            total_iters=1500,
            warmup_iters=300,
            densify_until=800,
            densify_interval=100,
            mlp_lr_decay_horizon=2000,
            alpha_lr=1e-2,
            grad_threshold=4e-4,
        )
        base.update(overrides)
        return TrainConfig(**base)

    def with_overrides(self, **overrides) -> "TrainConfig":
        return replace(self, **overrides)


@dataclass
class WindowModel:
    """Serializable per-window artifact: canonical set + MLP + frame range."""

    gset: GaussianSet
    mlp: DynamicMlp
    frame_start: int
    frame_end: int
    norm_mean: np.ndarray
    norm_std: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def num_frames(self) -> int:
        return self.frame_end - self.frame_start + 1

    def t_of_frame(self, frame: int) -> float:
        if self.num_frames == 1:
            return 0.0
        return (frame - self.frame_start) / (self.num_frames - 1)

    def normalized_positions(self) -> np.ndarray:
        return (self.gset.means - self.norm_mean) / self.norm_std

    def deformed(self, frame: int) -> GaussianSet:
        """Per-frame Gaussians for a global frame index inside the window."""
        if self.meta.get("mlp_mode", "dynamic") == "off":
            return self.gset
        t = self.t_of_frame(frame)
        dx, dr, ds = self.mlp.deform(self.normalized_positions(), t, self.gset.alpha)
        return apply_deformation(self.gset, dx, dr, ds)


class Adam:
    """Adam with one (m, v, t) slot per named parameter; per-Gaussian slots
    support row re-indexing so densification keeps state aligned."""

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t: dict[str, int] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lrs: dict[str, float]):
        """Bias-corrected adaptive update, in place on the parameter arrays."""
        for name, g in grads.items():
            p = params[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
                self.t[name] = 0
            self.t[name] += 1
            t = self.t[name]
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            m_hat = m / (1 - self.beta1**t)
            v_hat = v / (1 - self.beta2**t)
            p -= lrs[name] * m_hat / (np.sqrt(v_hat) + self.eps)

    def reindex_rows(self, names, n_appended: int, keep_mask: np.ndarray):
        """Append zero rows for new Gaussians and drop removed ones."""
        for name in names:
            if name not in self.m:
                continue
            for slot in (self.m, self.v):
                arr = slot[name]
                pad = np.zeros((n_appended,) + arr.shape[1:])
                slot[name] = np.concatenate([arr, pad])[keep_mask]

    def row_counts(self, names) -> dict[str, int]:
        return {n: self.m[n].shape[0] for n in names if n in self.m}


def mlp_lr_at(cfg: TrainConfig, iteration: int) -> float:
    """Exponentially decayed MLP learning rate: lr * factor^(iter/horizon)."""
    return cfg.mlp_lr * cfg.mlp_lr_decay_factor ** (iteration / cfg.mlp_lr_decay_horizon)


def position_lr_at(cfg: TrainConfig, iteration: int, extent: float) -> float:
    frac = min(iteration / max(cfg.total_iters, 1), 1.0)
    log_lr = (1 - frac) * np.log(cfg.position_lr_init) + frac * np.log(cfg.position_lr_final)
    return float(np.exp(log_lr)) * extent


@dataclass
class DensifyStats:
    """Accumulated screen-space positional gradient norms since the last ADC."""

    grad_accum: np.ndarray
    denom: np.ndarray

    @staticmethod
    def zeros(n: int) -> "DensifyStats":
        return DensifyStats(np.zeros(n), np.zeros(n))

    def add(self, screen_grads: np.ndarray, visible: np.ndarray, width: int, height: int):
        # Pixel-space gradients scaled to NDC-like units so the usual 2e-4
        # threshold keeps its meaning across resolutions.
        scaled = screen_grads * np.array([0.5 * width, 0.5 * height])
        norms = np.linalg.norm(scaled, axis=1)
        self.grad_accum[visible] += norms[visible]
        self.denom[visible] += 1.0

    def average(self) -> np.ndarray:
        return self.grad_accum / np.maximum(self.denom, 1.0)


def adaptive_density_control(
    gset: GaussianSet,
    stats: DensifyStats,
    cfg: TrainConfig,
    extent: float,
    rng: np.random.Generator,
    adam: Adam | None = None,
):
    """Clone small high-gradient Gaussians, split large ones, prune low-opacity
    ones; alpha rows and optimizer-state rows follow every change.

    Returns (new set, fresh stats, report dict).
    """
    n = gset.count
    avg = stats.average()
    max_scale = gset.realized_scales().max(axis=1)
    hot = avg >= cfg.grad_threshold
    clone_mask = hot & (max_scale <= cfg.percent_dense * extent)
    split_mask = hot & (max_scale > cfg.percent_dense * extent)

    pieces = [gset]
    if clone_mask.any():
        pieces.append(gset.select(clone_mask))
    n_split = int(split_mask.sum())
    if n_split:
        parents = gset.select(split_mask)
        children_parts = []
        for _ in range(2):
            sigma = parents.realized_scales()
            local = rng.normal(size=(n_split, 3)) * sigma
            rot = quaternions_to_matrices(normalize_quaternions(parents.rotations))
            offsets = np.einsum("nij,nj->ni", rot, local)
            child = parents.copy()
            child.means = parents.means + offsets
            child.scales = np.log(sigma / cfg.split_factor)
            children_parts.append(child)
        pieces.extend(children_parts)
    ext = pieces[0] if len(pieces) == 1 else _concat_many(pieces)

    n_appended = ext.count - n
    remove = np.zeros(ext.count, dtype=bool)
    remove[:n] |= split_mask
    remove |= ext.realized_opacities() < cfg.min_opacity
    keep = ~remove

    new_set = ext.select(keep)
    if adam is not None:
        adam.reindex_rows(PER_GAUSSIAN_PARAMS, n_appended, keep)
    report = {
        "cloned": int(clone_mask.sum()),
        "split": n_split,
        "pruned": int(remove[:n].sum() - n_split) + int(remove[n:].sum()),
        "count": new_set.count,
    }
    return new_set, DensifyStats.zeros(new_set.count), report


def _concat_many(sets: list[GaussianSet]) -> GaussianSet:
    out = sets[0]
    for s in sets[1:]:
        out = GaussianSet.concatenate(out, s)
    return out


def init_set_from_points(points: np.ndarray, colors: np.ndarray, cfg: TrainConfig) -> GaussianSet:
    """Seed canonical Gaussians from a colored point cloud.

    Initial extent per point is the mean nearest-neighbor distance, opacity
    0.1 pre-activation style, degree-0 SH carrying the point color.
    """
    points = np.asarray(points, dtype=float)
    colors = np.asarray(colors, dtype=float)
    if points.size == 0:
        raise EmptySeedCloud("seed point cloud is empty")
    n = points.shape[0]
    if n > 1:
        d2 = np.sum((points[:, None, :] - points[None, :, :]) ** 2, axis=-1)
        np.fill_diagonal(d2, np.inf)
        nn = np.sqrt(d2.min(axis=1))
        nn = np.maximum(nn, 1e-4)
    else:
        nn = np.full(1, 0.1)
    k = (cfg.sh_degree + 1) ** 2
    sh = np.zeros((n, k, 3))
    sh[:, 0, :] = np.clip(colors, 1e-3, None) / 0.28209479177387814
    rot = np.zeros((n, 4))
    rot[:, 0] = 1.0
    alpha = np.full((n, cfg.num_modes), 1.0 / cfg.num_modes)
    return GaussianSet(
        means=points.copy(),
        rotations=rot,
        scales=np.log(np.tile(nn[:, None], (1, 3))),
        opacities=np.full(n, inverse_sigmoid(0.1)),
        colors=sh,
        alpha=alpha,
    )


def scene_extent(points: np.ndarray) -> float:
    centroid = points.mean(axis=0)
    return float(max(np.linalg.norm(points - centroid, axis=1).max(), 1e-3))


def train_window(
    seed_points: np.ndarray,
    seed_colors: np.ndarray,
    rig: CameraRig,
    frames: np.ndarray,
    window: tuple[int, int],
    cfg: TrainConfig,
    on_iteration=None,
    metrics_path=None,
) -> WindowModel:
    """Optimize one window's canonical Gaussians + dynamic MLP.

    frames has shape (V, N_f, H, W, 3) for the full sequence; `window` is the
    inclusive (start, end) frame range this model owns. Phase A (warm-up)
    optimizes only the canonical Gaussians against the central window frame
    over all views with the MLP frozen; at the boundary the normalization
    stats freeze and alpha is initialized; phase B optimizes everything
    jointly on random (view, frame) pairs with densification until
    densify_until.
    """
    start, end = window
    frames = np.asarray(frames)
    if frames.ndim != 5 or frames.shape[0] != len(rig):
        raise ValueError("frames must be (V, N_f, H, W, 3) aligned with the rig")
    if not (0 <= start <= end < frames.shape[1]):
        raise MissingImage(rig.ids[0], end)

    rng = np.random.default_rng(cfg.seed)
    gset = init_set_from_points(seed_points, seed_colors, cfg)
    mlp = DynamicMlp.create(cfg.num_modes, cfg.freq_m, cfg.mlp_width, cfg.mlp_depth, rng)
    if cfg.mlp_mode == "regular":
        gset.alpha[:] = 1.0 / cfg.num_modes
    adam = Adam()
    extent = scene_extent(seed_points)
    stats = DensifyStats.zeros(gset.count)
    n_window = end - start + 1
    central = start + n_window // 2
    bg = np.asarray(cfg.background, dtype=float)
    norm_mean = np.zeros(3)
    norm_std = np.ones(3)
    metrics_file = open(metrics_path, "w") if metrics_path else None

    t0 = time.time()
    try:
        for it in range(cfg.total_iters):
            warmup = it < cfg.warmup_iters
            if it == cfg.warmup_iters:
                norm_mean = gset.means.mean(axis=0)
                norm_std = np.maximum(gset.means.std(axis=0), 1e-8)
                if cfg.mlp_mode == "dynamic" and n_window >= 2:
                    window_frames = frames[:, start : end + 1]
                    mask = init_alpha(
                        gset, rig, window_frames, cfg.pixel_threshold, cfg.alpha_neighborhood
                    )
                    gset.alpha = mask.to_alpha(cfg.num_modes)
                    adam.m.pop("alpha", None)
                    adam.v.pop("alpha", None)
                    adam.t.pop("alpha", None)

            view = int(rng.integers(0, len(rig)))
            frame = central if warmup else int(rng.integers(start, end + 1))
            cam = rig[view]
            target = frames[view, frame]

            deform_active = (not warmup) and cfg.mlp_mode != "off"
            if deform_active:
                t = 0.0 if n_window == 1 else (frame - start) / (n_window - 1)
                pos_norm = (gset.means - norm_mean) / norm_std
                (dx, dr, ds), cache = mlp.deform_with_cache(pos_norm, t, gset.alpha)
                rendered_set = apply_deformation(gset, dx, dr, ds)
            else:
                rendered_set = gset

            img = render(rendered_set, cam, bg)
            loss, d_img = training_loss(img, target, cfg.lambda_ssim)
            if not np.isfinite(loss):
                raise NumericError(f"non-finite loss at iteration {it}")
            rg = render_backward(rendered_set, cam, bg, d_img)

            grads = {
                "opacities": rg.opacities,
                "colors": rg.colors,
            }
            if deform_active:
                d_means, d_rot, d_scales, d_dx, d_dr, d_ds = apply_deformation_backward(
                    gset, dr, rg.means, rg.rotations, rg.scales
                )
                mg = mlp.deform_backward(cache, d_dx, d_dr, d_ds)
                grads["means"] = d_means + mg.positions / norm_std
                grads["rotations"] = d_rot
                grads["scales"] = d_scales
                if cfg.mlp_mode == "dynamic":
                    grads["alpha"] = mg.alpha
                grads.update(mg.params)
            else:
                grads["means"] = rg.means
                grads["rotations"] = rg.rotations
                grads["scales"] = rg.scales

            lrs = {
                "means": position_lr_at(cfg, it, extent),
                "rotations": cfg.rotation_lr,
                "scales": cfg.scale_lr,
                "opacities": cfg.opacity_lr,
                "colors": cfg.color_lr,
                "alpha": cfg.alpha_lr,
            }
            mlp_rate = mlp_lr_at(cfg, it)
            params = {
                "means": gset.means,
                "rotations": gset.rotations,
                "scales": gset.scales,
                "opacities": gset.opacities,
                "colors": gset.colors,
                "alpha": gset.alpha,
            }
            for name, arr in mlp.parameters().items():
                params[name] = arr
                lrs[name] = mlp_rate
            adam.step(params, grads, lrs)
            gset.rotations[:] = normalize_quaternions(gset.rotations)

            stats.add(rg.screen_means, rg.visible, cam.width, cam.height)
            if (not warmup) and it < cfg.densify_until and (it + 1) % cfg.densify_interval == 0:
                gset, stats, _ = adaptive_density_control(gset, stats, cfg, extent, rng, adam)

            if metrics_file and (it % cfg.log_every == 0 or it == cfg.total_iters - 1):
                mse = float(np.mean((img.rgb - target) ** 2))
                psnr = 99.0 if mse < 1e-12 else float(10 * np.log10(1.0 / mse))
                metrics_file.write(
                    json.dumps({"iter": it, "loss": loss, "psnr": psnr, "n_g": gset.count}) + "\n"
                )
            if on_iteration is not None:
                on_iteration(it, loss, gset, mlp)
    finally:
        if metrics_file:
            metrics_file.close()

    return WindowModel(
        gset=gset,
        mlp=mlp,
        frame_start=start,
        frame_end=end,
        norm_mean=norm_mean,
        norm_std=norm_std,
        meta={
            "mlp_mode": cfg.mlp_mode,
            "seed": cfg.seed,
            "iters": cfg.total_iters,
            "train_seconds": round(time.time() - t0, 3),
        },
    )
