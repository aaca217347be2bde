"""Sequential temporal-consistency fine-tuning.

After every window trains independently, adjacent models are reconciled on
their shared frame: novel camera poses are sampled by SE(3)-interpolating the
rig, both models render the overlap frame (current at t=0, frozen previous at
t=1), and an L1 consistency loss nudges the current window's canonical
Gaussians (its MLP and blending weights stay frozen), alternating 75/25 with
ordinary photometric steps so the rest of the window is not sacrificed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import Camera, CameraRig, normalize_quaternions
from .errors import NearPiRotation, NumericError, OverlapMismatch
from .mlp import apply_deformation, apply_deformation_backward
from .render import render, render_backward, training_loss
from .trainer import Adam, TrainConfig, WindowModel, position_lr_at

ANGLE_GUARD = np.pi - 1e-3


def _skew(w: np.ndarray) -> np.ndarray:
    return np.array([[0, -w[2], w[1]], [w[2], 0, -w[0]], [-w[1], w[0], 0]])


def so3_log(R: np.ndarray) -> np.ndarray:
    """Rotation vector (angle*axis) of a rotation matrix; guards near pi."""
    cos_angle = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    angle = float(np.arccos(cos_angle))
    if angle >= ANGLE_GUARD:
        raise NearPiRotation(f"rotation angle {angle:.4f} too close to pi")
    if angle < 1e-10:
        return np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]]) / 2.0
    return angle / (2.0 * np.sin(angle)) * np.array(
        [R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]]
    )


def se3_log(P: np.ndarray) -> np.ndarray:
    """Matrix logarithm of an SE(3) transform, closed form, as a 4x4 matrix.

    The result has the skew-symmetric rotation generator in the upper-left
    block and V^-1 t in the translation column; se3_exp inverts it exactly
    (round trip within 1e-8) for rotation angles below pi - 1e-3.
    """
    w = so3_log(P[:3, :3])
    angle = np.linalg.norm(w)
    K = _skew(w)
    if angle < 1e-10:
        v_inv = np.eye(3) - 0.5 * K + K @ K / 12.0
    else:
        # V^-1 = I - K/2 + (1/angle^2 - (1+cos)/(2 angle sin)) K^2
        coef = 1.0 / angle**2 - (1.0 + np.cos(angle)) / (2.0 * angle * np.sin(angle))
        v_inv = np.eye(3) - 0.5 * K + coef * (K @ K)
    out = np.zeros((4, 4))
    out[:3, :3] = K
    out[:3, 3] = v_inv @ P[:3, 3]
    return out


def se3_exp(xi: np.ndarray) -> np.ndarray:
    """Matrix exponential of a 4x4 se(3) element (closed form)."""
    K = xi[:3, :3]
    w = np.array([K[2, 1], K[0, 2], K[1, 0]])
    angle = np.linalg.norm(w)
    if angle < 1e-10:
        R = np.eye(3) + K + K @ K / 2.0
        V = np.eye(3) + K / 2.0 + K @ K / 6.0
    else:
        K2 = K @ K
        R = np.eye(3) + np.sin(angle) / angle * K + (1 - np.cos(angle)) / angle**2 * K2
        V = (
            np.eye(3)
            + (1 - np.cos(angle)) / angle**2 * K
            + (angle - np.sin(angle)) / angle**3 * K2
        )
    out = np.eye(4)
    out[:3, :3] = R
    out[:3, 3] = V @ xi[:3, 3]
    return out


@dataclass
class PoseSampler:
    """Uniform simplex weights over the rig's poses, interpolated in SE(3).

    Logs are taken relative to the first pose, so the guard band constrains
    the rig's spread rather than its absolute orientation; a one-hot weight
    reproduces that camera exactly.
    """

    rig: CameraRig
    _ref_inv: np.ndarray = field(init=False, repr=False)
    _logs: list = field(init=False, repr=False)

    def __post_init__(self):
        ref = self.rig[0].pose
        self._ref_inv = np.linalg.inv(ref)
        self._logs = [se3_log(self._ref_inv @ cam.pose) for cam in self.rig.cameras]

    def sample_weights(self, rng: np.random.Generator) -> np.ndarray:
        """Uniform on the simplex via normalized exponential draws."""
        e = rng.exponential(size=len(self.rig))
        return e / e.sum()

    def pose_from_weights(self, betas: np.ndarray) -> Camera:
        betas = np.asarray(betas, dtype=float)
        if betas.shape != (len(self.rig),) or abs(betas.sum() - 1.0) > 1e-9 or (betas < 0).any():
            raise ValueError("weights must be a simplex point over the rig")
        mix = sum(b * l for b, l in zip(betas, self._logs))
        pose = self.rig[0].pose @ se3_exp(mix)
        # Orthonormalize against accumulated round-off before validation.
        u, _, vt = np.linalg.svd(pose[:3, :3])
        pose[:3, :3] = u @ vt
        ref = self.rig[0]
        return Camera(
            pose=pose, fx=ref.fx, fy=ref.fy, cx=ref.cx, cy=ref.cy, width=ref.width, height=ref.height
        )

    def sample(self, rng: np.random.Generator) -> Camera:
        return self.pose_from_weights(self.sample_weights(rng))


def sample_novel_pose(sampler: PoseSampler, rng: np.random.Generator) -> Camera:
    """Novel camera from SE(3)-interpolated rig poses with simplex weights."""
    return sampler.sample(rng)


@dataclass
class FinetuneConfig:
    iters: int = 3000
    consistency_fraction: float = 0.75
    lr_scale: float = 1.0  # scales the Gaussian learning rates during fine-tuning
    seed: int = 0
    log_every: int = 50

    def __post_init__(self):
        if not 0.0 <= self.consistency_fraction <= 1.0:
            raise ValueError("consistency_fraction must be in [0, 1]")
        if self.lr_scale <= 0:
            raise ValueError("lr_scale must be > 0")

    @staticmethod
    def desk(**overrides) -> "FinetuneConfig":
        base = dict(iters=400, lr_scale=0.2)
        base.update(overrides)
        return FinetuneConfig(**base)


def consistency_schedule(i: int, fraction: float) -> bool:
    """Deterministic 75/25-style alternation: True = consistency step.

    Bresenham-spaced so any fraction produces the exact ratio; 0.75 yields
    the pattern c,c,c,s repeatedly.
    """
    rest = 1.0 - fraction
    return int((i + 1) * rest) == int(i * rest)


def finetune_window(
    current: WindowModel,
    previous: WindowModel,
    rig: CameraRig,
    frames: np.ndarray,
    cfg: FinetuneConfig,
    train_cfg: TrainConfig,
    on_iteration=None,
) -> WindowModel:
    """Fine-tune `current` toward the frozen `previous` model on their shared
    frame; only the current canonical Gaussians move.

    frames is the full (V, N_f, H, W, 3) sequence used for the 25% ordinary
    photometric steps. Returns the same WindowModel instance, mutated.
    """
    if previous.frame_end != current.frame_start:
        raise OverlapMismatch(
            f"previous ends at {previous.frame_end}, current starts at {current.frame_start}"
        )
    rng = np.random.default_rng(cfg.seed)
    sampler = PoseSampler(rig=rig)
    adam = Adam()
    extent = max(
        float(np.linalg.norm(current.gset.means - current.gset.means.mean(0), axis=1).max()), 1e-3
    )
    bg = np.asarray(train_cfg.background, dtype=float)
    overlap = current.frame_start
    prev_overlap_set = previous.deformed(previous.frame_end)
    gset = current.gset
    mlp = current.mlp
    deform_on = current.meta.get("mlp_mode", "dynamic") != "off"
    lrs = {
        "means": position_lr_at(train_cfg, train_cfg.total_iters, extent) * cfg.lr_scale,
        "rotations": train_cfg.rotation_lr * cfg.lr_scale,
        "scales": train_cfg.scale_lr * cfg.lr_scale,
        "opacities": train_cfg.opacity_lr * cfg.lr_scale,
        "colors": train_cfg.color_lr * cfg.lr_scale,
    }

    for it in range(cfg.iters):
        is_consistency = consistency_schedule(it, cfg.consistency_fraction)
        if is_consistency:
            cam = sample_novel_pose(sampler, rng)
            target = render(prev_overlap_set, cam, bg).rgb
            frame = overlap
        else:
            view = int(rng.integers(0, len(rig)))
            cam = rig[view]
            frame = int(rng.integers(current.frame_start, current.frame_end + 1))
            target = frames[view, frame]

        if deform_on:
            t = current.t_of_frame(frame)
            pos_norm = (gset.means - current.norm_mean) / current.norm_std
            (dx, dr, ds), cache = mlp.deform_with_cache(pos_norm, t, gset.alpha)
            rset = apply_deformation(gset, dx, dr, ds)
        else:
            rset = gset

        img = render(rset, cam, bg)
        if is_consistency:
            diff = img.rgb - target
            loss = float(np.abs(diff).mean())
            d_img = np.sign(diff) / diff.size
        else:
            loss, d_img = training_loss(img, target, train_cfg.lambda_ssim)
        if not np.isfinite(loss):
            raise NumericError(f"non-finite fine-tune loss at iteration {it}")

        rg = render_backward(rset, cam, bg, d_img)
        if deform_on:
            d_means, d_rot, d_scales, d_dx, d_dr, d_ds = apply_deformation_backward(
                gset, dr, rg.means, rg.rotations, rg.scales
            )
            mg = mlp.deform_backward(cache, d_dx, d_dr, d_ds)
            # MLP weights and alpha are frozen: their gradients are discarded;
            # the chain through the frozen deformation still reaches the means.
            grads = {
                "means": d_means + mg.positions / current.norm_std,
                "rotations": d_rot,
                "scales": d_scales,
                "opacities": rg.opacities,
                "colors": rg.colors,
            }
        else:
            grads = {
                "means": rg.means,
                "rotations": rg.rotations,
                "scales": rg.scales,
                "opacities": rg.opacities,
                "colors": rg.colors,
            }
        params = {
            "means": gset.means,
            "rotations": gset.rotations,
            "scales": gset.scales,
            "opacities": gset.opacities,
            "colors": gset.colors,
        }
        adam.step(params, grads, lrs)
        gset.rotations[:] = normalize_quaternions(gset.rotations)
        if on_iteration is not None:
            on_iteration(it, loss, is_consistency, gset, mlp)
    return current


def overlap_l1(
    current: WindowModel, previous: WindowModel, cameras: list[Camera], background=0.0
) -> float:
    """Mean per-pixel L1 between the two models' renders of the shared frame."""
    if previous.frame_end != current.frame_start:
        raise OverlapMismatch("models do not share a frame")
    bg = np.asarray(background, dtype=float)
    prev_set = previous.deformed(previous.frame_end)
    cur_set = current.deformed(current.frame_start)
    vals = []
    for cam in cameras:
        a = render(cur_set, cam, bg).rgb
        b = render(prev_set, cam, bg).rgb
        vals.append(float(np.abs(a - b).mean()))
    return float(np.mean(vals))
