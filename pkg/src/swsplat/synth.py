"""Synthetic desk-scale scene generation.

Ground truth is a handful of Gaussians, some translating rigidly over the
sequence; images come from this package's own forward renderer, flow fields
from the known 3D motion projected per view. Deterministic for a fixed seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import SH_C0, Camera, CameraRig, GaussianSet, inverse_sigmoid
from .render import render


@dataclass
class SceneSpec:
    n_gaussians: int = 6
    n_moving: int = 2
    n_views: int = 4           # training views; one extra held-out view is added
    n_frames: int = 8
    resolution: int = 32
    seed: int = 0
    velocity: float = 0.05     # world units per frame for moving Gaussians
    motion_frames: tuple | None = None  # (first, last) transition range with motion; None = all
    camera_radius: float = 3.2
    focal: float = 35.0
    background: tuple = (0.0, 0.0, 0.0)
    seed_jitter: float = 0.02


@dataclass
class SceneData:
    """In-memory synthetic dataset plus its generating ground truth."""

    rig: CameraRig                 # all cameras (train + held-out)
    train_ids: list[str]
    test_ids: list[str]
    images: np.ndarray             # (V, F, H, W, 3) in [0,1]
    flows: dict[str, list[np.ndarray]]  # per view id, per transition (H, W, 2)
    seed_points: np.ndarray        # (N, 3)
    seed_colors: np.ndarray        # (N, 3)
    gt_frames: list[GaussianSet]   # ground-truth set per frame
    spec: SceneSpec = field(default=None)

    @property
    def background(self):
        return np.asarray(self.spec.background if self.spec else (0.0, 0.0, 0.0))

    def train_rig(self) -> CameraRig:
        keep = [i for i, vid in enumerate(self.rig.ids) if vid in self.train_ids]
        return CameraRig(cameras=[self.rig[i] for i in keep], ids=[self.rig.ids[i] for i in keep])

    def train_images(self) -> np.ndarray:
        keep = [i for i, vid in enumerate(self.rig.ids) if vid in self.train_ids]
        return self.images[keep]


def look_at(eye: np.ndarray, target: np.ndarray, up=(0.0, 1.0, 0.0)) -> np.ndarray:
    """World-to-camera pose with +z toward the target (OpenCV convention)."""
    eye = np.asarray(eye, dtype=float)
    z = np.asarray(target, dtype=float) - eye
    z /= np.linalg.norm(z)
    up = np.asarray(up, dtype=float)
    x = np.cross(z, up)
    if np.linalg.norm(x) < 1e-8:
        x = np.cross(z, np.array([1.0, 0.0, 0.0]))
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    R = np.stack([x, y, z])
    pose = np.eye(4)
    pose[:3, :3] = R
    pose[:3, 3] = -R @ eye
    return pose


def make_arc_rig(n_cameras: int, radius: float, focal: float, resolution: int) -> CameraRig:
    """Cameras on a horizontal arc, all aimed at the origin."""
    cams = []
    angles = np.linspace(-0.5, 0.5, n_cameras)  # radians around the arc
    for a in angles:
        eye = radius * np.array([np.sin(a), 0.25 * np.cos(2 * a), -np.cos(a)])
        cams.append(
            Camera(
                pose=look_at(eye, np.zeros(3)),
                fx=focal,
                fy=focal,
                cx=(resolution - 1) / 2,
                cy=(resolution - 1) / 2,
                width=resolution,
                height=resolution,
            )
        )
    return CameraRig(cameras=cams)


def _ground_truth_base(spec: SceneSpec, rng: np.random.Generator) -> GaussianSet:
    n = spec.n_gaussians
    means = rng.uniform(-0.7, 0.7, size=(n, 3))
    quats = rng.normal(size=(n, 4))
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    scales = np.log(rng.uniform(0.14, 0.26, size=(n, 3)))
    opac = inverse_sigmoid(rng.uniform(0.85, 0.97, size=n))
    colors = np.zeros((n, 4, 3))
    palette = rng.uniform(0.35, 0.95, size=(n, 3))
    colors[:, 0, :] = palette / SH_C0
    alpha = np.ones((n, 2)) * 0.5
    return GaussianSet(
        means=means, rotations=quats, scales=scales, opacities=opac, colors=colors, alpha=alpha
    )


def generate_scene(spec: SceneSpec) -> SceneData:
    """Build the full synthetic dataset for a SceneSpec.

    The first n_moving Gaussians translate at constant velocity along random
    directions; everything else is static. One extra camera is generated and
    held out for evaluation.
    """
    rng = np.random.default_rng(spec.seed)
    base = _ground_truth_base(spec, rng)
    directions = rng.normal(size=(spec.n_moving, 3))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    velocities = np.zeros((spec.n_gaussians, 3))
    velocities[: spec.n_moving] = directions * spec.velocity

    rig = make_arc_rig(spec.n_views + 1, spec.camera_radius, spec.focal, spec.resolution)
    test_idx = spec.n_views // 2  # hold out a central-ish camera
    train_ids = [vid for i, vid in enumerate(rig.ids) if i != test_idx]
    test_ids = [rig.ids[test_idx]]

    gt_frames = []
    offset = np.zeros((spec.n_gaussians, 3))
    for f in range(spec.n_frames):
        frame_set = base.copy()
        frame_set.means = base.means + offset
        gt_frames.append(frame_set)
        moving_now = spec.motion_frames is None or (
            spec.motion_frames[0] <= f <= spec.motion_frames[1]
        )
        if moving_now:
            offset = offset + velocities

    res = spec.resolution
    images = np.zeros((len(rig), spec.n_frames, res, res, 3))
    bg = np.asarray(spec.background, dtype=float)
    for v, cam in enumerate(rig.cameras):
        for f in range(spec.n_frames):
            images[v, f] = render(gt_frames[f], cam, bg).rgb

    flows = {vid: [] for vid in rig.ids}
    for v, cam in enumerate(rig.cameras):
        for f in range(spec.n_frames - 1):
            flows[rig.ids[v]].append(
                analytic_flow(gt_frames[f], gt_frames[f + 1], cam)
            )

    seed_points = base.means + rng.normal(size=base.means.shape) * spec.seed_jitter
    seed_colors = np.clip(base.colors[:, 0, :] * SH_C0, 0.0, 1.0)
    return SceneData(
        rig=rig,
        train_ids=train_ids,
        test_ids=test_ids,
        images=images,
        flows=flows,
        seed_points=seed_points,
        seed_colors=seed_colors,
        gt_frames=gt_frames,
        spec=spec,
    )


def analytic_flow(set_a: GaussianSet, set_b: GaussianSet, cam: Camera) -> np.ndarray:
    """Exact screen-space displacement painted over each moving Gaussian's
    2-sigma footprint; nearer Gaussians win overlaps."""
    h, w = cam.height, cam.width
    flow = np.zeros((h, w, 2))
    depth_win = np.full((h, w), np.inf)
    pix_a, z_a = cam.project_points(set_a.means)
    pix_b, z_b = cam.project_points(set_b.means)
    sigma = set_a.realized_scales().max(axis=1)
    for i in range(set_a.count):
        if z_a[i] <= 0 or z_b[i] <= 0:
            continue
        disp = pix_b[i] - pix_a[i]
        if np.allclose(disp, 0):
            continue
        r = 2.0 * cam.fx * sigma[i] / z_a[i]
        x0 = max(0, int(np.floor(pix_a[i, 0] - r)))
        x1 = min(w - 1, int(np.ceil(pix_a[i, 0] + r)))
        y0 = max(0, int(np.floor(pix_a[i, 1] - r)))
        y1 = min(h - 1, int(np.ceil(pix_a[i, 1] + r)))
        for py in range(y0, y1 + 1):
            for px in range(x0, x1 + 1):
                d2 = (px - pix_a[i, 0]) ** 2 + (py - pix_a[i, 1]) ** 2
                if d2 <= r * r and z_a[i] < depth_win[py, px]:
                    flow[py, px] = disp
                    depth_win[py, px] = z_a[i]
    return flow
