"""Core 3D Gaussian, camera and covariance/color math.

Conventions used everywhere downstream:
  * quaternions are (w, x, y, z);
  * scales are stored as log-extents, opacities as pre-sigmoid logits;
  * camera poses are 4x4 world-to-camera transforms, +z forward, +x right,
    +y down (OpenCV style), pixel (row i, col j) sampled at (x=j, y=i);
  * spherical-harmonic color coefficients have shape (n_coeffs, 3) with the
    real-SH basis ordering/signs of the usual splatting convention.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BehindCamera

NEAR_PLANE = 0.01
# Added to the diagonal of every projected 2x2 covariance so sub-pixel splats
# stay renderable and invertible.
COV2D_FLOOR = 0.3

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def inverse_sigmoid(y):
    return np.log(y) - np.log1p(-y)


def normalize_quaternions(q: np.ndarray) -> np.ndarray:
    """Unit-normalize an (..., 4) quaternion array."""
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quaternions_to_matrices(q: np.ndarray) -> np.ndarray:
    """Convert unit quaternions (..., 4) in (w, x, y, z) order to (..., 3, 3)."""
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(q.shape[:-1] + (3, 3), dtype=q.dtype)
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def sh_basis(view_dirs: np.ndarray, degree: int) -> np.ndarray:
    """Real-SH basis values for unit directions (..., 3), degrees 0..1.

    Returns (..., (degree+1)**2): [C0] for degree 0, plus [-C1*y, C1*z, -C1*x]
    for degree 1.
    """
    if degree not in (0, 1):
        raise ValueError(f"SH degree {degree} unsupported (0 or 1)")
    n = (degree + 1) ** 2
    out = np.empty(view_dirs.shape[:-1] + (n,), dtype=view_dirs.dtype)
    out[..., 0] = SH_C0
    if degree >= 1:
        x, y, z = view_dirs[..., 0], view_dirs[..., 1], view_dirs[..., 2]
        out[..., 1] = -SH_C1 * y
        out[..., 2] = SH_C1 * z
        out[..., 3] = -SH_C1 * x
    return out


def sh_basis_jacobian(view_dirs: np.ndarray, degree: int) -> np.ndarray:
    """d(basis)/d(view_dir): (..., n_coeffs, 3). Degree-0 row is zero."""
    n = (degree + 1) ** 2
    jac = np.zeros(view_dirs.shape[:-1] + (n, 3), dtype=view_dirs.dtype)
    if degree >= 1:
        jac[..., 1, 1] = -SH_C1
        jac[..., 2, 2] = SH_C1
        jac[..., 3, 0] = -SH_C1
    return jac


@dataclass
class Gaussian:
    """One anisotropic 3D Gaussian primitive.

    scale holds log-extents (realized extent = exp(scale) > 0), opacity the
    pre-sigmoid logit (realized opacity = sigmoid(opacity) in (0,1)).
    """

    mean: np.ndarray          # (3,)
    rotation: np.ndarray      # (4,) unit quaternion (w, x, y, z)
    scale: np.ndarray         # (3,) log-extents
    opacity: float            # pre-sigmoid
    color: np.ndarray         # (n_coeffs, 3) SH coefficients

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.rotation = np.asarray(self.rotation, dtype=float)
        self.scale = np.asarray(self.scale, dtype=float)
        self.color = np.atleast_2d(np.asarray(self.color, dtype=float))

    @property
    def realized_scale(self) -> np.ndarray:
        return np.exp(self.scale)

    @property
    def realized_opacity(self) -> float:
        return float(sigmoid(self.opacity))

    @property
    def sh_degree(self) -> int:
        return int(np.sqrt(self.color.shape[0])) - 1


@dataclass
class GaussianSet:
    """Struct-of-arrays collection of Gaussians plus per-Gaussian blending weights.

    Row order is the identity: alpha rows, optimizer-state rows and gradient
    slots all index by position in these arrays.
    """

    means: np.ndarray         # (N, 3)
    rotations: np.ndarray     # (N, 4)
    scales: np.ndarray        # (N, 3) log-extents
    opacities: np.ndarray     # (N,) pre-sigmoid
    colors: np.ndarray        # (N, n_coeffs, 3)
    alpha: np.ndarray         # (N, M)

    def __post_init__(self):
        n = self.means.shape[0]
        for name in ("rotations", "scales", "opacities", "colors", "alpha"):
            if getattr(self, name).shape[0] != n:
                raise ValueError(f"{name} has {getattr(self, name).shape[0]} rows, expected {n}")

    @property
    def count(self) -> int:
        return self.means.shape[0]

    @property
    def num_modes(self) -> int:
        return self.alpha.shape[1]

    @property
    def sh_degree(self) -> int:
        return int(np.sqrt(self.colors.shape[1])) - 1

    def realized_scales(self) -> np.ndarray:
        return np.exp(self.scales)

    def realized_opacities(self) -> np.ndarray:
        return sigmoid(self.opacities)

    def gaussian(self, i: int) -> Gaussian:
        return Gaussian(
            mean=self.means[i],
            rotation=self.rotations[i],
            scale=self.scales[i],
            opacity=float(self.opacities[i]),
            color=self.colors[i],
        )

    def copy(self) -> "GaussianSet":
        return GaussianSet(
            means=self.means.copy(),
            rotations=self.rotations.copy(),
            scales=self.scales.copy(),
            opacities=self.opacities.copy(),
            colors=self.colors.copy(),
            alpha=self.alpha.copy(),
        )

    def select(self, mask_or_indices) -> "GaussianSet":
        return GaussianSet(
            means=self.means[mask_or_indices],
            rotations=self.rotations[mask_or_indices],
            scales=self.scales[mask_or_indices],
            opacities=self.opacities[mask_or_indices],
            colors=self.colors[mask_or_indices],
            alpha=self.alpha[mask_or_indices],
        )

    @staticmethod
    def concatenate(a: "GaussianSet", b: "GaussianSet") -> "GaussianSet":
        return GaussianSet(
            means=np.concatenate([a.means, b.means]),
            rotations=np.concatenate([a.rotations, b.rotations]),
            scales=np.concatenate([a.scales, b.scales]),
            opacities=np.concatenate([a.opacities, b.opacities]),
            colors=np.concatenate([a.colors, b.colors]),
            alpha=np.concatenate([a.alpha, b.alpha]),
        )

    @staticmethod
    def empty(sh_degree: int = 1, num_modes: int = 2) -> "GaussianSet":
        k = (sh_degree + 1) ** 2
        return GaussianSet(
            means=np.zeros((0, 3)),
            rotations=np.zeros((0, 4)),
            scales=np.zeros((0, 3)),
            opacities=np.zeros((0,)),
            colors=np.zeros((0, k, 3)),
            alpha=np.zeros((0, num_modes)),
        )


@dataclass
class Camera:
    """Calibrated pinhole camera: 4x4 world-to-camera SE(3) pose + intrinsics."""

    pose: np.ndarray          # (4, 4), bottom row (0,0,0,1)
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        self.pose = np.asarray(self.pose, dtype=float)
        if self.pose.shape != (4, 4):
            raise ValueError("pose must be 4x4")
        if not np.array_equal(self.pose[3], [0.0, 0.0, 0.0, 1.0]):
            raise ValueError("pose bottom row must be (0,0,0,1)")
        R = self.pose[:3, :3]
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-6) or np.linalg.det(R) <= 0:
            raise ValueError("pose rotation block must be orthonormal with det +1")

    @property
    def rotation(self) -> np.ndarray:
        return self.pose[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.pose[:3, 3]

    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        """Map (..., 3) world points into camera coordinates."""
        return points @ self.rotation.T + self.translation

    def project_points(self, points: np.ndarray):
        """Pinhole-project (..., 3) world points.

        Returns (pixels (..., 2), depths (...,)). Points behind the camera get
        projected with their (negative) depth; callers cull on depth.
        """
        cam = self.world_to_camera(points)
        z = cam[..., 2]
        u = self.fx * cam[..., 0] / z + self.cx
        v = self.fy * cam[..., 1] / z + self.cy
        return np.stack([u, v], axis=-1), z


@dataclass
class CameraRig:
    """Static multi-view rig: V cameras with stable string identifiers."""

    cameras: list[Camera]
    ids: list[str] = field(default_factory=list)

    def __post_init__(self):
        if len(self.cameras) < 1:
            raise ValueError("rig needs at least one camera")
        if not self.ids:
            self.ids = [f"cam{i:02d}" for i in range(len(self.cameras))]
        if len(self.ids) != len(self.cameras):
            raise ValueError("ids and cameras length mismatch")
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("camera ids must be unique")

    def __len__(self) -> int:
        return len(self.cameras)

    def __getitem__(self, i: int) -> Camera:
        return self.cameras[i]

    def index_of(self, view_id: str) -> int:
        return self.ids.index(view_id)


def build_covariance(rotation: np.ndarray, scale: np.ndarray) -> np.ndarray:
    """World-space covariance R·S·Sᵀ·Rᵀ from a unit quaternion and positive extents.

    Eigenvalues of the result are the squared extents; symmetry is enforced
    exactly by averaging with the transpose.
    """
    R = quaternions_to_matrices(np.asarray(rotation, dtype=float))
    M = R * np.asarray(scale, dtype=float)[..., None, :]  # columns scaled: R @ diag(s)
    cov = M @ np.swapaxes(M, -1, -2)
    return 0.5 * (cov + np.swapaxes(cov, -1, -2))


def evaluate_gaussian(g: Gaussian, x: np.ndarray) -> float:
    """Unnormalized density exp(-0.5·(x-μ)ᵀΣ⁻¹(x-μ)); equals 1 at the mean."""
    cov = build_covariance(g.rotation, g.realized_scale)
    d = np.asarray(x, dtype=float) - g.mean
    m = d @ np.linalg.solve(cov, d)
    return float(np.exp(-0.5 * m))


def project_gaussian(g: Gaussian, cam: Camera):
    """Project one Gaussian into a camera.

    Returns (pixel center (2,), screen covariance (2,2), camera-space depth).
    The screen covariance is the first-order (Jacobian) image of the world
    covariance plus the COV2D_FLOOR diagonal term.

    Raises BehindCamera when the mean's depth is at or behind the near plane.
    """
    p_cam = cam.world_to_camera(g.mean)
    z = float(p_cam[2])
    if z <= NEAR_PLANE:
        raise BehindCamera(f"depth {z:.4g} <= near plane {NEAR_PLANE}")
    center = np.array([cam.fx * p_cam[0] / z + cam.cx, cam.fy * p_cam[1] / z + cam.cy])
    J = perspective_jacobian(p_cam[None, :], cam.fx, cam.fy)[0]
    cov3 = build_covariance(g.rotation, g.realized_scale)
    T = J @ cam.rotation
    cov2 = T @ cov3 @ T.T + COV2D_FLOOR * np.eye(2)
    return center, 0.5 * (cov2 + cov2.T), z


def perspective_jacobian(p_cam: np.ndarray, fx: float, fy: float) -> np.ndarray:
    """Jacobian of (u, v) w.r.t. camera coordinates for (N, 3) points: (N, 2, 3)."""
    x, y, z = p_cam[:, 0], p_cam[:, 1], p_cam[:, 2]
    J = np.zeros((p_cam.shape[0], 2, 3))
    J[:, 0, 0] = fx / z
    J[:, 0, 2] = -fx * x / (z * z)
    J[:, 1, 1] = fy / z
    J[:, 1, 2] = -fy * y / (z * z)
    return J


def evaluate_color(g: Gaussian, view_dir: np.ndarray) -> np.ndarray:
    """View-dependent rgb from SH coefficients, clamped to [0, +inf)."""
    basis = sh_basis(np.asarray(view_dir, dtype=float), g.sh_degree)
    rgb = basis @ g.color
    return np.maximum(rgb, 0.0)
