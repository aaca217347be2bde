"""Differentiable CPU splat renderer: forward compositing, reverse-mode
gradients for every Gaussian parameter, and the L1+SSIM training loss.

The forward pass projects every Gaussian to a 2D splat (EWA-style first-order
covariance projection), depth-sorts, and alpha-composites front to back per
pixel. The backward pass replays the compositing back to front with the
standard transmittance recurrence and hand-derived adjoints through the
projection, covariance factorization, quaternion normalization and SH color.

Depth ordering is treated as piecewise-constant: no gradient flows through
the sort itself.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate

from .core import (
    COV2D_FLOOR,
    NEAR_PLANE,
    GaussianSet,
    Camera,
    perspective_jacobian,
    quaternions_to_matrices,
    sh_basis,
    sh_basis_jacobian,
    sigmoid,
)
from .errors import ShapeMismatch

# Splat support: drop pixels beyond 3 sigma (squared Mahalanobis > 9) or with
# per-pixel alpha below the 8-bit quantization threshold.
MAX_MAHAL_SQ = 9.0
ALPHA_MIN = 1.0 / 255.0

LAMBDA_SSIM = 0.2
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


@dataclass
class RenderedImage:
    """Composited rgb in [0,1] plus per-pixel accumulated splat opacity."""

    rgb: np.ndarray                  # (H, W, 3)
    accumulated_opacity: np.ndarray  # (H, W)


@dataclass
class RenderGradients:
    """Loss gradients w.r.t. every (possibly deformed) Gaussian parameter.

    Rows align with the rendered GaussianSet; culled/invisible Gaussians keep
    zero rows. screen_means holds dL/d(pixel center), kept for densification
    statistics. All parameter gradients are in stored space (log-scale,
    pre-sigmoid opacity, raw quaternion).
    """

    means: np.ndarray        # (N, 3)
    rotations: np.ndarray    # (N, 4)
    scales: np.ndarray       # (N, 3)
    opacities: np.ndarray    # (N,)
    colors: np.ndarray       # (N, K, 3)
    screen_means: np.ndarray  # (N, 2)
    visible: np.ndarray      # (N,) bool

    @staticmethod
    def zeros(gset: GaussianSet) -> "RenderGradients":
        return RenderGradients(
            means=np.zeros_like(gset.means),
            rotations=np.zeros_like(gset.rotations),
            scales=np.zeros_like(gset.scales),
            opacities=np.zeros_like(gset.opacities),
            colors=np.zeros_like(gset.colors),
            screen_means=np.zeros((gset.count, 2)),
            visible=np.zeros(gset.count, dtype=bool),
        )


class _Projected:
    """Per-visible-splat projection cache shared by forward and backward."""

    def __init__(self, gset: GaussianSet, cam: Camera):
        q_raw = gset.rotations
        self.q_norms = np.linalg.norm(q_raw, axis=1)
        self.q_unit = q_raw / self.q_norms[:, None]
        self.R = quaternions_to_matrices(self.q_unit)
        self.s = np.exp(gset.scales)
        self.M = self.R * self.s[:, None, :]          # R @ diag(s)
        cov3 = self.M @ np.swapaxes(self.M, 1, 2)

        p_cam = gset.means @ cam.rotation.T + cam.translation
        vis = p_cam[:, 2] > NEAR_PLANE
        self.idx = np.flatnonzero(vis)                 # original indices, original order
        self.p_cam = p_cam[vis]
        self.cov3 = cov3[vis]
        self.M = self.M[vis]
        self.R = self.R[vis]
        self.s = self.s[vis]
        self.q_unit = self.q_unit[vis]
        self.q_norms = self.q_norms[vis]

        z = self.p_cam[:, 2]
        self.z = z
        self.u = np.stack(
            [cam.fx * self.p_cam[:, 0] / z + cam.cx, cam.fy * self.p_cam[:, 1] / z + cam.cy],
            axis=1,
        )
        self.J = perspective_jacobian(self.p_cam, cam.fx, cam.fy)
        self.T = self.J @ cam.rotation                 # (Nv, 2, 3)
        cov2 = self.T @ self.cov3 @ np.swapaxes(self.T, 1, 2)
        cov2[:, 0, 0] += COV2D_FLOOR
        cov2[:, 1, 1] += COV2D_FLOOR
        self.cov2 = 0.5 * (cov2 + np.swapaxes(cov2, 1, 2))
        det = self.cov2[:, 0, 0] * self.cov2[:, 1, 1] - self.cov2[:, 0, 1] ** 2
        conic = np.empty_like(self.cov2)
        conic[:, 0, 0] = self.cov2[:, 1, 1] / det
        conic[:, 1, 1] = self.cov2[:, 0, 0] / det
        conic[:, 0, 1] = conic[:, 1, 0] = -self.cov2[:, 0, 1] / det
        self.conic = conic

        self.opacity = sigmoid(gset.opacities[vis])
        w = gset.means[vis] - cam.center()
        self.view_vec = w
        self.view_dir = w / np.linalg.norm(w, axis=1, keepdims=True)
        self.basis = sh_basis(self.view_dir, gset.sh_degree)
        raw = np.einsum("nk,nkc->nc", self.basis, gset.colors[vis])
        self.color_raw = raw
        self.color = np.maximum(raw, 0.0)

        # Front-to-back order; stable so equal depths keep list order.
        self.order = np.argsort(z, kind="stable")

    def footprint(self, i: int, height: int, width: int):
        """3-sigma bounding box and per-pixel alpha of splat i.

        Returns None when the splat touches no pixel; otherwise
        (row slice, col slice, alpha (h, w), mask (h, w), dx, dy, G).
        """
        ux, uy = self.u[i]
        rx = 3.0 * np.sqrt(self.cov2[i, 0, 0])
        ry = 3.0 * np.sqrt(self.cov2[i, 1, 1])
        x0 = max(0, int(np.ceil(ux - rx)))
        x1 = min(width - 1, int(np.floor(ux + rx)))
        y0 = max(0, int(np.ceil(uy - ry)))
        y1 = min(height - 1, int(np.floor(uy + ry)))
        if x0 > x1 or y0 > y1:
            return None
        dx = np.arange(x0, x1 + 1, dtype=float) - ux
        dy = np.arange(y0, y1 + 1, dtype=float) - uy
        dxg, dyg = np.meshgrid(dx, dy)
        c = self.conic[i]
        m = c[0, 0] * dxg * dxg + 2.0 * c[0, 1] * dxg * dyg + c[1, 1] * dyg * dyg
        G = np.exp(-0.5 * m)
        alpha = self.opacity[i] * G
        mask = (m <= MAX_MAHAL_SQ) & (alpha >= ALPHA_MIN)
        if not mask.any():
            return None
        return slice(y0, y1 + 1), slice(x0, x1 + 1), alpha, mask, dxg, dyg, G


def _as_background(background, dtype=float) -> np.ndarray:
    bg = np.asarray(background, dtype=dtype)
    if bg.ndim == 0:
        bg = np.full(3, float(bg))
    return bg


def _composite(proj: _Projected, height: int, width: int, bg: np.ndarray):
    """Front-to-back compositing. Returns (pre-clip rgb, transmittance)."""
    trans = np.ones((height, width))
    acc = np.zeros((height, width, 3))
    for i in proj.order:
        fp = proj.footprint(i, height, width)
        if fp is None:
            continue
        ys, xs, alpha, mask, _, _, _ = fp
        sub_t = trans[ys, xs]
        w = sub_t[mask] * alpha[mask]
        acc_sub = acc[ys, xs]
        acc_sub[mask] += w[:, None] * proj.color[i]
        acc[ys, xs] = acc_sub
        sub_t[mask] *= 1.0 - alpha[mask]
        trans[ys, xs] = sub_t
    pre = acc + trans[:, :, None] * bg
    return pre, trans


def render(gset: GaussianSet, cam: Camera, background=0.0) -> RenderedImage:
    """Render a GaussianSet (deformations already applied) into a camera.

    Deterministic for fixed input: splats are composited front to back in
    stable depth order over the given background color. An empty set renders
    pure background.
    """
    bg = _as_background(background)
    proj = _Projected(gset, cam)
    pre, trans = _composite(proj, cam.height, cam.width, bg)
    return RenderedImage(rgb=np.clip(pre, 0.0, 1.0), accumulated_opacity=1.0 - trans)


def render_backward(
    gset: GaussianSet, cam: Camera, background, upstream: np.ndarray
) -> RenderGradients:
    """Exact reverse-mode gradients of render() contracted with `upstream`.

    upstream is dL/d(rgb) with shape (H, W, 3) for the same inputs that
    produced the forward pass.
    """
    height, width = cam.height, cam.width
    if upstream.shape != (height, width, 3):
        raise ShapeMismatch(f"upstream {upstream.shape} != {(height, width, 3)}")
    bg = _as_background(background)
    proj = _Projected(gset, cam)
    grads = RenderGradients.zeros(gset)
    pre, t_final = _composite(proj, height, width, bg)

    # Adjoint of the [0,1] clip: saturated pixels pass no gradient.
    up = np.where((pre > 0.0) & (pre < 1.0), upstream, 0.0)

    nv = len(proj.idx)
    d_color = np.zeros((nv, 3))
    d_opacity_real = np.zeros(nv)
    d_u = np.zeros((nv, 2))
    d_conic = np.zeros((nv, 2, 2))

    trans = t_final.copy()
    accum = np.zeros((height, width, 3))
    last_alpha = np.zeros((height, width))
    last_color = np.zeros((height, width, 3))
    tf_dot_bg = t_final * (up @ bg)  # (H, W): dL/d(bg share) helper

    for i in proj.order[::-1]:
        fp = proj.footprint(i, height, width)
        if fp is None:
            continue
        ys, xs, alpha, mask, dxg, dyg, G = fp
        a = alpha[mask]
        sub = (ys, xs)
        t_here = trans[sub][mask] / (1.0 - a)
        tr_sub = trans[sub]
        tr_sub[mask] = t_here
        trans[sub] = tr_sub

        acc_sub = accum[sub]
        la_sub = last_alpha[sub]
        lc_sub = last_color[sub]
        acc_sub[mask] = la_sub[mask, None] * lc_sub[mask] + (1.0 - la_sub[mask])[:, None] * acc_sub[mask]
        accum[sub] = acc_sub

        up_m = up[sub][mask]                          # (P, 3)
        d_color[i] += (a * t_here) @ up_m
        d_alpha = np.einsum("pc,pc->p", proj.color[i] - acc_sub[mask], up_m) * t_here
        d_alpha -= tf_dot_bg[sub][mask] / (1.0 - a)

        lc_sub[mask] = proj.color[i]
        la_sub[mask] = a
        last_color[sub] = lc_sub
        last_alpha[sub] = la_sub

        d_opacity_real[i] += G[mask] @ d_alpha
        dG = proj.opacity[i] * d_alpha                # per masked pixel
        gm = G[mask]
        dxm, dym = dxg[mask], dyg[mask]
        c = proj.conic[i]
        cdx = c[0, 0] * dxm + c[0, 1] * dym
        cdy = c[0, 1] * dxm + c[1, 1] * dym
        # dG/du = +G * conic @ d since d = pixel - u.
        d_u[i, 0] += np.sum(dG * gm * cdx)
        d_u[i, 1] += np.sum(dG * gm * cdy)
        w = -0.5 * dG * gm
        d_conic[i, 0, 0] += np.sum(w * dxm * dxm)
        d_conic[i, 0, 1] += np.sum(w * dxm * dym)
        d_conic[i, 1, 0] += np.sum(w * dxm * dym)
        d_conic[i, 1, 1] += np.sum(w * dym * dym)

    _project_backward(gset, cam, proj, d_color, d_opacity_real, d_u, d_conic, grads)
    return grads


def _project_backward(gset, cam, proj: _Projected, d_color, d_opacity_real, d_u, d_conic, grads):
    """Chain splat-space gradients back to stored Gaussian parameters."""
    idx = proj.idx
    if len(idx) == 0:
        return
    z = proj.z
    x_c, y_c = proj.p_cam[:, 0], proj.p_cam[:, 1]

    # conic = cov2^-1  =>  dL/dcov2 = -conic @ dL/dconic @ conic
    d_cov2 = -proj.conic @ d_conic @ proj.conic
    # cov2 = T cov3 T^T (+ floor, identity pass-through)
    Tm = proj.T
    d_cov3 = np.swapaxes(Tm, 1, 2) @ d_cov2 @ Tm
    d_T = (d_cov2 + np.swapaxes(d_cov2, 1, 2)) @ Tm @ proj.cov3
    d_J = d_T @ cam.rotation.T

    d_pcam = np.zeros_like(proj.p_cam)
    fz = cam.fx / z
    gz = cam.fy / z
    d_pcam[:, 0] += -d_J[:, 0, 2] * cam.fx / z ** 2
    d_pcam[:, 1] += -d_J[:, 1, 2] * cam.fy / z ** 2
    d_pcam[:, 2] += (
        -d_J[:, 0, 0] * cam.fx / z ** 2
        - d_J[:, 1, 1] * cam.fy / z ** 2
        + d_J[:, 0, 2] * 2.0 * cam.fx * x_c / z ** 3
        + d_J[:, 1, 2] * 2.0 * cam.fy * y_c / z ** 3
    )
    # pixel center u = (fx x/z + cx, fy y/z + cy)
    d_pcam[:, 0] += d_u[:, 0] * fz
    d_pcam[:, 1] += d_u[:, 1] * gz
    d_pcam[:, 2] += -d_u[:, 0] * cam.fx * x_c / z ** 2 - d_u[:, 1] * cam.fy * y_c / z ** 2

    d_mean = d_pcam @ cam.rotation

    # cov3 = M M^T with M = R diag(s)
    d_M = (d_cov3 + np.swapaxes(d_cov3, 1, 2)) @ proj.M
    d_R = d_M * proj.s[:, None, :]
    d_s = np.einsum("nij,nij->nj", proj.R, d_M)
    d_logscale = d_s * proj.s

    d_qunit = _quat_matrix_backward(proj.q_unit, d_R)
    dot = np.einsum("ni,ni->n", proj.q_unit, d_qunit)
    d_q = (d_qunit - proj.q_unit * dot[:, None]) / proj.q_norms[:, None]

    # SH color chain: clamp mask, then basis / view-direction adjoints.
    d_raw = d_color * (proj.color_raw > 0.0)
    d_sh = proj.basis[:, :, None] * d_raw[:, None, :]
    jac = sh_basis_jacobian(proj.view_dir, gset.sh_degree)   # (Nv, K, 3)
    coef = gset.colors[idx]
    d_dir = np.einsum("nkd,nkc,nc->nd", jac, coef, d_raw)
    d_mean += _dnorm_backward(proj.view_vec, d_dir)

    op = proj.opacity
    grads.means[idx] = d_mean
    grads.rotations[idx] = d_q
    grads.scales[idx] = d_logscale
    grads.opacities[idx] = d_opacity_real * op * (1.0 - op)
    grads.colors[idx] = d_sh
    grads.screen_means[idx] = d_u
    grads.visible[idx] = True


def _quat_matrix_backward(q: np.ndarray, d_R: np.ndarray) -> np.ndarray:
    """Adjoint of quaternions_to_matrices for unit quaternions: (N,4)."""
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    g = d_R
    d = np.empty_like(q)
    d[:, 0] = 2 * (
        -z * g[:, 0, 1] + y * g[:, 0, 2] + z * g[:, 1, 0] - x * g[:, 1, 2] - y * g[:, 2, 0] + x * g[:, 2, 1]
    )
    d[:, 1] = 2 * (
        y * g[:, 0, 1] + z * g[:, 0, 2] + y * g[:, 1, 0] - w * g[:, 1, 2] + z * g[:, 2, 0] + w * g[:, 2, 1]
        - 2 * x * (g[:, 1, 1] + g[:, 2, 2])
    )
    d[:, 2] = 2 * (
        x * g[:, 0, 1] + w * g[:, 0, 2] + x * g[:, 1, 0] + z * g[:, 1, 2] - w * g[:, 2, 0] + z * g[:, 2, 1]
        - 2 * y * (g[:, 0, 0] + g[:, 2, 2])
    )
    d[:, 3] = 2 * (
        -w * g[:, 0, 1] + x * g[:, 0, 2] + w * g[:, 1, 0] + y * g[:, 1, 2] + x * g[:, 2, 0] + y * g[:, 2, 1]
        - 2 * z * (g[:, 0, 0] + g[:, 1, 1])
    )
    return d


def _dnorm_backward(v: np.ndarray, d_n: np.ndarray) -> np.ndarray:
    """Adjoint of v -> v/|v| for (N, k) rows: (d_n - n (n.d_n)) / |v|."""
    norm = np.linalg.norm(v, axis=1, keepdims=True)
    n = v / norm
    return (d_n - n * np.sum(n * d_n, axis=1, keepdims=True)) / norm


# ---------------------------------------------------------------------------
# Training loss: (1 - lambda) L1 + lambda (1 - SSIM)
# ---------------------------------------------------------------------------

def _ssim_kernel() -> np.ndarray:
    r = SSIM_WINDOW // 2
    g = np.exp(-0.5 * (np.arange(-r, r + 1) / SSIM_SIGMA) ** 2)
    g /= g.sum()
    return np.outer(g, g)


_KERNEL = _ssim_kernel()


def _filt(img: np.ndarray) -> np.ndarray:
    # Zero-padded 'same' correlation; self-adjoint for the symmetric kernel.
    return correlate(img, _KERNEL, mode="constant", cval=0.0)


def ssim_and_gradient(img: np.ndarray, ref: np.ndarray):
    """Mean SSIM over pixels and channels plus its analytic gradient w.r.t. img.

    11x11 Gaussian window, sigma 1.5, standard stabilizing constants for a
    [0,1] data range, zero-padded at the borders.
    """
    if img.shape != ref.shape:
        raise ShapeMismatch(f"{img.shape} != {ref.shape}")
    if img.ndim == 2:
        img = img[:, :, None]
        ref = ref[:, :, None]
    total = 0.0
    grad = np.zeros_like(img)
    n = float(img.size)
    for c in range(img.shape[2]):
        x, y = img[:, :, c], ref[:, :, c]
        mu1, mu2 = _filt(x), _filt(y)
        e2, e12 = _filt(x * x), _filt(x * y)
        e22 = _filt(y * y)
        s11 = e2 - mu1 * mu1
        s22 = e22 - mu2 * mu2
        s12 = e12 - mu1 * mu2
        a1 = 2 * mu1 * mu2 + SSIM_C1
        a2 = 2 * s12 + SSIM_C2
        b1 = mu1 * mu1 + mu2 * mu2 + SSIM_C1
        b2 = s11 + s22 + SSIM_C2
        s_map = (a1 * a2) / (b1 * b2)
        total += s_map.sum()

        ds_dmu1 = 2 * mu2 * (a2 - a1) / (b1 * b2) - 2 * mu1 * s_map * (1.0 / b1 - 1.0 / b2)
        ds_de2 = -s_map / b2
        ds_de12 = 2 * a1 / (b1 * b2)
        grad[:, :, c] = (_filt(ds_dmu1) + 2 * x * _filt(ds_de2) + y * _filt(ds_de12)) / n
    return total / n, grad


def training_loss(rendered, target: np.ndarray, lam: float = LAMBDA_SSIM):
    """Weighted L1 + (1 - SSIM) photometric loss and its gradient.

    Accepts a RenderedImage or a raw (H, W, 3) array. Returns
    (scalar loss, dL/d(rgb) with the target's shape).
    """
    img = rendered.rgb if isinstance(rendered, RenderedImage) else np.asarray(rendered)
    target = np.asarray(target)
    if img.shape != target.shape:
        raise ShapeMismatch(f"rendered {img.shape} != target {target.shape}")
    diff = img - target
    l1 = np.abs(diff).mean()
    d_l1 = np.sign(diff) / diff.size
    ssim_val, d_ssim = ssim_and_gradient(img, target)
    loss = (1.0 - lam) * l1 + lam * (1.0 - ssim_val)
    grad = (1.0 - lam) * d_l1 - lam * d_ssim
    return float(loss), grad


# ---------------------------------------------------------------------------
# Debug dumps
# ---------------------------------------------------------------------------

def save_image_png(img: np.ndarray, path) -> None:
    """Write an (H, W, 3) [0,1] float image as 8-bit PNG."""
    from PIL import Image

    arr = np.clip(np.asarray(img) * 255.0 + 0.5, 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path)


def save_image_npy(img: np.ndarray, path) -> None:
    """Write a float32 NPY array for bit-accurate oracle comparison."""
    np.save(path, np.asarray(img, dtype=np.float32))


def load_image_png(path) -> np.ndarray:
    """Read an 8-bit PNG into an (H, W, 3) [0,1] float array (no gamma)."""
    from PIL import Image

    arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float64)
    return arr / 255.0
