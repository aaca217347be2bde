"""Shared scene factories and oracle implementations for the test suite."""

import numpy as np

from swsplat.core import (
    Camera,
    GaussianSet,
    evaluate_color,
    inverse_sigmoid,
    project_gaussian,
)
from swsplat.errors import BehindCamera
from swsplat.render import ALPHA_MIN, MAX_MAHAL_SQ


def make_camera(pose=None, fx=20.0, fy=20.0, w=16, h=16):
    if pose is None:
        pose = np.eye(4)
    return Camera(pose=pose, fx=fx, fy=fy, cx=(w - 1) / 2, cy=(h - 1) / 2, width=w, height=h)


def random_set(rng, n=5, sh_degree=1, num_modes=2) -> GaussianSet:
    """A small random scene framed for a 16x16 identity-pose camera.

    Parameters are kept away from the clip/clamp/truncation boundaries so
    central finite differences stay well-posed.
    """
    k = (sh_degree + 1) ** 2
    means = np.column_stack(
        [rng.uniform(-0.6, 0.6, n), rng.uniform(-0.6, 0.6, n), rng.uniform(2.2, 3.8, n)]
    )
    quats = rng.normal(size=(n, 4))
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    scales = np.log(rng.uniform(0.12, 0.3, size=(n, 3)))
    opacities = inverse_sigmoid(rng.uniform(0.35, 0.8, n))
    colors = np.zeros((n, k, 3))
    colors[:, 0, :] = rng.uniform(0.8, 1.8, size=(n, 3))
    if sh_degree >= 1:
        colors[:, 1:, :] = rng.uniform(-0.05, 0.05, size=(n, 3, 3))
    alpha = rng.uniform(0.0, 1.0, size=(n, num_modes))
    return GaussianSet(
        means=means, rotations=quats, scales=scales, opacities=opacities, colors=colors, alpha=alpha
    )


def scalar_render_oracle(gset: GaussianSet, cam: Camera, bg) -> np.ndarray:
    """Independent per-pixel reference renderer built on the public
    single-Gaussian ops and explicit python loops."""
    bg = np.asarray(bg, dtype=float)
    if bg.ndim == 0:
        bg = np.full(3, float(bg))
    splats = []
    for i in range(gset.count):
        g = gset.gaussian(i)
        try:
            center, cov2, z = project_gaussian(g, cam)
        except BehindCamera:
            continue
        view = g.mean - cam.center()
        color = evaluate_color(g, view / np.linalg.norm(view))
        splats.append((z, center, np.linalg.inv(cov2), color, g.realized_opacity))
    splats.sort(key=lambda t: t[0])
    img = np.zeros((cam.height, cam.width, 3))
    for py in range(cam.height):
        for px in range(cam.width):
            trans = 1.0
            acc = np.zeros(3)
            for _, center, conic, color, opac in splats:
                d = np.array([px, py], dtype=float) - center
                m = d @ conic @ d
                a = opac * np.exp(-0.5 * m)
                if m > MAX_MAHAL_SQ or a < ALPHA_MIN:
                    continue
                acc += trans * a * color
                trans *= 1.0 - a
            img[py, px] = np.clip(acc + trans * bg, 0.0, 1.0)
    return img


def fd_check(analytic, loss_fn, array, step=1e-4, rtol=1e-3, atol=1e-6):
    """Compare an analytic gradient array against central finite differences."""
    it = np.nditer(array, flags=["multi_index"])
    while not it.finished:
        ix = it.multi_index
        orig = array[ix]
        array[ix] = orig + step
        lp = loss_fn()
        array[ix] = orig - step
        lm = loss_fn()
        array[ix] = orig
        num = (lp - lm) / (2 * step)
        ana = analytic[ix]
        err = abs(ana - num)
        tol = rtol * max(abs(ana), abs(num)) + atol
        assert err <= tol, f"grad mismatch at {ix}: analytic={ana:.8g} numeric={num:.8g}"
        it.iternext()
