import numpy as np
import pytest
from scipy.special import sph_harm_y

from swsplat.core import (
    COV2D_FLOOR,
    Camera,
    CameraRig,
    Gaussian,
    build_covariance,
    evaluate_color,
    evaluate_gaussian,
    inverse_sigmoid,
    project_gaussian,
    sh_basis,
    sigmoid,
)
from swsplat.errors import BehindCamera


def make_camera(pose=None, fx=40.0, fy=40.0, w=32, h=32):
    if pose is None:
        pose = np.eye(4)
    return Camera(pose=pose, fx=fx, fy=fy, cx=(w - 1) / 2, cy=(h - 1) / 2, width=w, height=h)


def quat_about_z(angle):
    return np.array([np.cos(angle / 2), 0.0, 0.0, np.sin(angle / 2)])


class TestBuildCovariance:
    def test_identity_rotation_gives_diagonal(self):
        cov = build_covariance(np.array([1.0, 0, 0, 0]), np.array([2.0, 3.0, 0.5]))
        assert np.allclose(cov, np.diag([4.0, 9.0, 0.25]))

    def test_quarter_turn_about_z(self):
        # R S S^T R^T computed by hand: the x extent 2 maps onto the y axis.
        cov = build_covariance(quat_about_z(np.pi / 2), np.array([2.0, 1.0, 1.0]))
        assert np.allclose(cov, np.diag([1.0, 4.0, 1.0]), atol=1e-12)

    def test_symmetry_and_psd(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            q = rng.normal(size=4)
            q /= np.linalg.norm(q)
            s = rng.uniform(0.1, 3.0, size=3)
            cov = build_covariance(q, s)
            assert np.array_equal(cov, cov.T)
            ev = np.linalg.eigvalsh(cov)
            assert ev.min() >= -1e-12
            assert np.allclose(np.sort(ev), np.sort(s**2), rtol=1e-10)

    def test_axis_permutation_invariance(self):
        # Permuting scale axes together with the matching rotation of the frame
        # leaves the covariance unchanged.
        s = np.array([0.5, 1.5, 2.5])
        base = build_covariance(np.array([1.0, 0, 0, 0]), s)
        # 90 deg about z swaps the x/y axes (up to sign): scale (a,b,c)->(b,a,c)
        swapped = build_covariance(quat_about_z(np.pi / 2), s[[1, 0, 2]])
        assert np.allclose(base, swapped, atol=1e-12)


class TestEvaluateGaussian:
    def g(self, scale):
        return Gaussian(
            mean=np.array([0.5, -0.2, 1.0]),
            rotation=np.array([1.0, 0, 0, 0]),
            scale=np.log(scale),
            opacity=0.0,
            color=np.array([[0.5, 0.5, 0.5]]),
        )

    def test_value_at_mean_is_one(self):
        g = self.g(np.array([0.3, 0.7, 1.1]))
        assert evaluate_gaussian(g, g.mean) == pytest.approx(1.0)

    def test_isotropic_one_sigma(self):
        s = 0.4
        g = self.g(np.array([s, s, s]))
        x = g.mean + np.array([0.0, s, 0.0])
        assert evaluate_gaussian(g, x) == pytest.approx(np.exp(-0.5), rel=1e-12)

    def test_monotone_decay_along_ray(self):
        g = self.g(np.array([0.2, 0.5, 0.9]))
        ray = np.array([1.0, 2.0, -1.0])
        ray /= np.linalg.norm(ray)
        vals = [evaluate_gaussian(g, g.mean + t * ray) for t in np.linspace(0, 5, 40)]
        assert vals[0] == pytest.approx(1.0)
        assert all(a >= b for a, b in zip(vals, vals[1:]))
        assert vals[-1] < 1e-6


class TestProjectGaussian:
    def test_on_axis_center_is_principal_point(self):
        cam = make_camera()
        g = Gaussian(
            mean=np.array([0.0, 0.0, 3.0]),
            rotation=np.array([1.0, 0, 0, 0]),
            scale=np.log([0.2, 0.2, 0.2]),
            opacity=0.0,
            color=np.array([[0.5, 0.5, 0.5]]),
        )
        center, _, depth = project_gaussian(g, cam)
        assert np.allclose(center, [cam.cx, cam.cy])
        assert depth == pytest.approx(3.0)

    def test_isotropic_screen_covariance_matches_fd_jacobian_oracle(self):
        # Oracle: numerically differentiate the pinhole projection and apply
        # J Sigma_cam J^T + floor.
        cam = make_camera(fx=50.0, fy=50.0)
        s, d = 0.3, 4.0
        mean = np.array([0.4, -0.3, d])
        g = Gaussian(
            mean=mean,
            rotation=np.array([1.0, 0, 0, 0]),
            scale=np.log([s, s, s]),
            opacity=0.0,
            color=np.array([[0.5, 0.5, 0.5]]),
        )
        center, cov2, _ = project_gaussian(g, cam)

        def project(p):
            pix, _ = cam.project_points(p)
            return pix

        eps = 1e-6
        J = np.zeros((2, 3))
        for k in range(3):
            dp = np.zeros(3)
            dp[k] = eps
            J[:, k] = (project(mean + dp) - project(mean - dp)) / (2 * eps)
        expected = J @ (s**2 * np.eye(3)) @ J.T + COV2D_FLOOR * np.eye(2)
        assert np.allclose(cov2, expected, rtol=1e-5, atol=1e-7)
        # On-axis closed form for reference: (f s / d)^2 I + floor.
        g.mean = np.array([0.0, 0.0, d])
        _, cov_axis, _ = project_gaussian(g, cam)
        assert np.allclose(cov_axis, (50.0 * s / d) ** 2 * np.eye(2) + COV2D_FLOOR * np.eye(2), rtol=1e-12)

    def test_behind_camera_raises(self):
        cam = make_camera()
        g = Gaussian(
            mean=np.array([0.0, 0.0, 0.0]),
            rotation=np.array([1.0, 0, 0, 0]),
            scale=np.log([0.1, 0.1, 0.1]),
            opacity=0.0,
            color=np.array([[0.5, 0.5, 0.5]]),
        )
        with pytest.raises(BehindCamera):
            project_gaussian(g, cam)

    def test_determinant_shrinks_quadratically_with_depth(self):
        cam = make_camera(fx=100.0, fy=100.0)
        s, d = 0.5, 2.0
        dets = []
        for depth in (d, 2 * d):
            g = Gaussian(
                mean=np.array([0.0, 0.0, depth]),
                rotation=np.array([1.0, 0, 0, 0]),
                scale=np.log([s, s, s]),
                opacity=0.0,
                color=np.array([[0.5, 0.5, 0.5]]),
            )
            _, cov2, _ = project_gaussian(g, cam)
            dets.append(np.linalg.det(cov2))
        assert dets[0] / dets[1] == pytest.approx(16.0, rel=0.01)


def reference_sh_basis(view_dir, degree):
    """Independent real-SH basis via scipy's complex spherical harmonics.

    Real SH: m<0 -> sqrt(2)(-1)^m Im(Y_l^|m|), m=0 -> Y_l^0,
    m>0 -> sqrt(2)(-1)^m Re(Y_l^m); mapped to the splatting convention's
    ordering and signs [Y00, -Y1-1, Y10, -Y11].
    """
    x, y, z = view_dir
    theta = np.arccos(np.clip(z, -1, 1))
    phi = np.arctan2(y, x)

    def real_sh(l, m):
        if m == 0:
            return float(np.real(sph_harm_y(l, 0, theta, phi)))
        if m > 0:
            return float(np.sqrt(2) * (-1) ** m * np.real(sph_harm_y(l, m, theta, phi)))
        return float(np.sqrt(2) * (-1) ** m * np.imag(sph_harm_y(l, -m, theta, phi)))

    vals = [real_sh(0, 0)]
    if degree >= 1:
        vals += [-real_sh(1, -1), real_sh(1, 0), -real_sh(1, 1)]
    return np.array(vals)


class TestEvaluateColor:
    def test_degree0_is_view_independent(self):
        g = Gaussian(
            mean=np.zeros(3),
            rotation=np.array([1.0, 0, 0, 0]),
            scale=np.zeros(3),
            opacity=0.0,
            color=np.array([[1.0, 2.0, 3.0]]),
        )
        a = evaluate_color(g, np.array([0.0, 0.0, 1.0]))
        b = evaluate_color(g, np.array([1.0, 0.0, 0.0]))
        assert np.allclose(a, b)

    def test_degree1_odd_parity(self):
        rng = np.random.default_rng(3)
        coef = rng.normal(size=(4, 3))
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        lin = sh_basis(d, 1)[1:] @ coef[1:]
        lin_flipped = sh_basis(-d, 1)[1:] @ coef[1:]
        assert np.allclose(lin, -lin_flipped)

    def test_matches_reference_sh_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            d = rng.normal(size=3)
            d /= np.linalg.norm(d)
            assert np.allclose(sh_basis(d, 1), reference_sh_basis(d, 1), atol=1e-12)

    def test_clamped_nonnegative(self):
        g = Gaussian(
            mean=np.zeros(3),
            rotation=np.array([1.0, 0, 0, 0]),
            scale=np.zeros(3),
            opacity=0.0,
            color=np.array([[-1.0, 0.5, -0.2]]),
        )
        rgb = evaluate_color(g, np.array([0.0, 0.0, 1.0]))
        assert (rgb >= 0).all()


class TestStoredRealizedMaps:
    def test_log_scale_round_trip(self):
        vals = np.array([1e-3, 0.1, 1.0, 17.3])
        assert np.allclose(np.exp(np.log(vals)), vals, rtol=1e-12)

    def test_sigmoid_round_trip(self):
        vals = np.array([1e-4, 0.25, 0.5, 0.999])
        assert np.allclose(sigmoid(inverse_sigmoid(vals)), vals, atol=1e-9)
        stored = np.array([-5.0, -0.3, 0.0, 2.0, 8.0])
        assert np.allclose(inverse_sigmoid(sigmoid(stored)), stored, atol=1e-6)


class TestCameraValidation:
    def test_bad_bottom_row_rejected(self):
        pose = np.eye(4)
        pose[3, 0] = 1e-9
        with pytest.raises(ValueError):
            make_camera(pose=pose)

    def test_non_orthonormal_rejected(self):
        pose = np.eye(4)
        pose[0, 0] = 1.1
        with pytest.raises(ValueError):
            make_camera(pose=pose)

    def test_rig_requires_unique_ids(self):
        cam = make_camera()
        with pytest.raises(ValueError):
            CameraRig(cameras=[cam, cam], ids=["a", "a"])
