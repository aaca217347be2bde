import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from swsplat.errors import ShapeMismatch
from swsplat.mlp import DynamicMlp, FrequencyEncoder, TunableLayer

from helpers import fd_check


def naive_blended_layer(layer: TunableLayer, x: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    """Reference path: blend the M weight sets per row, then apply the affine map."""
    out = np.zeros((x.shape[0], layer.f_out))
    for i in range(x.shape[0]):
        w = sum(alpha[i, m] * layer.weights[m] for m in range(layer.num_modes))
        b = sum(alpha[i, m] * layer.biases[m] for m in range(layer.num_modes))
        out[i] = x[i] @ w + b
    return out


class TestFrequencyEncoder:
    def test_zero_input_d1_m2(self):
        enc = FrequencyEncoder(m=2, dim=1)
        assert np.allclose(enc.encode([[0.0]]), [[0.0, 0.0, 1.0, 0.0, 1.0]])

    def test_output_length_d3_m6(self):
        enc = FrequencyEncoder(m=6, dim=3)
        assert enc.out_dim == 39
        assert enc.encode(np.zeros((4, 3))).shape == (4, 39)

    def test_half_input_first_band(self):
        enc = FrequencyEncoder(m=1, dim=1)
        out = enc.encode([[0.5]])
        # band k=0: sin(pi/2) = 1, cos(pi/2) = 0
        assert out[0, 1] == pytest.approx(1.0)
        assert out[0, 2] == pytest.approx(0.0, abs=1e-12)

    def test_first_entries_are_input(self):
        enc = FrequencyEncoder(m=3, dim=3)
        x = np.random.default_rng(0).normal(size=(5, 3))
        assert np.array_equal(enc.encode(x)[:, :3], x)

    def test_lipschitz_bound_per_band(self):
        m = 4
        enc = FrequencyEncoder(m=m, dim=1)
        rng = np.random.default_rng(1)
        bound = 2 ** (m - 1) * np.pi
        for _ in range(200):
            a, b = rng.uniform(-1, 1, size=2)
            ea, eb = enc.encode([[a]])[0], enc.encode([[b]])[0]
            for k in range(m):
                band = slice(1 + 2 * k, 3 + 2 * k)
                assert np.linalg.norm(ea[band] - eb[band]) <= bound * abs(a - b) + 1e-12

    def test_backward_matches_fd(self):
        enc = FrequencyEncoder(m=3, dim=3)
        rng = np.random.default_rng(2)
        x = rng.uniform(-1, 1, size=(4, 3))
        up = rng.normal(size=(4, enc.out_dim))
        grad = enc.backward(x, up)

        def loss():
            return float(np.sum(enc.encode(x) * up))

        fd_check(grad, loss, x, step=1e-6, rtol=1e-6, atol=1e-9)


class TestTunableLayer:
    def test_single_mode_unit_alpha_is_plain_linear(self):
        rng = np.random.default_rng(3)
        layer = TunableLayer.create(1, 5, 4, rng)
        x = rng.normal(size=(6, 5))
        out = layer.forward(x, np.ones((6, 1)))
        assert np.allclose(out, x @ layer.weights[0] + layer.biases[0])

    def test_one_hot_alpha_routes_to_single_mode(self):
        rng = np.random.default_rng(4)
        layer = TunableLayer.create(3, 4, 2, rng)
        layer.biases = rng.normal(size=layer.biases.shape)
        x = rng.normal(size=(3, 4))
        for m in range(3):
            alpha = np.zeros((3, 3))
            alpha[:, m] = 1.0
            assert np.allclose(layer.forward(x, alpha), x @ layer.weights[m] + layer.biases[m])

    @settings(max_examples=60, deadline=None)
    @given(
        m=st.integers(1, 3),
        f_in=st.integers(1, 8),
        f_out=st.integers(1, 8),
        n=st.integers(1, 32),
        seed=st.integers(0, 2**31),
    )
    def test_batched_equals_naive_oracle(self, m, f_in, f_out, n, seed):
        rng = np.random.default_rng(seed)
        layer = TunableLayer.create(m, f_in, f_out, rng)
        layer.biases = rng.normal(size=layer.biases.shape)
        x = rng.normal(size=(n, f_in))
        alpha = rng.normal(size=(n, m))
        assert np.allclose(layer.forward(x, alpha), naive_blended_layer(layer, x, alpha), atol=1e-6)

    def test_random_small_case_matches_oracle(self):
        rng = np.random.default_rng(5)
        layer = TunableLayer.create(2, 3, 4, rng)
        layer.biases = rng.normal(size=layer.biases.shape)
        x = rng.normal(size=(7, 3))
        alpha = rng.normal(size=(7, 2))
        assert np.allclose(layer.forward(x, alpha), naive_blended_layer(layer, x, alpha), atol=1e-10)

    def test_shape_mismatch_raises(self):
        layer = TunableLayer.create(2, 3, 4, np.random.default_rng(0))
        with pytest.raises(ShapeMismatch):
            layer.forward(np.zeros((2, 5)), np.zeros((2, 2)))
        with pytest.raises(ShapeMismatch):
            layer.forward(np.zeros((2, 3)), np.zeros((2, 3)))


class TestDynamicMlp:
    def test_fresh_mlp_is_identity_deformation(self):
        mlp = DynamicMlp.create(num_modes=2, rng=np.random.default_rng(6))
        pos = np.random.default_rng(7).normal(size=(5, 3))
        dx, dr, ds = mlp.deform(pos, 0.7, np.ones((5, 2)))
        assert np.allclose(dx, 0) and np.allclose(dr, 0) and np.allclose(ds, 0)

    def test_zero_alpha_row_gives_zero_displacement(self):
        mlp = DynamicMlp.create(num_modes=2, rng=np.random.default_rng(8))
        for head in mlp.heads.values():  # non-trivial heads
            head.weights = np.random.default_rng(9).normal(size=head.weights.shape)
            head.biases = np.random.default_rng(10).normal(size=head.biases.shape) * 0
        alpha = np.array([[0.0, 0.0], [1.0, 0.5]])
        pos = np.random.default_rng(11).normal(size=(2, 3))
        dx, dr, ds = mlp.deform(pos, 0.3, alpha)
        assert np.allclose(dx[0], 0) and np.allclose(dr[0], 0) and np.allclose(ds[0], 0)
        assert np.abs(dx[1]).max() > 0

    def test_one_hot_alpha_equals_independent_mlps(self):
        rng = np.random.default_rng(12)
        mlp = DynamicMlp.create(num_modes=2, m=2, width=8, rng=rng)
        for head in mlp.heads.values():
            head.weights = rng.normal(size=head.weights.shape) * 0.3

        def single_mode(mode):
            sub = DynamicMlp.create(num_modes=1, m=2, width=8, rng=np.random.default_rng(0))
            for i, layer in enumerate(mlp.layers):
                sub.layers[i].weights = layer.weights[mode : mode + 1]
                sub.layers[i].biases = layer.biases[mode : mode + 1]
            for name in mlp.heads:
                sub.heads[name].weights = mlp.heads[name].weights[mode : mode + 1]
                sub.heads[name].biases = mlp.heads[name].biases[mode : mode + 1]
            return sub

        pos = rng.normal(size=(6, 3)) * 0.5
        alpha = np.zeros((6, 2))
        alpha[:3, 0] = 1.0
        alpha[3:, 1] = 1.0
        dx, dr, ds = mlp.deform(pos, 0.4, alpha)
        ones = np.ones((3, 1))
        dx0, dr0, ds0 = single_mode(0).deform(pos[:3], 0.4, ones)
        dx1, dr1, ds1 = single_mode(1).deform(pos[3:], 0.4, ones)
        assert np.allclose(dx[:3], dx0) and np.allclose(dx[3:], dx1)
        assert np.allclose(dr[:3], dr0) and np.allclose(dr[3:], dr1)
        assert np.allclose(ds[:3], ds0) and np.allclose(ds[3:], ds1)

    def test_hand_computed_tiny_forward(self):
        # depth-1 network, no frequencies, width 2, M=1; every number verifiable
        # by short manual arithmetic.
        mlp = DynamicMlp.create(num_modes=1, m=0, width=2, depth=1, rng=np.random.default_rng(0))
        # encoding is (x1, x2, x3, t) -> layer (4 -> 2) -> heads (2 -> 3/4/3)
        mlp.layers[0].weights = np.array([[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [0.0, -1.0]]])
        mlp.layers[0].biases = np.array([[0.5, -0.25]])
        mlp.heads["dx"].weights = np.array([[[1.0, 0.0, 2.0], [0.0, 1.0, -1.0]]])
        mlp.heads["dx"].biases = np.array([[0.1, 0.2, 0.3]])
        pos = np.array([[1.0, 2.0, -0.5]])
        # pre = [1*1 + 2*0 + (-0.5)*1 + 0.25*0 + 0.5, 2 - 0.5 - 0.25 - 0.25] = [1.0, 1.0]
        # h = relu -> [1.0, 1.0]
        # dx = [1*1 + 0*1, 0 + 1, 2 - 1] + bias = [1.1, 1.2, 1.3]
        dx, dr, ds = mlp.deform(pos, 0.25, np.ones((1, 1)))
        assert np.allclose(dx, [[1.1, 1.2, 1.3]])
        assert np.allclose(dr, 0) and np.allclose(ds, 0)

    def test_backward_matches_fd(self):
        rng = np.random.default_rng(13)
        mlp = DynamicMlp.create(num_modes=2, m=2, width=6, rng=rng)
        for head in mlp.heads.values():
            head.weights = rng.normal(size=head.weights.shape) * 0.2
        pos = rng.uniform(-0.8, 0.8, size=(3, 3))
        alpha = rng.uniform(0.1, 0.9, size=(3, 2))
        up = {k: rng.normal(size=(3, d)) for k, d in DynamicMlp.HEAD_DIMS.items()}

        outs, cache = mlp.deform_with_cache(pos, 0.6, alpha)
        grads = mlp.deform_backward(cache, up["dx"], up["dr"], up["ds"])

        def loss():
            dx, dr, ds = mlp.deform(pos, 0.6, alpha)
            return float(np.sum(dx * up["dx"]) + np.sum(dr * up["dr"]) + np.sum(ds * up["ds"]))

        fd_check(grads.alpha, loss, alpha, step=1e-5, rtol=1e-4, atol=1e-8)
        fd_check(grads.positions, loss, pos, step=1e-5, rtol=1e-4, atol=1e-8)
        params = mlp.parameters()
        for name, arr in params.items():
            fd_check(grads.params[name], loss, arr, step=1e-5, rtol=1e-4, atol=1e-8)

    def test_zero_upstream_zero_grads(self):
        mlp = DynamicMlp.create(num_modes=2, m=1, width=4, rng=np.random.default_rng(14))
        pos = np.zeros((2, 3))
        alpha = np.ones((2, 2))
        _, cache = mlp.deform_with_cache(pos, 0.5, alpha)
        grads = mlp.deform_backward(cache, np.zeros((2, 3)), np.zeros((2, 4)), np.zeros((2, 3)))
        assert np.allclose(grads.alpha, 0) and np.allclose(grads.positions, 0)
        assert all(np.allclose(g, 0) for g in grads.params.values())
