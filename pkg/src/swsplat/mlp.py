"""Tunable deformation MLP: M weight sets per layer blended by per-Gaussian
weights, sinusoidal input encoding, and reverse-mode gradients for weights,
blending weights and input positions.

Architecture (fixed up to width/frequency hyperparameters): 4 hidden ReLU
layers of width 16 with the encoded input concatenated back in before layers
3 and 4, then three zero-initialized linear heads emitting per-Gaussian
position, quaternion and log-scale increments, so a fresh network is exactly
the identity deformation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import GaussianSet
from .errors import ShapeMismatch


@dataclass
class FrequencyEncoder:
    """Sinusoidal encoding x -> (x, sin(2^k pi x), cos(2^k pi x))_{k<m}.

    Output dimensionality is dim + 2*m*dim; the first dim entries are the
    input itself.
    """

    m: int = 6
    dim: int = 3

    @property
    def out_dim(self) -> int:
        return self.dim + 2 * self.m * self.dim

    def encode(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        parts = [x]
        for k in range(self.m):
            fx = (2.0**k * np.pi) * x
            parts.append(np.sin(fx))
            parts.append(np.cos(fx))
        return np.concatenate(parts, axis=1)

    def backward(self, x: np.ndarray, d_out: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        d = self.dim
        d_x = d_out[:, :d].copy()
        for k in range(self.m):
            freq = 2.0**k * np.pi
            fx = freq * x
            lo = d + 2 * k * d
            d_x += freq * np.cos(fx) * d_out[:, lo : lo + d]
            d_x += -freq * np.sin(fx) * d_out[:, lo + d : lo + 2 * d]
        return d_x


@dataclass
class TunableLayer:
    """Affine layer with M blended weight sets: y_i = sum_m a_im (x_i W_m + b_m)."""

    weights: np.ndarray  # (M, f_in, f_out)
    biases: np.ndarray   # (M, f_out)

    def __post_init__(self):
        if self.weights.ndim != 3 or self.biases.shape != self.weights[:, 0, :].shape:
            raise ShapeMismatch("tunable layer weights (M,f_in,f_out) / biases (M,f_out)")
        if self.weights.shape[0] < 1:
            raise ShapeMismatch("need at least one weight set")

    @property
    def num_modes(self) -> int:
        return self.weights.shape[0]

    @property
    def f_in(self) -> int:
        return self.weights.shape[1]

    @property
    def f_out(self) -> int:
        return self.weights.shape[2]

    @staticmethod
    def create(num_modes: int, f_in: int, f_out: int, rng: np.random.Generator, zero: bool = False):
        if zero:
            w = np.zeros((num_modes, f_in, f_out))
        else:
            bound = 1.0 / np.sqrt(f_in)
            w = rng.uniform(-bound, bound, size=(num_modes, f_in, f_out))
        return TunableLayer(weights=w, biases=np.zeros((num_modes, f_out)))

    def forward(self, x: np.ndarray, alpha: np.ndarray) -> np.ndarray:
        """Blended affine map for (N, f_in) inputs and (N, M) blending rows.

        Implemented as one batched contraction; equal (within fp round-off) to
        blending the M weight sets per row first and applying the resulting
        per-row affine map.
        """
        if x.shape[1] != self.f_in:
            raise ShapeMismatch(f"input dim {x.shape[1]} != f_in {self.f_in}")
        if alpha.shape != (x.shape[0], self.num_modes):
            raise ShapeMismatch(f"alpha {alpha.shape} != {(x.shape[0], self.num_modes)}")
        per_mode = np.einsum("ni,mio->nmo", x, self.weights)
        return np.einsum("nmo,nm->no", per_mode, alpha) + alpha @ self.biases

    def backward(self, x: np.ndarray, alpha: np.ndarray, d_y: np.ndarray):
        """Adjoint of forward: returns (d_x, d_weights, d_biases, d_alpha)."""
        d_x = np.einsum("nm,mio,no->ni", alpha, self.weights, d_y)
        d_w = np.einsum("nm,ni,no->mio", alpha, x, d_y)
        d_b = np.einsum("nm,no->mo", alpha, d_y)
        d_alpha = np.einsum("ni,mio,no->nm", x, self.weights, d_y) + d_y @ self.biases.T
        return d_x, d_w, d_b, d_alpha


@dataclass
class DeformGradients:
    """Gradients of a deformation pass: MLP parameters, blending weights, inputs."""

    params: dict[str, np.ndarray]
    alpha: np.ndarray      # (N, M)
    positions: np.ndarray  # (N, 3) w.r.t. the normalized positions fed in


@dataclass
class DynamicMlp:
    pos_encoder: FrequencyEncoder
    time_encoder: FrequencyEncoder
    layers: list[TunableLayer]
    heads: dict[str, TunableLayer]
    skip_layers: tuple[int, ...] = (2, 3)  # these layers see concat(h, encoding)
    _param_index: dict = field(default_factory=dict, repr=False)

    HEAD_DIMS = {"dx": 3, "dr": 4, "ds": 3}

    @staticmethod
    def create(
        num_modes: int = 2,
        m: int = 6,
        width: int = 16,
        depth: int = 4,
        rng: np.random.Generator | None = None,
    ) -> "DynamicMlp":
        rng = rng or np.random.default_rng(0)
        pos = FrequencyEncoder(m=m, dim=3)
        tim = FrequencyEncoder(m=m, dim=1)
        enc = pos.out_dim + tim.out_dim
        skips = (2, 3) if depth >= 4 else tuple(i for i in (depth - 1,) if i >= 1)
        layers = []
        for i in range(depth):
            f_in = enc if i == 0 else width + (enc if i in skips else 0)
            layers.append(TunableLayer.create(num_modes, f_in, width, rng))
        heads = {
            name: TunableLayer.create(num_modes, width, dim, rng, zero=True)
            for name, dim in DynamicMlp.HEAD_DIMS.items()
        }
        return DynamicMlp(pos_encoder=pos, time_encoder=tim, layers=layers, heads=heads, skip_layers=skips)

    @property
    def num_modes(self) -> int:
        return self.layers[0].num_modes

    def parameters(self) -> dict[str, np.ndarray]:
        """Flat name -> array view of every optimizable weight/bias."""
        out = {}
        for i, layer in enumerate(self.layers):
            out[f"layer{i}.weights"] = layer.weights
            out[f"layer{i}.biases"] = layer.biases
        for name, head in self.heads.items():
            out[f"head_{name}.weights"] = head.weights
            out[f"head_{name}.biases"] = head.biases
        return out

    def set_parameters(self, params: dict[str, np.ndarray]) -> None:
        for i, layer in enumerate(self.layers):
            layer.weights = params[f"layer{i}.weights"]
            layer.biases = params[f"layer{i}.biases"]
        for name, head in self.heads.items():
            head.weights = params[f"head_{name}.weights"]
            head.biases = params[f"head_{name}.biases"]

    def deform(self, positions: np.ndarray, t: float, alpha: np.ndarray):
        """Per-Gaussian increments (dx, dr, ds) at normalized time t in [0,1]."""
        (dx, dr, ds), _ = self.deform_with_cache(positions, t, alpha)
        return dx, dr, ds

    def deform_with_cache(self, positions: np.ndarray, t: float, alpha: np.ndarray):
        n = positions.shape[0]
        enc_pos = self.pos_encoder.encode(positions)
        enc_t = np.broadcast_to(self.time_encoder.encode([[float(t)]]), (n, self.time_encoder.out_dim))
        enc = np.concatenate([enc_pos, enc_t], axis=1)

        cache = {"positions": positions, "alpha": alpha, "enc": enc, "inputs": [], "pre": []}
        h = enc
        for i, layer in enumerate(self.layers):
            x_in = np.concatenate([h, enc], axis=1) if (i in self.skip_layers) else h
            z = layer.forward(x_in, alpha)
            cache["inputs"].append(x_in)
            cache["pre"].append(z)
            h = np.maximum(z, 0.0)
        cache["h_last"] = h
        outs = tuple(self.heads[name].forward(h, alpha) for name in ("dx", "dr", "ds"))
        return outs, cache

    def deform_backward(self, cache, d_dx: np.ndarray, d_dr: np.ndarray, d_ds: np.ndarray) -> DeformGradients:
        """Exact reverse-mode gradients of deform_with_cache's outputs."""
        alpha = cache["alpha"]
        d_alpha = np.zeros_like(alpha)
        params: dict[str, np.ndarray] = {}

        d_h = np.zeros_like(cache["h_last"])
        for name, d_out in (("dx", d_dx), ("dr", d_dr), ("ds", d_ds)):
            head = self.heads[name]
            dx_in, d_w, d_b, d_a = head.backward(cache["h_last"], alpha, d_out)
            d_h += dx_in
            params[f"head_{name}.weights"] = d_w
            params[f"head_{name}.biases"] = d_b
            d_alpha += d_a

        d_enc = np.zeros_like(cache["enc"])
        for i in range(len(self.layers) - 1, -1, -1):
            d_z = d_h * (cache["pre"][i] > 0.0)
            dx_in, d_w, d_b, d_a = self.layers[i].backward(cache["inputs"][i], alpha, d_z)
            params[f"layer{i}.weights"] = d_w
            params[f"layer{i}.biases"] = d_b
            d_alpha += d_a
            if i in self.skip_layers:
                width = dx_in.shape[1] - cache["enc"].shape[1]
                d_h = dx_in[:, :width]
                d_enc += dx_in[:, width:]
            elif i == 0:
                d_enc += dx_in
            else:
                d_h = dx_in

        pos_dim = self.pos_encoder.out_dim
        d_positions = self.pos_encoder.backward(cache["positions"], d_enc[:, :pos_dim])
        return DeformGradients(params=params, alpha=d_alpha, positions=d_positions)


def apply_deformation(gset: GaussianSet, dx: np.ndarray, dr: np.ndarray, ds: np.ndarray) -> GaussianSet:
    """Per-frame Gaussians from canonical ones: means+dx, normalize(rot+dr),
    log-scales+ds. Opacities, colors and alpha rows are shared unchanged."""
    rot = gset.rotations + dr
    rot = rot / np.linalg.norm(rot, axis=1, keepdims=True)
    return GaussianSet(
        means=gset.means + dx,
        rotations=rot,
        scales=gset.scales + ds,
        opacities=gset.opacities,
        colors=gset.colors,
        alpha=gset.alpha,
    )


def apply_deformation_backward(gset: GaussianSet, dr: np.ndarray, d_means, d_rotations, d_scales):
    """Adjoint of apply_deformation.

    Given gradients w.r.t. the deformed (means, normalized rotations,
    log-scales), returns (d_canonical_means, d_canonical_rotations,
    d_canonical_scales, d_dx, d_dr, d_ds); the canonical rotation and the
    quaternion increment share the normalization Jacobian.
    """
    raw = gset.rotations + dr
    norm = np.linalg.norm(raw, axis=1, keepdims=True)
    unit = raw / norm
    d_raw = (d_rotations - unit * np.sum(unit * d_rotations, axis=1, keepdims=True)) / norm
    return d_means, d_raw, d_scales, d_means, d_raw, d_scales
