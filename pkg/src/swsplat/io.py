"""On-disk formats: binary window-model blobs, sequence datasets, and the
scene bundle consumed by the viewer.

Model blob (.swm), all little-endian:
  magic "SWSPLAT1" | u32 version | u32 N_g | u32 M | u32 sh_degree |
  i32 frame_start | i32 frame_end | u32 mode |
  f32 means (N,3) | f32 quaternions (N,4) | f32 log-scales (N,3) |
  f32 opacities (N,) | f32 SH coeffs (N,K,3) | f32 alpha (N,M) |
  u32 pos_m | u32 time_m | u32 n_layers |
  per layer: u32 f_in | u32 f_out | u32 skip | f32 W (M,f_in,f_out) | f32 B (M,f_out) |
  per head (dx,dr,ds): u32 f_in | u32 f_out | f32 W | f32 B |
  f32 norm_mean (3,) | f32 norm_std (3,)

Dataset directory:
  manifest.json, cameras.json, images/<view>/<frame:04d>.png,
  flow/<view>/<frame:04d>.flo (raw f32 LE, (H, W, 2) row-major, [dx, dy]),
  seed_points.npz (points, colors)
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import Camera, CameraRig, GaussianSet
from .errors import DataError, MissingFlow, MissingImage
from .mlp import DynamicMlp, FrequencyEncoder, TunableLayer
from .render import load_image_png, save_image_png
from .trainer import WindowModel

MAGIC = b"SWSPLAT1"
VERSION = 1
_MODES = {"dynamic": 0, "regular": 1, "off": 2}
_MODE_NAMES = {v: k for k, v in _MODES.items()}
HEAD_ORDER = ("dx", "dr", "ds")


def _pack_u32(*vals) -> bytes:
    return struct.pack("<" + "I" * len(vals), *vals)


def _pack_i32(*vals) -> bytes:
    return struct.pack("<" + "i" * len(vals), *vals)


def _f32(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f4").tobytes()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.off = 0

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.data):
            raise DataError(f"model blob truncated at byte {self.off} (wanted {n} more)")
        out = self.data[self.off : self.off + n]
        self.off += n
        return out

    def u32(self, count=1):
        vals = struct.unpack("<" + "I" * count, self.take(4 * count))
        return vals[0] if count == 1 else vals

    def i32(self, count=1):
        vals = struct.unpack("<" + "i" * count, self.take(4 * count))
        return vals[0] if count == 1 else vals

    def f32(self, shape) -> np.ndarray:
        n = int(np.prod(shape))
        arr = np.frombuffer(self.take(4 * n), dtype="<f4").astype(np.float64)
        return arr.reshape(shape)


def write_window_model(model: WindowModel, path) -> str:
    """Serialize a WindowModel; returns the blob's sha256 hex digest."""
    gset = model.gset
    mlp = model.mlp
    k = (gset.sh_degree + 1) ** 2
    chunks = [
        MAGIC,
        _pack_u32(VERSION, gset.count, gset.num_modes, gset.sh_degree),
        _pack_i32(model.frame_start, model.frame_end),
        _pack_u32(_MODES[model.meta.get("mlp_mode", "dynamic")]),
        _f32(gset.means),
        _f32(gset.rotations),
        _f32(gset.scales),
        _f32(gset.opacities),
        _f32(gset.colors.reshape(gset.count, k * 3)),
        _f32(gset.alpha),
        _pack_u32(mlp.pos_encoder.m, mlp.time_encoder.m, len(mlp.layers)),
    ]
    for i, layer in enumerate(mlp.layers):
        chunks.append(_pack_u32(layer.f_in, layer.f_out, 1 if i in mlp.skip_layers else 0))
        chunks.append(_f32(layer.weights))
        chunks.append(_f32(layer.biases))
    for name in HEAD_ORDER:
        head = mlp.heads[name]
        chunks.append(_pack_u32(head.f_in, head.f_out))
        chunks.append(_f32(head.weights))
        chunks.append(_f32(head.biases))
    chunks.append(_f32(model.norm_mean))
    chunks.append(_f32(model.norm_std))
    blob = b"".join(chunks)
    Path(path).write_bytes(blob)
    return hashlib.sha256(blob).hexdigest()


def read_window_model(path) -> WindowModel:
    data = Path(path).read_bytes()
    r = _Reader(data)
    if r.take(8) != MAGIC:
        raise DataError(f"{path}: bad magic")
    version = r.u32()
    if version != VERSION:
        raise DataError(f"{path}: unsupported version {version}")
    n, m, sh_degree = r.u32(3)
    start, end = r.i32(2)
    mode = _MODE_NAMES.get(r.u32(), "dynamic")
    k = (sh_degree + 1) ** 2
    gset = GaussianSet(
        means=r.f32((n, 3)),
        rotations=r.f32((n, 4)),
        scales=r.f32((n, 3)),
        opacities=r.f32((n,)),
        colors=r.f32((n, k * 3)).reshape(n, k, 3),
        alpha=r.f32((n, m)),
    )
    pos_m, time_m, n_layers = r.u32(3)
    layers = []
    skips = []
    for i in range(n_layers):
        f_in, f_out, skip = r.u32(3)
        if skip:
            skips.append(i)
        layers.append(TunableLayer(weights=r.f32((m, f_in, f_out)), biases=r.f32((m, f_out))))
    heads = {}
    for name in HEAD_ORDER:
        f_in, f_out = r.u32(2)
        heads[name] = TunableLayer(weights=r.f32((m, f_in, f_out)), biases=r.f32((m, f_out)))
    mlp = DynamicMlp(
        pos_encoder=FrequencyEncoder(m=pos_m, dim=3),
        time_encoder=FrequencyEncoder(m=time_m, dim=1),
        layers=layers,
        heads=heads,
        skip_layers=tuple(skips),
    )
    norm_mean = r.f32((3,))
    norm_std = r.f32((3,))
    if r.off != len(data):
        raise DataError(f"{path}: {len(data) - r.off} trailing bytes")
    return WindowModel(
        gset=gset, mlp=mlp, frame_start=start, frame_end=end,
        norm_mean=norm_mean, norm_std=norm_std, meta={"mlp_mode": mode},
    )


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# Camera (de)serialization
# ---------------------------------------------------------------------------

def camera_to_dict(cam: Camera, view_id: str) -> dict:
    return {
        "id": view_id,
        "fx": cam.fx,
        "fy": cam.fy,
        "cx": cam.cx,
        "cy": cam.cy,
        "width": cam.width,
        "height": cam.height,
        "pose": [float(x) for x in cam.pose.reshape(-1)],
    }


def camera_from_dict(d: dict) -> Camera:
    return Camera(
        pose=np.asarray(d["pose"], dtype=float).reshape(4, 4),
        fx=d["fx"], fy=d["fy"], cx=d["cx"], cy=d["cy"],
        width=d["width"], height=d["height"],
    )


def rig_to_list(rig: CameraRig) -> list[dict]:
    return [camera_to_dict(cam, vid) for cam, vid in zip(rig.cameras, rig.ids)]


def rig_from_list(entries: list[dict]) -> CameraRig:
    return CameraRig(cameras=[camera_from_dict(d) for d in entries], ids=[d["id"] for d in entries])


# ---------------------------------------------------------------------------
# Sequence dataset
# ---------------------------------------------------------------------------

@dataclass
class SequenceDataset:
    """File-backed multi-view sequence with frame indices contiguous from 0."""

    root: Path
    rig: CameraRig
    train_ids: list[str]
    test_ids: list[str]
    n_frames: int
    background: np.ndarray
    has_flow: bool
    has_seed: bool

    @property
    def width(self) -> int:
        return self.rig[0].width

    @property
    def height(self) -> int:
        return self.rig[0].height

    def image_path(self, view_id: str, frame: int) -> Path:
        return self.root / "images" / view_id / f"{frame:04d}.png"

    def load_image(self, view_id: str, frame: int) -> np.ndarray:
        path = self.image_path(view_id, frame)
        if not path.exists():
            raise MissingImage(view_id, frame)
        img = load_image_png(path)
        if img.shape != (self.height, self.width, 3):
            raise DataError(f"{path}: resolution {img.shape[:2]} != declared {(self.height, self.width)}")
        return img

    def load_images(self, view_ids=None) -> np.ndarray:
        """(V, F, H, W, 3) stack in the given view order (default: all views)."""
        ids = view_ids if view_ids is not None else self.rig.ids
        out = np.zeros((len(ids), self.n_frames, self.height, self.width, 3))
        for v, vid in enumerate(ids):
            for f in range(self.n_frames):
                out[v, f] = self.load_image(vid, f)
        return out

    def load_flow(self, view_id: str, frame: int) -> np.ndarray:
        path = self.root / "flow" / view_id / f"{frame:04d}.flo"
        if not path.exists():
            raise MissingFlow(view_id, frame)
        raw = np.frombuffer(path.read_bytes(), dtype="<f4")
        expected = self.height * self.width * 2
        if raw.size != expected:
            raise DataError(f"{path}: {raw.size} floats, expected {expected}")
        return raw.reshape(self.height, self.width, 2).astype(np.float64)

    def load_all_flows(self, view_ids=None) -> dict[str, list[np.ndarray]]:
        ids = view_ids if view_ids is not None else self.rig.ids
        return {vid: [self.load_flow(vid, f) for f in range(self.n_frames - 1)] for vid in ids}

    def load_seed_cloud(self):
        path = self.root / "seed_points.npz"
        if not path.exists():
            raise DataError(f"{path}: seed point cloud missing")
        data = np.load(path)
        return data["points"], data["colors"]

    def train_rig(self) -> CameraRig:
        idx = [self.rig.ids.index(v) for v in self.train_ids]
        return CameraRig(cameras=[self.rig[i] for i in idx], ids=[self.rig.ids[i] for i in idx])


def load_dataset(root) -> SequenceDataset:
    root = Path(root)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise DataError(f"{manifest_path} not found")
    manifest = json.loads(manifest_path.read_text())
    cameras = json.loads((root / "cameras.json").read_text())
    rig = rig_from_list(cameras)
    ds = SequenceDataset(
        root=root,
        rig=rig,
        train_ids=manifest.get("train_views", rig.ids),
        test_ids=manifest.get("test_views", []),
        n_frames=manifest["n_frames"],
        background=np.asarray(manifest.get("background", [0.0, 0.0, 0.0])),
        has_flow=(root / "flow").is_dir(),
        has_seed=(root / "seed_points.npz").exists(),
    )
    missing = [vid for vid in ds.train_ids if vid not in rig.ids]
    if missing:
        raise DataError(f"train views {missing} not in cameras.json")
    return ds


def write_dataset(scene, root) -> SequenceDataset:
    """Write a synthetic SceneData to the dataset directory layout."""
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    for v, vid in enumerate(scene.rig.ids):
        img_dir = root / "images" / vid
        img_dir.mkdir(parents=True, exist_ok=True)
        for f in range(scene.images.shape[1]):
            save_image_png(scene.images[v, f], img_dir / f"{f:04d}.png")
        flow_dir = root / "flow" / vid
        flow_dir.mkdir(parents=True, exist_ok=True)
        for f, field in enumerate(scene.flows[vid]):
            (flow_dir / f"{f:04d}.flo").write_bytes(np.ascontiguousarray(field, dtype="<f4").tobytes())
    np.savez(root / "seed_points.npz", points=scene.seed_points, colors=scene.seed_colors)
    (root / "cameras.json").write_text(json.dumps(rig_to_list(scene.rig), indent=1))
    manifest = {
        "n_frames": int(scene.images.shape[1]),
        "resolution": [int(scene.rig[0].width), int(scene.rig[0].height)],
        "train_views": scene.train_ids,
        "test_views": scene.test_ids,
        "background": [float(b) for b in np.asarray(scene.background).reshape(-1)],
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=1))
    return load_dataset(root)


# ---------------------------------------------------------------------------
# Scene bundle (viewer interchange)
# ---------------------------------------------------------------------------

BUNDLE_MAGIC = "swsplat-bundle"


@dataclass
class SceneBundle:
    """Exported artifact: manifest + per-window model blobs (checksummed)."""

    root: Path
    manifest: dict

    @property
    def num_windows(self) -> int:
        return len(self.manifest["windows"])

    def window_path(self, k: int) -> Path:
        return self.root / self.manifest["windows"][k]["file"]

    def load_window(self, k: int) -> WindowModel:
        entry = self.manifest["windows"][k]
        path = self.root / entry["file"]
        if sha256_file(path) != entry["sha256"]:
            raise DataError(f"{path}: checksum mismatch")
        return read_window_model(path)

    def rig(self) -> CameraRig:
        return rig_from_list(self.manifest["cameras"])

    def window_of_frame(self, frame: int) -> int:
        """Overlap frames resolve to the later window."""
        for k in range(self.num_windows - 1, -1, -1):
            w = self.manifest["windows"][k]
            if w["frame_start"] <= frame <= w["frame_end"]:
                return k
        raise DataError(f"frame {frame} outside bundle range")


def export_bundle(
    models: list[WindowModel],
    rig: CameraRig,
    out_dir,
    train_ids=None,
    test_ids=None,
    background=(0.0, 0.0, 0.0),
    flicker_budget: float | None = None,
    golden: dict | None = None,
    eval_view: str | None = None,
) -> SceneBundle:
    out_dir = Path(out_dir)
    (out_dir / "windows").mkdir(parents=True, exist_ok=True)
    windows = []
    for k, model in enumerate(models):
        rel = f"windows/window_{k:03d}.swm"
        digest = write_window_model(model, out_dir / rel)
        windows.append(
            {
                "index": k,
                "frame_start": model.frame_start,
                "frame_end": model.frame_end,
                "file": rel,
                "sha256": digest,
                "count": model.gset.count,
            }
        )
    manifest = {
        "magic": BUNDLE_MAGIC,
        "version": VERSION,
        "n_frames": models[-1].frame_end + 1 if models else 0,
        "cameras": rig_to_list(rig),
        "train_views": train_ids or rig.ids,
        "test_views": test_ids or [],
        "background": [float(b) for b in np.asarray(background).reshape(-1)],
        "windows": windows,
        "flicker_budget": flicker_budget,
        "eval_view": eval_view or (train_ids or rig.ids)[0],
    }
    if golden is not None:
        (out_dir / "golden.json").write_text(json.dumps(golden))
        manifest["golden"] = "golden.json"
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=1))
    return SceneBundle(root=out_dir, manifest=manifest)


def load_bundle(root) -> SceneBundle:
    root = Path(root)
    path = root / "manifest.json"
    if not path.exists():
        raise DataError(f"{path} not found")
    manifest = json.loads(path.read_text())
    if manifest.get("magic") != BUNDLE_MAGIC:
        raise DataError(f"{path}: not a scene bundle")
    if manifest.get("version") != VERSION:
        raise DataError(f"{path}: unsupported bundle version {manifest.get('version')}")
    for entry in manifest["windows"]:
        blob = root / entry["file"]
        if not blob.exists():
            raise DataError(f"{blob} referenced by manifest but missing")
    return SceneBundle(root=root, manifest=manifest)


def golden_vectors(models: list[WindowModel], frames: list[int]) -> dict:
    """Per-frame deformed attribute dumps for cross-implementation parity.

    For each requested global frame the owning window (later window at
    overlaps) deforms its canonical set; arrays are row-major lists.
    """
    records = []
    for frame in frames:
        owner = None
        for k in range(len(models) - 1, -1, -1):
            if models[k].frame_start <= frame <= models[k].frame_end:
                owner = k
                break
        if owner is None:
            raise DataError(f"golden frame {frame} outside model ranges")
        model = models[owner]
        deformed = model.deformed(frame)
        records.append(
            {
                "frame": frame,
                "window": owner,
                "t": model.t_of_frame(frame),
                "means": deformed.means.tolist(),
                "rotations": deformed.rotations.tolist(),
                "log_scales": deformed.scales.tolist(),
                "opacities": deformed.realized_opacities().tolist(),
            }
        )
    return {"frames": records}
