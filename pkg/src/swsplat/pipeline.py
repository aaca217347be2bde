"""Two-stage pipeline orchestration from a YAML config.

Stage 1 trains one model per planned window (parallel workers, per-window
seeds); stage 2 fine-tunes the chain sequentially for temporal consistency;
export packages a SceneBundle for the viewer. Every stage writes its
artifacts under the configured output directory and re-runs resume from
whatever checkpoints already exist.
"""

from __future__ import annotations

import json
import os
import shutil
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigError, DataError
from .finetune import FinetuneConfig, PoseSampler, finetune_window, overlap_l1, sample_novel_pose
from .io import (
    SceneBundle,
    export_bundle,
    golden_vectors,
    load_dataset,
    read_window_model,
    write_window_model,
)
from .metrics import neighbor_l1_series, overlap_frames_of, playback_sequence
from .render import render
from .report import overlap_report, training_curve_figure
from .trainer import TrainConfig, train_window
from .windows import WindowPlan, naive_block_flow, plan_windows, summarize_flow

DATA_ROOT_ENV = "SWSPLAT_DATA_ROOT"


@dataclass
class PipelineConfig:
    dataset: Path
    output: Path
    threshold: float
    preset: str = "desk"
    workers: int = 1
    seed: int = 0
    train_overrides: dict = field(default_factory=dict)
    finetune_overrides: dict = field(default_factory=dict)
    golden_frames: list | None = None

    @property
    def stage1_dir(self) -> Path:
        return self.output / "stage1"

    @property
    def stage2_dir(self) -> Path:
        return self.output / "stage2"

    @property
    def bundle_dir(self) -> Path:
        return self.output / "bundle"

    def train_config(self, window_index: int = 0) -> TrainConfig:
        base = {"paper": TrainConfig.paper, "desk": TrainConfig.desk}[self.preset]
        overrides = dict(self.train_overrides)
        overrides["seed"] = int(self.seed) + window_index
        return base(**overrides)

    def finetune_config(self) -> FinetuneConfig:
        base = FinetuneConfig.desk if self.preset == "desk" else FinetuneConfig
        overrides = dict(self.finetune_overrides)
        overrides.setdefault("seed", int(self.seed))
        return base(**overrides)


def _resolve_path(value: str) -> Path:
    p = Path(value)
    if not p.is_absolute():
        root = os.environ.get(DATA_ROOT_ENV)
        if root:
            return Path(root) / p
    return p


def load_config(path, preset=None, workers=None, seed=None) -> PipelineConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} not found")
    try:
        raw = yaml.safe_load(path.read_text()) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"config parse error: {e}") from e
    for key in ("dataset", "output", "threshold"):
        if key not in raw:
            raise ConfigError(f"config missing required key {key!r}")
    cfg = PipelineConfig(
        dataset=_resolve_path(str(raw["dataset"])),
        output=_resolve_path(str(raw["output"])),
        threshold=float(raw["threshold"]),
        preset=str(raw.get("preset", "desk")),
        workers=int(raw.get("workers", 1)),
        seed=int(raw.get("seed", 0)),
        train_overrides=dict(raw.get("train", {}) or {}),
        finetune_overrides=dict(raw.get("finetune", {}) or {}),
        golden_frames=raw.get("golden_frames"),
    )
    if preset is not None:
        cfg.preset = preset
    if workers is not None:
        cfg.workers = workers
    if seed is not None:
        cfg.seed = seed
    if cfg.preset not in ("paper", "desk"):
        raise ConfigError(f"unknown preset {cfg.preset!r} (use paper or desk)")
    if cfg.threshold <= 0:
        raise ConfigError("threshold must be > 0")
    try:
        cfg.train_config()
        cfg.finetune_config()
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid train/finetune overrides: {e}") from e
    return cfg


def plan_stage(cfg: PipelineConfig) -> WindowPlan:
    """Summarize flow (files, or the block-matching fallback) and plan windows."""
    ds = load_dataset(cfg.dataset)
    if ds.has_flow:
        flows = ds.load_all_flows(ds.train_ids)
    else:
        flows = {}
        for vid in ds.train_ids:
            fields = []
            for f in range(ds.n_frames - 1):
                fields.append(naive_block_flow(ds.load_image(vid, f), ds.load_image(vid, f + 1)))
            flows[vid] = fields
    summary = summarize_flow(flows)
    plan = plan_windows(summary, cfg.threshold)
    cfg.output.mkdir(parents=True, exist_ok=True)
    (cfg.output / "plan.json").write_text(
        json.dumps(
            {
                "threshold": cfg.threshold,
                "flow_summary": summary.values.tolist(),
                "windows": [list(w) for w in plan.windows],
            },
            indent=1,
        )
    )
    return plan


def load_plan(cfg: PipelineConfig) -> WindowPlan:
    path = cfg.output / "plan.json"
    if not path.exists():
        return plan_stage(cfg)
    data = json.loads(path.read_text())
    return WindowPlan(windows=[tuple(w) for w in data["windows"]], threshold=data["threshold"])


def _stage1_path(cfg: PipelineConfig, k: int) -> Path:
    return cfg.stage1_dir / f"window_{k:03d}.swm"


def _train_one_window(config_path: str, preset, workers, seed, window_index: int):
    """Worker entry point: loads everything from disk, trains one window."""
    cfg = load_config(config_path, preset=preset, workers=workers, seed=seed)
    plan = load_plan(cfg)
    ds = load_dataset(cfg.dataset)
    window = plan.windows[window_index]
    rig = ds.train_rig()
    images = ds.load_images(ds.train_ids)
    points, colors = ds.load_seed_cloud()
    tcfg = cfg.train_config(window_index)
    cfg.stage1_dir.mkdir(parents=True, exist_ok=True)
    metrics_path = cfg.stage1_dir / f"window_{window_index:03d}_metrics.jsonl"
    model = train_window(
        points, colors, rig, images, window, tcfg, metrics_path=metrics_path
    )
    write_window_model(model, _stage1_path(cfg, window_index))
    try:
        from .metrics import read_jsonl

        training_curve_figure(
            read_jsonl(metrics_path), cfg.stage1_dir / f"window_{window_index:03d}_metrics.png"
        )
    except Exception:
        pass  # figures are best-effort in workers
    return window_index


def train_stage(cfg: PipelineConfig, config_path, plan: WindowPlan, only_window=None) -> list[Path]:
    """Stage 1: independent per-window training, parallel, resumable."""
    cfg.stage1_dir.mkdir(parents=True, exist_ok=True)
    indices = range(len(plan.windows)) if only_window is None else [only_window]
    pending = []
    for k in indices:
        path = _stage1_path(cfg, k)
        if path.exists():
            try:
                read_window_model(path)
                continue  # resume: checkpoint is intact
            except DataError:
                path.unlink()
        pending.append(k)
    if pending:
        args = [(str(config_path), cfg.preset, cfg.workers, cfg.seed, k) for k in pending]
        if cfg.workers > 1 and len(pending) > 1:
            with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
                list(pool.map(_train_one_window, *zip(*args)))
        else:
            for a in args:
                _train_one_window(*a)
    return [_stage1_path(cfg, k) for k in indices]


def _stage2_path(cfg: PipelineConfig, k: int) -> Path:
    return cfg.stage2_dir / f"window_{k:03d}.swm"


def finetune_stage(cfg: PipelineConfig, plan: WindowPlan) -> list[Path]:
    """Stage 2: strict sequential consistency fine-tuning along the chain.

    Window 0 has no predecessor and is copied through unchanged. Emits the
    before/after overlap-error report (JSONL + figure).
    """
    ds = load_dataset(cfg.dataset)
    rig = ds.train_rig()
    images = ds.load_images(ds.train_ids)
    cfg.stage2_dir.mkdir(parents=True, exist_ok=True)
    n = len(plan.windows)
    stage1 = [read_window_model(_stage1_path(cfg, k)) for k in range(n)]
    eval_cam = rig[0]
    before_play = playback_sequence(stage1, eval_cam, ds.background, ds.n_frames)
    before_series = neighbor_l1_series(before_play)

    sampler = PoseSampler(rig=rig)
    pose_rng = np.random.default_rng(cfg.seed + 7919)
    novel = [sample_novel_pose(sampler, pose_rng) for _ in range(16)]
    overlap_before = [
        overlap_l1(stage1[k], stage1[k - 1], novel, ds.background) for k in range(1, n)
    ]

    models = [stage1[0]]
    shutil.copyfile(_stage1_path(cfg, 0), _stage2_path(cfg, 0))
    ft_cfg = cfg.finetune_config()
    for k in range(1, n):
        path = _stage2_path(cfg, k)
        if path.exists():
            try:
                models.append(read_window_model(path))
                continue
            except DataError:
                path.unlink()
        cur = stage1[k]
        finetune_window(cur, models[k - 1], rig, images, ft_cfg, cfg.train_config(k))
        write_window_model(cur, path)
        models.append(cur)

    after_play = playback_sequence(models, eval_cam, ds.background, ds.n_frames)
    after_series = neighbor_l1_series(after_play)
    overlap_after = [
        overlap_l1(models[k], models[k - 1], novel, ds.background) for k in range(1, n)
    ]
    report = overlap_report(
        before_series, after_series, overlap_frames_of(models), cfg.stage2_dir
    )
    summary = {
        "overlap_l1_before": overlap_before,
        "overlap_l1_after": overlap_after,
        "eval_view": rig.ids[0],
        "report": report,
    }
    (cfg.stage2_dir / "overlap_summary.json").write_text(json.dumps(summary, indent=1))
    return [_stage2_path(cfg, k) for k in range(n)]


def flicker_budget_from_report(cfg: PipelineConfig, plan: WindowPlan) -> float | None:
    """Budget for the viewer: post-finetune neighbor error around overlaps, with headroom."""
    path = cfg.stage2_dir / "overlap.jsonl"
    if not path.exists():
        return None
    from .metrics import read_jsonl

    rows = read_jsonl(path)
    vals = [r["l1_after"] for r in rows if r.get("crosses_overlap") and "l1_after" in r]
    if not vals:
        vals = [r.get("l1_after", r["l1_before"]) for r in rows]
    return 1.25 * max(vals) if vals else None


def export_stage(cfg: PipelineConfig, plan: WindowPlan, golden: bool = True) -> SceneBundle:
    """Package fine-tuned models (stage-1 fallback) into a viewer bundle."""
    ds = load_dataset(cfg.dataset)
    n = len(plan.windows)
    models = []
    for k in range(n):
        path = _stage2_path(cfg, k)
        if not path.exists():
            path = _stage1_path(cfg, k)
        if not path.exists():
            raise DataError(f"no checkpoint for window {k}; run train/finetune first")
        models.append(read_window_model(path))
    golden_payload = None
    if golden:
        frames = cfg.golden_frames
        if frames is None:
            frames = sorted({models[0].frame_start, *overlap_frames_of(models), models[-1].frame_end})
        golden_payload = golden_vectors(models, list(frames))
    eval_view = None
    summary_path = cfg.stage2_dir / "overlap_summary.json"
    if summary_path.exists():
        eval_view = json.loads(summary_path.read_text()).get("eval_view")
    bundle = export_bundle(
        models,
        ds.rig,
        cfg.bundle_dir,
        train_ids=ds.train_ids,
        test_ids=ds.test_ids,
        background=ds.background,
        flicker_budget=flicker_budget_from_report(cfg, plan),
        golden=golden_payload,
        eval_view=eval_view,
    )
    return bundle


def run_pipeline(config_path, preset=None, workers=None, seed=None) -> SceneBundle:
    """plan -> parallel stage-1 training -> sequential fine-tuning -> export."""
    cfg = load_config(config_path, preset=preset, workers=workers, seed=seed)
    plan = load_plan(cfg)
    train_stage(cfg, config_path, plan)
    finetune_stage(cfg, plan)
    return export_stage(cfg, plan)


def render_from_bundle(bundle: SceneBundle, frame: int, view_id=None, pose_camera=None):
    """Render one global frame from its owning window's model."""
    rig = bundle.rig()
    if pose_camera is not None:
        cam = pose_camera
    else:
        vid = view_id or bundle.manifest["cameras"][0]["id"]
        if vid not in rig.ids:
            raise DataError(f"view {vid!r} not in bundle")
        cam = rig[rig.ids.index(vid)]
    k = bundle.window_of_frame(frame)
    model = bundle.load_window(k)
    bg = np.asarray(bundle.manifest.get("background", [0, 0, 0]), dtype=float)
    return render(model.deformed(frame), cam, bg)
