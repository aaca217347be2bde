"""Command-line interface.

Subcommands cover the full pipeline (plan / train / finetune / export), the
synthetic scene generator, rendering and metrics. Exit codes: 0 ok, 2 config
error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import functools
import json
import sys
from pathlib import Path

import click
import numpy as np

from .errors import ConfigError, DataError, NumericError, SwsplatError


def _exit_codes(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConfigError as e:
            click.echo(f"config error: {e}", err=True)
            sys.exit(2)
        except DataError as e:
            click.echo(f"data error: {e}", err=True)
            sys.exit(3)
        except NumericError as e:
            click.echo(f"numeric failure: {e}", err=True)
            sys.exit(4)
        except SwsplatError as e:
            click.echo(f"error: {e}", err=True)
            sys.exit(1)

    return wrapper


common_options = [
    click.option("--config", "config_path", required=True, type=click.Path(), help="pipeline YAML"),
    click.option("--preset", type=click.Choice(["paper", "desk"]), default=None,
                 help="override the config's hyperparameter preset"),
    click.option("--workers", type=int, default=None, help="stage-1 worker processes"),
    click.option("--seed", type=int, default=None, help="override the base RNG seed"),
]


def with_common(fn):
    for opt in reversed(common_options):
        fn = opt(fn)
    return fn


@click.group()
def main():
    """Sliding-window dynamic Gaussian splatting pipeline."""


@main.command()
@with_common
@_exit_codes
def plan(config_path, preset, workers, seed):
    """Summarize optical flow and partition the sequence into windows."""
    from .pipeline import load_config, plan_stage

    cfg = load_config(config_path, preset, workers, seed)
    p = plan_stage(cfg)
    click.echo(f"threshold {p.threshold}: {len(p.windows)} windows")
    for k, (s, e) in enumerate(p.windows):
        click.echo(f"  window {k}: frames [{s}, {e}]")


@main.command()
@with_common
@click.option("--window", "window_index", type=int, default=None, help="train a single window (debug)")
@_exit_codes
def train(config_path, preset, workers, seed, window_index):
    """Stage 1: train one model per window (parallel, resumable)."""
    from .pipeline import load_config, load_plan, train_stage

    cfg = load_config(config_path, preset, workers, seed)
    p = load_plan(cfg)
    paths = train_stage(cfg, config_path, p, only_window=window_index)
    for path in paths:
        click.echo(str(path))


@main.command()
@with_common
@_exit_codes
def finetune(config_path, preset, workers, seed):
    """Stage 2: sequential temporal-consistency fine-tuning."""
    from .pipeline import finetune_stage, load_config, load_plan

    cfg = load_config(config_path, preset, workers, seed)
    p = load_plan(cfg)
    paths = finetune_stage(cfg, p)
    for path in paths:
        click.echo(str(path))
    click.echo(str(cfg.stage2_dir / "overlap_summary.json"))


@main.command()
@with_common
@click.option("--golden/--no-golden", default=True, help="embed golden deformation vectors")
@_exit_codes
def export(config_path, preset, workers, seed, golden):
    """Package trained windows into a viewer bundle."""
    from .pipeline import export_stage, load_config, load_plan

    cfg = load_config(config_path, preset, workers, seed)
    bundle = export_stage(cfg, load_plan(cfg), golden=golden)
    click.echo(str(bundle.root / "manifest.json"))


@main.command(name="run")
@with_common
@_exit_codes
def run_cmd(config_path, preset, workers, seed):
    """Full pipeline: plan, train, finetune, export."""
    from .pipeline import load_config, run_pipeline

    bundle = run_pipeline(config_path, preset, workers, seed)
    click.echo(str(bundle.root))


@main.command()
@click.option("--out", "out_dir", required=True, type=click.Path(), help="dataset directory to create")
@click.option("--seed", type=int, default=0)
@click.option("--frames", type=int, default=8)
@click.option("--views", type=int, default=4)
@click.option("--resolution", type=int, default=32)
@click.option("--gaussians", type=int, default=6)
@click.option("--moving", type=int, default=2)
@click.option("--velocity", type=float, default=0.05)
@_exit_codes
def synth(out_dir, seed, frames, views, resolution, gaussians, moving, velocity):
    """Generate a synthetic multi-view dataset with analytic flow."""
    from .io import write_dataset
    from .synth import SceneSpec, generate_scene

    spec = SceneSpec(
        n_gaussians=gaussians,
        n_moving=moving,
        n_views=views,
        n_frames=frames,
        resolution=resolution,
        seed=seed,
        velocity=velocity,
    )
    scene = generate_scene(spec)
    ds = write_dataset(scene, out_dir)
    click.echo(f"{ds.root}: {len(ds.rig)} views x {ds.n_frames} frames, "
               f"train={ds.train_ids} test={ds.test_ids}")


@main.command(name="render")
@click.option("--bundle", "bundle_dir", required=True, type=click.Path(exists=False))
@click.option("--frame", type=int, required=True)
@click.option("--view", "view_id", default=None, help="camera id (default: first)")
@click.option("--betas", default=None,
              help="comma-separated simplex weights for a novel interpolated pose")
@click.option("--out", "out_path", required=True, type=click.Path())
@_exit_codes
def render_cmd(bundle_dir, frame, view_id, betas, out_path):
    """Render one frame from an exported bundle to PNG (training or novel view)."""
    from .finetune import PoseSampler
    from .io import load_bundle
    from .pipeline import render_from_bundle
    from .render import save_image_png

    bundle = load_bundle(bundle_dir)
    pose_camera = None
    if betas is not None:
        weights = np.array([float(x) for x in betas.split(",")])
        rig = bundle.rig()
        if len(weights) != len(rig):
            raise ConfigError(f"--betas needs {len(rig)} weights, got {len(weights)}")
        total = weights.sum()
        if total <= 0:
            raise ConfigError("--betas must sum to a positive value")
        pose_camera = PoseSampler(rig=rig).pose_from_weights(weights / total)
    img = render_from_bundle(bundle, frame, view_id, pose_camera=pose_camera)
    Path(out_path).parent.mkdir(parents=True, exist_ok=True)
    save_image_png(img.rgb, out_path)
    click.echo(out_path)


@main.command()
@click.option("--bundle", "bundle_dir", required=True, type=click.Path())
@click.option("--dataset", "dataset_dir", required=True, type=click.Path())
@click.option("--view", "view_id", default=None, help="camera id (default: first test view)")
@click.option("--out", "out_dir", required=True, type=click.Path())
@_exit_codes
def metrics(bundle_dir, dataset_dir, view_id, out_dir):
    """Per-frame PSNR/SSIM and neighbor-error series against dataset images."""
    from .io import load_bundle, load_dataset
    from .metrics import compute_metrics, neighbor_l1_series, playback_sequence
    from .report import metrics_report, overlap_report

    bundle = load_bundle(bundle_dir)
    ds = load_dataset(dataset_dir)
    vid = view_id or (ds.test_ids[0] if ds.test_ids else ds.rig.ids[0])
    if vid not in ds.rig.ids:
        raise DataError(f"view {vid!r} not in dataset")
    cam = ds.rig[ds.rig.ids.index(vid)]
    models = [bundle.load_window(k) for k in range(bundle.num_windows)]
    seq = playback_sequence(models, cam, ds.background, ds.n_frames)
    targets = np.stack([ds.load_image(vid, f) for f in range(ds.n_frames)])
    records = compute_metrics(seq, targets)
    out = metrics_report(records, out_dir, stem=f"metrics_{vid}")
    overlaps = [m.frame_start for m in models[1:]]
    out2 = overlap_report(neighbor_l1_series(seq), None, overlaps, out_dir, stem=f"neighbors_{vid}")
    mean_psnr = float(np.mean([r["psnr"] for r in records]))
    mean_ssim = float(np.mean([r["ssim"] for r in records]))
    click.echo(json.dumps({"view": vid, "mean_psnr": mean_psnr, "mean_ssim": mean_ssim,
                           **out, "neighbors": out2}))


if __name__ == "__main__":
    main()
