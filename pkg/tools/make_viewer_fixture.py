#!/usr/bin/env python3
"""Build the frontend test fixture: synthesize the toy scene, run the full
two-stage pipeline, export the bundle with golden vectors, and copy it into
frontend/fixtures/toy_bundle.

Usage: python3 tools/make_viewer_fixture.py [workdir]
"""

import json
import shutil
import sys
import tempfile
from pathlib import Path

import numpy as np
import yaml

from swsplat.io import write_dataset
from swsplat.pipeline import load_config, run_pipeline
from swsplat.synth import SceneSpec, generate_scene
from swsplat.windows import summarize_flow

REPO = Path(__file__).resolve().parents[1]
FIXTURE_DIR = REPO / "frontend" / "fixtures" / "toy_bundle"


def main(workdir: Path):
    scene = generate_scene(SceneSpec(seed=3))
    dataset_dir = workdir / "dataset"
    write_dataset(scene, dataset_dir)

    # threshold placed so the greedy plan closes the first window at frame 4
    summary = summarize_flow({vid: scene.flows[vid] for vid in scene.train_ids})
    tau = float(summary.values[:4].sum() + 0.5 * summary.values[4])

    config = {
        "dataset": str(dataset_dir),
        "output": str(workdir / "out"),
        "threshold": tau,
        "preset": "desk",
        "workers": 2,
        "seed": 11,
    }
    config_path = workdir / "pipeline.yaml"
    config_path.write_text(yaml.safe_dump(config))
    bundle = run_pipeline(config_path)

    cfg = load_config(config_path)
    manifest = json.loads((bundle.root / "manifest.json").read_text())
    print("windows:", [(w["frame_start"], w["frame_end"]) for w in manifest["windows"]])
    print("flicker budget:", manifest.get("flicker_budget"))

    if FIXTURE_DIR.exists():
        shutil.rmtree(FIXTURE_DIR)
    shutil.copytree(bundle.root, FIXTURE_DIR)
    print("fixture written to", FIXTURE_DIR)


if __name__ == "__main__":
    if len(sys.argv) > 1:
        main(Path(sys.argv[1]))
    else:
        with tempfile.TemporaryDirectory() as tmp:
            main(Path(tmp))
