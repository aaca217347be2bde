"""Sliding-window dynamic 3D Gaussian splatting on the CPU.

A sequence of multi-view frames is partitioned into overlapping windows by
accumulated optical-flow magnitude; each window trains an independent set of
canonical 3D Gaussians plus a small deformation MLP with per-Gaussian blending
weights; a sequential fine-tuning pass then enforces consistency between
adjacent windows on their shared frame.
"""

__version__ = "0.1.0"

from .core import Camera, CameraRig, Gaussian, GaussianSet
from .render import RenderedImage, RenderGradients, render, render_backward, training_loss
from .windows import FlowSummary, WindowPlan, plan_windows, summarize_flow

__all__ = [
    "Camera",
    "CameraRig",
    "FlowSummary",
    "Gaussian",
    "GaussianSet",
    "RenderGradients",
    "RenderedImage",
    "WindowPlan",
    "plan_windows",
    "render",
    "render_backward",
    "summarize_flow",
    "training_loss",
]
