"""Robustness of a trained scene to random camera rotations."""

from __future__ import annotations

import math
from typing import Callable, Optional, Sequence

import numpy as np

from ..camera import ErpCamera
from ..gaussians import GaussianScene
from ..renderer import DEFAULT_SETTINGS, RenderSettings, render
from .metrics import MetricRow, ViewPairSpec, adjacent_pairs, evaluate_views
from .synth import SyntheticScene, random_rotation, render_gt

DEFAULT_THETAS = (0.0, 60.0, 90.0)

# cam -> (rgb, depth)
GroundTruth = Callable[[ErpCamera], tuple]


def rotated_cameras(cams: Sequence[ErpCamera], theta_deg: float, seed: int) -> list[ErpCamera]:
    """Each camera gets its own rotation: axis uniform on the sphere, angle uniform in [0, theta].

    The generator is re-seeded per theta, so every theta sees the same axes
    and the same angle quantiles.
    """
    rng = np.random.default_rng(seed)
    return [cam.rotated(random_rotation(rng, math.radians(theta_deg))) for cam in cams]


def synthetic_truth(scene: SyntheticScene) -> GroundTruth:
    def gt(cam: ErpCamera):
        h = render_gt(scene, cam)
        return h.rgb, h.depth

    return gt


def rotation_eval(
    scene: GaussianScene,
    cams: Sequence[ErpCamera],
    ground_truth: GroundTruth,
    thetas: Sequence[float] = DEFAULT_THETAS,
    seed: int = 7,
    settings: RenderSettings = DEFAULT_SETTINGS,
    pairs: Optional[tuple] = None,
    name: str = "scene",
) -> list[MetricRow]:
    """PSNR/SSIM/DRE/CIR of ``scene`` at randomly rotated copies of ``cams``, one row per theta."""
    pairs = pairs if pairs is not None else adjacent_pairs(len(cams), 2)
    rows = []
    for theta in thetas:
        rc = rotated_cameras(cams, theta, seed)
        pred_rgb, pred_depth, gt_rgb = [], [], []
        for cam in rc:
            out = render(scene, cam, settings)
            rgb, _ = ground_truth(cam)
            pred_rgb.append(out.rgb)
            pred_depth.append(out.depth)
            gt_rgb.append(rgb)
        rows.append(evaluate_views(pred_rgb, gt_rgb, pred_depth, rc, scene=name, theta=float(theta),
                                   spec=ViewPairSpec(pairs)))
    return rows
