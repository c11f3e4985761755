"""Fit a GaussianScene to posed panoramas."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from ..camera import ErpCamera
from ..errors import ConfigError
from ..gaussians import GaussianScene, filter_radius, logit, rgb_to_sh0, sh_coeff_count
from ..losses import LossBreakdown, loss_and_grads
from ..ply import write_scene
from ..renderer import RenderSettings, prepare_view, render_view
from .backward import backward
from .config import TrainConfig
from .densify import DensifyParams, DensifyStats, accumulate_densify_stats, densify_and_prune
from .optim import AdamState, adam_step

log = logging.getLogger(__name__)


def init_scene(points: np.ndarray, colors: Optional[np.ndarray], cams: Sequence[ErpCamera],
               cfg: TrainConfig = TrainConfig()) -> GaussianScene:
    """Isotropic Gaussians at the points; scale = mean distance to the 3 nearest neighbours."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = len(points)
    if n == 0:
        raise ConfigError("initial point cloud is empty")
    if colors is None:
        colors = np.full((n, 3), 0.5)
    k = min(4, n)
    if k > 1:
        d, _ = cKDTree(points).query(points, k=k)
        dist = d[:, 1:].mean(axis=1)
    else:
        dist = np.ones(1)
    dist = np.maximum(dist, 1e-7)
    sh = np.zeros((n, sh_coeff_count(cfg.sh_degree), 3))
    sh[:, 0] = rgb_to_sh0(colors)
    quats = np.zeros((n, 4))
    quats[:, 0] = 1.0
    return GaussianScene(
        points.copy(), quats, np.repeat(np.log(dist)[:, None], 3, axis=1), np.full(n, float(logit(cfg.init_opacity))),
        sh, filter_radius(points, cams, cfg.kappa), cfg.sh_degree,
    )


def scene_extent(cams: Sequence[ErpCamera], points: np.ndarray) -> float:
    """Radius of the region the cameras look at: centroid of the cameras to the far points."""
    c = np.mean([cam.center for cam in cams], axis=0)
    d = np.linalg.norm(np.asarray(points) - c, axis=1)
    return float(np.percentile(d, 90)) if len(d) else 1.0


def learning_rates(cfg: TrainConfig, it: int, extent: float) -> dict:
    """Per-group rates; the position rate decays log-linearly to ``means_final``."""
    t = min(max(it / max(cfg.iterations, 1), 0.0), 1.0)
    lr_means = math.exp((1 - t) * math.log(cfg.lr.means) + t * math.log(cfg.lr.means_final)) * extent
    return {
        "means": lr_means, "quats": cfg.lr.quats, "log_scales": cfg.lr.log_scales,
        "opacity_logits": cfg.lr.opacity_logits, "sh": (cfg.lr.sh_dc, cfg.lr.sh_rest),
    }


@dataclass
class TrainResult:
    scene: GaussianScene
    history: list = field(default_factory=list)  # (iteration, view index, LossBreakdown, n_gaussians)
    optimizer: Optional[AdamState] = None

    def log_rows(self) -> list[str]:
        rows = [LossBreakdown.CSV_HEADER + ",view,n_gaussians"]
        for it, v, bd, n in self.history:
            rows.append(f"{bd.csv_row(it)},{v},{n}")
        return rows


def _sh_lr_array(scene: GaussianScene, lrs) -> np.ndarray:
    dc, rest = lrs
    a = np.full(scene.sh.shape[1:], rest)
    a[0] = dc
    return a


def train(
    cams: Sequence[ErpCamera],
    images: Sequence[np.ndarray],
    points: np.ndarray,
    colors: Optional[np.ndarray] = None,
    cfg: TrainConfig = TrainConfig(),
    out_dir=None,
    callback: Optional[Callable[[int, LossBreakdown, GaussianScene], None]] = None,
    init: Optional[GaussianScene] = None,
) -> TrainResult:
    """Optimize Gaussians against ``images`` seen from ``cams``.

    Views are visited in a fresh seeded permutation each epoch. The jump
    losses ramp in and the depth-normal term switches on as set by
    ``cfg.schedule``. With ``out_dir`` a CSV loss log and checkpoints
    (scene PLY plus ``.optim.npz`` sidecar) are written there.
    """
    cams = list(cams)
    if not cams or len(cams) != len(images):
        raise ConfigError(f"need matching nonempty views and images, got {len(cams)} and {len(images)}")
    for cam, img in zip(cams, images):
        if np.shape(img) != (cam.height, cam.width, 3):
            raise ConfigError(f"image for {cam.name or 'view'} has shape {np.shape(img)}, camera is "
                              f"{cam.height}x{cam.width}")
    scene = init.copy() if init is not None else init_scene(points, colors, cams, cfg)
    if len(scene) == 0:
        raise ConfigError("initial point cloud is empty")
    settings = RenderSettings(tile_size=cfg.tile_size, sh_degree=cfg.sh_degree)
    extent = scene_extent(cams, scene.means)
    dparams = DensifyParams(cfg.grad_threshold, cfg.size_fraction, 1.6, cfg.min_opacity, extent, cfg.kappa)
    rng = np.random.default_rng(cfg.seed)
    state = AdamState.for_scene(scene)
    stats = DensifyStats.zeros(len(scene))
    mean_grad_sum = np.zeros_like(scene.means)
    result = TrainResult(scene, [], state)
    out = Path(out_dir) if out_dir is not None else None
    log_file = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, default=list))
        log_file = open(out / "train_log.csv", "w")
        log_file.write(LossBreakdown.CSV_HEADER + ",view,n_gaussians\n")

    order: list[int] = []
    try:
        for it in range(1, cfg.iterations + 1):
            if not order:
                order = list(rng.permutation(len(cams)))
            vi = int(order.pop())
            cam = cams[vi]
            view = prepare_view(scene, cam, settings)
            rendered = render_view(view, settings)
            bd, map_grads = loss_and_grads(rendered, images[vi], cam, cfg.loss, cfg.schedule(it))
            grads = backward(scene, view, map_grads, settings)

            if it <= cfg.densify_until:
                accumulate_densify_stats(stats, grads, scene, cam, cfg.loss.lat_eps)
                mean_grad_sum += grads.means_geom

            lrs = learning_rates(cfg, it, extent)
            lrs["sh"] = _sh_lr_array(scene, lrs["sh"])
            adam_step(scene, grads, state, lrs)

            if (cfg.densify_from <= it <= cfg.densify_until and it % cfg.densify_interval == 0
                    and it < cfg.iterations):
                res = densify_and_prune(scene, stats, dparams, cams, rng, mean_grad_sum)
                if len(res.scene) <= cfg.max_gaussians:
                    state = state.subset(res.keep).extend(res.n_new)
                    scene = res.scene
                    log.info("it %d: cloned %d split %d pruned %d -> %d Gaussians",
                             it, res.cloned, res.split, res.pruned, len(scene))
                else:
                    log.info("it %d: densification skipped, would exceed %d Gaussians", it, cfg.max_gaussians)
                stats = DensifyStats.zeros(len(scene))
                mean_grad_sum = np.zeros_like(scene.means)

            result.history.append((it, vi, bd, len(scene)))
            if log_file is not None:
                log_file.write(f"{bd.csv_row(it)},{vi},{len(scene)}\n")
            if callback is not None:
                callback(it, bd, scene)
            if out is not None and cfg.checkpoint_interval and it % cfg.checkpoint_interval == 0:
                save_checkpoint(out / f"scene_{it:06d}.ply", scene, state)
    finally:
        if log_file is not None:
            log_file.close()

    result.scene = scene
    result.optimizer = state
    if out is not None:
        save_checkpoint(out / "scene.ply", scene, state)
    return result


def save_checkpoint(path, scene: GaussianScene, state: AdamState) -> None:
    path = Path(path)
    write_scene(path, scene)
    np.savez(path.with_suffix(".optim.npz"), **state.arrays())


def load_optimizer(path) -> AdamState:
    with np.load(Path(path).with_suffix(".optim.npz")) as z:
        return AdamState.from_arrays(z)
