"""Latitude-weighted densification statistics and clone/split/prune."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..camera import ErpCamera, latitude_weight
from ..gaussians import GaussianScene, filter_radius, quats_to_rotmats
from .backward import SceneGrads


@dataclass
class DensifyStats:
    score: np.ndarray
    count: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> "DensifyStats":
        return cls(np.zeros(n), np.zeros(n, dtype=np.int64))

    def mean_score(self) -> np.ndarray:
        return np.where(self.count > 0, self.score / np.maximum(self.count, 1), 0.0)

    def reset(self) -> None:
        self.score[:] = 0.0
        self.count[:] = 0


def projected_mean_grad(d_means: np.ndarray, means: np.ndarray, cam: ErpCamera) -> np.ndarray:
    """(N, 2) gradient w.r.t. the mean's ERP pixel position (u, v).

    Moving u by one pixel displaces the mean by ``r cos(lat) 2 pi / W`` along
    the local east direction; moving v by one pixel displaces it by
    ``r pi / H`` towards the south (image down).
    """
    xc = cam.to_camera(means)
    gc = d_means @ cam.rotation.T  # gradient in camera coordinates
    r = np.linalg.norm(xc, axis=1)
    rxz = np.hypot(xc[:, 0], xc[:, 2])
    safe = np.maximum(rxz, 1e-12)
    # east: d/dlon of the direction, unit length in the xz plane
    east = np.stack([xc[:, 2] / safe, np.zeros_like(r), -xc[:, 0] / safe], axis=1)
    # down the image is decreasing latitude, i.e. towards +y in camera frame
    lat_dir = np.stack([-xc[:, 0] * xc[:, 1] / (safe * r), rxz / r, -xc[:, 2] * xc[:, 1] / (safe * r)], axis=1)
    cos_lat = rxz / np.maximum(r, 1e-12)
    du = (gc * east).sum(1) * r * cos_lat * 2.0 * math.pi / cam.width
    dv = (gc * lat_dir).sum(1) * r * math.pi / cam.height
    return np.stack([du, dv], axis=1)


def accumulate_densify_stats(stats: DensifyStats, grads: SceneGrads, scene: GaussianScene, cam: ErpCamera,
                             eps: float = 0.1, normalized: bool = True) -> None:
    """score += |dL/du_proj| * w_lat(latitude of the mean); count += 1 for visible Gaussians.

    With ``normalized`` the gradient is taken w.r.t. image coordinates
    rescaled to [-1, 1] (pixel gradient times W/2 and H/2), the units the
    usual 2e-4 threshold is quoted in.
    """
    d_means = grads.means_geom if grads.means_geom is not None else grads.means
    visible = grads.visible if grads.visible is not None else np.any(d_means != 0, axis=1)
    if not visible.any():
        return
    idx = np.nonzero(visible)[0]
    g2 = projected_mean_grad(d_means[idx], scene.means[idx], cam)
    if normalized:
        g2 = g2 * np.array([0.5 * cam.width, 0.5 * cam.height])
    xc = cam.to_camera(scene.means[idx])
    lat = np.arcsin(np.clip(-xc[:, 1] / np.maximum(np.linalg.norm(xc, axis=1), 1e-300), -1.0, 1.0))
    stats.score[idx] += np.linalg.norm(g2, axis=1) * latitude_weight(lat, eps)
    stats.count[idx] += 1


@dataclass(frozen=True)
class DensifyParams:
    grad_threshold: float = 2e-4
    size_fraction: float = 0.01
    split_factor: float = 1.6
    min_opacity: float = 0.005
    extent: float = 1.0
    kappa: float = 0.5


@dataclass
class DensifyResult:
    scene: GaussianScene
    keep: np.ndarray  # rows of the old scene kept, in order, at the front of the new one
    n_new: int
    cloned: int
    split: int
    pruned: int


def densify_and_prune(scene: GaussianScene, stats: DensifyStats, params: DensifyParams, cams,
                      rng: np.random.Generator, d_means: np.ndarray | None = None) -> DensifyResult:
    """Clone small high-score Gaussians, split large ones, prune transparent ones.

    Survivors of the old scene come first (rows ``keep``), then clones, then
    split children, so optimizer moments can be carried over.
    """
    score = stats.mean_score()
    hot = score >= params.grad_threshold
    big = scene.scales.max(axis=1) > params.size_fraction * params.extent
    clone = hot & ~big
    split = hot & big

    # clones: duplicate and nudge against the gradient
    ci = np.nonzero(clone)[0]
    clones = scene.subset(ci)
    if d_means is not None and len(ci):
        g = d_means[ci]
        gn = np.linalg.norm(g, axis=1, keepdims=True)
        step = 0.1 * clones.scales.min(axis=1, keepdims=True)
        clones.means -= np.where(gn > 0, g / np.maximum(gn, 1e-300), 0.0) * step

    # splits: two children sampled inside the parent, scales / split_factor
    si = np.nonzero(split)[0]
    parents = scene.subset(si)
    children = []
    if len(si):
        R = quats_to_rotmats(parents.quats)
        s = parents.scales
        for _ in range(2):
            ch = parents.copy()
            local = rng.normal(size=(len(si), 3)) * s
            # rows of R are the principal axes
            ch.means = parents.means + np.einsum("nij,ni->nj", R, local)
            ch.log_scales = np.log(s / params.split_factor)
            children.append(ch)

    keep = ~split & (scene.opacities >= params.min_opacity)
    pruned = int((~keep & ~split).sum())
    parts = [scene.subset(keep), clones] + children
    out = parts[0]
    for p in parts[1:]:
        out = GaussianScene.concat(out, p)
    # children of transparent parents would be pruned next round anyway
    alive = out.opacities >= params.min_opacity
    n_keep = int(keep.sum())
    alive[:n_keep] = True
    if not alive.all():
        pruned += int((~alive).sum())
        out = out.subset(alive)
    if cams:
        out.filter_radii = filter_radius(out.means, cams, params.kappa)
    return DensifyResult(out, np.nonzero(keep)[0], len(out) - n_keep, len(ci), len(si), pruned)
