"""PLY files for Gaussian scenes (3DGS property layout) and seed point clouds."""

from __future__ import annotations

from typing import NamedTuple, Optional

import numpy as np
from plyfile import PlyData, PlyElement

from .errors import ConfigError
from .gaussians import GaussianScene, sh_coeff_count


class PointCloud(NamedTuple):
    points: np.ndarray
    colors: Optional[np.ndarray]  # (N, 3) in [0, 1] or None


def _vertex(path) -> np.ndarray:
    ply = PlyData.read(str(path))
    if "vertex" not in ply:
        raise ConfigError(f"{path}: no vertex element")
    return ply["vertex"].data


def read_point_cloud(path) -> PointCloud:
    v = _vertex(path)
    names = v.dtype.names
    pts = np.stack([v["x"], v["y"], v["z"]], axis=1).astype(np.float64)
    colors = None
    if all(c in names for c in ("red", "green", "blue")):
        colors = np.stack([v["red"], v["green"], v["blue"]], axis=1).astype(np.float64)
        if np.issubdtype(v["red"].dtype, np.integer):
            colors /= float(np.iinfo(v["red"].dtype).max)
    return PointCloud(pts, colors)


def write_point_cloud(path, points: np.ndarray, colors: Optional[np.ndarray] = None, binary: bool = True) -> None:
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    fields = [("x", "f4"), ("y", "f4"), ("z", "f4")]
    if colors is not None:
        fields += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
    arr = np.empty(len(points), dtype=fields)
    arr["x"], arr["y"], arr["z"] = points.T
    if colors is not None:
        c = np.round(np.clip(colors, 0, 1) * 255).astype(np.uint8)
        arr["red"], arr["green"], arr["blue"] = c.T
    PlyData([PlyElement.describe(arr, "vertex")], text=not binary).write(str(path))


def write_scene(path, scene: GaussianScene) -> None:
    """Float64 properties so a checkpoint reloads bit-identically."""
    n = len(scene)
    k = scene.sh.shape[1]
    rest = [f"f_rest_{i}" for i in range(3 * (k - 1))]
    fields = (["x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2"] + rest
              + ["opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3", "filter_radius"])
    arr = np.empty(n, dtype=[(f, "f8") for f in fields])
    arr["x"], arr["y"], arr["z"] = scene.means.T
    for c in range(3):
        arr[f"f_dc_{c}"] = scene.sh[:, 0, c]
    # 3DGS stores the higher bands channel-major
    rest_vals = scene.sh[:, 1:, :].transpose(0, 2, 1).reshape(n, -1)
    for i, name in enumerate(rest):
        arr[name] = rest_vals[:, i]
    arr["opacity"] = scene.opacity_logits
    for c in range(3):
        arr[f"scale_{c}"] = scene.log_scales[:, c]
    for c in range(4):
        arr[f"rot_{c}"] = scene.quats[:, c]
    arr["filter_radius"] = scene.filter_radii
    el = PlyElement.describe(arr, "vertex", comments=[f"sh_degree {scene.sh_degree}"])
    PlyData([el]).write(str(path))


def read_scene(path) -> GaussianScene:
    ply = PlyData.read(str(path))
    v = ply["vertex"].data
    names = v.dtype.names
    required = ["x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity"] + [f"scale_{i}" for i in range(3)]
    required += [f"rot_{i}" for i in range(4)]
    missing = [r for r in required if r not in names]
    if missing:
        raise ConfigError(f"{path}: not a Gaussian scene, missing {missing}")
    n = len(v)
    col = lambda name: np.asarray(v[name], dtype=np.float64)  # noqa: E731
    rest = sorted((nm for nm in names if nm.startswith("f_rest_")), key=lambda s: int(s.split("_")[-1]))
    k = 1 + len(rest) // 3
    sh = np.zeros((n, k, 3))
    sh[:, 0] = np.stack([col(f"f_dc_{c}") for c in range(3)], axis=1)
    if rest:
        sh[:, 1:] = np.stack([col(r) for r in rest], axis=1).reshape(n, 3, k - 1).transpose(0, 2, 1)
    degree = int(round(np.sqrt(k))) - 1
    for c in ply["vertex"].comments + ply.comments:
        if c.startswith("sh_degree"):
            degree = int(c.split()[1])
    if sh_coeff_count(degree) > k:
        degree = int(round(np.sqrt(k))) - 1
    filt = col("filter_radius") if "filter_radius" in names else np.zeros(n)
    return GaussianScene(
        np.stack([col("x"), col("y"), col("z")], axis=1),
        np.stack([col(f"rot_{i}") for i in range(4)], axis=1),
        np.stack([col(f"scale_{i}") for i in range(3)], axis=1),
        col("opacity"), sh, filt, degree,
    )
