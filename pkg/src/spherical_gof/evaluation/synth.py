"""Analytic ray tracer for synthetic panoramic datasets with exact depth."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..camera import ErpCamera, axis_angle_matrix, write_poses, yaw_matrix
from ..errors import ConfigError
from ..io import write_image, write_pfm
from ..ply import write_point_cloud


@dataclass(frozen=True)
class Texture:
    """Albedo pattern over 2D surface coordinates.

    kind is ``uniform``, ``checker`` or ``noise``. ``scale`` is the checker
    square size or the noise lattice spacing, in scene units.
    """

    kind: str = "uniform"
    color_a: tuple = (0.7, 0.7, 0.7)
    color_b: tuple = (0.3, 0.3, 0.3)
    scale: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("uniform", "checker", "noise"):
            raise ConfigError(f"unknown texture kind {self.kind!r}")
        if self.scale <= 0:
            raise ConfigError("texture scale must be positive")

    def sample(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        ca = np.asarray(self.color_a, dtype=np.float64)
        cb = np.asarray(self.color_b, dtype=np.float64)
        if self.kind == "uniform":
            return np.broadcast_to(ca, a.shape + (3,)).copy()
        if self.kind == "checker":
            parity = (np.floor(a / self.scale) + np.floor(b / self.scale)) % 2
            return np.where(parity[..., None] > 0, cb, ca)
        t = _value_noise(a / self.scale, b / self.scale, self.seed)
        return ca + (cb - ca) * t[..., None]


_NOISE_PERIOD = 64


def _value_noise(x: np.ndarray, y: np.ndarray, seed: int) -> np.ndarray:
    """Smoothly interpolated lattice noise in [0, 1], periodic with period 64."""
    lattice = np.random.default_rng(seed).uniform(0.0, 1.0, (_NOISE_PERIOD, _NOISE_PERIOD))
    x0, y0 = np.floor(x), np.floor(y)
    fx, fy = x - x0, y - y0
    fx = fx * fx * (3 - 2 * fx)
    fy = fy * fy * (3 - 2 * fy)
    i0 = x0.astype(np.int64) % _NOISE_PERIOD
    j0 = y0.astype(np.int64) % _NOISE_PERIOD
    i1 = (i0 + 1) % _NOISE_PERIOD
    j1 = (j0 + 1) % _NOISE_PERIOD
    top = lattice[i0, j0] * (1 - fx) + lattice[i1, j0] * fx
    bot = lattice[i0, j1] * (1 - fx) + lattice[i1, j1] * fx
    return top * (1 - fy) + bot * fy


@dataclass(frozen=True)
class Room:
    """Axis-aligned box centered at ``center``; rays hit its inside faces."""

    size: tuple = (4.0, 3.0, 5.0)
    center: tuple = (0.0, 0.0, 0.0)
    textures: tuple = (Texture(),)  # one per face (-x, +x, -y, +y, -z, +z) or a single shared one

    def face_texture(self, face: int) -> Texture:
        return self.textures[face] if len(self.textures) == 6 else self.textures[0]

    @property
    def lo(self) -> np.ndarray:
        return np.asarray(self.center, dtype=np.float64) - 0.5 * np.asarray(self.size, dtype=np.float64)

    @property
    def hi(self) -> np.ndarray:
        return np.asarray(self.center, dtype=np.float64) + 0.5 * np.asarray(self.size, dtype=np.float64)


@dataclass(frozen=True)
class Plane:
    """Rectangle ``point + a*axis_u + b*axis_v`` with |a| <= half_u, |b| <= half_v."""

    point: tuple
    axis_u: tuple
    axis_v: tuple
    half_u: float = math.inf
    half_v: float = math.inf
    texture: Texture = Texture()

    @property
    def normal(self) -> np.ndarray:
        n = np.cross(_unit(self.axis_u), _unit(self.axis_v))
        return n / np.linalg.norm(n)


@dataclass(frozen=True)
class Sphere:
    center: tuple
    radius: float
    texture: Texture = Texture()


@dataclass(frozen=True)
class Trajectory:
    """Cameras on a horizontal ellipse, each yawed by ``yaw_step`` more than the last."""

    n_views: int = 25
    radius: tuple = (0.8, 1.0)  # x and z semi-axes
    center: tuple = (0.0, 0.0, 0.0)
    height_amp: float = 0.15
    yaw_step_deg: float = 0.0
    holdout_every: int = 5

    def cameras(self, width: int, height: int, lat_band=None) -> list[ErpCamera]:
        cams = []
        c = np.asarray(self.center, dtype=np.float64)
        for i in range(self.n_views):
            phi = 2.0 * math.pi * i / self.n_views
            pos = c + np.array([
                self.radius[0] * math.cos(phi),
                self.height_amp * math.sin(3.0 * phi),
                self.radius[1] * math.sin(phi),
            ])
            R = yaw_matrix(math.radians(self.yaw_step_deg * i))
            cams.append(ErpCamera(R, pos, width, height, lat_band, f"view_{i:03d}"))
        return cams

    def split(self) -> tuple[list[int], list[int]]:
        idx = list(range(self.n_views))
        if self.holdout_every <= 0:
            return idx, []
        test = [i for i in idx if i % self.holdout_every == self.holdout_every // 2]
        return [i for i in idx if i not in test], test


@dataclass(frozen=True)
class SyntheticScene:
    room: Optional[Room] = Room()
    planes: tuple = ()
    spheres: tuple = ()
    light_dir: Optional[tuple] = (0.3, -1.0, 0.4)  # direction towards the light; None = unlit albedo
    ambient: float = 0.55
    width: int = 256
    height: int = 128
    trajectory: Trajectory = Trajectory()
    n_points: int = 20000
    seed: int = 0

    def cameras(self) -> list[ErpCamera]:
        return self.trajectory.cameras(self.width, self.height)


@dataclass
class Hits:
    depth: np.ndarray  # radial distance, NaN on miss
    rgb: np.ndarray
    normal: np.ndarray
    prim: np.ndarray  # -1 miss, 0..5 room faces, 100+i planes, 200+i spheres


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


def trace_rays(scene: SyntheticScene, origin, dirs: np.ndarray) -> Hits:
    """Closest hit of rays ``origin + t * dirs`` (unit dirs, shape (..., 3))."""
    o = np.asarray(origin, dtype=np.float64)
    d = np.asarray(dirs, dtype=np.float64)
    shape = d.shape[:-1]
    best = np.full(shape, np.inf)
    prim = np.full(shape, -1, dtype=np.int64)
    normal = np.zeros(shape + (3,))
    uv = np.zeros(shape + (2,))
    tiny = 1e-12

    if scene.room is not None:
        lo, hi = scene.room.lo, scene.room.hi
        with np.errstate(divide="ignore", invalid="ignore"):
            for k in range(3):
                dk = d[..., k]
                bound = np.where(dk > 0, hi[k], lo[k])
                t = np.where(np.abs(dk) > tiny, (bound - o[k]) / dk, np.inf)
                take = (t > 0) & (t < best)
                best = np.where(take, t, best)
                face = np.where(dk > 0, 2 * k + 1, 2 * k)
                prim = np.where(take, face, prim)
                n = np.zeros(shape + (3,))
                n[..., k] = np.where(dk > 0, -1.0, 1.0)
                normal = np.where(take[..., None], n, normal)
                a, b = [j for j in range(3) if j != k]
                p = o + t[..., None] * d
                uv = np.where(take[..., None], np.stack([p[..., a], p[..., b]], axis=-1), uv)

    for i, pl in enumerate(scene.planes):
        n = pl.normal
        p0 = np.asarray(pl.point, dtype=np.float64)
        den = d @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(np.abs(den) > tiny, ((p0 - o) @ n) / den, np.inf)
        p = o + np.where(np.isfinite(t), t, 0.0)[..., None] * d
        a = (p - p0) @ _unit(pl.axis_u)
        b = (p - p0) @ _unit(pl.axis_v)
        inside = (np.abs(a) <= pl.half_u) & (np.abs(b) <= pl.half_v)
        take = (t > 0) & (t < best) & inside
        best = np.where(take, t, best)
        prim = np.where(take, 100 + i, prim)
        side = np.where(den > 0, -1.0, 1.0)
        normal = np.where(take[..., None], side[..., None] * n, normal)
        uv = np.where(take[..., None], np.stack([a, b], axis=-1), uv)

    for i, sp in enumerate(scene.spheres):
        c = np.asarray(sp.center, dtype=np.float64)
        oc = o - c
        B = d @ oc
        disc = B * B - (oc @ oc - sp.radius**2)
        sq = np.sqrt(np.maximum(disc, 0.0))
        t0, t1 = -B - sq, -B + sq
        t = np.where(t0 > 0, t0, t1)
        take = (disc >= 0) & (t > 0) & (t < best)
        best = np.where(take, t, best)
        prim = np.where(take, 200 + i, prim)
        p = o + np.where(take, t, 0.0)[..., None] * d
        n = (p - c) / sp.radius
        n = np.where(((p - o) * n).sum(-1, keepdims=True) > 0, -n, n)
        normal = np.where(take[..., None], n, normal)
        rel = (p - c) / sp.radius
        lon = np.arctan2(rel[..., 0], rel[..., 2]) * sp.radius
        lat = np.arcsin(np.clip(-rel[..., 1], -1, 1)) * sp.radius
        uv = np.where(take[..., None], np.stack([lon, lat], axis=-1), uv)

    albedo = np.zeros(shape + (3,))
    for pid in np.unique(prim):
        if pid < 0:
            continue
        sel = prim == pid
        if pid < 100:
            tex = scene.room.face_texture(int(pid))
        elif pid < 200:
            tex = scene.planes[pid - 100].texture
        else:
            tex = scene.spheres[pid - 200].texture
        albedo[sel] = tex.sample(uv[sel][:, 0], uv[sel][:, 1])
    if scene.light_dir is not None:
        ndl = np.clip(normal @ _unit(scene.light_dir), 0.0, None)
        shade = scene.ambient + (1.0 - scene.ambient) * ndl
        rgb = albedo * shade[..., None]
    else:
        rgb = albedo
    miss = prim < 0
    depth = np.where(miss, np.nan, best)
    rgb[miss] = 0.0
    return Hits(depth, np.clip(rgb, 0.0, 1.0), normal, prim)


def render_gt(scene: SyntheticScene, cam: ErpCamera) -> Hits:
    """Ground-truth image and radial depth for an ERP camera."""
    return trace_rays(scene, cam.center, cam.rays)


def check_cameras(scene: SyntheticScene, cams: Sequence[ErpCamera]) -> None:
    if scene.room is None:
        return
    lo, hi = scene.room.lo, scene.room.hi
    for cam in cams:
        if np.any(cam.center <= lo) or np.any(cam.center >= hi):
            raise ConfigError(f"camera {cam.name or ''} at {cam.center.tolist()} is outside the room")
    for cam in cams:
        for sp in scene.spheres:
            if np.linalg.norm(cam.center - np.asarray(sp.center)) <= sp.radius:
                raise ConfigError(f"camera {cam.name or ''} is inside a sphere")


@dataclass
class Dataset:
    scene: SyntheticScene
    cams: list
    images: list
    depths: list
    points: np.ndarray
    colors: np.ndarray
    train_ids: list = field(default_factory=list)
    test_ids: list = field(default_factory=list)

    def subset(self, ids: Sequence[int]) -> tuple[list, list, list]:
        return [self.cams[i] for i in ids], [self.images[i] for i in ids], [self.depths[i] for i in ids]


def synth_generate(scene: SyntheticScene, cams: Optional[Sequence[ErpCamera]] = None) -> Dataset:
    """Trace every view; sample a seed point cloud from training-view surface hits."""
    cams = list(cams) if cams is not None else scene.cameras()
    check_cameras(scene, cams)
    images, depths, hit_pts, hit_rgb = [], [], [], []
    train_ids, test_ids = scene.trajectory.split()
    if len(cams) != scene.trajectory.n_views:
        train_ids, test_ids = list(range(len(cams))), []
    for i, cam in enumerate(cams):
        h = render_gt(scene, cam)
        images.append(h.rgb)
        depths.append(h.depth)
        if i in train_ids:
            ok = np.isfinite(h.depth)
            hit_pts.append((cam.center + h.depth[..., None] * cam.rays)[ok])
            hit_rgb.append(h.rgb[ok])
    pts = np.concatenate(hit_pts) if hit_pts else np.zeros((0, 3))
    rgb = np.concatenate(hit_rgb) if hit_rgb else np.zeros((0, 3))
    rng = np.random.default_rng(scene.seed)
    if len(pts) > scene.n_points:
        pick = np.sort(rng.choice(len(pts), scene.n_points, replace=False))
        pts, rgb = pts[pick], rgb[pick]
    return Dataset(scene, cams, images, depths, pts, rgb, train_ids, test_ids)


def save_dataset(ds: Dataset, out_dir) -> Path:
    """Layout: images/<name>.png, depth/<name>.pfm, poses.txt, points.ply, split.txt."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "depth").mkdir(exist_ok=True)
    for cam, img, dep in zip(ds.cams, ds.images, ds.depths):
        write_image(out / "images" / f"{cam.name}.png", img)
        write_pfm(out / "depth" / f"{cam.name}.pfm", dep)
    write_poses(out / "poses.txt", ds.cams)
    write_poses(out / "poses_train.txt", [ds.cams[i] for i in ds.train_ids])
    write_poses(out / "poses_test.txt", [ds.cams[i] for i in ds.test_ids])
    write_point_cloud(out / "points.ply", ds.points, ds.colors)
    return out


# --------------------------------------------------------------------------
# presets and spec files


def textured_room(width: int = 256, height: int = 128, n_views: int = 25, seed: int = 0,
                  with_sphere: bool = False) -> SyntheticScene:
    """The 4 x 3 x 5 room used for the desk-scale fit: noise walls, checker floor.

    The room is convex unless ``with_sphere``, so every surface point seen
    by one camera is seen by all of them.
    """
    walls = Texture("noise", (0.85, 0.75, 0.6), (0.45, 0.5, 0.7), 0.6, seed)
    floor = Texture("checker", (0.8, 0.8, 0.75), (0.35, 0.3, 0.3), 0.75)
    ceiling = Texture("uniform", (0.9, 0.9, 0.88))
    far = Texture("noise", (0.7, 0.4, 0.35), (0.95, 0.85, 0.55), 0.5, seed + 1)
    room = Room((4.0, 3.0, 5.0), (0.0, 0.0, 0.0), (walls, walls, ceiling, floor, far, walls))
    ball = Sphere((1.1, 0.8, 1.4), 0.45, Texture("noise", (0.2, 0.5, 0.3), (0.6, 0.8, 0.4), 0.25, seed + 2))
    return SyntheticScene(room=room, spheres=(ball,) if with_sphere else (), width=width, height=height,
                          trajectory=Trajectory(n_views=n_views), seed=seed)


def textured_plane(width: int = 128, height: int = 64, n_views: int = 10, seed: int = 0) -> SyntheticScene:
    """A checker plane facing the trajectory inside a plain gray room."""
    plane = Plane((0.0, 0.0, 1.6), (1.0, 0.0, 0.0), (0.0, 1.0, 0.0), 1.5, 1.0,
                  Texture("checker", (0.9, 0.85, 0.7), (0.25, 0.3, 0.45), 0.3))
    room = Room((4.0, 3.0, 5.0), (0.0, 0.0, 0.0), (Texture("noise", (0.6, 0.6, 0.6), (0.4, 0.4, 0.45), 0.8, seed),))
    traj = Trajectory(n_views=n_views, radius=(0.5, 0.4), center=(0.0, 0.0, -0.6), height_amp=0.1)
    return SyntheticScene(room=room, planes=(plane,), width=width, height=height, trajectory=traj, seed=seed)


PRESETS = {"room": textured_room, "plane": textured_plane}


def _texture(d: dict) -> Texture:
    return Texture(
        d.get("kind", "uniform"), tuple(d.get("color_a", (0.7, 0.7, 0.7))), tuple(d.get("color_b", (0.3, 0.3, 0.3))),
        float(d.get("scale", 0.5)), int(d.get("seed", 0)),
    )


def scene_from_dict(cfg: dict) -> SyntheticScene:
    """Build a scene from a parsed spec-file mapping; ``preset`` supplies defaults."""
    cfg = dict(cfg)
    cam = cfg.get("camera", {})
    width, height = int(cam.get("width", 256)), int(cam.get("height", 128))
    seed = int(cfg.get("seed", 0))
    if "preset" in cfg:
        name = cfg["preset"]
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        traj_cfg = cfg.get("trajectory", {})
        base = PRESETS[name](width, height, int(traj_cfg.get("n_views", 25 if name == "room" else 10)), seed)
        if "n_points" in cfg:
            base = replace(base, n_points=int(cfg["n_points"]))
        return base
    room = None
    if "room" in cfg:
        r = cfg["room"]
        texs = r.get("textures") or [r.get("texture", {})]
        room = Room(tuple(r.get("size", (4.0, 3.0, 5.0))), tuple(r.get("center", (0.0, 0.0, 0.0))),
                    tuple(_texture(t) for t in texs))
    planes = tuple(
        Plane(tuple(p["point"]), tuple(p["axis_u"]), tuple(p["axis_v"]), float(p.get("half_u", math.inf)),
              float(p.get("half_v", math.inf)), _texture(p.get("texture", {})))
        for p in cfg.get("planes", [])
    )
    spheres = tuple(
        Sphere(tuple(s["center"]), float(s["radius"]), _texture(s.get("texture", {}))) for s in cfg.get("spheres", [])
    )
    t = cfg.get("trajectory", {})
    traj = Trajectory(
        int(t.get("n_views", 25)), tuple(t.get("radius", (0.8, 1.0))), tuple(t.get("center", (0.0, 0.0, 0.0))),
        float(t.get("height_amp", 0.15)), float(t.get("yaw_step_deg", 0.0)), int(t.get("holdout_every", 5)),
    )
    light = cfg.get("light_dir", (0.3, -1.0, 0.4))
    return SyntheticScene(
        room, planes, spheres, tuple(light) if light else None, float(cfg.get("ambient", 0.55)),
        width, height, traj, int(cfg.get("n_points", 20000)), seed,
    )


def random_rotation(rng: np.random.Generator, theta_max: float) -> np.ndarray:
    """Axis uniform on the sphere, angle uniform in [0, theta_max] (radians)."""
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return axis_angle_matrix(axis, rng.uniform(0.0, theta_max))
