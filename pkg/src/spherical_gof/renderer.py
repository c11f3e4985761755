"""Tile-based ray-space rendering of a GaussianScene through an ERP camera."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np

from . import _kernels
from .camera import ErpCamera
from .gaussians import (
    ALPHA_MIN,
    SIGMA_CUTOFF,
    T_NEAR,
    GaussianScene,
    peak_response,
    quats_to_rotmats,
    scene_colors,
    to_local_ray,
)


@dataclass(frozen=True)
class RenderSettings:
    tile_size: int = 16
    sigma_cutoff: float = SIGMA_CUTOFF
    taper_sigma: float = 2.5
    t_near: float = T_NEAR
    alpha_min: float = 0.0
    min_opacity: float = ALPHA_MIN
    alpha_max: float = 0.999
    t_min: float = 1e-4
    bg_alpha: float = 0.01
    sh_degree: Optional[int] = None
    culling: bool = True
    sort_mode: str = "distance"  # or "per_ray" (exact per-ray ordering, slow)

    def __post_init__(self):
        if self.sort_mode not in ("distance", "per_ray"):
            raise ValueError(f"unknown sort mode {self.sort_mode!r}")
        if not 0 < self.taper_sigma < self.sigma_cutoff:
            raise ValueError("taper_sigma must lie in (0, sigma_cutoff)")
        if self.tile_size < 1:
            raise ValueError("tile size must be positive")


DEFAULT_SETTINGS = RenderSettings()


@dataclass
class TileIndex:
    """Per-tile candidate lists in CSR form, each sorted by ``keys[id]``."""

    tile_size: int
    tiles_x: int
    tiles_y: int
    offsets: np.ndarray
    ids: np.ndarray
    keys: np.ndarray

    def candidates(self, tile: int) -> np.ndarray:
        return self.ids[self.offsets[tile] : self.offsets[tile + 1]]

    def tile_of(self, u: int, v: int) -> int:
        return (v // self.tile_size) * self.tiles_x + u // self.tile_size

    def pixel_candidates(self, u: int, v: int) -> np.ndarray:
        return self.candidates(self.tile_of(u, v))

    def __len__(self) -> int:
        return self.tiles_x * self.tiles_y


@dataclass
class RenderOutput:
    rgb: np.ndarray
    depth: np.ndarray
    normal: np.ndarray
    alpha: np.ndarray
    count: np.ndarray
    expected_depth: np.ndarray


@dataclass
class ViewData:
    """Per-view quantities shared by the forward and backward kernels."""

    cam: ErpCamera
    R: np.ndarray
    s_tilde: np.ndarray
    M: np.ndarray
    o_minus_mu: np.ndarray
    oloc: np.ndarray
    C: np.ndarray
    opacity: np.ndarray
    color: np.ndarray
    color_cache: tuple
    axis_index: np.ndarray
    axis_sign: np.ndarray
    naxis: np.ndarray
    tiles: TileIndex


def support_taper(q: float, settings: "RenderSettings") -> float:
    """Factor on the Gaussian response at squared Mahalanobis distance ``q``.

    1 inside ``taper_sigma``, smoothstep down to 0 at ``sigma_cutoff``, so the
    rendered maps stay C1 in the parameters when a Gaussian enters a ray's support.
    """
    q0, q1 = settings.taper_sigma**2, settings.sigma_cutoff**2
    if q <= q0:
        return 1.0
    if q >= q1:
        return 0.0
    x = (q - q0) / (q1 - q0)
    return 1.0 - x * x * (3.0 - 2.0 * x)


def support_radius(scene: GaussianScene, sigma_cutoff: float = SIGMA_CUTOFF) -> np.ndarray:
    """Bounding-sphere radius ``sigma_cutoff * max(s_tilde)`` per Gaussian."""
    return sigma_cutoff * scene.inflated_scales.max(axis=1)


def build_tile_index(
    scene: GaussianScene, cam: ErpCamera, tile_size: int = 16, settings: RenderSettings = DEFAULT_SETTINGS
) -> TileIndex:
    """Bin Gaussians into screen tiles using conservative spherical-cap bounds."""
    cam_means = cam.to_camera(scene.means)
    keys = np.linalg.norm(cam_means, axis=1)
    active = scene.effective_opacities >= settings.min_opacity
    radius = support_radius(scene, settings.sigma_cutoff)
    ntx = -(-cam.width // tile_size)
    nty = -(-cam.height // tile_size)
    rects = _kernels.gaussian_tile_rects(
        np.ascontiguousarray(cam_means), radius, active, cam.width, cam.height, tile_size
    )
    order = np.argsort(keys, kind="stable")
    offsets, ids = _kernels.fill_tiles(rects, order, ntx, nty)
    return TileIndex(tile_size, ntx, nty, offsets, ids, keys)


def full_tile_index(scene: GaussianScene, cam: ErpCamera, tile_size: int = 16) -> TileIndex:
    """Every Gaussian in every tile, sorted by distance; the no-culling reference."""
    keys = np.linalg.norm(scene.means - cam.center, axis=1)
    order = np.argsort(keys, kind="stable")
    ntx = -(-cam.width // tile_size)
    nty = -(-cam.height // tile_size)
    n_tiles = ntx * nty
    offsets = np.arange(n_tiles + 1, dtype=np.int64) * len(scene)
    ids = np.tile(order.astype(np.int64), n_tiles)
    return TileIndex(tile_size, ntx, nty, offsets, ids, keys)


def prepare_view(scene: GaussianScene, cam: ErpCamera, settings: RenderSettings = DEFAULT_SETTINGS) -> ViewData:
    R = quats_to_rotmats(scene.quats)
    s_tilde = scene.inflated_scales
    M = R / s_tilde[:, :, None]
    o_minus_mu = cam.center[None, :] - scene.means
    oloc = np.einsum("nij,nj->ni", M, o_minus_mu)
    C = np.einsum("ni,ni->n", oloc, oloc)
    color, cache = scene_colors(scene, cam.center, settings.sh_degree)
    axis_index = np.argmin(s_tilde, axis=1)
    # thinnest axis, flipped to face the camera
    axis_sign = np.where(np.einsum("ni,ni->n", R[np.arange(len(scene)), axis_index], -o_minus_mu) > 0, -1.0, 1.0)
    naxis = R[np.arange(len(scene)), axis_index] * axis_sign[:, None]
    if settings.culling:
        tiles = build_tile_index(scene, cam, settings.tile_size, settings)
    else:
        tiles = full_tile_index(scene, cam, settings.tile_size)
    return ViewData(
        cam, R, s_tilde, np.ascontiguousarray(M), o_minus_mu, np.ascontiguousarray(oloc), C,
        scene.effective_opacities, np.ascontiguousarray(color), cache, axis_index, axis_sign,
        np.ascontiguousarray(naxis), tiles,
    )


def _kernel_args(view: ViewData, settings: RenderSettings):
    t = view.tiles
    return (
        np.ascontiguousarray(view.cam.rays), view.M, view.oloc, view.C, view.opacity, view.color, view.naxis,
        t.offsets, t.ids, t.tile_size, t.tiles_x,
        settings.t_near, settings.sigma_cutoff**2, settings.taper_sigma**2, settings.alpha_min, settings.alpha_max, settings.t_min,
    )


def render_view(view: ViewData, settings: RenderSettings = DEFAULT_SETTINGS) -> RenderOutput:
    rgb, alpha, depth, exp_depth, normal, count = _kernels.forward_kernel(
        *_kernel_args(view, settings), settings.sort_mode == "per_ray"
    )
    return RenderOutput(rgb, depth, normal, alpha, count, exp_depth)


def render(
    scene: GaussianScene, cam: ErpCamera, settings: RenderSettings = DEFAULT_SETTINGS, **overrides
) -> RenderOutput:
    """Render RGB, median depth, normal and opacity maps for one camera.

    Keyword overrides are applied to ``settings``, e.g. ``culling=False``.
    """
    if overrides:
        settings = RenderSettings(**{**settings.__dict__, **overrides})
    if len(scene) == 0:
        H, W = cam.height, cam.width
        nan = np.full((H, W), np.nan)
        return RenderOutput(np.zeros((H, W, 3)), nan, np.zeros((H, W, 3)), np.zeros((H, W)),
                            np.zeros((H, W), np.int32), nan.copy())
    return render_view(prepare_view(scene, cam, settings), settings)


# --------------------------------------------------------------------------
# scalar reference path


class RayResult(NamedTuple):
    rgb: np.ndarray
    depth: float
    normal: np.ndarray
    alpha: float
    count: int


def composite_ray(
    origin,
    direction,
    candidates: Sequence[int],
    scene: GaussianScene,
    colors: Optional[np.ndarray] = None,
    settings: RenderSettings = DEFAULT_SETTINGS,
) -> RayResult:
    """Front-to-back compositing of one ray over ordered candidate ids.

    ``colors`` defaults to each Gaussian's SH color viewed from ``origin``.
    Pure-Python twin of the forward kernel; used as a reference.
    """
    origin = np.asarray(origin, dtype=np.float64)
    d = np.asarray(direction, dtype=np.float64)
    if colors is None:
        colors, _ = scene_colors(scene, origin, settings.sh_degree)
    cutoff2 = settings.sigma_cutoff**2
    T = 1.0
    rgb = np.zeros(3)
    nrm = np.zeros(3)
    med = last_t = math.nan
    crossed = False
    count = 0
    for gid in candidates:
        g = scene[int(gid)]
        lr = to_local_ray(g, origin, d)
        pk = peak_response(lr, settings.t_near)
        if pk.behind or pk.g_max <= 0.0:
            continue
        q = -2.0 * math.log(pk.g_max)
        if q > cutoff2:
            continue
        a = g.effective_opacity * pk.g_max * support_taper(q, settings)
        if a <= settings.alpha_min:
            continue
        a = min(a, settings.alpha_max)
        w = a * T
        rgb += w * colors[gid]
        n = g.rotation[int(np.argmin(g.inflated_scales))]
        nrm += w * (-n if n @ (g.mean - origin) > 0 else n)
        T *= 1.0 - a
        count += 1
        last_t = pk.t_star
        if not crossed and T < 0.5:
            med, crossed = pk.t_star, True
        if T < settings.t_min:
            break
    alpha = 1.0 - T
    depth = (med if crossed else last_t) if alpha >= settings.bg_alpha else math.nan
    nn = np.linalg.norm(nrm)
    return RayResult(rgb, depth, nrm / nn if nn > 0 else nrm, alpha, count)
