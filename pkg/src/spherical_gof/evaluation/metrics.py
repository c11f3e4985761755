"""Image metrics and multi-view depth consistency (DRE, CIR) for ERP views."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np
import torch

from ..camera import ErpCamera
from ..errors import ConfigError, DomainError
from ..losses import ssim_map

PSNR_MAX = 100.0  # reported for identical images
UNDEFINED = float("nan")


def psnr(a, b, mask=None) -> float:
    """10 log10(1 / MSE) over masked pixels, peak 1.0; identical images give PSNR_MAX."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DomainError(f"shape mismatch {a.shape} vs {b.shape}")
    err = (a - b) ** 2
    if mask is not None:
        m = np.asarray(mask, dtype=bool)
        err = err[m]
    if err.size == 0:
        return UNDEFINED
    mse = float(err.mean())
    if mse == 0.0:
        return PSNR_MAX
    return min(PSNR_MAX, 10.0 * math.log10(1.0 / mse))


def ssim(a, b) -> float:
    """Mean SSIM over the fully supported interior, averaged over channels.

    11x11 Gaussian window, sigma 1.5, C1 = 0.01^2, C2 = 0.03^2, data range 1.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DomainError(f"shape mismatch {a.shape} vs {b.shape}")
    if min(a.shape[:2]) < 11:
        raise DomainError("SSIM needs images of at least 11x11 pixels")
    with torch.no_grad():
        return float(ssim_map(a, b, pad=False).mean())


# --------------------------------------------------------------------------
# reprojection


class Reprojection(NamedTuple):
    u: np.ndarray  # continuous pixel coordinates in view j (pixel centers at k + 0.5)
    v: np.ndarray
    depth: np.ndarray  # distance from cam_j center
    valid: np.ndarray


def _continuous_pixel(dirs_cam: np.ndarray, cam: ErpCamera):
    x, y, z = dirs_cam[..., 0], dirs_cam[..., 1], dirs_cam[..., 2]
    r = np.linalg.norm(dirs_cam, axis=-1)
    rxz = np.hypot(x, z)
    lon = np.where(rxz > 0, np.arctan2(x, z), 0.0)
    lat = np.arcsin(np.clip(-y / np.maximum(r, 1e-300), -1.0, 1.0))
    u = cam.width / (2 * math.pi) * lon + cam.width / 2
    v = -cam.height / math.pi * lat + cam.height / 2
    return u, v


def reproject(depth_i: np.ndarray, cam_i: ErpCamera, cam_j: ErpCamera, pix=None) -> Reprojection:
    """Back-project pixel centers of view i at ``depth_i`` and project into view j.

    ``pix`` optionally selects pixels as (rows, cols); default is all.
    Returned u, v are continuous coordinates where pixel (r, c) has its
    center at (c + 0.5, r + 0.5).
    """
    depth_i = np.asarray(depth_i, dtype=np.float64)
    rays = cam_i.rays
    if pix is not None:
        rows, cols = pix
        d = depth_i[rows, cols]
        rays = rays[rows, cols]
    else:
        d = depth_i
    p = cam_i.center + d[..., None] * rays
    rel = p - cam_j.center
    dist = np.linalg.norm(rel, axis=-1)
    u, v = _continuous_pixel(rel @ cam_j.rotation.T, cam_j)
    valid = np.isfinite(d) & (d > 0) & (dist > 1e-12)
    return Reprojection(u, v, dist, valid)


def bilinear_erp(img: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Sample an (H, W) map at continuous coordinates, wrapping in u.

    Rows outside the outermost pixel centers, and any stencil touching NaN,
    give NaN.
    """
    H, W = img.shape
    x = np.asarray(u) - 0.5
    y = np.asarray(v) - 0.5
    x0 = np.floor(x)
    y0 = np.floor(y)
    fx = x - x0
    fy = y - y0
    inside = (y >= 0) & (y <= H - 1)
    i0 = np.clip(y0, 0, H - 1).astype(np.int64)
    i1 = np.clip(y0 + 1, 0, H - 1).astype(np.int64)
    j0 = (x0.astype(np.int64)) % W
    j1 = (j0 + 1) % W
    out = (img[i0, j0] * (1 - fx) * (1 - fy) + img[i0, j1] * fx * (1 - fy)
           + img[i1, j0] * (1 - fx) * fy + img[i1, j1] * fx * fy)
    return np.where(inside, out, np.nan)


# --------------------------------------------------------------------------
# pairs


@dataclass(frozen=True)
class ViewPairSpec:
    pairs: tuple
    eps: float = 1e-6
    tau_cyc: float = 2.0
    clamp: float = 1.0

    def __post_init__(self):
        for i, j in self.pairs:
            if i == j:
                raise ConfigError(f"pair ({i}, {j}) pairs a view with itself")

    def check(self, n_views: int) -> None:
        for i, j in self.pairs:
            if not (0 <= i < n_views and 0 <= j < n_views):
                raise ConfigError(f"pair ({i}, {j}) out of range for {n_views} views")


def adjacent_pairs(n: int, k: int = 2) -> tuple:
    """All ordered (i, j) with 1 <= |i - j| <= k."""
    return tuple((i, j) for i in range(n) for j in range(n) if 1 <= abs(i - j) <= k)


def parse_pairs(text: str, n: int) -> tuple:
    """``adjacent:K`` or an explicit list such as ``0-1,1-0,2-4``."""
    text = text.strip()
    m = re.fullmatch(r"adjacent:(\d+)", text)
    if m:
        return adjacent_pairs(n, int(m.group(1)))
    pairs = []
    for tok in text.split(","):
        a, sep, b = tok.strip().partition("-")
        if not sep:
            raise ConfigError(f"bad pair {tok!r}; use i-j")
        pairs.append((int(a), int(b)))
    return tuple(pairs)


# --------------------------------------------------------------------------
# DRE / CIR


@dataclass
class ConsistencyResult:
    dre: float
    cir: float  # percent
    valid_px: int


def _pair_terms(depth_i, depth_j, cam_i: ErpCamera, cam_j: ErpCamera, spec: ViewPairSpec):
    rows, cols = np.nonzero(np.isfinite(depth_i) & (depth_i > 0))
    rp = reproject(depth_i, cam_i, cam_j, (rows, cols))
    dj = bilinear_erp(depth_j, rp.u, rp.v)
    ok = rp.valid & np.isfinite(dj) & (dj > 0)
    e = np.abs(rp.depth - dj) / (dj + spec.eps)
    e = np.minimum(e, spec.clamp)
    # cycle: back from j at the sampled depth to i
    dirs = _rays_at(cam_j, rp.u, rp.v)
    p = cam_j.center + np.where(ok, dj, 0.0)[:, None] * dirs
    rel = p - cam_i.center
    uu, vv = _continuous_pixel(rel @ cam_i.rotation.T, cam_i)
    du = np.abs(uu - (cols + 0.5))
    du = np.minimum(du, cam_i.width - du)  # the seam is not a discontinuity
    dv = vv - (rows + 0.5)
    inlier = np.hypot(du, dv) < spec.tau_cyc
    ok &= np.linalg.norm(rel, axis=1) > 1e-12
    return e[ok], inlier[ok]


def _rays_at(cam: ErpCamera, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    lon = (np.asarray(u) - cam.width / 2) * 2 * math.pi / cam.width
    lat = -(np.asarray(v) - cam.height / 2) * math.pi / cam.height
    d = np.stack([np.cos(lat) * np.sin(lon), -np.sin(lat), np.cos(lat) * np.cos(lon)], axis=-1)
    return d @ cam.rotation


def consistency(depths: Sequence[np.ndarray], cams: Sequence[ErpCamera], spec: ViewPairSpec) -> ConsistencyResult:
    """DRE and CIR pooled over the valid pixels of every ordered pair."""
    spec.check(len(cams))
    errs, inl = [], []
    for i, j in spec.pairs:
        e, c = _pair_terms(np.asarray(depths[i], dtype=np.float64), np.asarray(depths[j], dtype=np.float64),
                           cams[i], cams[j], spec)
        errs.append(e)
        inl.append(c)
    e = np.concatenate(errs) if errs else np.zeros(0)
    c = np.concatenate(inl) if inl else np.zeros(0, dtype=bool)
    if e.size == 0:
        return ConsistencyResult(UNDEFINED, UNDEFINED, 0)
    return ConsistencyResult(float(e.mean()), 100.0 * float(c.mean()), int(e.size))


def dre(depths, cams, pairs, eps: float = 1e-6, clamp: float = 1.0) -> float:
    return consistency(depths, cams, ViewPairSpec(tuple(pairs), eps, clamp=clamp)).dre


def cir(depths, cams, pairs, tau_cyc: float = 2.0) -> float:
    return consistency(depths, cams, ViewPairSpec(tuple(pairs), tau_cyc=tau_cyc)).cir


# --------------------------------------------------------------------------
# tables


METRICS_HEADER = "scene,theta,PSNR,SSIM,LPIPS,DRE,CIR,valid_px"


@dataclass
class MetricRow:
    scene: str
    theta: float
    psnr: float
    ssim: float
    dre: float
    cir: float
    valid_px: int

    def csv(self) -> str:
        # LPIPS is out of scope; the column is kept empty
        return (f"{self.scene},{self.theta:g},{self.psnr:.4f},{self.ssim:.5f},,"
                f"{self.dre:.6g},{self.cir:.3f},{self.valid_px}")


def evaluate_views(pred_rgb: Sequence[np.ndarray], gt_rgb: Sequence[np.ndarray], pred_depth: Sequence[np.ndarray],
                   cams: Sequence[ErpCamera], pairs: Optional[tuple] = None, scene: str = "scene",
                   theta: float = 0.0, spec: Optional[ViewPairSpec] = None) -> MetricRow:
    """Mean PSNR/SSIM over views plus pooled DRE/CIR of the predicted depths."""
    if len(pred_rgb) != len(gt_rgb) or len(pred_rgb) != len(cams):
        raise ConfigError("predictions, ground truth and cameras must have the same length")
    ps = [psnr(p, g, cam.band_mask if cam.lat_band is not None else None)
          for p, g, cam in zip(pred_rgb, gt_rgb, cams)]
    ss = [ssim(p, g) for p, g in zip(pred_rgb, gt_rgb)]
    if spec is None:
        spec = ViewPairSpec(pairs if pairs is not None else adjacent_pairs(len(cams), 2))
    res = consistency(pred_depth, cams, spec) if spec.pairs else ConsistencyResult(UNDEFINED, UNDEFINED, 0)
    return MetricRow(scene, theta, float(np.mean(ps)), float(np.mean(ss)), res.dre, res.cir, res.valid_px)
