"""Training objective: photometric term plus panorama-aware geometric regularizers.

All terms are written in float64 torch so gradients with respect to the
rendered maps come from autograd. Sums are normalized to latitude-weighted
means, which keeps the loss weights independent of resolution. Horizontal
differences wrap around the panorama seam.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F

from .camera import ErpCamera, latitude_weight, row_latitudes
from .errors import DomainError

DTYPE = torch.float64


@dataclass(frozen=True)
class LossWeights:
    lambda_dn: float = 0.03
    lambda_j1: float = 0.45
    lambda_j2: float = 0.32
    tau: float = 0.5
    tau1: float = 0.05
    tau2: float = 0.02
    beta: float = 10.0
    ssim_mix: float = 0.2
    lat_eps: float = 0.1
    log_eps: float = 1e-6

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise DomainError(f"{f.name} must be nonnegative")
        if not 0.0 < self.tau < 1.0:
            raise DomainError("opacity threshold tau must lie in (0, 1)")


@dataclass(frozen=True)
class ScheduleState:
    """Multipliers applied on top of the loss weights at one iteration."""

    jump: float = 1.0
    dn: float = 1.0


@dataclass
class LossBreakdown:
    total: float
    rgb: float
    dn: float
    jump1: float
    jump2: float
    valid_pixel_count: int

    CSV_HEADER = "iteration,total,rgb,dn,jump1,jump2,valid_px"

    def csv_row(self, iteration: int) -> str:
        return (f"{iteration},{self.total:.8g},{self.rgb:.8g},{self.dn:.8g},"
                f"{self.jump1:.8g},{self.jump2:.8g},{self.valid_pixel_count}")


def _t(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x if x.dtype in (DTYPE, torch.bool) else x.to(DTYPE)
    x = np.asarray(x)
    if x.dtype == bool:
        return torch.from_numpy(np.array(x, copy=True))
    if not x.flags.writeable:
        x = np.array(x, dtype=np.float64)
    return torch.as_tensor(x, dtype=DTYPE)


def _safe_ratio(num: torch.Tensor, den: torch.Tensor) -> torch.Tensor:
    return num / den if float(den) > 0 else num * 0.0


def lat_weight_map(height: int, eps: float = 0.1) -> torch.Tensor:
    """(H, 1) per-row latitude weights."""
    return torch.as_tensor(latitude_weight(row_latitudes(height), eps), dtype=DTYPE)[:, None]


def _seam_scale(height: int, eps: float) -> torch.Tensor:
    """(H, 1) horizontal ERP correction ``max(cos(lat), eps)``."""
    return torch.as_tensor(np.maximum(np.cos(row_latitudes(height)), eps), dtype=DTYPE)[:, None]


# --------------------------------------------------------------------------
# masks and photometric term


def valid_mask(alpha, tau: float = 0.5, band: Optional[np.ndarray] = None) -> np.ndarray:
    """Pixels with accumulated opacity above ``tau``, intersected with ``band``."""
    m = np.asarray(alpha) > tau
    if band is not None:
        m &= np.asarray(band, dtype=bool)
    return m


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> torch.Tensor:
    """Normalized 1D Gaussian taps; the 2D window is their outer product."""
    x = torch.arange(size, dtype=DTYPE) - (size - 1) / 2
    g = torch.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


def ssim_map(a, b, pad: bool = True, size: int = 11, sigma: float = 1.5) -> torch.Tensor:
    """Channel-averaged SSIM map of (H, W, C) images with a Gaussian window.

    ``pad=True`` keeps the full size (circular in x, reflected in y);
    ``pad=False`` returns only the fully supported interior.
    """
    a, b = _t(a), _t(b)
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    c = a.shape[-1]
    x = a.permute(2, 0, 1)[None]
    y = b.permute(2, 0, 1)[None]
    r = size // 2
    if pad:
        x = F.pad(F.pad(x, (r, r, 0, 0), mode="circular"), (0, 0, r, r), mode="reflect")
        y = F.pad(F.pad(y, (r, r, 0, 0), mode="circular"), (0, 0, r, r), mode="reflect")
    g = _gaussian_window(size, sigma)
    # all five moments in one separable pass
    z = torch.cat([x, y, x * x, y * y, x * y], dim=1)
    k = z.shape[1]
    z = F.conv2d(z, g.view(1, 1, 1, size).expand(k, 1, 1, size).contiguous(), groups=k)
    z = F.conv2d(z, g.view(1, 1, size, 1).expand(k, 1, size, 1).contiguous(), groups=k)
    mu_x, mu_y, exx, eyy, exy = torch.split(z, c, dim=1)
    sxx = exx - mu_x**2
    syy = eyy - mu_y**2
    sxy = exy - mu_x * mu_y
    c1, c2 = 0.01**2, 0.03**2
    s = ((2 * mu_x * mu_y + c1) * (2 * sxy + c2)) / ((mu_x**2 + mu_y**2 + c1) * (sxx + syy + c2))
    return s[0].mean(0)


def rgb_loss(render_rgb, gt_rgb, mask, ssim_mix: float = 0.2) -> torch.Tensor:
    """``(1 - mix) * L1 + mix * (1 - SSIM)``, both averaged over ``mask``."""
    x, y = _t(render_rgb), _t(gt_rgb)
    if x.shape != y.shape:
        raise DomainError(f"shape mismatch {tuple(x.shape)} vs {tuple(y.shape)}")
    m = _t(np.asarray(mask, dtype=bool)).to(DTYPE)
    n = m.sum()
    if float(n) == 0:
        return x.sum() * 0.0
    l1 = ((x - y).abs().mean(-1) * m).sum() / n
    if ssim_mix == 0:
        return l1
    dssim = ((1.0 - ssim_map(x, y)) * m).sum() / n
    return (1.0 - ssim_mix) * l1 + ssim_mix * dssim


# --------------------------------------------------------------------------
# depth-normal consistency


def backproject(depth, cam: ErpCamera) -> torch.Tensor:
    """World points ``center + depth * ray`` for every pixel, (H, W, 3)."""
    D = _t(depth)
    D = torch.where(torch.isfinite(D), D, torch.zeros_like(D))
    return _t(cam.center) + D[..., None] * _t(cam.rays)


def depth_to_normal(depth, cam: ErpCamera, mask=None):
    """Normals of the back-projected depth surface, oriented toward the camera.

    Returns ``(normals, valid)``; a pixel is valid when it and its right and
    lower neighbors are all in ``mask``.
    """
    p = backproject(depth, cam)
    H = p.shape[0]
    m = np.ones(p.shape[:2], dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    dpx = torch.roll(p, -1, dims=1) - p
    dpy = torch.cat([p[1:] - p[:-1], torch.zeros_like(p[:1])], dim=0)
    n = torch.linalg.cross(dpy, dpx, dim=-1)
    valid = m & np.roll(m, -1, axis=1)
    valid[:-1] &= m[1:]
    valid[H - 1] = False
    norm = torch.sqrt((n * n).sum(-1, keepdim=True) + 1e-30)
    return n / norm, valid


def dn_loss(N, Nd, valid, lat_w) -> torch.Tensor:
    """Latitude-weighted mean of ``1 - |N . Nd|`` over ``valid`` pixels."""
    N, Nd = _t(N), _t(Nd)
    w = _t(lat_w).expand(N.shape[:2]) * _t(np.asarray(valid, dtype=bool)).to(DTYPE)
    cos = (N * Nd).sum(-1).abs()
    return _safe_ratio((w * (1.0 - cos)).sum(), w.sum())


# --------------------------------------------------------------------------
# depth-jump regularizers


def log_depth(depth, eps: float = 1e-6) -> torch.Tensor:
    D = _t(depth)
    D = torch.where(torch.isfinite(D), D, torch.ones_like(D))
    return torch.log(torch.clamp(D, min=eps))


def edge_weights(image, beta: float):
    """Edge-aware weights ``exp(-beta |dI|)`` along x (wrapping) and y, each (H, W)."""
    I = _t(image)
    if I.ndim == 2:
        I = I[..., None]
    gx = (torch.roll(I, -1, dims=1) - I).abs().mean(-1)
    gy = torch.cat([(I[1:] - I[:-1]).abs().mean(-1), torch.zeros_like(I[:1, :, 0])], dim=0)
    return torch.exp(-beta * gx), torch.exp(-beta * gy)


def jump1_map(depth, image, mask, tau1: float = 0.05, beta: float = 10.0, eps: float = 1e-6):
    """Per-pixel ``w_x E_x + w_y E_y`` (unweighted by latitude), zero off-stencil."""
    z = log_depth(depth, eps)
    H = z.shape[0]
    m = np.asarray(mask, dtype=bool)
    s = _seam_scale(H, eps)
    dzx = (torch.roll(z, -1, dims=1) - z) / s
    dzy = torch.cat([z[1:] - z[:-1], torch.zeros_like(z[:1])], dim=0)
    mx = m & np.roll(m, -1, axis=1)
    my = np.zeros_like(m)
    my[:-1] = m[:-1] & m[1:]
    ex = torch.relu(dzx.abs() - tau1) * _t(mx).to(DTYPE)
    ey = torch.relu(dzy.abs() - tau1) * _t(my).to(DTYPE)
    wx, wy = edge_weights(image, beta)
    return wx * ex + wy * ey


def jump2_map(depth, image, mask, tau2: float = 0.02, beta: float = 10.0, eps: float = 1e-6):
    """Per-pixel hinge on second log-depth differences, same weighting as :func:`jump1_map`."""
    z = log_depth(depth, eps)
    H = z.shape[0]
    m = np.asarray(mask, dtype=bool)
    s = _seam_scale(H, eps)
    lx = (torch.roll(z, -1, dims=1) - 2.0 * z + torch.roll(z, 1, dims=1)) / s
    zero = torch.zeros_like(z[:1])
    ly = torch.cat([zero, z[2:] - 2.0 * z[1:-1] + z[:-2], zero], dim=0) if H >= 3 else torch.zeros_like(z)
    mx = m & np.roll(m, -1, axis=1) & np.roll(m, 1, axis=1)
    my = np.zeros_like(m)
    if H >= 3:
        my[1:-1] = m[:-2] & m[1:-1] & m[2:]
    ex = torch.relu(lx.abs() - tau2) * _t(mx).to(DTYPE)
    ey = torch.relu(ly.abs() - tau2) * _t(my).to(DTYPE)
    wx, wy = edge_weights(image, beta)
    return wx * ex + wy * ey


def _lat_mean(per_pixel: torch.Tensor, mask, lat_w) -> torch.Tensor:
    m = _t(np.asarray(mask, dtype=bool)).to(DTYPE)
    w = _t(lat_w).expand(per_pixel.shape) * m
    return _safe_ratio((w * per_pixel).sum(), w.sum())


def jump1_loss(depth, image, mask, lat_w, tau1=0.05, beta=10.0, eps=1e-6) -> torch.Tensor:
    return _lat_mean(jump1_map(depth, image, mask, tau1, beta, eps), mask, lat_w)


def jump2_loss(depth, image, mask, lat_w, tau2=0.02, beta=10.0, eps=1e-6) -> torch.Tensor:
    return _lat_mean(jump2_map(depth, image, mask, tau2, beta, eps), mask, lat_w)


# --------------------------------------------------------------------------
# assembly


@dataclass
class LossTerms:
    """Differentiable terms plus the scalar breakdown."""

    total: torch.Tensor
    breakdown: LossBreakdown


def loss_terms(rgb, depth, normal, alpha, gt_image, cam: ErpCamera,
               weights: LossWeights = LossWeights(), sched: ScheduleState = ScheduleState()) -> LossTerms:
    """Full objective on (possibly grad-requiring) rendered maps."""
    H = cam.height
    band = cam.band_mask
    omega = valid_mask(alpha.detach().numpy() if isinstance(alpha, torch.Tensor) else alpha, weights.tau, band)
    lat_w = lat_weight_map(H, weights.lat_eps)
    gt = _t(gt_image)

    l_rgb = rgb_loss(rgb, gt, band, weights.ssim_mix)
    zero = l_rgb * 0.0
    w_dn = weights.lambda_dn * sched.dn
    w_j1 = weights.lambda_j1 * sched.jump
    w_j2 = weights.lambda_j2 * sched.jump
    l_dn = zero
    if w_dn > 0:
        nd, v = depth_to_normal(depth, cam, omega)
        l_dn = dn_loss(normal, nd, v, lat_w)
    l_j1 = jump1_loss(depth, gt, omega, lat_w, weights.tau1, weights.beta, weights.log_eps) if w_j1 > 0 else zero
    l_j2 = jump2_loss(depth, gt, omega, lat_w, weights.tau2, weights.beta, weights.log_eps) if w_j2 > 0 else zero
    total = l_rgb + w_dn * l_dn + w_j1 * l_j1 + w_j2 * l_j2
    vals = [float(v.detach()) for v in (total, l_rgb, l_dn, l_j1, l_j2)]
    bd = LossBreakdown(*vals, int(omega.sum()))
    return LossTerms(total, bd)


def total_loss(render, gt_image, cam: ErpCamera, weights: LossWeights = LossWeights(),
               sched: ScheduleState = ScheduleState()) -> LossBreakdown:
    return loss_terms(render.rgb, render.depth, render.normal, render.alpha, gt_image, cam, weights, sched).breakdown


def loss_and_grads(render, gt_image, cam: ErpCamera, weights: LossWeights = LossWeights(),
                   sched: ScheduleState = ScheduleState()):
    """Breakdown plus d(total)/d(map) for rgb, depth, normal and alpha (numpy)."""
    rgb = _t(render.rgb).clone().requires_grad_(True)
    depth = _t(render.depth).clone().requires_grad_(True)
    normal = _t(render.normal).clone().requires_grad_(True)
    alpha = _t(render.alpha)
    terms = loss_terms(rgb, depth, normal, alpha, gt_image, cam, weights, sched)
    if terms.total.requires_grad:
        terms.total.backward()
    grads = {
        "rgb": _grad_np(rgb), "depth": _grad_np(depth), "normal": _grad_np(normal),
        "alpha": np.zeros(np.shape(render.alpha)),
    }
    return terms.breakdown, grads


def _grad_np(x: torch.Tensor) -> np.ndarray:
    if x.grad is None:
        return np.zeros(tuple(x.shape))
    g = x.grad.numpy()
    return np.where(np.isfinite(g), g, 0.0)
