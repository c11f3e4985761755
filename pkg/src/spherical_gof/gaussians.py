"""Anisotropic Gaussian primitives and their ray-space evaluation.

A Gaussian maps world points into its scaled local frame with
``x_loc = S^-1 R (x - mean)``, where ``R`` is the rotation matrix of the
stored quaternion and ``S = diag(scales)``. Along a ray ``o + t d`` the
squared local radius is the quadratic ``A t^2 + 2 B t + C``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .camera import ErpCamera, quat_to_rotmat
from .errors import DomainError

T_NEAR = 0.01
SIGMA_CUTOFF = 3.0
ALPHA_MIN = 1.0 / 255.0

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005, -1.0925484305920792, 0.5462742152960396)
SH_C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=np.float64)))


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


def sh_coeff_count(degree: int) -> int:
    return (degree + 1) ** 2


def rgb_to_sh0(rgb):
    return (np.asarray(rgb, dtype=np.float64) - 0.5) / SH_C0


@dataclass
class Gaussian3D:
    """One primitive. ``sh`` has shape (K, 3); ``sh[0]`` is the DC term."""

    mean: np.ndarray
    quat: np.ndarray
    scales: np.ndarray
    opacity_logit: float
    sh: np.ndarray
    filter_radius: float = 0.0

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64).reshape(3)
        q = np.asarray(self.quat, dtype=np.float64).reshape(4)
        self.quat = q / np.linalg.norm(q)
        self.scales = np.asarray(self.scales, dtype=np.float64).reshape(3)
        self.sh = np.asarray(self.sh, dtype=np.float64).reshape(-1, 3)
        if np.any(self.scales <= 0):
            raise DomainError(f"scales must be positive, got {self.scales}")
        if self.filter_radius < 0:
            raise DomainError("filter radius must be nonnegative")

    @classmethod
    def from_rgb(cls, mean, rgb, scales, opacity=0.5, quat=(1.0, 0.0, 0.0, 0.0), degree=0, filter_radius=0.0):
        sh = np.zeros((sh_coeff_count(degree), 3))
        sh[0] = rgb_to_sh0(rgb)
        return cls(mean, quat, scales, float(logit(opacity)), sh, filter_radius)

    @property
    def rotation(self) -> np.ndarray:
        return quat_to_rotmat(self.quat)

    @property
    def opacity(self) -> float:
        return float(sigmoid(self.opacity_logit))

    @property
    def inflated_scales(self) -> np.ndarray:
        return inflate_scales(self.scales, self.filter_radius)

    @property
    def effective_opacity(self) -> float:
        """Activated opacity after compensation for the filter inflation."""
        return compensate_opacity(self.opacity, self.scales, self.inflated_scales)

    @property
    def covariance(self) -> np.ndarray:
        R = self.rotation
        return R.T @ np.diag(self.scales**2) @ R

    def density(self, x) -> float:
        """Unnormalized 3D density (peak 1) at world point ``x``."""
        xl = (self.rotation @ (np.asarray(x, dtype=np.float64) - self.mean)) / self.scales
        return math.exp(-0.5 * float(xl @ xl))


@dataclass
class GaussianScene:
    """Structure-of-arrays storage for N Gaussians; ids are row indices."""

    means: np.ndarray
    quats: np.ndarray
    log_scales: np.ndarray
    opacity_logits: np.ndarray
    sh: np.ndarray
    filter_radii: np.ndarray = None
    sh_degree: int = 0

    def __post_init__(self):
        self.means = np.ascontiguousarray(self.means, dtype=np.float64).reshape(-1, 3)
        n = len(self.means)
        q = np.asarray(self.quats, dtype=np.float64).reshape(n, 4)
        qn = np.linalg.norm(q, axis=1, keepdims=True)
        if np.any(qn == 0):
            raise DomainError("zero quaternion")
        # rows already unit to round-off are kept as is so saved scenes reload exactly
        qn = np.where(np.abs(qn - 1.0) < 1e-14, 1.0, qn)
        self.quats = np.ascontiguousarray(q / qn)
        self.log_scales = np.ascontiguousarray(self.log_scales, dtype=np.float64).reshape(n, 3)
        self.opacity_logits = np.ascontiguousarray(self.opacity_logits, dtype=np.float64).reshape(n)
        sh = np.ascontiguousarray(self.sh, dtype=np.float64)
        self.sh = sh if sh.ndim == 3 and len(sh) == n else sh.reshape(n, -1, 3)
        if self.filter_radii is None:
            self.filter_radii = np.zeros(n)
        self.filter_radii = np.ascontiguousarray(self.filter_radii, dtype=np.float64).reshape(n)
        if self.sh.shape[1] < sh_coeff_count(self.sh_degree):
            raise DomainError(f"sh block holds {self.sh.shape[1]} coefficients, degree {self.sh_degree} needs more")

    def __len__(self) -> int:
        return len(self.means)

    def __getitem__(self, i: int) -> Gaussian3D:
        return Gaussian3D(
            self.means[i], self.quats[i], np.exp(self.log_scales[i]), float(self.opacity_logits[i]),
            self.sh[i], float(self.filter_radii[i]),
        )

    @classmethod
    def from_gaussians(cls, gaussians: Sequence[Gaussian3D], sh_degree: int = 0) -> "GaussianScene":
        k = max(g.sh.shape[0] for g in gaussians)
        sh = np.zeros((len(gaussians), k, 3))
        for i, g in enumerate(gaussians):
            sh[i, : g.sh.shape[0]] = g.sh
        return cls(
            np.array([g.mean for g in gaussians]),
            np.array([g.quat for g in gaussians]),
            np.log(np.array([g.scales for g in gaussians])),
            np.array([g.opacity_logit for g in gaussians]),
            sh,
            np.array([g.filter_radius for g in gaussians]),
            sh_degree,
        )

    def copy(self) -> "GaussianScene":
        return GaussianScene(
            self.means.copy(), self.quats.copy(), self.log_scales.copy(), self.opacity_logits.copy(),
            self.sh.copy(), self.filter_radii.copy(), self.sh_degree,
        )

    def subset(self, keep) -> "GaussianScene":
        return GaussianScene(
            self.means[keep], self.quats[keep], self.log_scales[keep], self.opacity_logits[keep],
            self.sh[keep], self.filter_radii[keep], self.sh_degree,
        )

    @staticmethod
    def concat(a: "GaussianScene", b: "GaussianScene") -> "GaussianScene":
        return GaussianScene(
            np.concatenate([a.means, b.means]), np.concatenate([a.quats, b.quats]),
            np.concatenate([a.log_scales, b.log_scales]), np.concatenate([a.opacity_logits, b.opacity_logits]),
            np.concatenate([a.sh, b.sh]), np.concatenate([a.filter_radii, b.filter_radii]), a.sh_degree,
        )

    # derived quantities -------------------------------------------------

    @property
    def scales(self) -> np.ndarray:
        return np.exp(self.log_scales)

    @property
    def opacities(self) -> np.ndarray:
        return sigmoid(self.opacity_logits)

    @property
    def inflated_scales(self) -> np.ndarray:
        return inflate_scales(self.scales, self.filter_radii[:, None])

    @property
    def effective_opacities(self) -> np.ndarray:
        s = self.scales
        return compensate_opacity(self.opacities, s, inflate_scales(s, self.filter_radii[:, None]))

    def rotations(self) -> np.ndarray:
        return quats_to_rotmats(self.quats)

    def extent(self) -> float:
        """Radius of the bounding sphere of the means about their centroid."""
        if len(self) == 0:
            return 0.0
        return float(np.linalg.norm(self.means - self.means.mean(0), axis=1).max())


def quats_to_rotmats(q: np.ndarray) -> np.ndarray:
    """Batched (N, 4) -> (N, 3, 3); inputs are normalized."""
    q = q / np.linalg.norm(q, axis=1, keepdims=True)
    w, x, y, z = q.T
    R = np.empty((len(q), 3, 3))
    R[:, 0, 0] = 1 - 2 * (y * y + z * z)
    R[:, 0, 1] = 2 * (x * y - w * z)
    R[:, 0, 2] = 2 * (x * z + w * y)
    R[:, 1, 0] = 2 * (x * y + w * z)
    R[:, 1, 1] = 1 - 2 * (x * x + z * z)
    R[:, 1, 2] = 2 * (y * z - w * x)
    R[:, 2, 0] = 2 * (x * z - w * y)
    R[:, 2, 1] = 2 * (y * z + w * x)
    R[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def rotmat_grad_to_quat(q: np.ndarray, dR: np.ndarray) -> np.ndarray:
    """Backpropagate dL/dR (N, 3, 3) through :func:`quats_to_rotmats` to the raw quaternion."""
    norm = np.linalg.norm(q, axis=1, keepdims=True)
    qn = q / norm
    w, x, y, z = qn.T
    g = dR
    dw = 2 * (-z * g[:, 0, 1] + y * g[:, 0, 2] + z * g[:, 1, 0] - x * g[:, 1, 2] - y * g[:, 2, 0] + x * g[:, 2, 1])
    dx = 2 * (
        y * g[:, 0, 1] + z * g[:, 0, 2] + y * g[:, 1, 0] - 2 * x * g[:, 1, 1] - w * g[:, 1, 2]
        + z * g[:, 2, 0] + w * g[:, 2, 1] - 2 * x * g[:, 2, 2]
    )
    dy = 2 * (
        -2 * y * g[:, 0, 0] + x * g[:, 0, 1] + w * g[:, 0, 2] + x * g[:, 1, 0] + z * g[:, 1, 2]
        - w * g[:, 2, 0] + z * g[:, 2, 1] - 2 * y * g[:, 2, 2]
    )
    dz = 2 * (
        -2 * z * g[:, 0, 0] - w * g[:, 0, 1] + x * g[:, 0, 2] + w * g[:, 1, 0] - 2 * z * g[:, 1, 1]
        + y * g[:, 1, 2] + x * g[:, 2, 0] + y * g[:, 2, 1]
    )
    dqn = np.stack([dw, dx, dy, dz], axis=1)
    # d(q/|q|)/dq = (I - qn qn^T) / |q|
    return (dqn - qn * np.sum(dqn * qn, axis=1, keepdims=True)) / norm


# --------------------------------------------------------------------------
# ray-space evaluation


class LocalRay(NamedTuple):
    o_loc: np.ndarray
    r_loc: np.ndarray
    A: float
    B: float
    C: float


class PeakResponse(NamedTuple):
    t_star: float
    g_max: float
    behind: bool


def to_local_ray(g: Gaussian3D, origin, direction, use_filter: bool = True) -> LocalRay:
    """Express a world ray in the Gaussian's scaled local frame."""
    s = g.inflated_scales if use_filter else g.scales
    if np.any(s <= 0):
        raise DomainError("degenerate Gaussian scales")
    d = np.asarray(direction, dtype=np.float64)
    if abs(np.linalg.norm(d) - 1.0) > 1e-6:
        raise DomainError("ray direction must be unit length")
    R = g.rotation
    o_loc = (R @ (np.asarray(origin, dtype=np.float64) - g.mean)) / s
    r_loc = (R @ d) / s
    return LocalRay(o_loc, r_loc, float(r_loc @ r_loc), float(o_loc @ r_loc), float(o_loc @ o_loc))


def peak_response(lr: LocalRay, t_near: float = T_NEAR) -> PeakResponse:
    """Ray depth of the maximal response and the response value there."""
    if lr.A <= 0:
        raise DomainError("quadratic coefficient A must be positive")
    t_star = -lr.B / lr.A
    q = max(lr.C - lr.B * lr.B / lr.A, 0.0)
    return PeakResponse(t_star, math.exp(-0.5 * q), t_star <= t_near)


def response_at(lr: LocalRay, t) -> np.ndarray | float:
    t = np.asarray(t, dtype=np.float64)
    out = np.exp(-0.5 * (lr.A * t * t + 2.0 * lr.B * t + lr.C))
    return float(out) if out.ndim == 0 else out


# --------------------------------------------------------------------------
# spherical filtering


def filter_radius(g: Gaussian3D | np.ndarray, cams: Sequence[ErpCamera], kappa: float = 0.5):
    """Isotropic filter radius from the coarsest angular pixel size over ``cams``.

    Accepts a single Gaussian or an (N, 3) array of means.
    """
    if not cams:
        raise DomainError("filter radius needs at least one camera")
    means = g.mean[None] if isinstance(g, Gaussian3D) else np.asarray(g, dtype=np.float64).reshape(-1, 3)
    best = np.zeros(len(means))
    for cam in cams:
        xc = cam.to_camera(means)
        r = np.linalg.norm(xc, axis=1)
        lat = np.arcsin(np.clip(-xc[:, 1] / np.maximum(r, 1e-300), -1.0, 1.0))
        dtheta = np.maximum(math.pi / cam.height, 2.0 * math.pi / cam.width * np.cos(lat))
        best = np.maximum(best, r * dtheta)
    f = kappa * best
    return float(f[0]) if isinstance(g, Gaussian3D) else f


def inflate_scales(s, f):
    s = np.asarray(s, dtype=np.float64)
    return np.sqrt(s * s + np.asarray(f, dtype=np.float64) ** 2)


def compensate_opacity(o, s, s_tilde):
    """Scale opacity by the per-axis ratio ``prod(s / s_tilde)``."""
    ratio = np.prod(np.asarray(s, dtype=np.float64) / np.asarray(s_tilde, dtype=np.float64), axis=-1)
    out = np.asarray(o, dtype=np.float64) * ratio
    return float(out) if out.ndim == 0 else out


# --------------------------------------------------------------------------
# spherical harmonics


def sh_basis(dirs: np.ndarray, degree: int) -> np.ndarray:
    """Real SH basis (..., (degree+1)^2) at unit directions (..., 3)."""
    if not 0 <= degree <= 3:
        raise DomainError(f"SH degree {degree} not supported (0..3)")
    dirs = np.asarray(dirs, dtype=np.float64)
    x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
    out = [np.full(x.shape, SH_C0)]
    if degree >= 1:
        out += [-SH_C1 * y, SH_C1 * z, -SH_C1 * x]
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        out += [
            SH_C2[0] * x * y,
            SH_C2[1] * y * z,
            SH_C2[2] * (2 * zz - xx - yy),
            SH_C2[3] * x * z,
            SH_C2[4] * (xx - yy),
        ]
    if degree >= 3:
        out += [
            SH_C3[0] * y * (3 * xx - yy),
            SH_C3[1] * x * y * z,
            SH_C3[2] * y * (4 * zz - xx - yy),
            SH_C3[3] * z * (2 * zz - 3 * xx - 3 * yy),
            SH_C3[4] * x * (4 * zz - xx - yy),
            SH_C3[5] * z * (xx - yy),
            SH_C3[6] * x * (xx - 3 * yy),
        ]
    return np.stack(out, axis=-1)


def sh_basis_jacobian(dirs: np.ndarray, degree: int) -> np.ndarray:
    """d basis / d(x, y, z), shape (..., K, 3)."""
    dirs = np.asarray(dirs, dtype=np.float64)
    x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
    zero = np.zeros_like(x)
    rows = [(zero, zero, zero)]
    if degree >= 1:
        c = SH_C1
        rows += [(zero, zero - c, zero), (zero, zero, zero + c), (zero - c, zero, zero)]
    if degree >= 2:
        c = SH_C2
        rows += [
            (c[0] * y, c[0] * x, zero),
            (zero, c[1] * z, c[1] * y),
            (-2 * c[2] * x, -2 * c[2] * y, 4 * c[2] * z),
            (c[3] * z, zero, c[3] * x),
            (2 * c[4] * x, -2 * c[4] * y, zero),
        ]
    if degree >= 3:
        c = SH_C3
        xx, yy, zz = x * x, y * y, z * z
        rows += [
            (c[0] * 6 * x * y, c[0] * (3 * xx - 3 * yy), zero),
            (c[1] * y * z, c[1] * x * z, c[1] * x * y),
            (-2 * c[2] * x * y, c[2] * (4 * zz - xx - 3 * yy), 8 * c[2] * y * z),
            (-6 * c[3] * x * z, -6 * c[3] * y * z, c[3] * (6 * zz - 3 * xx - 3 * yy)),
            (c[4] * (4 * zz - 3 * xx - yy), -2 * c[4] * x * y, 8 * c[4] * x * z),
            (2 * c[5] * x * z, -2 * c[5] * y * z, c[5] * (xx - yy)),
            (c[6] * (3 * xx - 3 * yy), -6 * c[6] * x * y, zero),
        ]
    return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)


def eval_sh_color(g: Gaussian3D, view_dir, degree: int) -> np.ndarray:
    """RGB of ``g`` seen along ``view_dir`` using the first ``degree`` SH bands."""
    if sh_coeff_count(degree) > g.sh.shape[0]:
        raise DomainError(f"degree {degree} exceeds stored SH coefficients")
    d = np.asarray(view_dir, dtype=np.float64)
    d = d / np.linalg.norm(d)
    basis = sh_basis(d, degree)
    return np.clip(basis @ g.sh[: len(basis)] + 0.5, 0.0, 1.0)


def scene_colors(scene: GaussianScene, cam_center: np.ndarray, degree: Optional[int] = None):
    """Per-Gaussian RGB for one view, plus the cache needed by :func:`scene_colors_backward`."""
    degree = scene.sh_degree if degree is None else degree
    k = sh_coeff_count(degree)
    if k > scene.sh.shape[1]:
        raise DomainError(f"degree {degree} exceeds stored SH coefficients")
    v = scene.means - cam_center
    norm = np.linalg.norm(v, axis=1, keepdims=True)
    d = v / np.maximum(norm, 1e-12)
    basis = sh_basis(d, degree)
    raw = np.einsum("nk,nkc->nc", basis, scene.sh[:, :k]) + 0.5
    rgb = np.clip(raw, 0.0, 1.0)
    return rgb, (degree, d, norm, basis, raw)


def scene_colors_backward(scene: GaussianScene, cache, d_rgb: np.ndarray):
    """Return (d_sh, d_means) for upstream gradient ``d_rgb`` (N, 3)."""
    degree, d, norm, basis, raw = cache
    k = basis.shape[1]
    g = d_rgb * ((raw > 0.0) & (raw < 1.0))
    d_sh = np.zeros_like(scene.sh)
    d_sh[:, :k] = basis[:, :, None] * g[:, None, :]
    d_means = np.zeros_like(scene.means)
    if degree > 0:
        jac = sh_basis_jacobian(d, degree)  # (N, K, 3)
        d_basis = np.einsum("nkc,nc->nk", scene.sh[:, :k], g)
        d_dir = np.einsum("nk,nkj->nj", d_basis, jac)
        d_means = (d_dir - d * np.sum(d_dir * d, axis=1, keepdims=True)) / np.maximum(norm, 1e-12)
    return d_sh, d_means
