"""Equirectangular (ERP) camera model and spherical angle helpers.

Camera frame: +z forward, +x right, +y down. A camera-frame direction ``d``
has longitude ``atan2(d_x, d_z)`` and latitude ``arcsin(-d_y / |d|)``, so
positive latitude points up. Pixel ``(u, v)`` covers the continuous square
``[u, u+1) x [v, v+1)``; rays are cast through pixel centers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import cached_property
from pathlib import Path
from typing import NamedTuple, Optional, Sequence

import numba
import numpy as np

from .errors import ConfigError, DomainError

TWO_PI = 2.0 * math.pi
HALF_PI = 0.5 * math.pi


class SphericalAngles(NamedTuple):
    lon: float
    lat: float


@dataclass(frozen=True)
class CapBounds:
    """Longitude/latitude box enclosing a spherical cap.

    ``lon_lo > lon_hi`` marks an interval that wraps across +-pi.
    """

    lat_range: tuple[float, float]
    lon_range: tuple[float, float]
    full_lon: bool = False
    full_sphere: bool = False

    @property
    def wraps(self) -> bool:
        return not self.full_lon and self.lon_range[0] > self.lon_range[1]

    def contains(self, lon: float, lat: float) -> bool:
        if self.full_sphere:
            return True
        if not (self.lat_range[0] <= lat <= self.lat_range[1]):
            return False
        if self.full_lon:
            return True
        lo, hi = self.lon_range
        if lo <= hi:
            return lo <= lon <= hi
        return lon >= lo or lon <= hi


# --------------------------------------------------------------------------
# rotations


def quat_to_rotmat(q: Sequence[float]) -> np.ndarray:
    """Rotation matrix of a (w, x, y, z) quaternion; normalizes the input."""
    w, x, y, z = np.asarray(q, dtype=np.float64) / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def rotmat_to_quat(R: np.ndarray) -> np.ndarray:
    """(w, x, y, z) quaternion with w >= 0 for a proper rotation matrix."""
    R = np.asarray(R, dtype=np.float64)
    tr = np.trace(R)
    if tr > 0:
        s = 2.0 * math.sqrt(tr + 1.0)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = 2.0 * math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    q = np.array(q)
    q /= np.linalg.norm(q)
    return -q if q[0] < 0 else q


def yaw_matrix(angle: float) -> np.ndarray:
    """Camera-frame rotation about +y that adds ``angle`` to every longitude."""
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def axis_angle_matrix(axis: Sequence[float], angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    K = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + math.sin(angle) * K + (1 - math.cos(angle)) * (K @ K)


# --------------------------------------------------------------------------
# camera


@dataclass(frozen=True, eq=False)
class ErpCamera:
    """Posed equirectangular camera.

    ``rotation`` maps world vectors into the camera frame; ``center`` is the
    camera origin in world coordinates.
    """

    rotation: np.ndarray
    center: np.ndarray
    width: int
    height: int
    lat_band: Optional[tuple[float, float]] = None
    name: str = ""

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        c = np.asarray(self.center, dtype=np.float64).reshape(3)
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-6) or np.linalg.det(R) < 0:
            raise DomainError("camera rotation must be a proper orthonormal matrix")
        if self.width < 2 or self.height < 1:
            raise DomainError(f"invalid ERP size {self.width}x{self.height}")
        if self.lat_band is not None:
            lo, hi = (float(x) for x in self.lat_band)
            if not (-HALF_PI - 1e-12 <= lo < hi <= HALF_PI + 1e-12):
                raise DomainError(f"invalid latitude band {self.lat_band}")
            object.__setattr__(self, "lat_band", (lo, hi))
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))

    @classmethod
    def from_quaternion(cls, quat, center, width, height, lat_band=None, name=""):
        return cls(quat_to_rotmat(quat), center, width, height, lat_band, name)

    @property
    def quaternion(self) -> np.ndarray:
        return rotmat_to_quat(self.rotation)

    def to_camera(self, x: np.ndarray) -> np.ndarray:
        """World points (..., 3) -> camera-frame points."""
        return (np.asarray(x, dtype=np.float64) - self.center) @ self.rotation.T

    def rotated(self, delta: np.ndarray) -> "ErpCamera":
        """Same center, orientation pre-multiplied by a camera-frame rotation."""
        return replace(self, rotation=np.asarray(delta) @ self.rotation)

    def yawed(self, angle: float) -> "ErpCamera":
        return self.rotated(yaw_matrix(angle))

    def resized(self, width: int, height: int) -> "ErpCamera":
        return replace(self, width=width, height=height)

    @cached_property
    def rays(self) -> np.ndarray:
        """World-frame unit ray directions through every pixel center, (H, W, 3)."""
        d = _camera_rays(self.width, self.height)
        rays = d @ self.rotation  # (R^T d) for row vectors
        rays.setflags(write=False)
        return rays

    @cached_property
    def row_latitudes(self) -> np.ndarray:
        return row_latitudes(self.height)

    @cached_property
    def band_mask(self) -> np.ndarray:
        """(H, W) boolean mask of pixels whose center latitude lies in the band."""
        m = np.ones((self.height, self.width), dtype=bool)
        if self.lat_band is not None:
            lat = self.row_latitudes
            rows = (lat >= self.lat_band[0]) & (lat <= self.lat_band[1])
            m &= rows[:, None]
        m.setflags(write=False)
        return m


def row_latitudes(height: int) -> np.ndarray:
    """Latitude of each pixel-row center."""
    v = np.arange(height) + 0.5
    return (0.5 * height - v) * math.pi / height


def _camera_rays(width: int, height: int) -> np.ndarray:
    u = np.arange(width) + 0.5
    lon = (u - 0.5 * width) * TWO_PI / width
    lat = row_latitudes(height)
    lon, lat = np.meshgrid(lon, lat)
    cl = np.cos(lat)
    return np.stack([np.sin(lon) * cl, -np.sin(lat), np.cos(lon) * cl], axis=-1)


# --------------------------------------------------------------------------
# projections


def dir_to_angles(d: Sequence[float]) -> SphericalAngles:
    x, y, z = (float(c) for c in d)
    n = math.sqrt(x * x + y * y + z * z)
    if n == 0.0:
        raise DomainError("cannot take angles of the zero vector")
    lat = math.asin(max(-1.0, min(1.0, -y / n)))
    # atan2(0, 0) is pinned to 0 at the poles
    lon = 0.0 if (x == 0.0 and z == 0.0) else math.atan2(x, z)
    return SphericalAngles(lon, lat)


def dirs_to_angles(d: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`dir_to_angles` over (..., 3) arrays."""
    d = np.asarray(d, dtype=np.float64)
    n = np.linalg.norm(d, axis=-1)
    if np.any(n == 0):
        raise DomainError("cannot take angles of the zero vector")
    lat = np.arcsin(np.clip(-d[..., 1] / n, -1.0, 1.0))
    pole = (d[..., 0] == 0) & (d[..., 2] == 0)
    lon = np.where(pole, 0.0, np.arctan2(d[..., 0], d[..., 2]))
    return lon, lat


def angles_to_pixel(a: SphericalAngles, width: int, height: int) -> tuple[float, float]:
    lon, lat = a
    return width / TWO_PI * lon + 0.5 * width, -height / math.pi * lat + 0.5 * height


def project_point(x: Sequence[float], cam: ErpCamera) -> tuple[float, float]:
    xc = cam.to_camera(x)
    if not np.any(xc):
        raise DomainError("point coincides with the camera center")
    return angles_to_pixel(dir_to_angles(xc), cam.width, cam.height)


def project_points(x: np.ndarray, cam: ErpCamera) -> np.ndarray:
    """Continuous pixel coordinates (..., 2) of world points (..., 3)."""
    lon, lat = dirs_to_angles(cam.to_camera(x))
    u = cam.width / TWO_PI * lon + 0.5 * cam.width
    v = -cam.height / math.pi * lat + 0.5 * cam.height
    return np.stack([u, v], axis=-1)


def pixel_to_ray(u: int, v: int, cam: ErpCamera) -> np.ndarray:
    """World unit direction of the ray through the center of pixel (u, v)."""
    if not (0 <= u < cam.width and 0 <= v < cam.height):
        raise DomainError(f"pixel ({u}, {v}) outside {cam.width}x{cam.height}")
    lon = (u + 0.5 - 0.5 * cam.width) * TWO_PI / cam.width
    lat = (0.5 * cam.height - (v + 0.5)) * math.pi / cam.height
    cl = math.cos(lat)
    d = np.array([math.sin(lon) * cl, -math.sin(lat), math.cos(lon) * cl])
    return cam.rotation.T @ d


def latitude_weight(lat, eps: float = 0.1):
    """Pole down-weighting ``clamp(cos(lat), eps, 1)``; accepts arrays."""
    return np.clip(np.cos(lat), eps, 1.0)


# --------------------------------------------------------------------------
# spherical caps


@numba.njit(cache=True)
def cap_bounds_raw(cx, cy, cz, dist, radius):
    """Bounding box of the cap subtended by a ball, in raw form.

    Returns ``(full_sphere, full_lon, lat_lo, lat_hi, lon_lo, lon_hi)`` with
    the longitude interval unwrapped (it may extend beyond +-pi).
    """
    if dist <= radius:
        return True, True, -HALF_PI, HALF_PI, -math.pi, math.pi
    n = math.sqrt(cx * cx + cy * cy + cz * cz)
    lat_c = math.asin(max(-1.0, min(1.0, -cy / n)))
    if cx == 0.0 and cz == 0.0:
        lon_c = 0.0
    else:
        lon_c = math.atan2(cx, cz)
    beta = math.asin(radius / dist)
    lat_lo = max(lat_c - beta, -HALF_PI)
    lat_hi = min(lat_c + beta, HALF_PI)
    if abs(lat_c) + beta >= HALF_PI:
        return False, True, lat_lo, lat_hi, -math.pi, math.pi
    hw = math.asin(min(1.0, math.sin(beta) / math.cos(lat_c)))
    return False, False, lat_lo, lat_hi, lon_c - hw, lon_c + hw


def _wrap(a: float) -> float:
    return (a + math.pi) % TWO_PI - math.pi


def cap_bounds(center_dir: Sequence[float], dist: float, radius: float) -> CapBounds:
    """Longitude/latitude bounds of a ball of ``radius`` at ``dist`` along ``center_dir``."""
    if radius <= 0:
        raise DomainError("cap radius must be positive")
    if dist < 0:
        raise DomainError("distance must be nonnegative")
    cx, cy, cz = (float(c) for c in center_dir)
    if dist > radius and cx == cy == cz == 0.0:
        raise DomainError("zero center direction")
    full_sphere, full_lon, lat_lo, lat_hi, lon_lo, lon_hi = cap_bounds_raw(cx, cy, cz, float(dist), float(radius))
    if full_sphere:
        return CapBounds((-HALF_PI, HALF_PI), (-math.pi, math.pi), True, True)
    if full_lon:
        return CapBounds((lat_lo, lat_hi), (-math.pi, math.pi), True, False)
    if lon_lo >= -math.pi and lon_hi <= math.pi:
        return CapBounds((lat_lo, lat_hi), (lon_lo, lon_hi))
    return CapBounds((lat_lo, lat_hi), (_wrap(lon_lo), _wrap(lon_hi)))


# --------------------------------------------------------------------------
# pose files

POSE_HEADER = "# name width height qw qx qy qz cx cy cz [lat_min_deg lat_max_deg]"


def read_poses(path) -> list[ErpCamera]:
    """Parse a pose file: one whitespace-separated record per image.

    Fields: ``name W H qw qx qy qz cx cy cz [lat_min_deg lat_max_deg]``.
    The quaternion is the world-to-camera rotation. Blank lines and lines
    starting with ``#`` are skipped.
    """
    cams = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) not in (10, 12):
            raise ConfigError(f"{path}:{lineno}: expected 10 or 12 fields, got {len(parts)}")
        try:
            w, h = int(parts[1]), int(parts[2])
            vals = [float(p) for p in parts[3:]]
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: {exc}") from None
        band = None
        if len(vals) == 9:
            band = (math.radians(vals[7]), math.radians(vals[8]))
        cams.append(ErpCamera.from_quaternion(vals[0:4], vals[4:7], w, h, band, parts[0]))
    return cams


def write_poses(path, cams: Sequence[ErpCamera]) -> None:
    lines = [POSE_HEADER]
    for i, cam in enumerate(cams):
        q = cam.quaternion
        rec = [cam.name or f"view_{i:03d}", str(cam.width), str(cam.height)]
        rec += [repr(float(x)) for x in q] + [repr(float(x)) for x in cam.center]
        if cam.lat_band is not None:
            rec += [repr(math.degrees(b)) for b in cam.lat_band]
        lines.append(" ".join(rec))
    Path(path).write_text("\n".join(lines) + "\n")
