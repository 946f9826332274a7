"""Pinhole cameras: projection, point-splat visibility and heatmap sampling.

Camera frame follows the usual computer-vision convention: x right, y down,
z along the optical axis.  ``rotation`` and ``translation`` map world
coordinates into that frame, ``X_c = R @ X_w + t``.  Pixel ``(col, row)``
covers ``[col, col + 1) x [row, row + 1)`` so its center sits at
``(col + 0.5, row + 0.5)``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import NamedTuple, Optional

import numpy as np
from scipy import ndimage

from .errors import ValidationError

ROTATION_TOL = 1e-6


class Projection(NamedTuple):
    u: float
    v: float
    depth: float
    in_bounds: bool


def heatmap_scale(dtype) -> float:
    """Divisor mapping stored raster values onto probabilities."""
    dtype = np.dtype(dtype)
    if dtype.kind == "f":
        return 1.0
    if dtype == np.uint8:
        return 255.0
    if dtype == np.uint16:
        return 65535.0
    raise ValidationError(f"unsupported heatmap dtype {dtype}")


@dataclass(frozen=True, eq=False)
class CameraView:
    """One calibrated, undistorted image with its per-class heatmaps.

    ``heatmaps`` has shape ``(n_classes, height, width)``.  Float rasters hold
    probabilities directly; 8/16-bit rasters are divided by their full-scale
    value on access, which keeps decoded PNGs compact in memory.
    """

    name: str
    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray
    translation: np.ndarray
    heatmaps: Optional[np.ndarray] = None
    heatmap_prefix: str = ""

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValidationError(f"{self.name}: image dimensions must be positive")
        if not (self.fx > 0 and self.fy > 0):
            raise ValidationError(f"{self.name}: focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValidationError(f"{self.name}: principal point outside the image")
        R = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        if np.max(np.abs(R.T @ R - np.eye(3))) > ROTATION_TOL:
            raise ValidationError(f"{self.name}: rotation is not orthonormal")
        if np.linalg.det(R) < 0:
            raise ValidationError(f"{self.name}: improper rotation (determinant -1)")
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        R.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)
        if self.heatmaps is not None:
            hm = np.asarray(self.heatmaps)
            if hm.ndim != 3 or hm.shape[1:] != (self.height, self.width):
                raise ValidationError(
                    f"{self.name}: heatmap shape {hm.shape[1:] if hm.ndim == 3 else hm.shape} "
                    f"does not match image {(self.height, self.width)}"
                )
            scale = heatmap_scale(hm.dtype)
            if scale == 1.0 and (np.nanmin(hm) < 0 or np.nanmax(hm) > 1 or np.isnan(hm).any()):
                raise ValidationError(f"{self.name}: heatmap probabilities outside [0, 1]")
            hm = hm.copy()
            hm.flags.writeable = False
            object.__setattr__(self, "heatmaps", hm)

    @property
    def center(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    @property
    def n_classes(self) -> int:
        return 0 if self.heatmaps is None else self.heatmaps.shape[0]

    def with_heatmaps(self, heatmaps: np.ndarray) -> "CameraView":
        return replace(self, heatmaps=heatmaps)

    def to_camera(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        return pts @ self.rotation.T + self.translation

    def project(self, points):
        """Vectorised projection: returns ``(u, v, depth, in_bounds)`` arrays."""
        pc = self.to_camera(points)
        z = pc[:, 2]
        front = z > 0
        with np.errstate(divide="ignore", invalid="ignore"):
            u = np.where(front, self.fx * pc[:, 0] / z + self.cx, np.nan)
            v = np.where(front, self.fy * pc[:, 1] / z + self.cy, np.nan)
        inb = front & (u >= 0) & (u < self.width) & (v >= 0) & (v < self.height)
        return u, v, z, inb

    def unproject(self, u, v, depth) -> np.ndarray:
        """World points for pixel coordinates at the given optical-axis depth."""
        u = np.asarray(u, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        z = np.asarray(depth, dtype=np.float64)
        pc = np.stack([(u - self.cx) / self.fx * z, (v - self.cy) / self.fy * z, z * np.ones_like(u)], axis=-1)
        return (pc - self.translation) @ self.rotation

    def pixel_rays(self, cols, rows) -> np.ndarray:
        """Unit world-space ray directions through the given pixel centers."""
        d = np.stack(
            [(np.asarray(cols) + 0.5 - self.cx) / self.fx, (np.asarray(rows) + 0.5 - self.cy) / self.fy,
             np.ones(np.shape(cols))],
            axis=-1,
        )
        d = d @ self.rotation
        return d / np.linalg.norm(d, axis=-1, keepdims=True)


def project_point(view: CameraView, point) -> Optional[Projection]:
    u, v, z, inb = view.project(np.asarray(point, dtype=np.float64).reshape(1, 3))
    if not z[0] > 0:
        return None
    return Projection(float(u[0]), float(v[0]), float(z[0]), bool(inb[0]))


def _disk(radius: float) -> np.ndarray:
    r = int(np.floor(radius))
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
    return (xx ** 2 + yy ** 2) <= radius ** 2


def depth_buffer(view: CameraView, points, splat_radius_px: float = 2.0) -> np.ndarray:
    """Min-depth raster where every point is splatted as a disk of the given radius."""
    if splat_radius_px <= 0:
        raise ValidationError("splat_radius_px must be positive")
    u, v, z, inb = view.project(points)
    buf = np.full(view.height * view.width, np.inf)
    pix = np.floor(v[inb]).astype(np.int64) * view.width + np.floor(u[inb]).astype(np.int64)
    np.minimum.at(buf, pix, z[inb])
    buf = buf.reshape(view.height, view.width)
    return ndimage.minimum_filter(buf, footprint=_disk(splat_radius_px), mode="constant", cval=np.inf)


def visibility_mask(view: CameraView, cloud, splat_radius_px: float = 2.0, depth_tol_rel: float = 0.01,
                    occlusion: bool = True) -> np.ndarray:
    """Per-point visibility in ``view``.

    With ``occlusion`` off this reduces to "in front of the camera and inside
    the frame".
    """
    pts = getattr(cloud, "positions", cloud)
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise ValidationError("cloud is empty")
    if splat_radius_px <= 0 or depth_tol_rel <= 0:
        raise ValidationError("splat_radius_px and depth_tol_rel must be positive")
    u, v, z, inb = view.project(pts)
    if not occlusion:
        return inb
    buf = depth_buffer(view, pts, splat_radius_px)
    vis = np.zeros(len(pts), dtype=bool)
    cols = np.floor(u[inb]).astype(np.int64)
    rows = np.floor(v[inb]).astype(np.int64)
    vis[inb] = z[inb] <= (1.0 + depth_tol_rel) * buf[rows, cols]
    return vis


def sample_heatmaps(view: CameraView, u, v) -> np.ndarray:
    """Bilinear samples of every class raster, shape ``(n, n_classes)``.

    Coordinates are clamped so samples within half a pixel of the border
    take the border value.
    """
    if view.heatmaps is None:
        raise ValidationError(f"{view.name}: no heatmaps attached")
    hm = view.heatmaps
    x = np.clip(np.asarray(u, dtype=np.float64) - 0.5, 0.0, view.width - 1.0)
    y = np.clip(np.asarray(v, dtype=np.float64) - 0.5, 0.0, view.height - 1.0)
    x0 = np.minimum(np.floor(x).astype(np.int64), view.width - 2) if view.width > 1 else np.zeros_like(x, dtype=np.int64)
    y0 = np.minimum(np.floor(y).astype(np.int64), view.height - 2) if view.height > 1 else np.zeros_like(y, dtype=np.int64)
    x1 = np.minimum(x0 + 1, view.width - 1)
    y1 = np.minimum(y0 + 1, view.height - 1)
    fx = (x - x0)[:, None]
    fy = (y - y0)[:, None]
    scale = heatmap_scale(hm.dtype)
    a = hm[:, y0, x0].T.astype(np.float64)
    b = hm[:, y0, x1].T.astype(np.float64)
    c = hm[:, y1, x0].T.astype(np.float64)
    d = hm[:, y1, x1].T.astype(np.float64)
    out = (a * (1 - fx) * (1 - fy) + b * fx * (1 - fy) + c * (1 - fx) * fy + d * fx * fy)
    if scale != 1.0:
        out /= scale
    return np.clip(out, 0.0, 1.0)


def sample_heatmap(view: CameraView, class_id: int, u: float, v: float) -> float:
    if view.heatmaps is None:
        raise ValidationError(f"{view.name}: no heatmaps attached")
    if not (0 <= class_id < view.n_classes):
        raise ValidationError(f"unknown class {class_id}")
    if not (0 <= u < view.width and 0 <= v < view.height):
        raise ValidationError(f"pixel ({u}, {v}) outside {view.width}x{view.height} image")
    return float(sample_heatmaps(view, np.array([u]), np.array([v]))[0, class_id])


def look_at(center, target, up=(0.0, 1.0, 0.0)):
    """World-to-camera ``(R, t)`` for a camera at ``center`` facing ``target``.

    ``up`` is a world direction that should appear towards the top of the image.
    """
    c = np.asarray(center, dtype=np.float64)
    z = np.asarray(target, dtype=np.float64) - c
    z /= np.linalg.norm(z)
    down = -np.asarray(up, dtype=np.float64)
    x = np.cross(down, z)
    nx = np.linalg.norm(x)
    if nx < 1e-12:
        raise ValidationError("up vector is parallel to the viewing direction")
    x /= nx
    y = np.cross(z, x)
    R = np.stack([x, y, z])
    return R, -R @ c
