"""Fusion of per-view class heatmaps onto a point cloud.

Each view that sees a point roughly head-on (angle between the surface
normal and the viewing ray inside the open interval (130, 230) degrees)
contributes its heatmap values with weight 1/N, N being the number of such
views.  The label is the argmax of the resulting per-class scores.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .camera import CameraView, sample_heatmaps, visibility_mask
from .errors import ValidationError
from .geometry import PointCloud

log = logging.getLogger(__name__)

ANGLE_LOW = 130.0
ANGLE_HIGH = 230.0
# Angles are compared after rounding to this many decimals (degrees) so that
# boundary angles built from trigonometric round trips land exactly on 130.
ANGLE_DECIMALS = 9

DEFAULT_CLASSES = ("background", "crack", "spalling", "corrosion")
DEFAULT_GEOMETRY = {"crack": "medial_axis", "spalling": "polygon", "corrosion": "polygon"}


@dataclass(frozen=True)
class ClassCatalog:
    names: tuple = DEFAULT_CLASSES
    background: int = 0
    geometry: dict = field(default_factory=lambda: dict(DEFAULT_GEOMETRY))

    def __post_init__(self):
        names = tuple(self.names)
        object.__setattr__(self, "names", names)
        if len(set(names)) != len(names):
            raise ValidationError(f"class names must be unique: {names}")
        if not (0 <= self.background < len(names)):
            raise ValidationError("background index out of range")
        for name, kind in self.geometry.items():
            if kind not in ("medial_axis", "polygon"):
                raise ValidationError(f"unknown geometry kind {kind!r} for class {name!r}")

    def __len__(self):
        return len(self.names)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise ValidationError(f"unknown class {name!r}") from None

    def kind(self, class_index: int) -> str:
        return self.geometry.get(self.names[class_index], "polygon")

    @property
    def foreground(self) -> list:
        return [i for i in range(len(self.names)) if i != self.background]


@dataclass(frozen=True, eq=False)
class SegmentedCloud:
    cloud: PointCloud
    scores: np.ndarray
    labels: np.ndarray
    view_counts: np.ndarray
    catalog: ClassCatalog = field(default_factory=ClassCatalog)

    def __post_init__(self):
        n = len(self.cloud)
        scores = np.asarray(self.scores, dtype=np.float64)
        if scores.shape != (n, len(self.catalog)):
            raise ValidationError(f"scores shape {scores.shape} != ({n}, {len(self.catalog)})")
        labels = np.asarray(self.labels, dtype=np.int64)
        counts = np.asarray(self.view_counts, dtype=np.int64)
        if labels.shape != (n,) or counts.shape != (n,):
            raise ValidationError("labels and view counts must have one entry per point")
        if n and (labels.min() < 0 or labels.max() >= len(self.catalog)):
            raise ValidationError("label outside class catalog")
        for name, a in (("scores", scores), ("labels", labels), ("view_counts", counts)):
            a.flags.writeable = False
            object.__setattr__(self, name, a)

    def __len__(self):
        return len(self.cloud)


def _angles_deg(normals: np.ndarray, directions: np.ndarray) -> np.ndarray:
    cross = np.linalg.norm(np.cross(normals, directions), axis=-1)
    dot = np.einsum("...i,...i->...", normals, directions)
    return np.round(np.degrees(np.arctan2(cross, dot)), ANGLE_DECIMALS)


def in_weight_interval(theta_deg) -> np.ndarray:
    theta = np.asarray(theta_deg)
    return (theta > ANGLE_LOW) & (theta < ANGLE_HIGH)


def view_angle(point_normal, view_direction) -> float:
    """Unsigned angle in degrees; a surface facing the camera gives 180."""
    n = np.asarray(point_normal, dtype=np.float64)
    d = np.asarray(view_direction, dtype=np.float64)
    ln, ld = np.linalg.norm(n), np.linalg.norm(d)
    if ln == 0 or ld == 0:
        raise ValidationError("zero-length vector")
    return float(_angles_deg(n / ln, d / ld))


def view_weight(point_normal, view_direction, valid_view_count: int) -> float:
    if valid_view_count < 1:
        raise ValidationError("valid view count must be at least 1")
    theta = view_angle(point_normal, view_direction)
    return 1.0 / valid_view_count if in_weight_interval(theta) else 0.0


def _view_sort_key(view: CameraView):
    return (view.name, tuple(view.translation), tuple(view.rotation.ravel()))


def winner_takes_all(scores: np.ndarray, counts: np.ndarray, background: int) -> np.ndarray:
    labels = np.argmax(scores, axis=1)
    if len(scores):
        best = scores[np.arange(len(scores)), labels]
        labels[scores[:, background] == best] = background
    labels[counts == 0] = background
    return labels


def fuse(cloud: PointCloud, views: Sequence[CameraView], catalog: ClassCatalog = ClassCatalog(),
         splat_radius_px: float = 2.0, depth_tol_rel: float = 0.01, occlusion: bool = True,
         count_mode: str = "in_interval") -> SegmentedCloud:
    """Label every point by weighted multi-view heatmap voting.

    ``count_mode="in_interval"`` takes N as the number of visible views
    inside the angular interval; ``"visible"`` takes N as all views the point
    is visible in, so oblique views dilute the scores without voting.
    """
    if not cloud.has_normals:
        raise ValidationError("fusion requires point normals")
    if not views:
        raise ValidationError("at least one view is required")
    if count_mode not in ("in_interval", "visible"):
        raise ValidationError(f"unknown count_mode {count_mode!r}")
    n, c = len(cloud), len(catalog)
    pts, normals = cloud.positions, cloud.normals
    sums = np.zeros((n, c))
    n_valid = np.zeros(n, dtype=np.int64)
    n_visible = np.zeros(n, dtype=np.int64)

    for view in sorted(views, key=_view_sort_key):
        if view.n_classes != c:
            raise ValidationError(f"{view.name}: {view.n_classes} heatmaps for {c} classes")
        vis = visibility_mask(view, pts, splat_radius_px, depth_tol_rel, occlusion)
        idx = np.nonzero(vis)[0]
        n_visible[idx] += 1
        rays = pts[idx] - view.center
        rays /= np.linalg.norm(rays, axis=1, keepdims=True)
        keep = in_weight_interval(_angles_deg(normals[idx], rays))
        idx = idx[keep]
        if not len(idx):
            continue
        u, v, _, _ = view.project(pts[idx])
        sums[idx] += sample_heatmaps(view, u, v)
        n_valid[idx] += 1
        log.debug("view %s: %d visible, %d weighted", view.name, int(vis.sum()), len(idx))

    denom = n_valid if count_mode == "in_interval" else n_visible
    scores = np.zeros_like(sums)
    has = n_valid > 0
    scores[has] = sums[has] / denom[has, None]
    labels = winner_takes_all(scores, n_valid, catalog.background)
    return SegmentedCloud(cloud, scores, labels, n_valid, catalog)
