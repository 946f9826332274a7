"""Bounding polygons of areal damages via PCA planarisation and alpha complexes."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import Delaunay, QhullError

from .errors import ValidationError

log = logging.getLogger(__name__)

DEFAULT_ALPHA = 100.0
PLANARITY_THRESHOLD = 0.95
COLLINEAR_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class PlaneFrame:
    centroid: np.ndarray
    e1: np.ndarray
    e2: np.ndarray
    e3: np.ndarray
    explained_variance: float
    offset: np.ndarray  # per-axis minimum of the raw in-plane coordinates
    scale: np.ndarray  # per-axis divisor mapping raw coordinates onto [0, 1]

    def to_plane(self, points) -> np.ndarray:
        """Raw (metric) in-plane coordinates."""
        c = np.asarray(points, dtype=np.float64) - self.centroid
        return np.stack([c @ self.e1, c @ self.e2], axis=-1)

    def normalize(self, xy) -> np.ndarray:
        return (np.asarray(xy) - self.offset) / self.scale


@dataclass(frozen=True, eq=False)
class BoundingPolygon25D:
    vertices: np.ndarray
    indices: np.ndarray
    frame: PlaneFrame
    alpha: float
    planar: bool
    instance_id: Optional[int] = None
    auxiliary_loops: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.vertices) < 3:
            raise ValidationError("polygon needs at least 3 vertices")

    def area(self) -> float:
        """Shoelace area in the PCA plane, square meters."""
        return abs(shoelace(self.frame.to_plane(self.vertices)))


def shoelace(xy) -> float:
    """Signed polygon area, positive for counter-clockwise loops."""
    xy = np.asarray(xy, dtype=np.float64)
    x, y = xy[:, 0], xy[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def pca_project(instance, planarity_threshold: float = PLANARITY_THRESHOLD, normalization: str = "per_axis"):
    """Fit the best plane and return ``(frame, normalized 2D coordinates, planar)``.

    ``normalization="per_axis"`` maps each in-plane axis independently onto
    [0, 1]; ``"joint"`` divides both by the larger range, keeping the aspect.
    """
    pts = np.asarray(getattr(instance, "positions", instance), dtype=np.float64).reshape(-1, 3)
    if len(pts) < 3:
        raise ValidationError("need at least 3 points for a plane")
    if normalization not in ("per_axis", "joint"):
        raise ValidationError(f"unknown normalization {normalization!r}")
    centroid = pts.mean(axis=0)
    c = pts - centroid
    evals, evecs = np.linalg.eigh(c.T @ c / len(pts))
    evals = np.maximum(evals[::-1], 0.0)
    evecs = evecs[:, ::-1]
    if evals[0] <= 0 or evals[1] <= COLLINEAR_TOL * evals[0]:
        raise ValidationError("degenerate covariance: points are collinear or coincident")
    e1, e2 = evecs[:, 0], evecs[:, 1]
    e3 = np.cross(e1, e2)
    ratio = float((evals[0] + evals[1]) / evals.sum())
    raw = np.stack([c @ e1, c @ e2], axis=1)
    lo = raw.min(axis=0)
    span = raw.max(axis=0) - lo
    scale = span if normalization == "per_axis" else np.full(2, span.max())
    frame = PlaneFrame(centroid, e1, e2, e3, min(max(ratio, 0.0), 1.0), lo, scale)
    return frame, frame.normalize(raw), ratio >= planarity_threshold


def _circumradii(pts: np.ndarray, simplices: np.ndarray) -> np.ndarray:
    a = pts[simplices[:, 0]]
    b = pts[simplices[:, 1]]
    c = pts[simplices[:, 2]]
    la = np.linalg.norm(b - c, axis=1)
    lb = np.linalg.norm(c - a, axis=1)
    lc = np.linalg.norm(a - b, axis=1)
    cross = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
    area = 0.5 * np.abs(cross)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = la * lb * lc / (4.0 * area)
    return np.where(area > 0, r, np.inf)


def alpha_triangles(points2d, alpha: float) -> np.ndarray:
    """Delaunay triangles (CCW) whose circumradius is at most ``1 / alpha``."""
    pts = np.asarray(points2d, dtype=np.float64)
    if len(pts) < 3:
        raise ValidationError("alpha boundary needs at least 3 points")
    if not alpha > 0:
        raise ValidationError("alpha must be positive")
    try:
        tri = Delaunay(pts)
    except QhullError as exc:
        raise ValidationError("all points are collinear") from exc
    simp = tri.simplices.copy()
    a, b, c = pts[simp[:, 0]], pts[simp[:, 1]], pts[simp[:, 2]]
    cw = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]) < 0
    simp[cw] = simp[cw][:, [0, 2, 1]]
    return simp[_circumradii(pts, simp) <= 1.0 / alpha]


def _trace_loops(pts: np.ndarray, directed: np.ndarray) -> list:
    outgoing: dict = {}
    for a, b in directed:
        outgoing.setdefault(int(a), []).append(int(b))
    used = set()
    loops = []
    for a0, b0 in sorted(map(tuple, directed.tolist())):
        if (a0, b0) in used:
            continue
        loop = [a0]
        prev, cur = a0, b0
        used.add((a0, b0))
        while cur != a0:
            loop.append(cur)
            cands = [w for w in outgoing[cur] if (cur, w) not in used]
            if not cands:
                break
            if len(cands) > 1:
                # pinch vertex: stay in the sector adjacent to the incoming edge
                back = pts[prev] - pts[cur]
                ang_back = np.arctan2(back[1], back[0])

                def cw_turn(w):
                    d = pts[w] - pts[cur]
                    return (ang_back - np.arctan2(d[1], d[0])) % (2 * np.pi)

                cands.sort(key=cw_turn)
            nxt = cands[0]
            used.add((cur, nxt))
            prev, cur = cur, nxt
        loops.append(loop)
    return loops


def alpha_boundary(points2d, alpha: float = DEFAULT_ALPHA, return_auxiliary: bool = False):
    """Ordered, counter-clockwise boundary loop of the alpha complex.

    When the complex has several boundary loops (islands or holes) the one
    enclosing the largest area is returned; with ``return_auxiliary`` the
    remaining loops come back as a second value.
    """
    pts = np.asarray(points2d, dtype=np.float64)
    tris = alpha_triangles(pts, alpha)
    if not len(tris):
        raise ValidationError(f"no triangle survives alpha={alpha}; reduce alpha")
    directed = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    key = np.minimum(directed[:, 0], directed[:, 1]) * len(pts) + np.maximum(directed[:, 0], directed[:, 1])
    uniq, counts = np.unique(key, return_counts=True)
    single = np.isin(key, uniq[counts == 1])
    loops = _trace_loops(pts, directed[single])
    areas = [shoelace(pts[lp]) if len(lp) >= 3 else 0.0 for lp in loops]
    main = int(np.argmax(areas))
    aux = [np.asarray(lp, dtype=np.int64) for i, lp in enumerate(loops) if i != main]
    if aux:
        log.info("alpha complex has %d boundary loops; keeping the largest", len(loops))
    boundary = np.asarray(loops[main], dtype=np.int64)
    return (boundary, aux) if return_auxiliary else boundary


def extract_polygon(instance, alpha: float = DEFAULT_ALPHA, planarity_threshold: float = PLANARITY_THRESHOLD,
                    normalization: str = "per_axis") -> BoundingPolygon25D:
    """2.5D polygon whose vertices are instance points on the alpha boundary."""
    pts = np.asarray(getattr(instance, "positions", instance), dtype=np.float64).reshape(-1, 3)
    frame, xy, planar = pca_project(pts, planarity_threshold, normalization)
    if not planar:
        log.warning("instance is not planar (explained variance %.3f); polygon may be unreliable",
                    frame.explained_variance)
    loop, aux = alpha_boundary(xy, alpha, return_auxiliary=True)
    return BoundingPolygon25D(
        vertices=pts[loop],
        indices=loop,
        frame=frame,
        alpha=float(alpha),
        planar=bool(planar),
        instance_id=getattr(instance, "instance_id", None),
        auxiliary_loops=aux,
    )
