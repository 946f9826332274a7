"""DBSCAN grouping of labelled points into damage instances."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np
from scipy.spatial import cKDTree

from .errors import ValidationError
from .geometry import median_nn_distance
from .mapping import SegmentedCloud

NOISE = -1


@dataclass(frozen=True)
class DbscanParams:
    """``eps`` in meters; when unset it is ``eps_auto_factor`` times the
    median nearest-neighbour spacing of the points being clustered."""

    eps: Optional[float] = None
    min_pts: int = 5
    eps_auto_factor: float = 4.0

    def __post_init__(self):
        if self.min_pts < 1:
            raise ValidationError("min_pts must be at least 1")
        if self.eps is not None and not self.eps > 0:
            raise ValidationError("eps must be positive")
        if self.eps is None and not self.eps_auto_factor > 0:
            raise ValidationError("eps_auto_factor must be positive when eps is unset")

    def resolve_eps(self, points) -> float:
        if self.eps is not None:
            return float(self.eps)
        if len(points) < 2:
            return float("inf")
        return self.eps_auto_factor * median_nn_distance(points)


DEFAULT_CRACK_PARAMS = DbscanParams(min_pts=5)
DEFAULT_AREAL_PARAMS = DbscanParams(min_pts=10)


@dataclass(frozen=True, eq=False)
class InstanceCloud:
    instance_id: int
    class_index: int
    indices: np.ndarray
    positions: np.ndarray
    normals: Optional[np.ndarray] = None
    confidence: float = 1.0

    def __post_init__(self):
        if len(self.indices) == 0:
            raise ValidationError("instance is empty")
        if len(self.positions) != len(self.indices):
            raise ValidationError("positions and indices differ in length")

    def __len__(self):
        return len(self.indices)


def dbscan(points, params: DbscanParams) -> np.ndarray:
    """Cluster ids per point, ``-1`` for noise.

    Seeds are visited in ascending index order and each cluster is expanded
    breadth-first before the next seed is considered, so a border point
    reachable from several clusters joins the one with the lowest seed.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = len(pts)
    if n == 0:
        raise ValidationError("no points to cluster")
    eps = params.resolve_eps(pts)
    if not np.isfinite(eps):
        return np.full(n, NOISE if params.min_pts > 1 else 0, dtype=np.int64)
    tree = cKDTree(pts)
    neighbours = tree.query_ball_point(pts, eps, return_sorted=True)
    core = np.fromiter((len(nb) >= params.min_pts for nb in neighbours), dtype=bool, count=n)
    labels = np.full(n, NOISE, dtype=np.int64)
    cluster = 0
    for seed in range(n):
        if labels[seed] != NOISE or not core[seed]:
            continue
        labels[seed] = cluster
        queue = deque([seed])
        while queue:
            p = queue.popleft()
            for q in neighbours[p]:
                if labels[q] == NOISE:
                    labels[q] = cluster
                    if core[q]:
                        queue.append(q)
        cluster += 1
    return labels


def split_instances(seg: SegmentedCloud, params: Optional[Mapping[int, DbscanParams]] = None) -> list:
    """One :class:`InstanceCloud` per DBSCAN cluster of every foreground class.

    ``params`` maps class index to clustering parameters; missing classes use
    the crack or areal defaults according to the catalog's geometry policy.
    Instances come back ordered by class index, then descending size.
    """
    params = dict(params or {})
    catalog = seg.catalog
    pts_all = seg.cloud.positions
    nrm_all = seg.cloud.normals
    out = []
    for cls in catalog.foreground:
        idx = np.nonzero(seg.labels == cls)[0]
        if not len(idx):
            continue
        p = params.get(cls)
        if p is None:
            p = DEFAULT_CRACK_PARAMS if catalog.kind(cls) == "medial_axis" else DEFAULT_AREAL_PARAMS
        labels = dbscan(pts_all[idx], p)
        groups = []
        for lab in np.unique(labels[labels != NOISE]):
            members = idx[labels == lab]
            # border points claimed by an earlier cluster can leave a cluster short
            if len(members) >= p.min_pts:
                groups.append(members)
        groups.sort(key=lambda m: (-len(m), int(m[0])))
        for members in groups:
            out.append((cls, members))
    instances = []
    for i, (cls, members) in enumerate(out):
        instances.append(
            InstanceCloud(
                instance_id=i,
                class_index=int(cls),
                indices=members,
                positions=pts_all[members],
                normals=None if nrm_all is None else nrm_all[members],
                # mean fused score; a local convention, not a calibrated probability
                confidence=float(seg.scores[members, cls].mean()),
            )
        )
    return instances
