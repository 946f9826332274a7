"""Point-cloud container, k-nearest-neighbour queries and normal estimation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .errors import ValidationError

NORMAL_TOL = 1e-6


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class PointCloud:
    """Immutable point set with optional per-point normals and RGB colors."""

    positions: np.ndarray
    normals: Optional[np.ndarray] = None
    colors: Optional[np.ndarray] = None

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise ValidationError(f"positions must have shape (n, 3), got {pos.shape}")
        if not np.all(np.isfinite(pos)):
            raise ValidationError("positions contain non-finite coordinates")
        object.__setattr__(self, "positions", _frozen(pos))
        n = len(pos)
        if self.normals is not None:
            nrm = np.asarray(self.normals, dtype=np.float64)
            if nrm.shape != (n, 3):
                raise ValidationError(f"normals shape {nrm.shape} does not match {n} points")
            lengths = np.linalg.norm(nrm, axis=1)
            if n and np.max(np.abs(lengths - 1.0)) > NORMAL_TOL:
                raise ValidationError("normals must be unit length")
            object.__setattr__(self, "normals", _frozen(nrm))
        if self.colors is not None:
            col = np.asarray(self.colors)
            if col.shape != (n, 3):
                raise ValidationError(f"colors shape {col.shape} does not match {n} points")
            object.__setattr__(self, "colors", _frozen(col.astype(np.uint8)))

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def has_normals(self) -> bool:
        return self.normals is not None

    def with_normals(self, normals: np.ndarray) -> "PointCloud":
        return PointCloud(self.positions, normals, self.colors)

    def subset(self, indices) -> "PointCloud":
        idx = np.asarray(indices, dtype=np.int64)
        return PointCloud(
            self.positions[idx],
            None if self.normals is None else self.normals[idx],
            None if self.colors is None else self.colors[idx],
        )


@dataclass(frozen=True)
class NeighborGraph:
    """Undirected weighted graph; ``edges`` rows are ``(a, b)`` with ``a < b``."""

    n_nodes: int
    edges: np.ndarray
    weights: np.ndarray
    k: int = 0
    _adjacency: list = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if len(edges) != len(weights):
            raise ValidationError("edge and weight counts differ")
        if len(edges):
            if np.any(edges[:, 0] == edges[:, 1]):
                raise ValidationError("self-edges are not allowed")
            if np.any(edges < 0) or np.any(edges >= self.n_nodes):
                raise ValidationError("edge endpoint out of range")
            if not np.all(np.isfinite(weights)) or np.any(weights <= 0):
                raise ValidationError("edge weights must be positive and finite")
            lo = np.minimum(edges[:, 0], edges[:, 1])
            hi = np.maximum(edges[:, 0], edges[:, 1])
            order = np.lexsort((hi, lo))
            edges = np.stack([lo, hi], axis=1)[order]
            weights = weights[order]
            if np.any(np.all(np.diff(edges, axis=0) == 0, axis=1)):
                raise ValidationError("duplicate edges are not allowed")
        object.__setattr__(self, "edges", _frozen(edges))
        object.__setattr__(self, "weights", _frozen(weights))

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def edge_set(self) -> set:
        return {(int(a), int(b)) for a, b in self.edges}

    def total_weight(self) -> float:
        return float(self.weights.sum())

    def neighbors(self, node: int) -> list:
        if self._adjacency is None:
            adj = [[] for _ in range(self.n_nodes)]
            for a, b in self.edges:
                adj[a].append(int(b))
                adj[b].append(int(a))
            object.__setattr__(self, "_adjacency", adj)
        return list(self._adjacency[node])

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.n_nodes, dtype=np.int64)
        np.add.at(deg, self.edges.reshape(-1), 1)
        return deg

    def to_sparse(self):
        from scipy.sparse import coo_matrix

        a, b = self.edges[:, 0], self.edges[:, 1]
        m = coo_matrix(
            (np.concatenate([self.weights, self.weights]), (np.concatenate([a, b]), np.concatenate([b, a]))),
            shape=(self.n_nodes, self.n_nodes),
        )
        return m.tocsr()


def knn_indices(positions: np.ndarray, k: int, tree: Optional[cKDTree] = None):
    """Return ``(indices, distances)`` of the ``k`` nearest other points of each point.

    Rows are sorted by distance, exact distance ties are broken by the
    lexicographic order of the neighbour coordinates so the result depends
    only on the geometry, never on input order.
    """
    pts = np.asarray(positions, dtype=np.float64)
    n = len(pts)
    if n < k + 1:
        raise ValidationError(f"too few points: need at least {k + 1}, got {n}")
    if k < 1:
        raise ValidationError("k must be positive")
    if tree is None:
        tree = cKDTree(pts)
    # Lexicographic rank of every point, used as the tie-break key.
    rank = np.empty(n, dtype=np.int64)
    rank[np.lexsort(pts.T[::-1])] = np.arange(n)

    q = min(n, k + 1 + 4)
    _, cand = tree.query(pts, k=q)
    cand = np.asarray(cand).reshape(n, q)
    idx = np.empty((n, k), dtype=np.int64)
    dist = np.empty((n, k), dtype=np.float64)
    for lo in range(0, n, 65536):
        hi = min(n, lo + 65536)
        c = cand[lo:hi]
        d = np.sqrt(((pts[c] - pts[lo:hi, None, :]) ** 2).sum(-1))
        order = np.lexsort((rank[c], d), axis=-1)
        c = np.take_along_axis(c, order, axis=1)
        d = np.take_along_axis(d, order, axis=1)
        # self sits at column 0 (distance 0, duplicates are rejected upstream)
        idx[lo:hi] = c[:, 1:k + 1]
        dist[lo:hi] = d[:, 1:k + 1]
        if q < n:
            # ties reaching past the queried candidates need a wider query
            spill = np.nonzero(d[:, k] >= d[:, -1] * (1 - 1e-12))[0]
            for j in spill:
                i = lo + j
                r = d[j, k]
                ball = np.asarray(tree.query_ball_point(pts[i], r * (1 + 1e-9) + 1e-300))
                bd = np.sqrt(((pts[ball] - pts[i]) ** 2).sum(-1))
                o = np.lexsort((rank[ball], bd))
                ball, bd = ball[o], bd[o]
                idx[i] = ball[1:k + 1]
                dist[i] = bd[1:k + 1]
    return idx, dist


def _check_duplicates(positions: np.ndarray, tree: cKDTree):
    d, _ = tree.query(positions, k=2)
    if np.any(d[:, 1] <= 0):
        raise ValidationError("degenerate duplicate points")


def build_knn_graph(cloud, k: int) -> NeighborGraph:
    """Union-symmetrised k-NN graph weighted by Euclidean distance."""
    pts = cloud.positions if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    n = len(pts)
    if n < k + 1:
        raise ValidationError(f"too few points: need at least {k + 1}, got {n}")
    tree = cKDTree(pts)
    _check_duplicates(pts, tree)
    idx, dist = knn_indices(pts, k, tree)
    rows = np.repeat(np.arange(n), k)
    a = np.minimum(rows, idx.ravel())
    b = np.maximum(rows, idx.ravel())
    keys, first = np.unique(a * n + b, return_index=True)
    w = dist.ravel()[first]
    return NeighborGraph(n, np.stack([keys // n, keys % n], axis=1), w, k)


def estimate_normals(cloud: PointCloud, k: int = 16, viewpoint=None, camera_centers=None) -> PointCloud:
    """PCA normals over each point and its ``k`` nearest neighbours.

    Normals are flipped to face ``viewpoint``; without one they face the
    centroid of ``camera_centers``, and failing that the +z hemisphere.
    """
    if k < 3:
        raise ValidationError("k must be at least 3 for normal estimation")
    pts = cloud.positions
    if len(pts) < k + 1:
        raise ValidationError(f"too few points: need at least {k + 1}, got {len(pts)}")
    tree = cKDTree(pts)
    _, idx = tree.query(pts, k=k + 1)
    nb = pts[idx]
    centered = nb - nb.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered)
    _, vecs = np.linalg.eigh(cov)
    normals = vecs[:, :, 0]
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)

    if viewpoint is None and camera_centers is not None and len(camera_centers):
        viewpoint = np.asarray(camera_centers, dtype=np.float64).mean(axis=0)
    if viewpoint is not None:
        facing = np.einsum("ij,ij->i", normals, np.asarray(viewpoint, dtype=np.float64) - pts)
    else:
        facing = normals[:, 2]
    normals[facing < 0] *= -1
    return cloud.with_normals(normals)


def median_nn_distance(positions: np.ndarray) -> float:
    pts = np.asarray(positions, dtype=np.float64)
    if len(pts) < 2:
        raise ValidationError("need at least 2 points for a spacing estimate")
    d, _ = cKDTree(pts).query(pts, k=2)
    return float(np.median(d[:, 1]))
