"""Crack medial axes: Laplacian contraction, spanning tree, polyline split.

The contraction step repeatedly solves, per coordinate, the least-squares
system

    [ W_L * L     ]        [ 0       ]
    [ diag(W_H)   ] P'  =  [ W_H * P ]

where ``L`` is a Gaussian-weighted graph Laplacian over the k-NN graph and
``P`` the current positions.  The contraction weight grows geometrically and
the attraction weight follows the shrinkage of the local neighbourhoods, so
the cloud collapses sideways onto its centerline while staying anchored
along it.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components
from scipy.sparse.csgraph import minimum_spanning_tree as _csgraph_mst
from scipy.sparse.linalg import splu
from scipy.spatial import cKDTree
from scipy.spatial.distance import pdist, squareform

from .errors import ProcessingError, ValidationError
from .geometry import NeighborGraph, median_nn_distance

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ContractionParams:
    k: int = 8
    contraction_weight: float = 1.0
    attraction_weight: float = 1.0
    amplification: float = 3.0
    max_iterations: int = 20
    convergence_ratio: float = 0.01
    max_contraction_weight: float = 2048.0
    # "global": one attraction weight from the mean neighbourhood shrinkage;
    # "local": per-point weights from each point's own shrinkage.
    attraction: str = "global"

    def __post_init__(self):
        if self.k < 1:
            raise ValidationError("k must be positive")
        for name in ("contraction_weight", "attraction_weight", "convergence_ratio", "max_contraction_weight"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be positive")
        if not self.amplification > 1:
            raise ValidationError("amplification must exceed 1")
        if self.max_iterations < 1:
            raise ValidationError("max_iterations must be at least 1")
        if self.attraction not in ("global", "local"):
            raise ValidationError(f"unknown attraction mode {self.attraction!r}")


@dataclass(frozen=True)
class ExtractionParams:
    contraction: ContractionParams = field(default_factory=ContractionParams)
    max_points: int = 50_000
    max_vertices: int = 500
    # None means "the median point spacing of the instance"
    min_vertex_spacing: Optional[float] = None
    # terminal branches shorter than this are pruned, branch nodes closer than
    # this are merged; None means 5x the instance's median point spacing
    spur_length: Optional[float] = None
    simplify_tolerance: float = 0.001
    mst_complete_limit: int = 2000
    mst_k: int = 8
    seed: int = 0


@dataclass
class ContractionState:
    original: np.ndarray
    current: np.ndarray
    laplacian: sparse.csr_matrix
    w_l: float
    w_h: np.ndarray


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    w_l: float
    mean_extent: float
    thickness: float
    energy_before: float
    energy_after: float


@dataclass(frozen=True, eq=False)
class MedialAxis:
    """Branch-free polylines; ``node_paths`` index the vertex array they came from."""

    polylines: list
    node_paths: list
    end_nodes: tuple = ()
    branch_nodes: tuple = ()
    instance_id: Optional[int] = None

    def __len__(self):
        return len(self.polylines)

    def total_length(self) -> float:
        return float(sum(np.linalg.norm(np.diff(p, axis=0), axis=1).sum() for p in self.polylines))


def _positions(instance) -> np.ndarray:
    pts = getattr(instance, "positions", instance)
    return np.asarray(pts, dtype=np.float64).reshape(-1, 3)


def _knn_edges(points: np.ndarray, k: int):
    n = len(points)
    if n < k + 1:
        raise ValidationError(f"too few points: need at least {k + 1}, got {n}")
    dist, idx = cKDTree(points).query(points, k=k + 1)
    # drop each point's own entry; with duplicates it may sit past column 0
    drop = idx == np.arange(n)[:, None]
    drop[~drop.any(axis=1), -1] = True
    drop &= np.cumsum(drop, axis=1) == 1
    cols = idx[~drop].reshape(n, k).ravel()
    dist = np.c_[np.zeros(n), dist[~drop].reshape(n, k)]
    rows = np.repeat(np.arange(n), k)
    a = np.minimum(rows, cols)
    b = np.maximum(rows, cols)
    key = np.unique(a * n + b)
    a, b = key // n, key % n
    knn_mean = float(dist[:, 1:].mean())
    return a, b, knn_mean


def _check_connected(n: int, a: np.ndarray, b: np.ndarray):
    adj = sparse.coo_matrix((np.ones(len(a)), (a, b)), shape=(n, n))
    n_comp, labels = connected_components(adj, directed=False)
    if n_comp > 1:
        sizes = np.bincount(labels)
        raise ValidationError(
            f"k-NN graph is disconnected: {n_comp} components of sizes {sorted(sizes.tolist(), reverse=True)[:10]}"
        )


def _laplacian(n: int, a, b, w) -> sparse.csr_matrix:
    W = sparse.coo_matrix((np.r_[w, w], (np.r_[a, b], np.r_[b, a])), shape=(n, n)).tocsr()
    return (sparse.diags(np.asarray(W.sum(axis=1)).ravel()) - W).tocsr()


def build_laplacian(points, k: int = 8) -> sparse.csr_matrix:
    """Graph Laplacian ``D - W`` of the symmetrised k-NN graph.

    Edge weights are ``exp(-d^2 / sigma^2)`` with ``sigma`` the mean k-NN
    distance.
    """
    pts = _positions(points)
    n = len(pts)
    a, b, sigma = _knn_edges(pts, k)
    _check_connected(n, a, b)
    d = np.linalg.norm(pts[a] - pts[b], axis=1)
    if sigma <= 0:
        raise ValidationError("degenerate duplicate points")
    return _laplacian(n, a, b, np.exp(-(d / sigma) ** 2))


def _node_extent(n, a, b, d) -> np.ndarray:
    s = np.bincount(a, d, n) + np.bincount(b, d, n)
    c = np.bincount(a, None, n) + np.bincount(b, None, n)
    return s / np.maximum(c, 1)


def local_thickness(points: np.ndarray, k: int) -> np.ndarray:
    """Per-point spread orthogonal to the dominant local direction.

    Square root of the two smaller covariance eigenvalues of each point's
    k-NN neighbourhood; zero on a curve, positive on surfaces and tubes.
    """
    _, idx = cKDTree(points).query(points, k=k + 1)
    nb = points[idx]
    c = nb - nb.mean(axis=1, keepdims=True)
    ev = np.linalg.eigvalsh(np.einsum("nki,nkj->nij", c, c) / (k + 1))
    return np.sqrt(np.maximum(ev[:, 0] + ev[:, 1], 0.0))


def contract(instance, params: ContractionParams = ContractionParams(), trace: Optional[list] = None) -> np.ndarray:
    """Collapse a point set onto its curve skeleton.

    Attraction weights are scaled per point by the initial neighbourhood
    extent, a stand-in for the sample's surface area.  The neighbourhood
    topology is fixed at the first iteration; the Gaussian
    edge weights are recomputed from the current positions each iteration
    with edge lengths clamped at their initial value, so contracted edges
    never lose weight and the graph cannot fragment.  Iteration stops once
    the mean local thickness drops below ``convergence_ratio`` times its
    initial value, or after ``max_iterations``.

    When ``trace`` is a list, one :class:`IterationRecord` per iteration is
    appended to it.
    """
    P0 = _positions(instance)
    n = len(P0)
    k = params.k
    if n < k + 1:
        raise ValidationError(f"too few points: need at least {k + 1}, got {n}")
    a, b, _ = _knn_edges(P0, k)
    _check_connected(n, a, b)
    d0 = np.linalg.norm(P0[a] - P0[b], axis=1)
    sigma = float(d0.mean())
    if sigma <= 0:
        raise ValidationError("degenerate duplicate points")
    S0 = _node_extent(n, a, b, d0)
    t0 = float(local_thickness(P0, k).mean())
    scale = float(np.max(np.ptp(P0, axis=0)))
    if t0 <= 1e-12 * max(scale, 1e-300):
        # already a curve: nothing to contract
        return P0.copy()

    # per-point mass ~ local sample area, so sparse regions pull as hard as
    # dense ones and the skeleton follows the surface, not the sampling
    mass = S0 / S0.mean()
    state = ContractionState(P0, P0.copy(), None, params.contraction_weight, params.attraction_weight * mass)
    for it in range(params.max_iterations):
        P = state.current
        d = np.minimum(np.linalg.norm(P[a] - P[b], axis=1), d0)
        L = _laplacian(n, a, b, np.exp(-(d / sigma) ** 2))
        state.laplacian = L
        wl, wh = state.w_l, state.w_h
        A = (wl ** 2) * (L.T @ L) + sparse.diags(wh ** 2)
        rhs = (wh ** 2)[:, None] * P
        try:
            P_new = splu(A.tocsc()).solve(rhs)
        except RuntimeError as exc:
            raise ProcessingError(f"contraction solve failed at iteration {it}: {exc}") from exc
        if not np.all(np.isfinite(P_new)):
            raise ProcessingError(f"contraction solve produced non-finite values at iteration {it}")

        S = _node_extent(n, a, b, np.linalg.norm(P_new[a] - P_new[b], axis=1))
        thick = float(local_thickness(P_new, k).mean())
        if trace is not None:
            e_before = float((wl ** 2) * np.sum((L @ P) ** 2))
            e_after = float((wl ** 2) * np.sum((L @ P_new) ** 2) + np.sum((wh ** 2)[:, None] * (P_new - P) ** 2))
            trace.append(IterationRecord(it, wl, float(S.mean()), thick, e_before, e_after))
        log.debug("contraction it=%d w_l=%.3g extent=%.4g thickness=%.4g", it, wl, S.mean(), thick)
        state.current = P_new
        if thick < params.convergence_ratio * t0:
            break
        state.w_l = min(wl * params.amplification, params.max_contraction_weight)
        if params.attraction == "global":
            state.w_h = params.attraction_weight * mass * (S0.mean() / max(S.mean(), 1e-300))
        else:
            state.w_h = params.attraction_weight * mass * S0 / np.maximum(S, 1e-12 * sigma)
    return state.current


def farthest_point_sample(points: np.ndarray, max_points: int, min_spacing: float = 0.0) -> np.ndarray:
    """Indices of a farthest-point subsample.

    Starts from the point farthest from the centroid and stops at
    ``max_points`` or once the next pick would be closer than ``min_spacing``
    to every chosen point.
    """
    pts = _positions(points)
    n = len(pts)
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    first = int(np.argmax(np.linalg.norm(pts - pts.mean(axis=0), axis=1)))
    chosen = [first]
    dist = np.linalg.norm(pts - pts[first], axis=1)
    while len(chosen) < min(max_points, n):
        nxt = int(np.argmax(dist))
        if dist[nxt] <= max(min_spacing, 0.0) or dist[nxt] == 0:
            break
        chosen.append(nxt)
        dist = np.minimum(dist, np.linalg.norm(pts - pts[nxt], axis=1))
    return np.asarray(chosen, dtype=np.int64)


def minimum_spanning_tree(points, complete_limit: int = 2000, k: int = 8) -> NeighborGraph:
    """Euclidean MST; exact on the complete graph up to ``complete_limit`` points.

    Larger inputs use the k-NN graph, with leftover components joined by
    their shortest bridging edges.
    """
    pts = _positions(points)
    n = len(pts)
    if n < 2:
        raise ValidationError("minimum spanning tree needs at least 2 points")
    if n <= complete_limit:
        D = squareform(pdist(pts))
        if np.any(D[np.triu_indices(n, 1)] <= 0):
            raise ValidationError("degenerate duplicate points")
        T = _csgraph_mst(D).tocoo()
        return NeighborGraph(n, np.stack([T.row, T.col], axis=1), T.data)

    kk = min(k, n - 1)
    dist, idx = cKDTree(pts).query(pts, k=kk + 1)
    if np.any(dist[:, 1] <= 0):
        raise ValidationError("degenerate duplicate points")
    rows = np.repeat(np.arange(n), kk)
    G = sparse.coo_matrix((dist[:, 1:].ravel(), (rows, idx[:, 1:].ravel())), shape=(n, n)).tocsr()
    G = G.maximum(G.T)
    T = _csgraph_mst(G).tocoo()
    edges = list(zip(T.row.tolist(), T.col.tolist()))
    weights = T.data.tolist()
    n_comp, comp = connected_components(T, directed=False)
    while n_comp > 1:
        # bridge the component holding node 0 to its nearest other component
        inside = np.nonzero(comp == comp[0])[0]
        outside = np.nonzero(comp != comp[0])[0]
        dd, jj = cKDTree(pts[outside]).query(pts[inside], k=1)
        best = int(np.argmin(dd))
        u, v = int(inside[best]), int(outside[jj[best]])
        edges.append((u, v))
        weights.append(float(dd[best]))
        comp[comp == comp[v]] = comp[0]
        n_comp -= 1
    return NeighborGraph(n, np.asarray(edges), np.asarray(weights))


def _adjacency(n_nodes, edges) -> list:
    adj = [set() for _ in range(n_nodes)]
    for a, b in edges:
        adj[int(a)].add(int(b))
        adj[int(b)].add(int(a))
    return adj


def _trace_paths(adj: list) -> list:
    """Split a forest (as adjacency sets) into paths between nodes of degree != 2."""
    deg = [len(s) for s in adj]
    used = set()
    paths = []
    for start in range(len(adj)):
        if deg[start] == 0 or deg[start] == 2:
            continue
        for nxt in sorted(adj[start]):
            if (start, nxt) in used:
                continue
            path = [start]
            prev, cur = start, nxt
            used.add((start, nxt))
            used.add((nxt, start))
            while True:
                path.append(cur)
                if deg[cur] != 2:
                    break
                (step,) = [x for x in adj[cur] if x != prev]
                used.add((cur, step))
                used.add((step, cur))
                prev, cur = cur, step
            paths.append(path)
    return paths


def partition_polylines(tree: NeighborGraph, points=None, instance_id: Optional[int] = None) -> MedialAxis:
    """Cut a tree at every branching node into branch-free polylines.

    Branching nodes are repeated at the start or end of every polyline that
    touches them.
    """
    if tree.n_edges == 0:
        raise ValidationError("tree has no edges")
    if tree.n_edges != tree.n_nodes - 1 or connected_components(tree.to_sparse(), directed=False)[0] != 1:
        raise ValidationError("input graph is not a spanning tree")
    adj = _adjacency(tree.n_nodes, tree.edges)
    return _axis_from_adjacency(adj, points, instance_id)


def _axis_from_adjacency(adj, points, instance_id):
    paths = _trace_paths(adj)
    deg = np.array([len(s) for s in adj])
    pts = None if points is None else _positions(points)
    polylines = [pts[p] if pts is not None else np.asarray(p) for p in paths]
    return MedialAxis(
        polylines=polylines,
        node_paths=[np.asarray(p, dtype=np.int64) for p in paths],
        end_nodes=tuple(int(i) for i in np.nonzero(deg == 1)[0]),
        branch_nodes=tuple(int(i) for i in np.nonzero(deg >= 3)[0]),
        instance_id=instance_id,
    )


def _path_length(pts, path) -> float:
    return float(np.linalg.norm(np.diff(pts[path], axis=0), axis=1).sum())


def prune_tree(adj: list, pts: np.ndarray, spur_length: float) -> list:
    """Drop short terminal branches and merge nearby branching nodes, in place."""
    changed = True
    while changed:
        changed = False
        deg = [len(s) for s in adj]
        for path in _trace_paths(adj):
            a, b = path[0], path[-1]
            if not ((deg[a] == 1) ^ (deg[b] == 1)):
                continue
            if _path_length(pts, path) >= spur_length:
                continue
            if deg[b] == 1:
                path = path[::-1]
            # path runs from the leaf to the branching node
            for u, v in zip(path[:-1], path[1:]):
                adj[u].discard(v)
                adj[v].discard(u)
            changed = True
            break
        if changed:
            continue
        deg = [len(s) for s in adj]
        for path in _trace_paths(adj):
            a, b = path[0], path[-1]
            if deg[a] < 3 or deg[b] < 3 or _path_length(pts, path) >= spur_length:
                continue
            # collapse the connecting path into its first node
            for u, v in zip(path[:-1], path[1:]):
                adj[u].discard(v)
                adj[v].discard(u)
            for x in list(adj[b]):
                adj[x].discard(b)
                adj[x].add(a)
                adj[a].add(x)
            adj[b].clear()
            changed = True
            break
    return adj


def douglas_peucker(polyline: np.ndarray, tolerance: float) -> np.ndarray:
    """Indices of the vertices kept by Douglas-Peucker simplification."""
    pts = np.asarray(polyline, dtype=np.float64)
    m = len(pts)
    if m <= 2 or tolerance <= 0:
        return np.arange(m)
    keep = np.zeros(m, dtype=bool)
    keep[0] = keep[-1] = True
    stack = [(0, m - 1)]
    while stack:
        i, j = stack.pop()
        if j <= i + 1:
            continue
        seg = pts[j] - pts[i]
        rel = pts[i + 1:j] - pts[i]
        ls = np.dot(seg, seg)
        if ls == 0:
            d = np.linalg.norm(rel, axis=1)
        else:
            t = np.clip(rel @ seg / ls, 0.0, 1.0)
            d = np.linalg.norm(rel - t[:, None] * seg, axis=1)
        r = int(np.argmax(d))
        if d[r] > tolerance:
            keep[i + 1 + r] = True
            stack.append((i, i + 1 + r))
            stack.append((i + 1 + r, j))
    return np.nonzero(keep)[0]


def extract_medial_axis(instance, params: ExtractionParams = ExtractionParams(),
                        trace: Optional[list] = None) -> MedialAxis:
    """Contract, subsample, span, prune, split and simplify one crack instance."""
    pts = _positions(instance)
    if len(pts) == 0:
        raise ValidationError("instance is empty")
    instance_id = getattr(instance, "instance_id", None)
    if len(pts) > params.max_points:
        rng = np.random.default_rng(params.seed)
        pts = pts[np.sort(rng.choice(len(pts), params.max_points, replace=False))]
    spacing = median_nn_distance(pts) if len(pts) > 1 else 0.0
    contracted = contract(pts, params.contraction, trace)

    min_spacing = params.min_vertex_spacing if params.min_vertex_spacing is not None else spacing
    sel = farthest_point_sample(contracted, params.max_vertices, min_spacing)
    if len(sel) < 2:
        raise ProcessingError("instance contracted to a single point")
    verts = contracted[np.sort(sel)]
    tree = minimum_spanning_tree(verts, params.mst_complete_limit, params.mst_k)

    spur = params.spur_length if params.spur_length is not None else 5.0 * spacing
    adj = prune_tree(_adjacency(tree.n_nodes, tree.edges), verts, spur)
    axis = _axis_from_adjacency(adj, verts, instance_id)
    if not axis.polylines:
        raise ProcessingError("no polyline survived pruning")

    polylines, paths = [], []
    for line, path in zip(axis.polylines, axis.node_paths):
        keep = douglas_peucker(line, params.simplify_tolerance)
        polylines.append(line[keep])
        paths.append(path[keep])
    return MedialAxis(polylines, paths, axis.end_nodes, axis.branch_nodes, instance_id)
