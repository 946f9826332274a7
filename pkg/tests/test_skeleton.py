import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from damage25d.errors import ValidationError
from damage25d.geometry import NeighborGraph
from damage25d.skeleton import (
    ContractionParams,
    ExtractionParams,
    build_laplacian,
    contract,
    douglas_peucker,
    extract_medial_axis,
    farthest_point_sample,
    minimum_spanning_tree,
    partition_polylines,
)


def strip(length=0.3, width=0.008, spacing=0.002, seed=0):
    r = np.random.default_rng(seed)
    n = int(length * width / spacing ** 2)
    s = r.uniform(0, length, n)
    w = r.uniform(-width / 2, width / 2, n)
    return np.c_[s, w, np.zeros(n)]


def jittered_strip(length, width=0.008, spacing=0.002, seed=0):
    r = np.random.default_rng(seed)
    s, w = np.meshgrid(np.arange(0, length, spacing), np.arange(-width / 2, width / 2 + 1e-12, spacing))
    g = np.c_[s.ravel(), w.ravel(), np.zeros(s.size)]
    return g + r.uniform(-0.2, 0.2, g.shape) * spacing * [1, 1, 0]


def random_rotation(r):
    q, _ = np.linalg.qr(r.normal(size=(3, 3)))
    return q * np.sign(np.linalg.det(q))


# -- Laplacian ---------------------------------------------------------------

def test_laplacian_three_collinear():
    L = build_laplacian(np.array([[0.0, 0, 0], [1, 0, 0], [2, 0, 0]]), k=2).toarray()
    np.testing.assert_allclose(L.sum(axis=1), 0, atol=1e-12)
    assert L[1, 0] == L[1, 2]


def test_laplacian_symmetric_and_zero_rows(rng):
    L = build_laplacian(rng.random((200, 3)), k=8)
    assert abs(L - L.T).max() <= 1e-12
    assert np.abs(np.asarray(L.sum(axis=1))).max() <= 1e-8


def test_laplacian_null_space(rng):
    L = build_laplacian(rng.random((20, 3)), k=6).toarray()
    w, v = np.linalg.eigh(L)
    assert abs(w[0]) < 1e-10 and w[1] > 1e-8
    np.testing.assert_allclose(np.abs(v[:, 0]), 1 / np.sqrt(20), atol=1e-8)


def test_laplacian_errors():
    with pytest.raises(ValidationError, match="too few points"):
        build_laplacian(np.zeros((3, 3)), k=8)
    two = np.r_[np.random.default_rng(0).random((10, 3)), np.random.default_rng(1).random((10, 3)) + 100]
    with pytest.raises(ValidationError, match="disconnected"):
        build_laplacian(two, k=3)


# -- contraction -------------------------------------------------------------

def test_contraction_monotone_and_energy():
    trace = []
    contract(strip(), ContractionParams(), trace)
    assert len(trace) >= 2
    ext = [strip_extent(strip())] + [t.mean_extent for t in trace]
    assert all(b <= a * (1 + 1e-12) for a, b in zip(ext, ext[1:]))
    for t in trace:
        assert t.energy_after <= t.energy_before * (1 + 1e-9) + 1e-18


def strip_extent(pts, k=8):
    from damage25d.skeleton import _knn_edges, _node_extent

    a, b, _ = _knn_edges(pts, k)
    return float(_node_extent(len(pts), a, b, np.linalg.norm(pts[a] - pts[b], axis=1)).mean())


def test_contraction_keeps_collinear_points_on_line(rng):
    d = np.array([1.0, 2.0, -0.5]) / np.linalg.norm([1.0, 2.0, -0.5])
    o = np.array([0.3, -0.1, 2.0])
    pts = o + rng.uniform(0, 1, 100)[:, None] * d
    out = contract(pts)
    rel = out - o
    off = rel - (rel @ d)[:, None] * d
    assert np.linalg.norm(off, axis=1).max() <= 1e-6


def test_cylinder_contracts_onto_axis():
    r = np.random.default_rng(3)
    n = 2000
    z = r.uniform(0, 1, n)
    phi = r.uniform(0, 2 * np.pi, n)
    pts = np.c_[0.005 * np.cos(phi), 0.005 * np.sin(phi), z]
    out = contract(pts)
    dist = np.hypot(out[:, 0], out[:, 1])
    assert np.mean(dist <= 0.001) >= 0.95


def test_too_few_points():
    with pytest.raises(ValidationError, match="too few points"):
        contract(np.random.default_rng(0).random((3, 3)), ContractionParams(k=8))


def test_params_validation():
    for kw in ({"k": 0}, {"amplification": 1.0}, {"max_iterations": 0}, {"convergence_ratio": 0},
               {"attraction": "x"}):
        with pytest.raises(ValidationError):
            ContractionParams(**kw)


# -- spanning tree -----------------------------------------------------------

def prufer_trees(n):
    for seq in itertools.product(range(n), repeat=n - 2):
        degree = [1] * n
        for x in seq:
            degree[x] += 1
        edges = []
        for x in seq:
            leaf = degree.index(1)
            edges.append((leaf, x))
            degree[leaf] -= 1
            degree[x] -= 1
        u, v = [i for i in range(n) if degree[i] == 1]
        edges.append((u, v))
        yield edges


def brute_mst_weight(pts):
    n = len(pts)
    D = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
    if n == 2:
        return D[0, 1]
    return min(sum(D[a, b] for a, b in t) for t in prufer_trees(n))


def test_prufer_count():
    assert sum(1 for _ in prufer_trees(4)) == 16


def test_mst_collinear():
    t = minimum_spanning_tree(np.array([[0.0, 0, 0], [1, 0, 0], [2, 0, 0]]))
    assert sorted(map(tuple, np.sort(t.edges, axis=1).tolist())) == [(0, 1), (1, 2)]
    assert t.weights.sum() == pytest.approx(2.0)


def test_mst_unit_square():
    sq = np.array([[0.0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]])
    assert minimum_spanning_tree(sq).weights.sum() == pytest.approx(3.0)
    assert brute_mst_weight(sq) == pytest.approx(3.0)


@pytest.mark.parametrize("n", [2, 3, 4, 5, 6, 7, 8])
def test_mst_matches_exhaustive(n):
    r = np.random.default_rng(n)
    for _ in range(3 if n < 8 else 1):
        pts = r.random((n, 3))
        t = minimum_spanning_tree(pts)
        assert len(t.edges) == n - 1
        assert t.weights.sum() == pytest.approx(brute_mst_weight(pts), rel=1e-12)


def test_mst_knn_path_matches_complete(rng):
    pts = np.r_[rng.random((150, 3)), rng.random((150, 3)) + [3, 0, 0]]
    exact = minimum_spanning_tree(pts).weights.sum()
    approx = minimum_spanning_tree(pts, complete_limit=10, k=8)
    assert len(approx.edges) == 299
    assert approx.weights.sum() == pytest.approx(exact, rel=1e-9)


def test_mst_needs_two_points():
    with pytest.raises(ValidationError):
        minimum_spanning_tree(np.zeros((1, 3)))


# -- partition ---------------------------------------------------------------

def _tree(edges):
    n = max(max(e) for e in edges) + 1
    return NeighborGraph(n, np.array(edges), np.ones(len(edges)))


def _edge_multiset(axis):
    out = []
    for p in axis.node_paths:
        out += [tuple(sorted(e)) for e in zip(p[:-1].tolist(), p[1:].tolist())]
    return sorted(out)


def test_path_of_five():
    ax = partition_polylines(_tree([(0, 1), (1, 2), (2, 3), (3, 4)]))
    assert len(ax) == 1 and len(ax.node_paths[0]) == 5


def test_y_tree():
    ax = partition_polylines(_tree([(0, 1), (1, 2), (2, 3), (3, 4), (2, 5)]))
    assert len(ax) == 3
    assert all(2 in (p[0], p[-1]) for p in ax.node_paths)
    assert ax.branch_nodes == (2,)


def test_two_branch_nodes_give_five_polylines():
    edges = [(0, 1), (1, 2), (1, 3), (3, 4), (4, 5), (4, 6)]
    ax = partition_polylines(_tree(edges))
    assert len(ax) == 5
    assert _edge_multiset(ax) == sorted(edges)


@given(st.integers(3, 40), st.integers(0, 10_000))
def test_partition_conserves_edges_and_counts(n, seed):
    r = np.random.default_rng(seed)
    edges = [(int(r.integers(0, i)), i) for i in range(1, n)]
    ax = partition_polylines(_tree(edges))
    assert _edge_multiset(ax) == sorted(tuple(sorted(e)) for e in edges)
    deg = np.bincount(np.array(edges).ravel(), minlength=n)
    assert len(ax) == sum(d - 1 for d in deg if d >= 3) + 1
    for p in ax.node_paths:
        assert len(p) >= 2 and all(deg[i] == 2 for i in p[1:-1])


def test_partition_rejects_non_tree():
    with pytest.raises(ValidationError):
        partition_polylines(_tree([(0, 1), (1, 2), (2, 0)]))


# -- simplification and sampling ---------------------------------------------

def test_douglas_peucker():
    line = np.c_[np.linspace(0, 1, 11), np.zeros(11), np.zeros(11)]
    line[5, 1] = 0.0005
    assert douglas_peucker(line, 0.001).tolist() == [0, 10]
    line[:, 1] = 0.1 * (0.5 - np.abs(line[:, 0] - 0.5))
    assert douglas_peucker(line, 0.001).tolist() == [0, 5, 10]
    assert douglas_peucker(line[:2], 0.001).tolist() == [0, 1]


def test_farthest_point_sample(rng):
    pts = rng.random((300, 3))
    sel = farthest_point_sample(pts, 20)
    assert len(set(sel.tolist())) == 20
    d = np.linalg.norm(pts - pts.mean(0), axis=1)
    assert sel[0] == np.argmax(d)
    assert len(farthest_point_sample(pts, 300, min_spacing=0.2)) < 300


# -- full extraction ---------------------------------------------------------

def _hausdorff_to_segment(pts, a, b):
    ab = b - a
    t = np.clip((pts - a) @ ab / (ab @ ab), 0, 1)
    return np.linalg.norm(pts - a - t[:, None] * ab, axis=1).max()


def test_straight_strip_gives_one_polyline():
    ax = extract_medial_axis(strip())
    assert len(ax) == 1
    line = ax.polylines[0]
    assert _hausdorff_to_segment(line, np.zeros(3), np.array([0.3, 0, 0])) <= 0.002
    # and the other direction: the centerline is covered end to end
    ends = np.sort(line[[0, -1], 0])
    assert ends[0] <= 0.01 and ends[1] >= 0.29


def y_crack(seed=0, spacing=0.002, width=0.008):
    r = np.random.default_rng(seed)
    j = np.zeros(3)
    tips = [np.array([0.0, -0.15, 0]), np.array([-0.1, 0.1, 0]), np.array([0.1, 0.1, 0])]
    parts = []
    for tip in tips:
        L = np.linalg.norm(tip - j)
        n = int(L * width / spacing ** 2)
        d = (tip - j) / L
        perp = np.array([-d[1], d[0], 0])
        parts.append(j + r.uniform(0, L, n)[:, None] * d + r.uniform(-width / 2, width / 2, n)[:, None] * perp)
    return np.vstack(parts)


def test_y_crack_gives_three_polylines():
    ax = extract_medial_axis(y_crack())
    assert len(ax) == 3
    shared = [p[0] for p in ax.polylines] + [p[-1] for p in ax.polylines]
    c = np.array(shared)
    # the junction appears once in every polyline
    counts = [(np.linalg.norm(c - x, axis=1) < 1e-12).sum() for x in c]
    junction = c[int(np.argmax(counts))]
    assert max(counts) == 3
    assert np.linalg.norm(junction) <= 0.005


def test_empty_instance():
    with pytest.raises(ValidationError):
        extract_medial_axis(np.zeros((0, 3)))


@given(st.integers(0, 10_000))
def test_rigid_transform_equivariance(seed):
    r = np.random.default_rng(seed)
    pts = jittered_strip(0.12, seed=seed)
    R = random_rotation(r)
    t = r.uniform(-5, 5, 3)
    p = ExtractionParams()
    a = extract_medial_axis(pts, p)
    b = extract_medial_axis(pts @ R.T + t, p)
    assert len(a) == len(b)
    for la, lb in zip(a.polylines, b.polylines):
        np.testing.assert_allclose(la @ R.T + t, lb, atol=1e-6)
