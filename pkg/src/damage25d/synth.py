"""Synthetic walls with known damage, for end-to-end checks.

Damage is described in wall coordinates ``(s, h)``: ``s`` is arc length
along the wall from its left edge and ``h`` the height above its bottom edge,
both in meters.  A planar wall occupies the world plane z = 0 with its center
at the origin, x to the right and y up; a curved wall is bent around a
vertical axis at ``(0, *, -R)`` so that it bulges towards the cameras.
Cameras sit on a ring in front of the wall and look at its center.

Heatmaps are rendered by intersecting each pixel-center ray with the wall
and testing the hit point against the damage primitives, so they do not
share any code path with the projection used by the mapping stage.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .camera import CameraView, look_at
from .errors import ValidationError
from .geometry import PointCloud
from .manifest import write_cameras, write_heatmaps
from .mapping import DEFAULT_CLASSES, DEFAULT_GEOMETRY, ClassCatalog
from .ply import write_ply
from .records import InstanceRecord, write_instances

log = logging.getLogger(__name__)

SCENE_FILE = "scene.json"


@dataclass(frozen=True, eq=False)
class CrackLayout:
    """A crack as one or more polylines sharing their junction vertices."""

    polylines: tuple
    width: float = 0.008
    class_name: str = "crack"

    def __post_init__(self):
        lines = tuple(np.asarray(p, dtype=np.float64).reshape(-1, 2) for p in self.polylines)
        if not lines or any(len(p) < 2 for p in lines):
            raise ValidationError("crack polylines need at least 2 vertices each")
        if not self.width > 0:
            raise ValidationError("crack width must be positive")
        object.__setattr__(self, "polylines", lines)

    def __eq__(self, other):
        if not isinstance(other, CrackLayout):
            return NotImplemented
        return (self.width, self.class_name) == (other.width, other.class_name) and \
            len(self.polylines) == len(other.polylines) and \
            all(np.array_equal(a, b) for a, b in zip(self.polylines, other.polylines))

    __hash__ = None


@dataclass(frozen=True)
class PatchLayout:
    """Axis-aligned rectangle ``(s0, h0, s1, h1)`` in wall coordinates."""

    class_name: str
    bounds: tuple

    def __post_init__(self):
        b = tuple(float(x) for x in self.bounds)
        if len(b) != 4 or not (b[2] > b[0] and b[3] > b[1]):
            raise ValidationError(f"patch bounds must be (s0, h0, s1, h1) with s1 > s0, h1 > h0: {self.bounds}")
        object.__setattr__(self, "bounds", b)

    @property
    def area(self) -> float:
        s0, h0, s1, h1 = self.bounds
        return (s1 - s0) * (h1 - h0)


@dataclass(frozen=True)
class CameraRing:
    n_cameras: int = 12
    distance: float = 1.5
    radius: float = 0.3
    fx: float = 1000.0
    width: int = 1400
    height: int = 800

    def __post_init__(self):
        if self.n_cameras < 1 or self.width < 1 or self.height < 1:
            raise ValidationError("camera ring needs at least one camera and a non-empty image")
        if not (self.distance > 0 and self.fx > 0 and self.radius >= 0):
            raise ValidationError("camera ring distance and focal length must be positive")


@dataclass(frozen=True)
class SceneLayout:
    wall_width: float = 2.0
    wall_height: float = 1.0
    spacing: float = 0.002
    curvature_radius: Optional[float] = None
    cracks: tuple = ()
    patches: tuple = ()
    ring: CameraRing = field(default_factory=CameraRing)
    noise: float = 0.0
    seed: int = 0
    bits: int = 8
    classes: tuple = DEFAULT_CLASSES

    def __post_init__(self):
        if not (self.wall_width > 0 and self.wall_height > 0):
            raise ValidationError("wall dimensions must be positive")
        if not self.spacing > 0:
            raise ValidationError("point spacing must be positive")
        if self.curvature_radius is not None and not self.curvature_radius > 0:
            raise ValidationError("curvature radius must be positive")
        if self.curvature_radius is not None and self.wall_width / self.curvature_radius >= np.pi:
            raise ValidationError("wall wraps more than half way around its axis")
        if self.noise < 0:
            raise ValidationError("noise level must be non-negative")
        if self.bits not in (8, 16):
            raise ValidationError("bits must be 8 or 16")
        object.__setattr__(self, "cracks", tuple(self.cracks))
        object.__setattr__(self, "patches", tuple(self.patches))
        object.__setattr__(self, "classes", tuple(self.classes))
        for prim in self.cracks + self.patches:
            if prim.class_name not in self.classes[1:]:
                raise ValidationError(f"unknown damage class {prim.class_name!r}")
            pts = np.vstack(prim.polylines) if isinstance(prim, CrackLayout) else np.reshape(prim.bounds, (2, 2))
            if (pts.min(axis=0) < 0).any() or pts[:, 0].max() > self.wall_width or pts[:, 1].max() > self.wall_height:
                raise ValidationError(f"{prim.class_name} primitive extends beyond the wall")

    def catalog(self) -> ClassCatalog:
        geom = {c: DEFAULT_GEOMETRY.get(c, "polygon") for c in self.classes[1:]}
        return ClassCatalog(self.classes, 0, geom)


class Wall:
    def __init__(self, width: float, height: float, radius: Optional[float] = None):
        self.width = width
        self.height = height
        self.radius = radius

    def to_world(self, sh) -> np.ndarray:
        sh = np.asarray(sh, dtype=np.float64).reshape(-1, 2)
        x = sh[:, 0] - self.width / 2
        y = sh[:, 1] - self.height / 2
        if self.radius is None:
            return np.stack([x, y, np.zeros_like(x)], axis=1)
        a = x / self.radius
        return np.stack([self.radius * np.sin(a), y, self.radius * (np.cos(a) - 1.0)], axis=1)

    def normals(self, sh) -> np.ndarray:
        sh = np.asarray(sh, dtype=np.float64).reshape(-1, 2)
        if self.radius is None:
            return np.tile([0.0, 0.0, 1.0], (len(sh), 1))
        a = (sh[:, 0] - self.width / 2) / self.radius
        return np.stack([np.sin(a), np.zeros_like(a), np.cos(a)], axis=1)

    def intersect(self, origin, dirs):
        """First hit of rays ``origin + t * dirs`` with the wall: ``(sh, hit)``."""
        o = np.asarray(origin, dtype=np.float64)
        d = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
        if self.radius is None:
            with np.errstate(divide="ignore", invalid="ignore"):
                t = -o[2] / d[:, 2]
            p = o + t[:, None] * d
            s = p[:, 0] + self.width / 2
        else:
            R = self.radius
            oc = o - np.array([0.0, 0.0, -R])
            # quadratic in t for x^2 + (z + R)^2 = R^2, ignoring y
            a = d[:, 0] ** 2 + d[:, 2] ** 2
            b = 2 * (oc[0] * d[:, 0] + oc[2] * d[:, 2])
            c = oc[0] ** 2 + oc[2] ** 2 - R * R
            disc = b * b - 4 * a * c
            with np.errstate(divide="ignore", invalid="ignore"):
                t = (-b - np.sqrt(disc)) / (2 * a)
            p = o + t[:, None] * d
            s = R * np.arctan2(p[:, 0], p[:, 2] + R) + self.width / 2
        h = p[:, 1] + self.height / 2
        hit = np.isfinite(t) & (t > 0) & (s >= 0) & (s <= self.width) & (h >= 0) & (h <= self.height)
        return np.stack([s, h], axis=1), hit


def segment_distance(points, polyline) -> np.ndarray:
    """Distance from 2D points to the nearest segment of a polyline."""
    p = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    line = np.asarray(polyline, dtype=np.float64)
    best = np.full(len(p), np.inf)
    for a, b in zip(line[:-1], line[1:]):
        ab = b - a
        ll = ab @ ab
        t = np.clip((p - a) @ ab / ll, 0.0, 1.0) if ll > 0 else np.zeros(len(p))
        best = np.minimum(best, np.linalg.norm(p - a - t[:, None] * ab, axis=1))
    return best


def _in_crack(sh, crack: CrackLayout) -> np.ndarray:
    return np.min([segment_distance(sh, pl) for pl in crack.polylines], axis=0) <= crack.width / 2


def _in_patch(sh, patch: PatchLayout) -> np.ndarray:
    s0, h0, s1, h1 = patch.bounds
    return (sh[:, 0] >= s0) & (sh[:, 0] <= s1) & (sh[:, 1] >= h0) & (sh[:, 1] <= h1)


def _footprint(prim) -> tuple:
    if isinstance(prim, PatchLayout):
        return prim.bounds
    pts = np.vstack(prim.polylines)
    w = prim.width / 2
    return (pts[:, 0].min() - w, pts[:, 1].min() - w, pts[:, 0].max() + w, pts[:, 1].max() + w)


def ring_cameras(ring: CameraRing, target=(0.0, 0.0, 0.0)) -> list:
    views = []
    for i in range(ring.n_cameras):
        phi = 2 * np.pi * i / ring.n_cameras
        center = np.array([ring.radius * np.cos(phi), ring.radius * np.sin(phi), ring.distance])
        R, t = look_at(center, target)
        name = f"view_{i:02d}"
        views.append(CameraView(name, ring.width, ring.height, ring.fx, ring.fx, ring.width / 2, ring.height / 2,
                                R, t, heatmap_prefix=name))
    return views


def _homogeneous_pixels(view: CameraView, points) -> np.ndarray:
    """Pixels via the 3x4 matrix K [R | t]; an independent path from CameraView.project."""
    K = np.array([[view.fx, 0.0, view.cx], [0.0, view.fy, view.cy], [0.0, 0.0, 1.0]])
    P = K @ np.hstack([view.rotation, view.translation[:, None]])
    X = np.hstack([np.asarray(points, dtype=np.float64).reshape(-1, 3), np.ones((len(points), 1))])
    x = X @ P.T
    return x[:, :2] / x[:, 2:3], x[:, 2]


def render_heatmaps(view: CameraView, wall: Wall, layout: SceneLayout, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """One-hot class rasters ``(C, H, W)`` as floats in [0, 1]."""
    catalog = layout.catalog()
    C = len(catalog)
    label = np.zeros((view.height, view.width), dtype=np.int64)
    # later primitives paint over earlier ones; cracks last
    for prim in layout.patches + layout.cracks:
        s0, h0, s1, h1 = _footprint(prim)
        g = np.linspace(0.0, 1.0, 33)
        edge = np.concatenate([
            np.stack([s0 + (s1 - s0) * g, np.full_like(g, h0)], 1), np.stack([s0 + (s1 - s0) * g, np.full_like(g, h1)], 1),
            np.stack([np.full_like(g, s0), h0 + (h1 - h0) * g], 1), np.stack([np.full_like(g, s1), h0 + (h1 - h0) * g], 1),
        ])
        uv, depth = _homogeneous_pixels(view, wall.to_world(np.clip(edge, 0, [wall.width, wall.height])))
        if np.any(depth <= 0):
            continue
        c0 = max(int(np.floor(uv[:, 0].min())) - 2, 0)
        c1 = min(int(np.ceil(uv[:, 0].max())) + 2, view.width)
        r0 = max(int(np.floor(uv[:, 1].min())) - 2, 0)
        r1 = min(int(np.ceil(uv[:, 1].max())) + 2, view.height)
        if c0 >= c1 or r0 >= r1:
            continue
        rows, cols = np.mgrid[r0:r1, c0:c1]
        rays = view.pixel_rays(cols.ravel(), rows.ravel())
        sh, hit = wall.intersect(view.center, rays)
        inside = np.zeros(len(sh), dtype=bool)
        inside[hit] = _in_crack(sh[hit], prim) if isinstance(prim, CrackLayout) else _in_patch(sh[hit], prim)
        cls = catalog.index(prim.class_name)
        label[rows.ravel()[inside], cols.ravel()[inside]] = cls
    hm = (np.arange(C)[:, None, None] == label[None]).astype(np.float64)
    if layout.noise > 0:
        rng = rng if rng is not None else np.random.default_rng(layout.seed)
        hm = np.clip(hm + rng.normal(0.0, layout.noise, hm.shape), 0.0, 1.0)
    return hm


def _quantize(hm: np.ndarray, bits: int) -> np.ndarray:
    full = 255 if bits == 8 else 65535
    return np.round(hm * full).astype(np.uint8 if bits == 8 else np.uint16)


def _densify(sh: np.ndarray, step: float, closed: bool = False) -> np.ndarray:
    pts = np.vstack([sh, sh[:1]]) if closed else sh
    out = []
    for a, b in zip(pts[:-1], pts[1:]):
        n = max(1, int(np.ceil(np.linalg.norm(b - a) / step)))
        out.append(a + (b - a) * (np.arange(n) / n)[:, None])
    if not closed:
        out.append(pts[-1:])
    return np.vstack(out)


@dataclass
class SyntheticScene:
    layout: SceneLayout
    cloud: PointCloud
    views: list
    catalog: ClassCatalog
    annotations: list
    markers: list  # {"view", "point", "pixel"}


def wall_grid(layout: SceneLayout) -> np.ndarray:
    ns = int(np.floor(layout.wall_width / layout.spacing + 1e-9)) + 1
    nh = int(np.floor(layout.wall_height / layout.spacing + 1e-9)) + 1
    s = np.arange(ns) * layout.spacing
    h = np.arange(nh) * layout.spacing
    ss, hh = np.meshgrid(s, h)
    return np.stack([ss.ravel(), hh.ravel()], axis=1)


def generate_synthetic_scene(layout: SceneLayout) -> SyntheticScene:
    wall = Wall(layout.wall_width, layout.wall_height, layout.curvature_radius)
    sh = wall_grid(layout)
    cloud = PointCloud(wall.to_world(sh), wall.normals(sh))
    catalog = layout.catalog()
    rng = np.random.default_rng(layout.seed)
    views = []
    for view in ring_cameras(layout.ring):
        hm = render_heatmaps(view, wall, layout, rng)
        views.append(view.with_heatmaps(_quantize(hm, layout.bits)))

    step = None if layout.curvature_radius is None else 0.01
    annotations = []
    for i, prim in enumerate(layout.cracks + layout.patches):
        if isinstance(prim, CrackLayout):
            parts = [wall.to_world(pl if step is None else _densify(pl, step)) for pl in prim.polylines]
            kind = "medial_axis"
        else:
            s0, h0, s1, h1 = prim.bounds
            loop = np.array([[s0, h0], [s1, h0], [s1, h1], [s0, h1]])
            if step is not None:
                loop = _densify(loop, step, closed=True)
            parts = [wall.to_world(loop)]
            kind = "polygon"
        annotations.append(InstanceRecord(i, prim.class_name, kind, parts, 1.0, {"source": "synthetic"}))

    marker_sh = [np.array([[layout.wall_width / 2, layout.wall_height / 2]])]
    for prim in layout.cracks:
        marker_sh += list(prim.polylines)
    for prim in layout.patches:
        marker_sh.append(np.reshape(prim.bounds, (2, 2)))
    marker_pts = wall.to_world(np.vstack(marker_sh))
    markers = []
    for view in views:
        uv, depth = _homogeneous_pixels(view, marker_pts)
        for p, q, z in zip(marker_pts, uv, depth):
            if z > 0 and 0 <= q[0] < view.width and 0 <= q[1] < view.height:
                markers.append({"view": view.name, "point": p.tolist(), "pixel": q.tolist()})
    return SyntheticScene(layout, cloud, views, catalog, annotations, markers)


def default_scene_layout(**overrides) -> SceneLayout:
    """2 m x 1 m wall with a straight crack, a Y crack, a spalling and a corrosion patch.

    Crack vertices and patch edges sit off the 2 mm point grid so no
    centerline or edge coincides with a grid row.
    """
    cracks = (
        CrackLayout((([0.2013, 0.2507], [0.7013, 0.3507]),)),
        CrackLayout(
            (
                ([1.0007, 0.5013], [0.8507, 0.7513]),
                ([1.0007, 0.5013], [1.1507, 0.7513]),
                ([1.0007, 0.5013], [1.0007, 0.2513]),
            ),
        ),
    )
    patches = (
        PatchLayout("spalling", (1.401, 0.201, 1.701, 0.451)),
        PatchLayout("corrosion", (0.301, 0.601, 0.601, 0.851)),
    )
    kw = dict(cracks=cracks, patches=patches)
    kw.update(overrides)
    return SceneLayout(**kw)


def layout_to_dict(layout: SceneLayout) -> dict:
    return {
        "wall_width": layout.wall_width, "wall_height": layout.wall_height, "spacing": layout.spacing,
        "curvature_radius": layout.curvature_radius, "noise": layout.noise, "seed": layout.seed, "bits": layout.bits,
        "classes": list(layout.classes),
        "cracks": [{"class": c.class_name, "width": c.width, "polylines": [p.tolist() for p in c.polylines]}
                   for c in layout.cracks],
        "patches": [{"class": p.class_name, "bounds": list(p.bounds)} for p in layout.patches],
        "ring": {k: getattr(layout.ring, k) for k in ("n_cameras", "distance", "radius", "fx", "width", "height")},
    }


def layout_from_dict(d: dict) -> SceneLayout:
    known = {"wall_width", "wall_height", "spacing", "curvature_radius", "noise", "seed", "bits", "classes",
             "cracks", "patches", "ring"}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ValidationError(f"unknown scene keys: {', '.join(unknown)}")
    kw = {k: d[k] for k in known - {"cracks", "patches", "ring", "classes"} if k in d}
    try:
        if "classes" in d:
            kw["classes"] = tuple(d["classes"])
        kw["cracks"] = tuple(CrackLayout(tuple(c["polylines"]), c.get("width", 0.008), c.get("class", "crack"))
                             for c in d.get("cracks", []))
        kw["patches"] = tuple(PatchLayout(p["class"], tuple(p["bounds"])) for p in d.get("patches", []))
        if "ring" in d:
            kw["ring"] = CameraRing(**d["ring"])
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"malformed scene description: {exc!r}") from exc
    return SceneLayout(**kw)


def write_scene(scene: SyntheticScene, directory) -> Path:
    """Write cloud, cameras, heatmaps, annotations and markers; returns the directory."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    write_ply(scene.cloud, out / "cloud.ply")
    write_cameras(scene.views, out / "cameras.json")
    for view in scene.views:
        write_heatmaps(view, out / "heatmaps", scene.catalog, bits=scene.layout.bits)
    write_instances(scene.annotations, out / "annotations.json")
    (out / "markers.json").write_text(json.dumps(scene.markers, indent=1) + "\n")
    doc = {
        "cloud": "cloud.ply", "cameras": "cameras.json", "heatmaps": "heatmaps",
        "annotations": "annotations.json",
        "classes": list(scene.catalog.names), "background": scene.catalog.background,
        "geometry": dict(scene.catalog.geometry), "layout": layout_to_dict(scene.layout),
    }
    (out / SCENE_FILE).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    return out
