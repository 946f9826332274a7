"""Camera manifest JSON and per-class PNG heatmaps.

Manifest: a JSON array with one object per view::

    {"name": "view_00", "width": 1400, "height": 800,
     "fx": 1000.0, "fy": 1000.0, "cx": 700.0, "cy": 400.0,
     "rotation": [r00, r01, r02, r10, r11, r12, r20, r21, r22],
     "translation": [tx, ty, tz],
     "heatmap_prefix": "view_00"}

``rotation`` is row-major and maps world to camera coordinates, so a world
point X lands at ``R @ X + t`` in a frame whose +z axis is the optical axis,
+x points right and +y points down in the image.  Pixel (col, row) spans
``[col, col + 1) x [row, row + 1)``, so its center is at ``(col + 0.5, row + 0.5)``.
Example: identity rotation and ``t = [0, 0, 2]`` put the camera at
``(0, 0, -2)`` looking along +z; the world origin projects to ``(cx, cy)``.

Heatmaps: ``<heatmap_prefix>_<class>.png``, 8- or 16-bit grayscale, one per
class of the catalog, decoded as ``value / (2**bits - 1)``.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .camera import CameraView
from .errors import FormatError, ValidationError
from .mapping import ClassCatalog

MANIFEST_TOL = 1e-4
_FIELDS = ("name", "width", "height", "fx", "fy", "cx", "cy", "rotation", "translation", "heatmap_prefix")


def _orthonormalize(R: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(R)
    return u @ vt


def camera_from_dict(d: dict) -> CameraView:
    if not isinstance(d, dict):
        raise FormatError("camera entry must be an object")
    missing = [f for f in _FIELDS if f not in d]
    if missing:
        raise FormatError(f"camera entry {d.get('name', '?')!r} missing fields: {', '.join(missing)}")
    name = str(d["name"])
    try:
        R = np.asarray(d["rotation"], dtype=np.float64)
        t = np.asarray(d["translation"], dtype=np.float64)
        width, height = d["width"], d["height"]
        if not (isinstance(width, int) and isinstance(height, int)):
            raise FormatError(f"{name}: width and height must be integers")
        intr = [float(d[k]) for k in ("fx", "fy", "cx", "cy")]
    except (TypeError, ValueError) as exc:
        raise FormatError(f"{name}: malformed numeric field ({exc})") from exc
    if R.shape != (9,) or t.shape != (3,):
        raise FormatError(f"{name}: rotation needs 9 numbers and translation 3")
    if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t)) and np.all(np.isfinite(intr))):
        raise FormatError(f"{name}: non-finite camera parameter")
    R = R.reshape(3, 3)
    if np.max(np.abs(R.T @ R - np.eye(3))) > MANIFEST_TOL:
        raise ValidationError(f"{name}: rotation is not orthonormal (tolerance {MANIFEST_TOL})")
    if np.linalg.det(R) < 0:
        raise ValidationError(f"{name}: improper rotation (determinant -1)")
    return CameraView(name, width, height, *intr, rotation=_orthonormalize(R), translation=t,
                      heatmap_prefix=str(d["heatmap_prefix"]))


def camera_to_dict(view: CameraView) -> dict:
    return {
        "name": view.name, "width": int(view.width), "height": int(view.height),
        "fx": float(view.fx), "fy": float(view.fy), "cx": float(view.cx), "cy": float(view.cy),
        "rotation": view.rotation.ravel().tolist(), "translation": view.translation.tolist(),
        "heatmap_prefix": view.heatmap_prefix or view.name,
    }


def read_cameras(path) -> list:
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"camera manifest not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"camera manifest {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, list) or not doc:
        raise FormatError("camera manifest must be a non-empty JSON array")
    views = [camera_from_dict(d) for d in doc]
    names = [v.name for v in views]
    if len(set(names)) != len(names):
        raise FormatError("camera names must be unique")
    return views


def write_cameras(views: Sequence[CameraView], path) -> None:
    Path(path).write_text(json.dumps([camera_to_dict(v) for v in views], indent=1) + "\n")


def _decode_png(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode == "L":
            return np.asarray(im, dtype=np.uint8)
        if im.mode in ("I;16", "I;16B", "I;16L"):
            return np.asarray(im).astype(np.uint16)
        if im.mode == "I":
            # Pillow decodes 16-bit grayscale PNGs into 32-bit integer mode
            a = np.asarray(im)
            if a.min() < 0 or a.max() > 65535:
                raise FormatError(f"{path}: values outside 16-bit range")
            return a.astype(np.uint16)
    raise FormatError(f"{path}: expected 8- or 16-bit grayscale PNG, got mode {im.mode!r}")


def read_heatmaps(view: CameraView, directory, catalog: ClassCatalog = ClassCatalog()) -> CameraView:
    """Attach one raster per catalog class; all rasters must share a bit depth."""
    directory = Path(directory)
    prefix = view.heatmap_prefix or view.name
    rasters = []
    for name in catalog.names:
        p = directory / f"{prefix}_{name}.png"
        if not p.is_file():
            raise ValidationError(f"{view.name}: missing heatmap raster {p}")
        a = _decode_png(p)
        if a.shape != (view.height, view.width):
            raise ValidationError(
                f"{view.name}: raster {p.name} is {a.shape[1]}x{a.shape[0]}, view is {view.width}x{view.height}"
            )
        rasters.append(a)
    dtypes = {a.dtype for a in rasters}
    if len(dtypes) > 1:
        rasters = [a.astype(np.float64) / (255.0 if a.dtype == np.uint8 else 65535.0) for a in rasters]
    return view.with_heatmaps(np.stack(rasters))


def write_heatmaps(view: CameraView, directory, catalog: ClassCatalog = ClassCatalog(), bits: int = 8) -> list:
    """Write the view's rasters as PNG; float probabilities are quantised to ``bits``."""
    if view.heatmaps is None:
        raise ValidationError(f"{view.name}: no heatmaps to write")
    if view.n_classes != len(catalog):
        raise ValidationError(f"{view.name}: {view.n_classes} rasters for {len(catalog)} classes")
    if bits not in (8, 16):
        raise ValidationError("bits must be 8 or 16")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    prefix = view.heatmap_prefix or view.name
    out = []
    for i, name in enumerate(catalog.names):
        a = view.heatmaps[i]
        target = np.uint8 if bits == 8 else np.uint16
        if a.dtype != target:
            full = 255 if bits == 8 else 65535
            src = a.astype(np.float64)
            if a.dtype == np.uint8:
                src /= 255.0
            elif a.dtype == np.uint16:
                src /= 65535.0
            a = np.round(np.clip(src, 0, 1) * full).astype(target)
        p = directory / f"{prefix}_{name}.png"
        Image.fromarray(a).save(p)
        out.append(p)
    return out
