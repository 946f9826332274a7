"""Minimal PLY reader/writer for vertex-only point clouds.

Reads ASCII and binary little-endian files with a single ``vertex`` element
of scalar properties (other elements are skipped when they come after the
vertices and are scalar-only).  Writes ``x y z`` as doubles, optional
``nx ny nz`` doubles and ``red green blue`` uchars, and for segmented clouds
an ``int label``, an ``int views`` count and one ``double score_<class>``
per class.
"""

from __future__ import annotations

from pathlib import Path
from typing import Union

import numpy as np

from .errors import FormatError, ValidationError
from .geometry import PointCloud
from .mapping import ClassCatalog, SegmentedCloud

_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}
_FORMATS = ("ascii", "binary_little_endian")


class PlyData:
    """Parsed vertex table: ``names`` in file order, ``columns`` by name."""

    def __init__(self, fmt: str, names: list, columns: dict, comments: list):
        self.format = fmt
        self.names = names
        self.columns = columns
        self.comments = comments

    def __len__(self):
        return len(next(iter(self.columns.values()))) if self.columns else 0

    def stack(self, names) -> np.ndarray:
        return np.stack([self.columns[n] for n in names], axis=1).astype(np.float64)


def _parse_header(buf: bytes):
    end = buf.find(b"end_header")
    if not buf.startswith(b"ply") or end < 0:
        raise FormatError("malformed header: missing 'ply' magic or 'end_header'")
    nl = buf.find(b"\n", end)
    body_start = len(buf) if nl < 0 else nl + 1
    try:
        lines = buf[:end].decode("ascii").splitlines()[1:]
    except UnicodeDecodeError as exc:
        raise FormatError("malformed header: non-ASCII bytes") from exc
    fmt, elements, comments = None, [], []
    for raw in lines:
        tok = raw.split()
        if not tok:
            continue
        if tok[0] == "format":
            if len(tok) != 3:
                raise FormatError(f"malformed header line: {raw!r}")
            fmt = tok[1]
        elif tok[0] in ("comment", "obj_info"):
            comments.append(raw[len(tok[0]):].strip())
        elif tok[0] == "element":
            if len(tok) != 3 or not tok[2].isdigit():
                raise FormatError(f"malformed header line: {raw!r}")
            elements.append([tok[1], int(tok[2]), []])
        elif tok[0] == "property":
            if not elements:
                raise FormatError("malformed header: property before element")
            if len(tok) >= 2 and tok[1] == "list":
                elements[-1][2].append((tok[-1], None))
            elif len(tok) == 3 and tok[1] in _TYPES:
                elements[-1][2].append((tok[2], _TYPES[tok[1]]))
            else:
                raise FormatError(f"malformed header line: {raw!r}")
        else:
            raise FormatError(f"malformed header: unknown keyword {tok[0]!r}")
    if fmt is None:
        raise FormatError("malformed header: no format line")
    if fmt not in _FORMATS:
        raise FormatError(f"unsupported PLY format {fmt!r}")
    return fmt, elements, comments, body_start


def read_ply_data(path) -> PlyData:
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"PLY file not found: {path}")
    buf = path.read_bytes()
    fmt, elements, comments, start = _parse_header(buf)
    vert = [e for e in elements if e[0] == "vertex"]
    if not vert:
        raise FormatError("no vertex element")
    if elements[0][0] != "vertex":
        raise FormatError("vertex element must come first")
    _, n, props = vert[0]
    if any(dt is None for _, dt in props):
        raise FormatError("list properties on vertices are not supported")
    names = [p for p, _ in props]
    if len(set(names)) != len(names):
        raise FormatError("duplicate vertex property")
    if fmt == "ascii":
        rows = buf[start:].decode("ascii", errors="replace").split("\n")
        rows = [r for r in rows if r.strip()]
        if len(rows) < n:
            raise FormatError(f"truncated body: {len(rows)} of {n} vertices")
        try:
            table = np.array([r.split()[: len(props)] for r in rows[:n]], dtype=object)
            if n and (table.ndim != 2 or table.shape[1] != len(props)):
                raise FormatError("truncated body: vertex row with missing values")
            columns = {
                name: np.array(table[:, i], dtype=np.float64).astype(dt) if n else np.zeros(0, dt)
                for i, (name, dt) in enumerate(props)
            }
        except ValueError as exc:
            raise FormatError(f"malformed vertex value: {exc}") from exc
    else:
        dtype = np.dtype([(name, "<" + dt) for name, dt in props])
        need = n * dtype.itemsize
        if len(buf) - start < need:
            raise FormatError(f"truncated body: {len(buf) - start} of {need} bytes")
        arr = np.frombuffer(buf, dtype=dtype, count=n, offset=start)
        columns = {name: arr[name].astype(arr[name].dtype.newbyteorder("=")) for name in names}
    return PlyData(fmt, names, columns, comments)


def read_ply(path) -> PointCloud:
    data = read_ply_data(path)
    missing = [c for c in "xyz" if c not in data.columns]
    if missing:
        raise FormatError(f"missing xyz: vertex element lacks {', '.join(missing)}")
    pos = data.stack("xyz")
    normals = data.stack(["nx", "ny", "nz"]) if all(c in data.columns for c in ("nx", "ny", "nz")) else None
    colors = None
    if all(c in data.columns for c in ("red", "green", "blue")):
        colors = data.stack(["red", "green", "blue"]).astype(np.uint8)
    if normals is not None:
        norm = np.linalg.norm(normals, axis=1)
        dev = np.abs(norm - 1.0)
        if np.any(dev > 1e-3):
            raise FormatError("normals in file are not unit length")
        if np.any(dev > 1e-6):
            # single-precision normals from other tools
            normals = normals / norm[:, None]
    return PointCloud(pos, normals, colors)


def _catalog_from_comments(comments) -> ClassCatalog:
    for c in comments:
        if c.startswith("classes "):
            names = c.split()[1:]
            bg = 0
            for d in comments:
                if d.startswith("background "):
                    bg = int(d.split()[1])
            return ClassCatalog(names=tuple(names), background=bg)
    return None


def read_segmented_ply(path, catalog: ClassCatalog = None) -> SegmentedCloud:
    """Segmented cloud written by :func:`write_ply`; the class list is read
    from the header comments unless ``catalog`` is given."""
    data = read_ply_data(path)
    cloud = read_ply(path)
    found = _catalog_from_comments(data.comments)
    catalog = catalog or found
    if catalog is None:
        raise FormatError("segmented PLY lacks a 'classes' comment")
    if found is not None and found.names != catalog.names:
        raise ValidationError(f"PLY classes {found.names} differ from catalog {catalog.names}")
    need = ["label", "views"] + [f"score_{c}" for c in catalog.names]
    missing = [c for c in need if c not in data.columns]
    if missing:
        raise FormatError(f"segmented PLY lacks properties: {', '.join(missing)}")
    scores = data.stack([f"score_{c}" for c in catalog.names])
    return SegmentedCloud(cloud, scores, data.columns["label"].astype(np.int64),
                          data.columns["views"].astype(np.int64), catalog)


def write_ply(obj: Union[PointCloud, SegmentedCloud], path, binary: bool = True) -> None:
    """Write a cloud; binary output round-trips bit-exactly."""
    seg = obj if isinstance(obj, SegmentedCloud) else None
    cloud = seg.cloud if seg is not None else obj
    n = len(cloud)
    fields = [("x", "f8", cloud.positions[:, 0]), ("y", "f8", cloud.positions[:, 1]),
              ("z", "f8", cloud.positions[:, 2])]
    if cloud.normals is not None:
        fields += [(c, "f8", cloud.normals[:, i]) for i, c in enumerate(("nx", "ny", "nz"))]
    if cloud.colors is not None:
        fields += [(c, "u1", cloud.colors[:, i]) for i, c in enumerate(("red", "green", "blue"))]
    comments = ["generated by damage25d"]
    if seg is not None:
        for name in seg.catalog.names:
            if not name.isidentifier():
                raise ValidationError(f"class name {name!r} cannot be a PLY property")
        fields += [("label", "i4", seg.labels), ("views", "i4", seg.view_counts)]
        fields += [(f"score_{c}", "f8", seg.scores[:, i]) for i, c in enumerate(seg.catalog.names)]
        comments += ["classes " + " ".join(seg.catalog.names), f"background {seg.catalog.background}"]
    rev = {"f8": "double", "u1": "uchar", "i4": "int"}
    header = ["ply", f"format {'binary_little_endian' if binary else 'ascii'} 1.0"]
    header += [f"comment {c}" for c in comments]
    header += [f"element vertex {n}"] + [f"property {rev[dt]} {name}" for name, dt, _ in fields]
    header.append("end_header")
    head = ("\n".join(header) + "\n").encode("ascii")
    if binary:
        arr = np.empty(n, dtype=[(name, "<" + dt) for name, dt, _ in fields])
        for name, _, col in fields:
            arr[name] = col
        Path(path).write_bytes(head + arr.tobytes())
        return
    cols = [np.asarray(col).tolist() for _, _, col in fields]
    body = "".join(" ".join(repr(v) for v in row) + "\n" for row in zip(*cols))
    Path(path).write_bytes(head + body.encode("ascii"))
