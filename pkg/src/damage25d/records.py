"""Damage-instance records and their JSON / OBJ serialisation.

Instance JSON layout (``schema_version`` 1)::

    {
      "schema": "damage25d.instances",
      "schema_version": 1,
      "instances": [
        {"id": 0, "class": "crack", "kind": "medial_axis",
         "confidence": 0.93,
         "parts": [[[x, y, z], ...], ...],
         "provenance": {...}}
      ]
    }

``parts`` holds one vertex list per polyline for medial axes and exactly one
closed loop (first vertex not repeated) for polygons.  Floats are written
with ``repr`` precision, so a write/read round trip is lossless.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import FormatError, ValidationError

SCHEMA = "damage25d.instances"
SCHEMA_VERSION = 1
KINDS = ("medial_axis", "polygon")


@dataclass(eq=False)
class InstanceRecord:
    id: int
    class_name: str
    kind: str
    parts: list
    confidence: float = 1.0
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown geometry kind {self.kind!r}")
        parts = [np.asarray(p, dtype=np.float64).reshape(-1, 3) for p in self.parts]
        if not parts:
            raise ValidationError(f"instance {self.id} has no geometry")
        if self.kind == "polygon":
            if len(parts) != 1 or len(parts[0]) < 3:
                raise ValidationError(f"instance {self.id}: polygon needs one loop of at least 3 vertices")
        elif any(len(p) < 2 for p in parts):
            raise ValidationError(f"instance {self.id}: every polyline needs at least 2 vertices")
        if any(not np.all(np.isfinite(p)) for p in parts):
            raise ValidationError(f"instance {self.id}: non-finite vertex")
        self.parts = parts

    @property
    def closed(self) -> bool:
        return self.kind == "polygon"

    def vertices(self) -> np.ndarray:
        return np.concatenate(self.parts, axis=0)

    def to_dict(self) -> dict:
        return {
            "id": int(self.id),
            "class": self.class_name,
            "kind": self.kind,
            "confidence": float(self.confidence),
            "parts": [p.tolist() for p in self.parts],
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "InstanceRecord":
        try:
            return cls(
                id=int(d["id"]),
                class_name=str(d["class"]),
                kind=str(d["kind"]),
                parts=d["parts"],
                confidence=float(d.get("confidence", 1.0)),
                provenance=dict(d.get("provenance", {})),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ValidationError):
                raise
            raise FormatError(f"malformed instance record: {exc!r}") from exc

    def __eq__(self, other):
        if not isinstance(other, InstanceRecord):
            return NotImplemented
        return (
            self.id == other.id
            and self.class_name == other.class_name
            and self.kind == other.kind
            and self.confidence == other.confidence
            and self.provenance == other.provenance
            and len(self.parts) == len(other.parts)
            and all(np.array_equal(a, b) for a, b in zip(self.parts, other.parts))
        )


def dumps_instances(records: Iterable[InstanceRecord]) -> str:
    doc = {"schema": SCHEMA, "schema_version": SCHEMA_VERSION, "instances": [r.to_dict() for r in records]}
    return json.dumps(doc, indent=1, sort_keys=True, allow_nan=False) + "\n"


def loads_instances(text: str) -> list:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"instance file is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("schema") != SCHEMA:
        raise FormatError("not an instance document (missing or wrong 'schema')")
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise FormatError(f"unsupported schema_version {doc.get('schema_version')!r}")
    items = doc.get("instances")
    if not isinstance(items, list):
        raise FormatError("'instances' must be an array")
    return [InstanceRecord.from_dict(d) for d in items]


def write_instances(records: Iterable[InstanceRecord], path) -> None:
    Path(path).write_text(dumps_instances(records))


def read_instances(path) -> list:
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"instance file not found: {path}")
    return loads_instances(path.read_text())


def write_obj(records: Iterable[InstanceRecord], path) -> None:
    """Polylines as ``l`` records; polygon loops repeat their first vertex."""
    lines = ["# damage25d instances"]
    base = 1
    for r in records:
        lines.append(f"o {r.class_name}_{r.id}")
        for part in r.parts:
            for x, y, z in part.tolist():
                lines.append(f"v {x!r} {y!r} {z!r}")
            idx = list(range(base, base + len(part)))
            if r.closed:
                idx.append(base)
            lines.append("l " + " ".join(map(str, idx)))
            base += len(part)
    Path(path).write_text("\n".join(lines) + "\n")


def read_obj_polylines(path) -> list:
    """``(name, vertex array)`` per ``l`` record, for checking exported files."""
    verts, out, name = [], [], None
    for raw in Path(path).read_text().splitlines():
        tok = raw.split()
        if not tok:
            continue
        if tok[0] == "v":
            verts.append([float(t) for t in tok[1:4]])
        elif tok[0] == "o":
            name = tok[1]
        elif tok[0] == "l":
            out.append((name, np.asarray([verts[int(t) - 1] for t in tok[1:]])))
    return out
