"""Stage functions shared by the CLI: map, cluster, extract, evaluate."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .clustering import InstanceCloud, split_instances
from .config import PipelineConfig
from .errors import FormatError, ProcessingError, ValidationError
from .evaluation import evaluation_report, format_report
from .geometry import PointCloud, estimate_normals
from .manifest import read_cameras, read_heatmaps
from .mapping import ClassCatalog, SegmentedCloud, fuse
from .ply import read_ply
from .polygon import extract_polygon
from .records import InstanceRecord, read_instances
from .skeleton import extract_medial_axis
from .synth import SCENE_FILE

log = logging.getLogger(__name__)

INDEX_SCHEMA = "damage25d.instance_index"


@dataclass
class SceneBundle:
    cloud_path: Path
    cameras_path: Path
    heatmap_dir: Path
    catalog: ClassCatalog
    annotations_path: Optional[Path] = None


def load_scene(directory, catalog: Optional[ClassCatalog] = None) -> SceneBundle:
    """Resolve a scene directory; ``scene.json`` is optional and overrides the default file names."""
    d = Path(directory)
    if not d.is_dir():
        raise ValidationError(f"scene directory not found: {d}")
    doc = {}
    if (d / SCENE_FILE).is_file():
        try:
            doc = json.loads((d / SCENE_FILE).read_text())
        except json.JSONDecodeError as exc:
            raise FormatError(f"{d / SCENE_FILE} is not valid JSON: {exc}") from exc
    if catalog is None and "classes" in doc:
        geometry = doc.get("geometry")
        catalog = ClassCatalog(tuple(doc["classes"]), int(doc.get("background", 0)),
                               *([dict(geometry)] if geometry is not None else []))
    bundle = SceneBundle(
        d / doc.get("cloud", "cloud.ply"),
        d / doc.get("cameras", "cameras.json"),
        d / doc.get("heatmaps", "heatmaps"),
        catalog or ClassCatalog(),
        d / doc.get("annotations", "annotations.json"),
    )
    for p in (bundle.cloud_path, bundle.cameras_path):
        if not p.is_file():
            raise ValidationError(f"scene file not found: {p}")
    if not bundle.heatmap_dir.is_dir():
        raise ValidationError(f"heatmap directory not found: {bundle.heatmap_dir}")
    if not bundle.annotations_path.is_file():
        bundle.annotations_path = None
    return bundle


def load_views(cameras_path, heatmap_dir, catalog: ClassCatalog) -> list:
    return [read_heatmaps(v, heatmap_dir, catalog) for v in read_cameras(cameras_path)]


def map_stage(cloud: PointCloud, views: list, cfg: PipelineConfig, catalog: Optional[ClassCatalog] = None) -> SegmentedCloud:
    catalog = catalog or cfg.classes.catalog()
    if not cloud.has_normals:
        log.info("cloud has no normals; estimating with k=%d", cfg.mapping.normal_k)
        cloud = estimate_normals(cloud, cfg.mapping.normal_k, camera_centers=np.array([v.center for v in views]))
    m = cfg.mapping
    return fuse(cloud, views, catalog, m.splat_radius_px, m.depth_tol_rel, m.occlusion, m.count_mode)


def cluster_stage(seg: SegmentedCloud, cfg: PipelineConfig) -> list:
    params = {c: cfg.clustering.params(seg.catalog.kind(c)) for c in seg.catalog.foreground}
    return split_instances(seg, params)


def index_to_dict(instances: list, catalog: ClassCatalog) -> dict:
    return {
        "schema": INDEX_SCHEMA,
        "schema_version": 1,
        "classes": list(catalog.names),
        "instances": [
            {"id": i.instance_id, "class": catalog.names[i.class_index], "confidence": i.confidence,
             "indices": i.indices.tolist()}
            for i in instances
        ],
    }


def index_from_dict(doc: dict, seg: SegmentedCloud) -> list:
    if not isinstance(doc, dict) or doc.get("schema") != INDEX_SCHEMA:
        raise FormatError("not an instance index (missing or wrong 'schema')")
    if tuple(doc.get("classes", ())) != seg.catalog.names:
        raise ValidationError("instance index classes differ from the segmented cloud")
    out = []
    n = len(seg)
    for d in doc.get("instances", []):
        try:
            idx = np.asarray(d["indices"], dtype=np.int64)
            cls = seg.catalog.index(d["class"])
            iid, conf = int(d["id"]), float(d["confidence"])
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ValidationError):
                raise
            raise FormatError(f"malformed instance index entry: {exc!r}") from exc
        if idx.ndim != 1 or len(idx) == 0 or idx.min() < 0 or idx.max() >= n:
            raise ValidationError(f"instance {iid}: point indices out of range")
        out.append(InstanceCloud(iid, cls, idx, seg.cloud.positions[idx],
                                 None if seg.cloud.normals is None else seg.cloud.normals[idx], conf))
    return out


def write_index(instances: list, catalog: ClassCatalog, path) -> None:
    Path(path).write_text(json.dumps(index_to_dict(instances, catalog), sort_keys=True) + "\n")


def read_index(path, seg: SegmentedCloud) -> list:
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"instance index not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path} is not valid JSON: {exc}") from exc
    return index_from_dict(doc, seg)


def extract_stage(instances: list, catalog: ClassCatalog, cfg: PipelineConfig) -> list:
    """One record per instance; instances whose geometry cannot be built are skipped with a warning."""
    params = cfg.extraction_params()
    records = []
    for inst in instances:
        name = catalog.names[inst.class_index]
        kind = catalog.kind(inst.class_index)
        prov = {"version": __version__, "n_points": len(inst), "source_instance": inst.instance_id}
        try:
            if kind == "medial_axis":
                axis = extract_medial_axis(inst, params)
                parts = axis.polylines
                prov["n_polylines"] = len(parts)
            else:
                poly = extract_polygon(inst, cfg.polygon.alpha, cfg.polygon.planarity_threshold,
                                       cfg.polygon.normalization)
                parts = [poly.vertices]
                prov["planar"] = poly.planar
                prov["explained_variance"] = poly.frame.explained_variance
        except (ProcessingError, ValidationError) as exc:
            log.warning("skipping %s instance %d (%d points): %s", name, inst.instance_id, len(inst), exc)
            continue
        records.append(InstanceRecord(len(records), name, kind, parts, inst.confidence, prov))
    return records


def evaluate_stage(truth: list, predictions: list, cfg: PipelineConfig, taus=None,
                   catalog: Optional[ClassCatalog] = None) -> dict:
    ev = cfg.evaluation
    catalog = catalog or cfg.classes.catalog()
    classes = [catalog.names[c] for c in catalog.foreground]
    return evaluation_report(truth, predictions, taus or ev.tolerances, ev.spacing or None, classes,
                             ev.iou_threshold)


def write_report(report: dict, json_path, text_path=None) -> None:
    Path(json_path).write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")
    if text_path is not None:
        Path(text_path).write_text(format_report(report))


def run_pipeline(scene_dir, out_dir, cfg: PipelineConfig) -> dict:
    """All stages on a scene directory; returns the written paths by name."""
    from .ply import write_ply
    from .records import write_instances, write_obj

    bundle = load_scene(scene_dir)
    catalog = bundle.catalog
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cloud = read_ply(bundle.cloud_path)
    views = load_views(bundle.cameras_path, bundle.heatmap_dir, catalog)
    seg = map_stage(cloud, views, cfg, catalog)
    paths = {"segmented": out / "segmented.ply", "index": out / "index.json",
             "instances": out / "instances.json", "obj": out / "instances.obj"}
    write_ply(seg, paths["segmented"])
    instances = cluster_stage(seg, cfg)
    write_index(instances, catalog, paths["index"])
    records = extract_stage(instances, catalog, cfg)
    write_instances(records, paths["instances"])
    write_obj(records, paths["obj"])
    if bundle.annotations_path is not None:
        truth = read_instances(bundle.annotations_path)
        report = evaluate_stage(truth, records, cfg, catalog=catalog)
        paths["report"] = out / "report.json"
        paths["report_text"] = out / "report.txt"
        write_report(report, paths["report"], paths["report_text"])
    return paths
