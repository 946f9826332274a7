"""Command-line interface.

Exit codes: 0 success, 1 validation error (bad input, missing file, bad
flag), 2 processing error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from .config import PipelineConfig, apply_overrides, load_config
from .errors import ProcessingError, ValidationError

log = logging.getLogger("damage25d")

THREADS_ENV = "DAMAGE25D_THREADS"
_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(f"{self.prog}: {message}")


def _parse_set(items) -> dict:
    out = {}
    for item in items or ():
        key, sep, raw = item.partition("=")
        if not sep or "." not in key:
            raise ValidationError(f"--set expects section.key=value, got {item!r}")
        try:
            out[key] = json.loads(raw)
        except json.JSONDecodeError:
            out[key] = raw
    return out


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="TOML or JSON parameter file")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                   help="override any config value (repeatable); applied after the file, before flags")
    p.add_argument("--seed", type=int, help="seed for every stochastic choice")
    p.add_argument("--threads", type=int, default=None,
                   help=f"thread count for native libraries (default: ${THREADS_ENV})")
    p.add_argument("-v", "--verbose", action="count", default=0)


def _mapping_flags(p):
    p.add_argument("--splat-radius", type=float, dest="mapping.splat_radius_px")
    p.add_argument("--depth-tol", type=float, dest="mapping.depth_tol_rel")
    p.add_argument("--no-occlusion", action="store_const", const=False, dest="mapping.occlusion")
    p.add_argument("--count-mode", choices=("in_interval", "visible"), dest="mapping.count_mode")
    p.add_argument("--normal-k", type=int, dest="mapping.normal_k")


def _cluster_flags(p):
    p.add_argument("--eps", type=float, dest="clustering.eps")
    p.add_argument("--eps-factor", type=float, dest="clustering.eps_auto_factor")
    p.add_argument("--crack-min-pts", type=int, dest="clustering.crack_min_pts")
    p.add_argument("--areal-min-pts", type=int, dest="clustering.areal_min_pts")


def _extract_flags(p):
    p.add_argument("--knn", type=int, dest="contraction.k")
    p.add_argument("--max-iterations", type=int, dest="contraction.max_iterations")
    p.add_argument("--amplification", type=float, dest="contraction.amplification")
    p.add_argument("--max-vertices", type=int, dest="extraction.max_vertices")
    p.add_argument("--simplify-tol", type=float, dest="extraction.simplify_tolerance")
    p.add_argument("--alpha", type=float, dest="polygon.alpha")
    p.add_argument("--normalization", choices=("per_axis", "joint"), dest="polygon.normalization")


def _eval_flags(p):
    p.add_argument("--tol", type=float, action="append", dest="evaluation.tolerances",
                   help="positional tolerance in meters (repeatable; default 0.01 0.02 0.04 0.06 0.08)")
    p.add_argument("--spacing", type=float, dest="evaluation.spacing",
                   help="vertex resampling spacing in meters, 0 disables")
    p.add_argument("--iou-threshold", type=float, dest="evaluation.iou_threshold")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="damage25d", description="2.5D structural damage extraction")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("map", help="fuse heatmaps onto a cloud -> segmented PLY")
    _common(p)
    p.add_argument("--cloud", type=Path, required=True)
    p.add_argument("--cameras", type=Path, required=True)
    p.add_argument("--heatmaps", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--ascii", action="store_true", help="write ASCII instead of binary PLY")
    _mapping_flags(p)

    p = sub.add_parser("cluster", help="segmented PLY -> instance index JSON")
    _common(p)
    p.add_argument("--segmented", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    _cluster_flags(p)

    p = sub.add_parser("extract", help="instance index -> instance JSON (+ OBJ)")
    _common(p)
    p.add_argument("--segmented", type=Path, required=True)
    p.add_argument("--index", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--obj", type=Path)
    _extract_flags(p)

    p = sub.add_parser("evaluate", help="predictions vs annotations -> metrics report")
    _common(p)
    p.add_argument("--pred", type=Path, required=True)
    p.add_argument("--truth", type=Path, required=True)
    p.add_argument("--out", type=Path, help="report JSON (text table goes to stdout)")
    _eval_flags(p)

    p = sub.add_parser("pipeline", help="all stages on a scene directory")
    _common(p)
    p.add_argument("--scene", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    _mapping_flags(p)
    _cluster_flags(p)
    _extract_flags(p)
    _eval_flags(p)

    p = sub.add_parser("synth", help="write a synthetic scene directory")
    _common(p)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--layout", type=Path, help="scene description JSON (default: built-in demo wall)")
    p.add_argument("--noise", type=float)
    p.add_argument("--curvature-radius", type=float)
    p.add_argument("--bits", type=int, choices=(8, 16))
    return parser


def _configure(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    overrides = _parse_set(args.set)
    for key, value in vars(args).items():
        if "." in key and value is not None:
            overrides[key] = list(value) if isinstance(value, list) else value
    if args.seed is not None:
        overrides["seed"] = args.seed
    return apply_overrides(cfg, overrides)


def _setup(args) -> None:
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    threads = args.threads if args.threads is not None else os.environ.get(THREADS_ENV)
    if threads is not None:
        try:
            n = int(threads)
        except ValueError:
            raise ValidationError(f"invalid thread count {threads!r}") from None
        if n < 1:
            raise ValidationError("thread count must be at least 1")
        # only affects native libraries that have not started their pools yet
        for var in _THREAD_VARS:
            os.environ[var] = str(n)


def _cmd_map(args, cfg):
    from .pipeline import load_views, map_stage
    from .ply import read_ply, write_ply

    catalog = cfg.classes.catalog()
    cloud = read_ply(args.cloud)
    views = load_views(args.cameras, args.heatmaps, catalog)
    seg = map_stage(cloud, views, cfg, catalog)
    write_ply(seg, args.out, binary=not args.ascii)
    log.info("labelled %d points", len(seg))


def _cmd_cluster(args, cfg):
    from .pipeline import cluster_stage, write_index
    from .ply import read_segmented_ply

    seg = read_segmented_ply(args.segmented)
    instances = cluster_stage(seg, cfg)
    write_index(instances, seg.catalog, args.out)
    log.info("%d instances", len(instances))


def _cmd_extract(args, cfg):
    from .pipeline import extract_stage, read_index
    from .ply import read_segmented_ply
    from .records import write_instances, write_obj

    seg = read_segmented_ply(args.segmented)
    records = extract_stage(read_index(args.index, seg), seg.catalog, cfg)
    write_instances(records, args.out)
    if args.obj:
        write_obj(records, args.obj)


def _cmd_evaluate(args, cfg):
    from .evaluation import format_report
    from .pipeline import evaluate_stage, write_report
    from .records import read_instances

    pred = read_instances(args.pred)
    truth = read_instances(args.truth)
    catalog = cfg.classes.catalog()
    for r in truth + pred:
        catalog.index(r.class_name)
    report = evaluate_stage(truth, pred, cfg, catalog=catalog)
    if args.out:
        write_report(report, args.out)
    sys.stdout.write(format_report(report))


def _cmd_pipeline(args, cfg):
    from .pipeline import run_pipeline

    paths = run_pipeline(args.scene, args.out, cfg)
    if "report_text" in paths:
        sys.stdout.write(Path(paths["report_text"]).read_text())


def _cmd_synth(args, cfg):
    from .synth import default_scene_layout, generate_synthetic_scene, layout_from_dict, write_scene

    if args.layout:
        if not args.layout.is_file():
            raise ValidationError(f"scene description not found: {args.layout}")
        try:
            doc = json.loads(args.layout.read_text())
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{args.layout} is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ValidationError("scene description must be a JSON object")
    else:
        from .synth import layout_to_dict

        doc = layout_to_dict(default_scene_layout())
    for key, value in (("noise", args.noise), ("curvature_radius", args.curvature_radius), ("bits", args.bits)):
        if value is not None:
            doc[key] = value
    if args.seed is not None:
        doc["seed"] = args.seed
    write_scene(generate_synthetic_scene(layout_from_dict(doc)), args.out)


_COMMANDS = {
    "map": _cmd_map, "cluster": _cmd_cluster, "extract": _cmd_extract,
    "evaluate": _cmd_evaluate, "pipeline": _cmd_pipeline, "synth": _cmd_synth,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        _setup(args)
        cfg = _configure(args)
        _COMMANDS[args.command](args, cfg)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ProcessingError as exc:
        print(f"processing error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 1 if isinstance(exc, (FileNotFoundError, NotADirectoryError, IsADirectoryError)) else 2
    return 0
