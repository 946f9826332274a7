"""Pipeline configuration: TOML/JSON files plus command-line overrides.

Files are organised in sections matching the dataclasses below, e.g.::

    seed = 0
    [polygon]
    alpha = 100.0
    [clustering]
    crack_min_pts = 5

Unknown sections or keys are rejected.  TOML has no null, so ``eps = 0``
selects the automatic DBSCAN radius and ``spacing = 0`` turns evaluation
resampling off.  Command-line flags are applied on
top of the file as dotted ``section.key`` overrides.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .clustering import DbscanParams
from .errors import ValidationError
from .evaluation import DEFAULT_SPACING, TOLERANCE_GRID
from .mapping import DEFAULT_CLASSES, DEFAULT_GEOMETRY, ClassCatalog
from .skeleton import ContractionParams, ExtractionParams


@dataclass(frozen=True)
class ClassesConfig:
    names: tuple = DEFAULT_CLASSES
    background: int = 0
    geometry: dict = field(default_factory=lambda: dict(DEFAULT_GEOMETRY))

    def catalog(self) -> ClassCatalog:
        return ClassCatalog(tuple(self.names), self.background, dict(self.geometry))


@dataclass(frozen=True)
class MappingConfig:
    splat_radius_px: float = 2.0
    depth_tol_rel: float = 0.01
    occlusion: bool = True
    count_mode: str = "in_interval"
    normal_k: int = 16


@dataclass(frozen=True)
class ClusteringConfig:
    eps: Optional[float] = None
    eps_auto_factor: float = 4.0
    crack_min_pts: int = 5
    areal_min_pts: int = 10

    def params(self, kind: str) -> DbscanParams:
        mp = self.crack_min_pts if kind == "medial_axis" else self.areal_min_pts
        return DbscanParams(self.eps or None, mp, self.eps_auto_factor)


@dataclass(frozen=True)
class ContractionConfig:
    k: int = 8
    contraction_weight: float = 1.0
    attraction_weight: float = 1.0
    amplification: float = 3.0
    max_iterations: int = 20
    convergence_ratio: float = 0.01
    max_contraction_weight: float = 2048.0
    attraction: str = "global"


@dataclass(frozen=True)
class ExtractionConfig:
    max_points: int = 50_000
    max_vertices: int = 500
    min_vertex_spacing: Optional[float] = None
    spur_length: Optional[float] = None
    simplify_tolerance: float = 0.001
    mst_complete_limit: int = 2000
    mst_k: int = 8


@dataclass(frozen=True)
class PolygonConfig:
    alpha: float = 100.0
    planarity_threshold: float = 0.95
    normalization: str = "per_axis"


@dataclass(frozen=True)
class EvaluationConfig:
    spacing: Optional[float] = DEFAULT_SPACING
    tolerances: tuple = TOLERANCE_GRID
    iou_threshold: float = 0.5


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    classes: ClassesConfig = field(default_factory=ClassesConfig)
    mapping: MappingConfig = field(default_factory=MappingConfig)
    clustering: ClusteringConfig = field(default_factory=ClusteringConfig)
    contraction: ContractionConfig = field(default_factory=ContractionConfig)
    extraction: ExtractionConfig = field(default_factory=ExtractionConfig)
    polygon: PolygonConfig = field(default_factory=PolygonConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)

    def extraction_params(self) -> ExtractionParams:
        return ExtractionParams(
            contraction=ContractionParams(**dataclasses.asdict(self.contraction)),
            seed=self.seed,
            **dataclasses.asdict(self.extraction),
        )

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["classes"]["names"] = list(d["classes"]["names"])
        d["evaluation"]["tolerances"] = list(d["evaluation"]["tolerances"])
        return d


_SECTIONS = {f.name: f for f in dataclasses.fields(PipelineConfig) if f.name != "seed"}


def _coerce(value: Any, default: Any, where: str):
    """Check ``value`` against the type of the field's default."""
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ValidationError(f"{where}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ValidationError(f"{where}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float) or (default is None and isinstance(value, (int, float))):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValidationError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ValidationError(f"{where}: expected a string, got {value!r}")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ValidationError(f"{where}: expected an array, got {value!r}")
        return tuple(value)
    if isinstance(default, dict):
        if not isinstance(value, dict):
            raise ValidationError(f"{where}: expected a table, got {value!r}")
        return dict(value)
    return value


def _build_section(cls, values: Mapping, name: str, base=None):
    base = base if base is not None else cls()
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ValidationError(f"unknown config key(s) in [{name}]: {', '.join(unknown)}")
    kw = {k: _coerce(v, getattr(base, k), f"{name}.{k}") for k, v in values.items()}
    return dataclasses.replace(base, **kw)


def config_from_dict(doc: Mapping, base: Optional[PipelineConfig] = None) -> PipelineConfig:
    base = base or PipelineConfig()
    if not isinstance(doc, Mapping):
        raise ValidationError("config document must be a table/object")
    unknown = sorted(set(doc) - set(_SECTIONS) - {"seed"})
    if unknown:
        raise ValidationError(f"unknown config section(s): {', '.join(unknown)}")
    kw = {}
    if "seed" in doc:
        kw["seed"] = _coerce(doc["seed"], 0, "seed")
    for name, f in _SECTIONS.items():
        if name in doc:
            if not isinstance(doc[name], Mapping):
                raise ValidationError(f"config section [{name}] must be a table")
            kw[name] = _build_section(type(getattr(base, name)), doc[name], name, getattr(base, name))
    cfg = dataclasses.replace(base, **kw)
    validate_config(cfg)
    return cfg


def load_config(path) -> PipelineConfig:
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"config file not found: {path}")
    text = path.read_text()
    if path.suffix.lower() == ".json":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config {path} is not valid JSON: {exc}") from exc
    else:
        try:
            doc = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ValidationError(f"config {path} is not valid TOML: {exc}") from exc
    return config_from_dict(doc)


def apply_overrides(cfg: PipelineConfig, overrides: Mapping[str, Any]) -> PipelineConfig:
    """Apply ``{"section.key": value}`` overrides; ``None`` values are skipped."""
    doc: dict = {}
    for key, value in overrides.items():
        if value is None:
            continue
        if key == "seed":
            doc["seed"] = value
            continue
        section, _, name = key.partition(".")
        doc.setdefault(section, {})[name] = value
    return config_from_dict(doc, cfg)


def validate_config(cfg: PipelineConfig) -> None:
    """Construct every parameter object once so bad values fail early."""
    cat = cfg.classes.catalog()
    for name in cat.names:
        if name != cat.names[cat.background] and name not in cfg.classes.geometry:
            raise ValidationError(f"class {name!r} has no geometry kind")
    cfg.extraction_params()
    cfg.clustering.params("medial_axis")
    cfg.clustering.params("polygon")
    if cfg.mapping.count_mode not in ("in_interval", "visible"):
        raise ValidationError(f"unknown count_mode {cfg.mapping.count_mode!r}")
    if cfg.mapping.splat_radius_px <= 0 or cfg.mapping.depth_tol_rel <= 0 or cfg.mapping.normal_k < 3:
        raise ValidationError("mapping parameters out of range")
    if not cfg.polygon.alpha > 0:
        raise ValidationError("alpha must be positive")
    if cfg.polygon.normalization not in ("per_axis", "joint"):
        raise ValidationError(f"unknown normalization {cfg.polygon.normalization!r}")
    if not cfg.evaluation.tolerances or any(not t > 0 for t in cfg.evaluation.tolerances):
        raise ValidationError("tolerances must be positive")
    if cfg.evaluation.spacing is not None and cfg.evaluation.spacing < 0:
        raise ValidationError("evaluation spacing must be non-negative")
