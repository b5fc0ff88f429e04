"""Pipeline configuration: one JSON document, every field optional."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from typing import Optional

from .errors import FormatError


@dataclass(frozen=True)
class GridSpec:
    mode: str = "default"          # "default", "dense" or "custom"
    fz_step: float = 3.0
    fx_step: float = 3.0
    fy_step: float = 6.0


@dataclass(frozen=True)
class OracleSpec:
    noise_sigma: float = 0.0
    gain: tuple = (0.28, 0.16, 0.05)
    height: int = 64
    width: int = 32


@dataclass(frozen=True)
class RegistrationSpec:
    variance_kept: float = 0.99
    max_texture_components: Optional[int] = None
    rel_tol: float = 1e-4
    max_iter: int = 50
    jacobian_every: int = 5
    max_residual: float = 1e-3
    scan_radius: float = 12.0
    scan_step: float = 2.0


@dataclass(frozen=True)
class SegmentationSpec:
    h_lo: float = 0.02
    h_hi: float = 0.12
    s_min: float = 0.15
    v_min: float = 0.2
    min_area: int = 2000


@dataclass(frozen=True)
class ServoSpec:
    preset: str = "static"
    offset_px: float = 100.0
    duration: float = 3.0
    gain: float = 2.0
    control_dt: float = 0.001
    capture_dt: float = 0.05
    depth_mode: str = "true"
    measure: str = "model"


@dataclass(frozen=True)
class AnalysisSpec:
    contact_n: float = 0.5
    sustain_s: float = 0.2
    lift_ratio: float = 1.1
    band: float = 0.10
    min_hold_s: float = 5.0
    test_mode: str = "auto"


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    grid: GridSpec = field(default_factory=GridSpec)
    oracle: OracleSpec = field(default_factory=OracleSpec)
    registration: RegistrationSpec = field(default_factory=RegistrationSpec)
    segmentation: SegmentationSpec = field(default_factory=SegmentationSpec)
    servo: ServoSpec = field(default_factory=ServoSpec)
    analysis: AnalysisSpec = field(default_factory=AnalysisSpec)
    output_dir: str = "out"
    min_processed_fraction: float = 0.95


def _build(cls, doc, where):
    if not isinstance(doc, dict):
        raise FormatError(f"{where}: expected an object")
    known = {f.name: f for f in fields(cls)}
    unknown = set(doc) - set(known)
    if unknown:
        raise FormatError(f"{where}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for name, value in doc.items():
        default = known[name].default_factory() if callable(known[name].default_factory) else known[name].default
        if is_dataclass(default):
            kwargs[name] = _build(type(default), value, f"{where}.{name}")
        elif isinstance(default, tuple):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    return cls(**kwargs)


def config_from_dict(doc: dict) -> PipelineConfig:
    return _build(PipelineConfig, doc, "config")


def config_to_dict(cfg: PipelineConfig) -> dict:
    return asdict(cfg)


def load_config(path) -> PipelineConfig:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    return config_from_dict(doc)


def save_config(cfg: PipelineConfig, path) -> None:
    with open(path, "w") as fh:
        json.dump(config_to_dict(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")


def override(cfg: PipelineConfig, section: Optional[str] = None, **values) -> PipelineConfig:
    """Copy of ``cfg`` with non-None ``values`` replaced (inside ``section`` if given)."""
    values = {k: v for k, v in values.items() if v is not None}
    if not values:
        return cfg
    if section is None:
        return replace(cfg, **values)
    return replace(cfg, **{section: replace(getattr(cfg, section), **values)})
