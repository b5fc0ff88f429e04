"""Calibration, training and estimation stages plus the session and trial
loaders used by the command line."""
from __future__ import annotations

import csv
import json
import logging
import time as _time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import eigennail, registration
from .analysis import GraspTrial, PhaseThresholds
from .config import PipelineConfig, config_to_dict
from .errors import FormatError, NailforceError
from .imaging import read_image, write_image
from .segmentation import SkinThreshold, crop_origin, segment_frame
from .synth import (DEFAULT_GRID, DENSE_GRID, FINGERS, CalibrationGrid, default_nail_model,
                    make_grid, read_forces_csv, render_calibration, write_forces_csv)

log = logging.getLogger("nailforce")

CALIBRATION_HEADER = ("index", "fx_n", "fy_n", "fz_n")


def _write_manifest(out: Path, doc: dict) -> None:
    # the only file carrying a wall-clock timestamp
    doc = dict(doc, created_unix=round(_time.time(), 3))
    with open(out / "manifest.json", "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_manifest(path: Path) -> dict:
    try:
        with open(path / "manifest.json") as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise FormatError(f"{path}: missing manifest.json") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}/manifest.json: {exc}") from exc


def grid_for(cfg: PipelineConfig) -> CalibrationGrid:
    g = cfg.grid
    if g.mode == "default":
        return DEFAULT_GRID
    if g.mode == "dense":
        return DENSE_GRID
    if g.mode == "custom":
        return CalibrationGrid.from_steps(g.fz_step, g.fx_step, g.fy_step)
    raise FormatError(f"unknown grid mode {g.mode!r}")


def nail_model_for(cfg: PipelineConfig):
    o = cfg.oracle
    return default_nail_model(o.noise_sigma, cfg.seed, o.height, o.width, o.gain)


# -- calibrate --------------------------------------------------------------------

def calibrate(cfg: PipelineConfig, out_dir) -> Path:
    """Render the calibration grid.

    Writes ``forces.csv``, 8-bit previews under ``images/``, the exact
    float64 stack ``images.npy`` used for training, ``landmarks.csv`` and a
    manifest.
    """
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    forces = np.array(make_grid(grid_for(cfg)), dtype=np.float64)
    model = nail_model_for(cfg)
    images = render_calibration(model, forces)
    with open(out / "forces.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(CALIBRATION_HEADER)
        for i, f in enumerate(forces):
            wr.writerow([i] + [repr(float(v)) for v in f])
    for i, img in enumerate(images):
        write_image(img, out / "images" / f"nail_{i:05d}.pgm")
    np.save(out / "images.npy", np.stack([img.data for img in images]))
    registration.write_landmarks_csv(model.pattern.landmarks(), out / "landmarks.csv")
    _write_manifest(out, {"kind": "calibration", "n_samples": len(forces),
                          "shape": list(model.shape), "config": config_to_dict(cfg)})
    log.info("calibration: %d samples -> %s", len(forces), out)
    return out


def load_calibration(path):
    """Return ``(images (N,H,W), forces (N,3), landmarks (L,2))``."""
    path = Path(path)
    man = _read_manifest(path)
    if man.get("kind") != "calibration":
        raise FormatError(f"{path}: not a calibration dataset")
    with open(path / "forces.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or set(CALIBRATION_HEADER) - set(rows[0]):
        raise FormatError(f"{path}/forces.csv: bad header")
    forces = np.array([[float(r["fx_n"]), float(r["fy_n"]), float(r["fz_n"])] for r in rows])
    if (path / "images.npy").exists():
        images = np.load(path / "images.npy")
    else:
        images = np.stack([read_image(path / "images" / f"nail_{i:05d}.pgm").data
                           for i in range(len(rows))])
    if len(images) != len(forces):
        raise FormatError(f"{path}: {len(images)} images for {len(forces)} force rows")
    landmarks = registration.read_landmarks_csv(path / "landmarks.csv")
    return images, forces, landmarks


# -- train --------------------------------------------------------------------------

@dataclass
class TrainedModels:
    appearance: registration.AppearanceModel
    eigennail: eigennail.EigenNailModel

    @property
    def triangulation(self):
        return self.appearance.triangulation


def search_options(cfg: PipelineConfig) -> registration.SearchOptions:
    r = cfg.registration
    return registration.SearchOptions(rel_tol=r.rel_tol, max_iter=r.max_iter,
                                       jacobian_every=r.jacobian_every, max_residual=r.max_residual,
                                       scan_radius=r.scan_radius, scan_step=r.scan_step)


def fit_models(images, forces, landmarks, cfg: PipelineConfig = PipelineConfig()):
    """Appearance model from annotated images, then an eigennail model on the
    shape-normalised (warped) training images.  Returns ``(models, train_rms)``."""
    images = [np.asarray(getattr(im, "data", im)) for im in images]
    tri = registration.triangulate(landmarks, images[0].shape[:2])
    shapes = [tri.template] * len(images)
    r = cfg.registration
    app = registration.build_appearance_model(images, shapes, tri, r.variance_kept,
                                              r.max_texture_components)
    warped = [registration.piecewise_warp(im, tri.template, tri) for im in images]
    eig = eigennail.train(warped, forces, r.variance_kept)
    fitted = eig.predict_many(warped)
    train_rms = eigennail.rms(fitted, forces)
    return TrainedModels(app, eig), train_rms


def train(cfg: PipelineConfig, dataset_dir, out_dir) -> dict:
    images, forces, landmarks = load_calibration(dataset_dir)
    models, train_rms = fit_models(images, forces, landmarks, cfg)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    registration.save_model(models.appearance, out / "appearance.json")
    eigennail.save_model(models.eigennail, out / "eigennail.json")
    summary = {"k": models.eigennail.k, "n_samples": int(len(forces)),
               "train_rms_n": [float(v) for v in train_rms]}
    with open(out / "train_log.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_manifest(out, {"kind": "model", "dataset": str(dataset_dir)})
    log.info("trained: k=%d, training RMS (N) = %s", summary["k"],
             ", ".join(f"{v:.3g}" for v in train_rms))
    return summary


def load_models(model_dir) -> TrainedModels:
    d = Path(model_dir)
    return TrainedModels(registration.load_model(d / "appearance.json"),
                         eigennail.load_model(d / "eigennail.json"))


# -- estimate -----------------------------------------------------------------------

class FrameEstimate:
    __slots__ = ("force", "residual", "converged", "extrapolated")

    def __init__(self, force, residual, converged, extrapolated):
        self.force = force
        self.residual = residual
        self.converged = converged
        self.extrapolated = extrapolated


def estimate_image(models: TrainedModels, img, init=None,
                   options: registration.SearchOptions = registration.SearchOptions()) -> FrameEstimate:
    """Register one nail image, warp it to the template and predict the force."""
    warped, res = registration.register(models.appearance, img, init, options)
    pred = models.eigennail.predict(warped)
    return FrameEstimate(pred.force, res.residual, res.converged, pred.extrapolated)


@dataclass
class EstimateSummary:
    expected: int
    processed: int
    skipped: List[dict] = field(default_factory=list)

    @property
    def fraction(self) -> float:
        return self.processed / self.expected if self.expected else 1.0


ESTIMATE_LOG_HEADER = ("frame", "finger", "status", "residual", "converged", "extrapolated", "detail")


def _session_phases(session_dir: Path):
    csv_path = session_dir / "forces.csv"
    if not csv_path.exists():
        return None
    time, _, phases, _ = read_forces_csv(csv_path)
    return time, phases


def estimate(cfg: PipelineConfig, model_dir, session_dir, out_dir, stride: int = 1,
             source: str = "nail") -> EstimateSummary:
    """Estimate per-finger forces for every ``stride``-th frame of a session.

    ``source="nail"`` reads the per-finger nail PGMs; ``source="camera"``
    segments the two camera views and registers inside each crop.  Frames that
    cannot be read or segmented are skipped and logged.
    """
    if stride < 1:
        raise FormatError("stride must be >= 1")
    session_dir, out = Path(session_dir), Path(out_dir)
    man = _read_manifest(session_dir)
    if man.get("kind") != "grasp-session":
        raise FormatError(f"{session_dir}: not a grasp session")
    models = load_models(model_dir)
    opts = search_options(cfg)
    dt, rate = float(man["dt"]), float(man["frame_rate_hz"])
    store_stride = int(man.get("frame_stride", 1))
    frames = [k for k in range(0, int(man["n_frames"]), store_stride)][::stride]
    phase_info = _session_phases(session_dir)
    seg = SkinThreshold(**asdict(cfg.segmentation))

    times, rows, log_rows = [], {f: [] for f in FINGERS}, []
    summary = EstimateSummary(expected=len(frames) * len(FINGERS), processed=0)
    fdir = session_dir / "frames"
    for k in frames:
        sample = int(round(k / rate / dt))
        times.append(sample * dt)
        try:
            inputs = _frame_inputs(models, fdir, k, source, seg)
        except (OSError, NailforceError) as exc:
            inputs = {f: exc for f in FINGERS}
        for finger in FINGERS:
            item = inputs.get(finger)
            if isinstance(item, Exception) or item is None:
                detail = f"{type(item).__name__}: {item}" if item is not None else "missing"
                summary.skipped.append({"frame": k, "finger": finger, "detail": detail})
                log_rows.append([k, finger, "skipped", "", "", "", detail])
                rows[finger].append(None)
                continue
            img, init = item
            try:
                est = estimate_image(models, img, init, opts)
            except NailforceError as exc:
                detail = f"{type(exc).__name__}: {exc}"
                summary.skipped.append({"frame": k, "finger": finger, "detail": detail})
                log_rows.append([k, finger, "skipped", "", "", "", detail])
                rows[finger].append(None)
                continue
            summary.processed += 1
            rows[finger].append(est.force)
            log_rows.append([k, finger, "ok", repr(float(est.residual)), int(est.converged),
                             int(est.extrapolated), ""])

    out.mkdir(parents=True, exist_ok=True)
    _write_estimates(out / "forces.csv", times, rows, phase_info)
    with open(out / "estimate_log.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(ESTIMATE_LOG_HEADER)
        wr.writerows(log_rows)
    _write_manifest(out, {"kind": "estimate", "session": str(session_dir), "model": str(model_dir),
                          "stride": stride, "source": source, "expected": summary.expected,
                          "processed": summary.processed})
    for s in summary.skipped:
        log.warning("frame %d %s skipped: %s", s["frame"], s["finger"], s["detail"])
    return summary


def _frame_inputs(models: TrainedModels, fdir: Path, k: int, source: str, seg: SkinThreshold):
    """Map finger -> ``(image, init landmarks)`` or the exception that stopped it."""
    template = models.triangulation.template
    if source == "nail":
        out = {}
        for finger in FINGERS:
            try:
                out[finger] = (read_image(fdir / f"{finger}_{k:05d}.pgm"), None)
            except (OSError, NailforceError) as exc:
                out[finger] = exc
        return out
    if source != "camera":
        raise FormatError(f"unknown frame source {source!r}")
    out = {}
    th, tw = models.triangulation.shape
    for side in ("finger", "thumb"):
        try:
            frame = read_image(fdir / f"camera-{side}_{k:05d}.ppm")
            found = segment_frame(frame, side, seg)
        except (OSError, NailforceError) as exc:
            names = ("index", "middle", "ring") if side == "finger" else ("thumb",)
            out.update({n: exc for n in names})
            continue
        for name, (blob, crop) in found.items():
            top, left = crop_origin(blob)
            # nail patch sits at the finger centre; seed the search there
            cr, cc = int(round(blob.centroid[0] + 0.5)), int(round(blob.centroid[1] + 0.5))
            shift = np.array([cc - tw // 2 - left, cr - th // 2 - top], dtype=np.float64)
            out[name] = (crop, template + shift)
    return out


def _write_estimates(path, times, rows, phase_info):
    times = np.asarray(times)
    phases = None
    if phase_info is not None:
        ref_t, ref_p = phase_info
        idx = np.clip(np.searchsorted(ref_t, times - 1e-9), 0, len(ref_t) - 1)
        phases = ref_p[idx]
    forces = {f: np.array([r if r is not None else (np.nan,) * 3 for r in rows[f]], dtype=np.float64)
              .reshape(len(times), 3) for f in FINGERS}
    write_forces_csv(path, times, forces, phases, source="estimate")


# -- trial loading --------------------------------------------------------------------

def _fill_gaps(series: np.ndarray) -> np.ndarray:
    out = series.copy()
    idx = np.arange(len(out))
    for j in range(out.shape[1]):
        bad = ~np.isfinite(out[:, j])
        if bad.all():
            raise FormatError("force column has no finite samples")
        if bad.any():
            out[bad, j] = np.interp(idx[bad], idx[~bad], out[~bad, j])
    return out


def load_trial(path, trial_id: Optional[str] = None) -> GraspTrial:
    """Read a session or estimate directory (or a force CSV) into a trial.

    Skipped estimates (empty cells) are filled by linear interpolation.
    """
    p = Path(path)
    csv_path = p / "forces.csv" if p.is_dir() else p
    time, forces, _, source = read_forces_csv(csv_path)
    if len(time) < 2:
        raise FormatError(f"{csv_path}: too few samples")
    missing = set(FINGERS) - set(forces)
    if missing:
        raise FormatError(f"{csv_path}: missing fingers {sorted(missing)}")
    dt = float(np.median(np.diff(time)))
    forces = {f: _fill_gaps(forces[f]) for f in FINGERS}
    tid = trial_id or (p.name if p.is_dir() else p.stem)
    return GraspTrial(dt, forces, None, None, source or "", tid)


def thresholds_for(cfg: PipelineConfig) -> PhaseThresholds:
    a = cfg.analysis
    return PhaseThresholds(contact_n=a.contact_n, sustain_s=a.sustain_s, lift_ratio=a.lift_ratio,
                           band=a.band, min_hold_s=a.min_hold_s)
