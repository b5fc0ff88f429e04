"""Eye-in-hand image-based visual servoing simulator.

A free-flying pinhole camera tracks four dots on the grasped object.  The
controller runs at ``control_dt`` and uses the latest captured measurement
(zero-order hold between captures); several cameras share one capture clock.
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np

from .errors import DegenerateConfigurationError, DomainError, FeatureLossError
from .imaging import Image, as_array
from .segmentation import connected_components

PINV_RTOL = 1e-10


# -- geometry ------------------------------------------------------------------

def skew(w) -> np.ndarray:
    wx, wy, wz = w
    return np.array([[0.0, -wz, wy], [wz, 0.0, -wx], [-wy, wx, 0.0]])


def rodrigues(w) -> np.ndarray:
    """Rotation matrix ``exp([w]x)``."""
    w = np.asarray(w, dtype=np.float64)
    theta = np.linalg.norm(w)
    k = skew(w)
    if theta < 1e-12:
        return np.eye(3) + k + 0.5 * k @ k
    return np.eye(3) + np.sin(theta) / theta * k + (1 - np.cos(theta)) / theta ** 2 * k @ k


def orthonormalize(r) -> np.ndarray:
    u, _, vt = np.linalg.svd(r)
    m = u @ vt
    if np.linalg.det(m) < 0:
        u[:, -1] *= -1
        m = u @ vt
    return m


@dataclass(frozen=True, eq=False)
class CameraPose:
    """Camera-to-world pose: ``X_world = R X_cam + position``."""

    position: np.ndarray
    rotation: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.position, dtype=np.float64).reshape(3)
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-9) or np.linalg.det(r) <= 0:
            raise DomainError("rotation must be a proper orthonormal matrix")
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "rotation", r)

    def to_camera(self, pts_world) -> np.ndarray:
        return (np.asarray(pts_world) - self.position) @ self.rotation

    def as_row(self) -> list:
        return list(self.position) + list(self.rotation.reshape(-1))


def step_sim(pose: CameraPose, twist, dt: float) -> CameraPose:
    """First-order integration of a camera-frame twist ``(v, w)`` over ``dt``."""
    if dt <= 0:
        raise DomainError("dt must be positive")
    twist = np.asarray(twist, dtype=np.float64)
    v, w = twist[:3], twist[3:]
    r = pose.rotation
    pos = pose.position + r @ v * dt
    rot = orthonormalize(r @ rodrigues(w * dt))
    return CameraPose(pos, rot)


@dataclass(frozen=True)
class Intrinsics:
    focal: float = 800.0
    cx: float = 339.5
    cy: float = 511.5
    width: int = 680
    height: int = 1024

    def to_pixels(self, xy) -> np.ndarray:
        xy = np.asarray(xy)
        return np.stack([self.cx + self.focal * xy[..., 0], self.cy + self.focal * xy[..., 1]], axis=-1)

    def to_normalized(self, uv) -> np.ndarray:
        uv = np.asarray(uv)
        return np.stack([(uv[..., 0] - self.cx) / self.focal, (uv[..., 1] - self.cy) / self.focal], axis=-1)


@dataclass(frozen=True, eq=False)
class FeatureSet:
    points: np.ndarray  # (4, 2) normalised (x, y)
    depths: np.ndarray  # (4,)

    def __post_init__(self):
        object.__setattr__(self, "points", np.asarray(self.points, dtype=np.float64).reshape(-1, 2))
        object.__setattr__(self, "depths", np.asarray(self.depths, dtype=np.float64).reshape(-1))

    def vector(self) -> np.ndarray:
        return self.points.reshape(-1)


def project(pose: CameraPose, pts_world) -> FeatureSet:
    pc = pose.to_camera(pts_world)
    z = pc[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        xy = pc[:, :2] / z[:, None]
    return FeatureSet(xy, z)


def interaction_matrix(f: FeatureSet) -> np.ndarray:
    """Stacked 2x6 point-feature Jacobians relating image motion to camera twist."""
    if np.any(f.depths <= 0):
        raise DomainError("all feature depths must be positive")
    rows = []
    for (x, y), z in zip(f.points, f.depths):
        rows.append([-1.0 / z, 0.0, x / z, x * y, -(1.0 + x * x), y])
        rows.append([0.0, -1.0 / z, y / z, 1.0 + y * y, -x * y, -x])
    return np.array(rows)


def control_law(L, e, gain: float) -> np.ndarray:
    """Camera twist ``-gain * pinv(L) e`` with an SVD pseudo-inverse."""
    if gain <= 0:
        raise DomainError("gain must be positive")
    L = np.asarray(L, dtype=np.float64)
    u, s, vt = np.linalg.svd(L, full_matrices=False)
    tol = PINV_RTOL * (s[0] if s.size else 0.0)
    rank = int(np.sum(s > tol))
    if rank < L.shape[1]:
        raise DegenerateConfigurationError(f"interaction matrix rank {rank} < {L.shape[1]}")
    return -gain * (vt.T @ ((u.T @ np.asarray(e, dtype=np.float64)) / s))


# -- dot rendering and detection ------------------------------------------------------

def render_dots(centers_px, shape, radius: float = 6.0, supersample: int = 4,
                background: float = 0.9, ink: float = 0.1) -> Image:
    """Dark anti-aliased disks on a light background; centres are (x, y) pixels."""
    h, w = shape
    img = np.full((h, w), background)
    offs = (np.arange(supersample) + 0.5) / supersample - 0.5
    for cx, cy in np.asarray(centers_px, dtype=np.float64):
        x0, x1 = int(np.floor(cx - radius - 1)), int(np.ceil(cx + radius + 1))
        y0, y1 = int(np.floor(cy - radius - 1)), int(np.ceil(cy + radius + 1))
        x0, y0 = max(x0, 0), max(y0, 0)
        x1, y1 = min(x1, w - 1), min(y1, h - 1)
        if x1 < x0 or y1 < y0:
            continue
        yy, xx = np.mgrid[y0:y1 + 1, x0:x1 + 1].astype(np.float64)
        cover = np.zeros_like(xx)
        for oy in offs:
            for ox in offs:
                cover += ((xx + ox - cx) ** 2 + (yy + oy - cy) ** 2) <= radius ** 2
        cover /= supersample ** 2
        patch = img[y0:y1 + 1, x0:x1 + 1]
        img[y0:y1 + 1, x0:x1 + 1] = patch - cover * (patch - ink)
    return Image(img)


def detect_dots(img, expected: int = 4, threshold: float = 0.5, min_area: int = 4):
    """Intensity-weighted centroids ``(row, col)`` of the ``expected`` largest dark blobs."""
    arr = as_array(img)
    if arr.ndim == 3:
        arr = arr.mean(axis=2)
    blobs = connected_components(arr < threshold, min_area)
    if len(blobs) < expected:
        raise FeatureLossError(expected, len(blobs))
    blobs = sorted(blobs, key=lambda b: -b.area)[:expected]
    centres = []
    for b in blobs:
        t, l, btm, r = b.bbox
        # widen the box so the anti-aliased rim is included in the weighting
        t, l = max(t - 2, 0), max(l - 2, 0)
        btm, r = min(btm + 2, arr.shape[0]), min(r + 2, arr.shape[1])
        patch = arr[t:btm, l:r]
        wgt = np.clip(1.0 - patch / np.max(arr), 0.0, None)
        yy, xx = np.mgrid[t:btm, l:r]
        total = wgt.sum()
        centres.append((float((wgt * yy).sum() / total), float((wgt * xx).sum() / total)))
    return sorted(centres)


# -- scenarios ---------------------------------------------------------------------

def plate_corners(width: float = 0.12, height: float = 0.08) -> np.ndarray:
    hw, hh = width / 2, height / 2
    return np.array([[-hw, -hh, 0.0], [hw, -hh, 0.0], [hw, hh, 0.0], [-hw, hh, 0.0]])


@dataclass(frozen=True)
class ServoConfig:
    gain: float = 2.0
    control_dt: float = 0.001
    capture_dt: float = 0.05
    depth_mode: str = "true"      # "true" or "desired"
    measure: str = "model"        # "model" projects exactly, "image" renders and detects

    def __post_init__(self):
        if self.gain <= 0:
            raise DomainError("gain must be positive")
        if self.control_dt <= 0 or self.capture_dt <= 0:
            raise DomainError("periods must be positive")
        ratio = self.capture_dt / self.control_dt
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise DomainError("capture_dt must be an integer multiple of control_dt")
        if self.depth_mode not in ("true", "desired"):
            raise DomainError(f"unknown depth mode {self.depth_mode!r}")
        if self.measure not in ("model", "image"):
            raise DomainError(f"unknown measurement mode {self.measure!r}")

    @property
    def capture_every(self) -> int:
        return int(round(self.capture_dt / self.control_dt))


@dataclass
class CameraSetup:
    name: str
    initial: CameraPose
    desired: CameraPose


def static_plate(t):
    return np.zeros(3)


def lifting_plate(height: float = 0.25, start: float = 0.5, duration: float = 2.0):
    """Plate offset that rises ``height`` metres along -y (up in the image) with a smooth profile."""
    def offset(t):
        s = np.clip((t - start) / duration, 0.0, 1.0)
        smooth = s * s * (3 - 2 * s)
        return np.array([0.0, -height * smooth, 0.0])
    return offset


@dataclass
class ServoScenario:
    name: str
    cameras: List[CameraSetup]
    duration: float = 3.0
    plate: np.ndarray = field(default_factory=plate_corners)
    plate_offset: Callable = static_plate
    intrinsics: Intrinsics = Intrinsics()
    trajectory: dict = field(default_factory=dict)

    def plate_at(self, t) -> np.ndarray:
        return self.plate + self.plate_offset(t)


FINGER_CAMERA_DESIRED = CameraPose([0.0, 0.0, -0.5], np.eye(3))
# thumb camera faces the other side of the object
THUMB_CAMERA_DESIRED = CameraPose([0.0, 0.0, 0.5], np.diag([-1.0, 1.0, -1.0]))


def offset_pose(desired: CameraPose, pixels: float, focal: float = 800.0,
                direction=(1.0, 1.0)) -> CameraPose:
    """Lateral camera shift giving an initial feature-error norm of ``pixels``.

    Every dot moves by the same image displacement ``d``, so the norm over the
    four points is ``2 d`` and ``d = focal * shift / depth``.
    """
    depth = abs(desired.position[2])
    d = np.asarray(direction, dtype=np.float64)
    d = d / np.linalg.norm(d)
    shift = pixels / 2.0 * depth / focal
    delta = desired.rotation @ np.array([d[0] * shift, d[1] * shift, 0.0])
    return CameraPose(desired.position + delta, desired.rotation)


def preset(name: str, offset_px: float = 100.0, duration: float = 3.0) -> ServoScenario:
    finger = CameraSetup("finger", offset_pose(FINGER_CAMERA_DESIRED, offset_px), FINGER_CAMERA_DESIRED)
    thumb = CameraSetup("thumb", offset_pose(THUMB_CAMERA_DESIRED, offset_px, direction=(-1.0, 0.5)),
                        THUMB_CAMERA_DESIRED)
    if name == "static":
        return ServoScenario("static", [finger], duration)
    if name == "moving":
        return ServoScenario("moving", [finger], max(duration, 4.0), plate_offset=lifting_plate(),
                             trajectory={"kind": "lift", "height_m": 0.25, "start_s": 0.5,
                                         "duration_s": 2.0})
    if name == "two-camera":
        return ServoScenario("two-camera", [finger, thumb], duration)
    if name == "two-camera-moving":
        return ServoScenario("two-camera-moving", [finger, thumb], max(duration, 4.0),
                             plate_offset=lifting_plate(),
                             trajectory={"kind": "lift", "height_m": 0.25, "start_s": 0.5,
                                         "duration_s": 2.0})
    raise DomainError(f"unknown servo preset {name!r}")


# -- simulation ---------------------------------------------------------------------

@dataclass
class CameraTrace:
    name: str
    ticks: List[int] = field(default_factory=list)
    times: List[float] = field(default_factory=list)
    poses: List[list] = field(default_factory=list)
    error_px: List[float] = field(default_factory=list)
    captured: List[bool] = field(default_factory=list)
    twists: List[np.ndarray] = field(default_factory=list)
    capture_times: List[float] = field(default_factory=list)
    capture_features: List[np.ndarray] = field(default_factory=list)


@dataclass
class Trace:
    scenario: str
    config: ServoConfig
    cameras: Dict[str, CameraTrace]
    loss_event: Optional[dict] = None

    @property
    def truncated(self) -> bool:
        return self.loss_event is not None

    def final_error(self, camera: Optional[str] = None) -> float:
        cam = self.cameras[camera or next(iter(self.cameras))]
        return cam.error_px[-1] if cam.error_px else float("nan")


def _visible(fs: FeatureSet, intr: Intrinsics) -> bool:
    if np.any(fs.depths <= 0) or not np.all(np.isfinite(fs.points)):
        return False
    uv = intr.to_pixels(fs.points)
    return bool(np.all((uv[:, 0] >= 0) & (uv[:, 0] <= intr.width - 1)
                       & (uv[:, 1] >= 0) & (uv[:, 1] <= intr.height - 1)))


def _measure(pose, pts, intr: Intrinsics, cfg: ServoConfig) -> FeatureSet:
    fs = project(pose, pts)
    if not _visible(fs, intr):
        found = int(np.sum(fs.depths > 0))
        raise FeatureLossError(len(pts), found if found < len(pts) else len(pts) - 1)
    if cfg.measure == "model":
        return fs
    img = render_dots(intr.to_pixels(fs.points), (intr.height, intr.width))
    detected = np.array(detect_dots(img, len(pts)))  # (row, col)
    uv = detected[:, ::-1]
    # associate detections with model points by nearest predicted position
    pred = intr.to_pixels(fs.points)
    order = [int(np.argmin(np.linalg.norm(uv - p, axis=1))) for p in pred]
    if len(set(order)) != len(order):
        raise FeatureLossError(len(pts), len(set(order)))
    return FeatureSet(intr.to_normalized(uv[order]), fs.depths)


def run_tracking(scenario: ServoScenario, cfg: ServoConfig = ServoConfig()) -> Trace:
    """Advance every camera controller on one shared clock.

    Each tick: cameras due for capture measure features and recompute their
    twist; every camera then integrates its held twist over ``control_dt``.
    Logged error is the true image-space error (pixels) at the tick.
    """
    intr = scenario.intrinsics
    n_ticks = int(round(scenario.duration / cfg.control_dt))
    poses = {c.name: c.initial for c in scenario.cameras}
    desired = {}
    for c in scenario.cameras:
        d = project(c.desired, scenario.plate_at(0.0))
        if not _visible(d, intr):
            raise DomainError(f"desired pose of camera {c.name!r} does not see the plate")
        desired[c.name] = d
    twists = {c.name: np.zeros(6) for c in scenario.cameras}
    traces = {c.name: CameraTrace(c.name) for c in scenario.cameras}
    loss = None
    for tick in range(n_ticks + 1):
        t = tick * cfg.control_dt
        pts = scenario.plate_at(t)
        capture = tick % cfg.capture_every == 0
        for c in scenario.cameras:
            name = c.name
            truth = project(poses[name], pts)
            err = float(np.linalg.norm(truth.vector() - desired[name].vector()) * intr.focal)
            tr = traces[name]
            if capture:
                try:
                    meas = _measure(poses[name], pts, intr, cfg)
                except FeatureLossError as exc:
                    loss = {"tick": tick, "time": t, "camera": name, "reason": str(exc)}
                    break
                use = meas if cfg.depth_mode == "true" else FeatureSet(meas.points, desired[name].depths)
                e = meas.vector() - desired[name].vector()
                twists[name] = control_law(interaction_matrix(use), e, cfg.gain)
                tr.capture_times.append(t)
                tr.capture_features.append(meas.points.copy())
            tr.ticks.append(tick)
            tr.times.append(t)
            tr.poses.append(poses[name].as_row())
            tr.error_px.append(err)
            tr.captured.append(capture)
            tr.twists.append(twists[name].copy())
        if loss is not None:
            break
        if tick < n_ticks:
            for c in scenario.cameras:
                poses[c.name] = step_sim(poses[c.name], twists[c.name], cfg.control_dt)
    return Trace(scenario.name, cfg, traces, loss)


# -- persistence ---------------------------------------------------------------------

TRACE_HEADER = (["tick", "time", "camera", "px", "py", "pz"]
                + [f"r{i}{j}" for i in range(3) for j in range(3)] + ["error_px", "captured"])


def write_trace_csv(trace: Trace, path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(TRACE_HEADER)
        for name, ct in trace.cameras.items():
            for tick, t, pose, err, cap in zip(ct.ticks, ct.times, ct.poses, ct.error_px, ct.captured):
                wr.writerow([tick, repr(t), name] + [repr(float(v)) for v in pose]
                            + [repr(err), int(cap)])


def scenario_to_dict(scenario: ServoScenario, cfg: ServoConfig) -> dict:
    return {
        "name": scenario.name,
        "duration_s": scenario.duration,
        "plate_corners_m": np.asarray(scenario.plate).tolist(),
        "trajectory": scenario.trajectory or {"kind": "static"},
        "intrinsics": asdict(scenario.intrinsics),
        "cameras": [{"name": c.name, "initial": c.initial.as_row(), "desired": c.desired.as_row()}
                    for c in scenario.cameras],
        "config": asdict(cfg),
    }


def _pose_from_row(row) -> CameraPose:
    row = np.asarray(row, dtype=np.float64)
    return CameraPose(row[:3], row[3:].reshape(3, 3))


def scenario_from_dict(doc: dict):
    traj = doc.get("trajectory", {"kind": "static"})
    if traj.get("kind") == "lift":
        offset = lifting_plate(traj["height_m"], traj["start_s"], traj["duration_s"])
    elif traj.get("kind") == "static":
        offset = static_plate
    else:
        raise DomainError(f"unknown plate trajectory {traj.get('kind')!r}")
    cams = [CameraSetup(c["name"], _pose_from_row(c["initial"]), _pose_from_row(c["desired"]))
            for c in doc["cameras"]]
    scen = ServoScenario(doc["name"], cams, float(doc["duration_s"]),
                         np.array(doc["plate_corners_m"], dtype=np.float64), offset,
                         Intrinsics(**doc.get("intrinsics", {})),
                         traj if traj.get("kind") != "static" else {})
    cfg = ServoConfig(**doc.get("config", {}))
    return scen, cfg


def write_scenario_json(scenario: ServoScenario, cfg: ServoConfig, path) -> None:
    with open(path, "w") as fh:
        json.dump(scenario_to_dict(scenario, cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")
