"""Ground-truth forward model.

Renders fingernail-like images from known forces, builds the calibration
force grid, and simulates whole grasp sessions with per-finger force series
that satisfy static equilibrium during the hold phase by construction.
"""
from __future__ import annotations

import csv
import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, NamedTuple, Optional, Sequence

import numpy as np
from scipy.ndimage import gaussian_filter1d

from .errors import DomainError
from .imaging import Image, write_image

FINGERS = ("thumb", "index", "middle", "ring")
PHASES = ("pre-contact", "grasp", "lift", "hold", "replace")
GRAVITY = 9.81
OBJECT_MASS_KG = 1.14
FRAME_RATE_HZ = 20.0

NAIL_HEIGHT = 64
NAIL_WIDTH = 32


class ForceVector(NamedTuple):
    fx: float
    fy: float
    fz: float

    def as_array(self) -> np.ndarray:
        return np.array([self.fx, self.fy, self.fz], dtype=np.float64)


@dataclass(frozen=True)
class CalibrationGrid:
    fz_levels: tuple
    fx_levels: tuple
    fy_levels: tuple

    def __post_init__(self):
        bounds = {"fz_levels": (0.0, 18.0), "fx_levels": (-3.0, 3.0), "fy_levels": (-6.0, 6.0)}
        for name, (lo, hi) in bounds.items():
            levels = tuple(float(v) for v in getattr(self, name))
            object.__setattr__(self, name, levels)
            if not levels:
                raise DomainError(f"{name} is empty")
            if any(b <= a for a, b in zip(levels, levels[1:])):
                raise DomainError(f"{name} must be strictly increasing")
            if levels[0] < lo - 1e-12 or levels[-1] > hi + 1e-12:
                raise DomainError(f"{name} must lie within [{lo}, {hi}]")

    @classmethod
    def from_steps(cls, fz_step=3.0, fx_step=3.0, fy_step=6.0):
        def levels(lo, hi, step):
            n = int(round((hi - lo) / step))
            return tuple(np.round(np.linspace(lo, hi, n + 1), 12))

        return cls(levels(0.0, 18.0, fz_step), levels(-3.0, 3.0, fx_step), levels(-6.0, 6.0, fy_step))

    def __len__(self):
        return len(self.fz_levels) * len(self.fx_levels) * len(self.fy_levels)


DEFAULT_GRID = CalibrationGrid.from_steps(3.0, 3.0, 6.0)
# 25 x 13 x 21 = 6825 nodes, the per-finger calibration scale of the original rig
DENSE_GRID = CalibrationGrid.from_steps(0.75, 0.5, 0.6)


def make_grid(grid: CalibrationGrid) -> list:
    """Cartesian product of the levels, ``fz`` outermost, then ``fx``, then ``fy``."""
    for name in ("fz_levels", "fx_levels", "fy_levels"):
        if not getattr(grid, name):
            raise DomainError(f"{name} is empty")
    return [ForceVector(fx, fy, fz)
            for fz, fx, fy in itertools.product(grid.fz_levels, grid.fx_levels, grid.fy_levels)]


# -- nail appearance -----------------------------------------------------------

def _gauss(u, v, cu, cv, su, sv):
    return np.exp(-0.5 * (((u - cu) / su) ** 2 + ((v - cv) / sv) ** 2))


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass(frozen=True)
class NailPattern:
    """Analytic nail appearance in template coordinates (x = column, y = row).

    Evaluating at arbitrary points lets scenes place the nail at any pose
    without resampling.
    """

    height: int = NAIL_HEIGHT
    width: int = NAIL_WIDTH

    @property
    def center(self):
        return (self.width - 1) / 2.0, (self.height - 1) / 2.0

    @property
    def semi_axes(self):
        return 0.31 * self.width, 0.375 * self.height

    def mean(self, u, v):
        cu, cv = self.center
        a, b = self.semi_axes
        d = np.sqrt(((u - cu) / a) ** 2 + ((v - cv) / b) ** 2)
        nail = _sigmoid((1.0 - d) / 0.09)
        lunula = _sigmoid((1.0 - np.sqrt(((u - cu) / (0.7 * a)) ** 2
                                         + ((v - cv - 0.6 * b) / (0.3 * b)) ** 2)) / 0.12)
        ridges = 0.03 * np.cos(2 * np.pi * (u - cu) / (0.45 * a))
        shading = 0.05 * (v - cv) / b
        return 0.30 + nail * (0.24 + ridges + shading) + 0.10 * lunula * nail

    def raw_lobes(self, u, v):
        cu, cv = self.center
        a, b = self.semi_axes
        distal = _gauss(u, v, cu, cv - 0.6 * b, 0.8 * a, 0.22 * b)
        lateral = (_gauss(u, v, cu - 0.5 * a, cv, 0.35 * a, 0.35 * b)
                   - _gauss(u, v, cu + 0.5 * a, cv, 0.35 * a, 0.35 * b))
        dipole = (_gauss(u, v, cu, cv - 0.3 * b, 0.6 * a, 0.2 * b)
                  - _gauss(u, v, cu, cv + 0.4 * b, 0.6 * a, 0.2 * b))
        # axis order follows ForceVector: x, y, z
        return np.stack([lateral, dipole, distal])

    def pixel_grid(self):
        v, u = np.mgrid[0:self.height, 0:self.width].astype(np.float64)
        return u, v

    def orthonormal_mix(self) -> np.ndarray:
        """3x3 matrix turning sampled raw lobes into orthonormal basis images."""
        u, v = self.pixel_grid()
        raw = self.raw_lobes(u, v).reshape(3, -1).T
        _, r = np.linalg.qr(raw)
        signs = np.sign(np.diag(r))
        return np.linalg.inv(r) * signs[None, :]

    def landmarks(self, n_outer=16, n_inner=8) -> np.ndarray:
        """Template landmarks: outer ring on the nail rim, inner ring, centre."""
        cu, cv = self.center
        a, b = self.semi_axes
        pts = []
        for k in range(n_outer):
            t = 2 * np.pi * k / n_outer
            pts.append((cu + 1.3 * a * np.sin(t), cv - 1.2 * b * np.cos(t)))
        for k in range(n_inner):
            t = 2 * np.pi * (k + 0.5) / n_inner
            pts.append((cu + 0.6 * a * np.sin(t), cv - 0.6 * b * np.cos(t)))
        pts.append((cu, cv))
        return np.array(pts)


@dataclass(frozen=True, eq=False)
class NailForwardModel:
    mean_image: np.ndarray
    basis: np.ndarray
    gain: np.ndarray
    noise_sigma: float = 0.0
    seed: int = 0
    pattern: Optional[NailPattern] = None

    def __post_init__(self):
        basis = np.asarray(self.basis, dtype=np.float64)
        if basis.shape != (3,) + np.shape(self.mean_image):
            raise DomainError("basis must hold three images shaped like the mean")
        gram = basis.reshape(3, -1) @ basis.reshape(3, -1).T
        if not np.allclose(gram, np.eye(3), atol=1e-9):
            raise DomainError("basis images must be orthonormal")
        if self.noise_sigma < 0:
            raise DomainError("noise_sigma must be non-negative")

    @property
    def shape(self):
        return np.shape(self.mean_image)

    def with_noise(self, noise_sigma: float, seed: Optional[int] = None) -> "NailForwardModel":
        return NailForwardModel(self.mean_image, self.basis, self.gain, float(noise_sigma),
                                self.seed if seed is None else int(seed), self.pattern)

    def response(self, f) -> np.ndarray:
        f = np.asarray(f, dtype=np.float64)
        return np.tensordot(self.gain * f, self.basis, axes=1)


DEFAULT_GAIN = (0.28, 0.16, 0.05)


def default_nail_model(noise_sigma: float = 0.0, seed: int = 0, height: int = NAIL_HEIGHT,
                       width: int = NAIL_WIDTH, gain=DEFAULT_GAIN) -> NailForwardModel:
    pattern = NailPattern(height, width)
    u, v = pattern.pixel_grid()
    mix = pattern.orthonormal_mix()
    raw = pattern.raw_lobes(u, v)
    basis = np.tensordot(mix.T, raw, axes=1)
    return NailForwardModel(pattern.mean(u, v), basis, np.asarray(gain, dtype=np.float64),
                            float(noise_sigma), int(seed), pattern)


def noise_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(index)])


def render_nail(model: NailForwardModel, f, index: int = 0) -> Image:
    """Render one nail image; noise is a pure function of ``(model.seed, index)``."""
    img = model.mean_image + model.response(f)
    if model.noise_sigma > 0:
        img = img + model.noise_sigma * noise_rng(model.seed, index).standard_normal(img.shape)
    return Image(np.clip(img, 0.0, 1.0))


def render_nail_at(model: NailForwardModel, f, to_template, shape, background=0.0) -> np.ndarray:
    """Render the nail into a scene of ``shape`` through an analytic map.

    ``to_template(x, y) -> (u, v)`` maps scene pixel coordinates into template
    coordinates; no resampling is involved.
    """
    if model.pattern is None:
        raise DomainError("model has no analytic pattern")
    pat = model.pattern
    yy, xx = np.mgrid[0:shape[0], 0:shape[1]].astype(np.float64)
    u, v = to_template(xx, yy)
    mix = pat.orthonormal_mix()
    basis = np.tensordot(mix.T, pat.raw_lobes(u, v), axes=1)
    img = pat.mean(u, v) + np.tensordot(model.gain * np.asarray(f, dtype=np.float64), basis, axes=1)
    # fade to background outside a margin around the template frame
    inside = (u >= -8) & (u <= pat.width + 7) & (v >= -8) & (v <= pat.height + 7)
    return np.clip(np.where(inside, img, background), 0.0, 1.0)


def render_calibration(model: NailForwardModel, forces: Sequence) -> list:
    return [render_nail(model, f, i) for i, f in enumerate(forces)]


# -- grasp sessions ------------------------------------------------------------

@dataclass(frozen=True)
class ScenarioParams:
    shares: tuple
    grip_jitter: float
    share_jitter: float
    load_jitter: float


SCENARIOS = {
    "constrained": ScenarioParams((0.45, 0.35, 0.20), 0.025, 0.03, 0.025),
    "unconstrained": ScenarioParams((1 / 3, 1 / 3, 1 / 3), 0.01, 0.01, 0.01),
}


@dataclass(frozen=True)
class SessionParams:
    mass_kg: float = OBJECT_MASS_KG
    grip_hold: float = 10.0
    grip_pre: float = 3.0
    lift_overshoot: float = 1.25
    lateral_ratio: float = 0.15
    hold_s: float = 10.0
    grasp_s: float = 3.0
    lift_s: float = 2.0
    jitter_corr_s: float = 0.05
    duration_range: tuple = (45.0, 55.0)
    # trial-to-trial spread of the hold grip and load levels, same for every scenario
    level_sd: float = 0.02


@dataclass(eq=False)
class GraspSession:
    dt: float
    time: np.ndarray
    forces: Dict[str, np.ndarray]
    phases: np.ndarray
    object_weight: float
    scenario: str
    seed: int
    boundaries: Dict[str, int] = field(default_factory=dict)

    @property
    def n_samples(self) -> int:
        return len(self.time)

    @property
    def duration(self) -> float:
        return self.n_samples * self.dt

    def hold_slice(self) -> slice:
        return slice(self.boundaries["hold"], self.boundaries["replace"])


class Frame(NamedTuple):
    index: int
    time: float
    finger: str
    sample: int
    image: Image


def _band_limited(rng, n, corr_samples):
    white = rng.standard_normal(n)
    if corr_samples < 0.5:
        return white
    smooth = gaussian_filter1d(white, corr_samples, mode="reflect")
    # unit variance for a Gaussian-filtered white sequence
    return smooth * np.sqrt(2.0 * np.sqrt(np.pi) * corr_samples)


def _ramp(t, t0, t1, a, b):
    x = np.clip((t - t0) / (t1 - t0), 0.0, 1.0)
    return a + (b - a) * x


def simulate_session(scenario: str, seed: int, dt: float = 0.01, *, model=None,
                     params: SessionParams = SessionParams(), frame_rate: float = FRAME_RATE_HZ,
                     scenario_params: Optional[ScenarioParams] = None):
    """Simulate one grasp trial and the per-finger nail frame stream.

    Returns ``(session, frames)``; ``frames`` is a lazy iterator of
    :class:`Frame` rendered at ``frame_rate`` with ``model`` (the zero-noise
    default nail model when omitted).
    """
    if scenario not in SCENARIOS and scenario_params is None:
        raise DomainError(f"unknown scenario {scenario!r}")
    if not 0 < dt <= 0.1:
        raise DomainError("dt must lie in (0, 0.1]")
    sp = scenario_params or SCENARIOS[scenario]
    rng = np.random.default_rng([int(seed), 0x6A5])

    def q(t):  # snap to the sample grid
        return int(round(t / dt))

    i_grasp = q(5.0 + rng.uniform(0.0, 1.0))
    i_lift = i_grasp + q(params.grasp_s)
    i_hold = i_lift + q(params.lift_s)
    i_replace = i_hold + q(params.hold_s)
    n = q(rng.uniform(*params.duration_range))
    t = np.arange(n) * dt
    tg, tl, th, tr = (i * dt for i in (i_grasp, i_lift, i_hold, i_replace))

    corr = params.jitter_corr_s / dt
    weight = params.mass_kg * GRAVITY
    levels = 1.0 + params.level_sd * np.random.default_rng([int(seed), 0x1E7]).standard_normal(2)
    half_load = weight / 2.0 * levels[1]
    g0 = params.grip_hold * levels[0]

    grip = np.zeros(n)
    grasp = (t >= tg) & (t < tl)
    grip[grasp] = _ramp(t[grasp], tg, tg + 0.3, 0.0, params.grip_pre)
    lift = (t >= tl) & (t < th)
    peak = params.lift_overshoot * g0
    grip[lift] = np.where(t[lift] < th - 0.1,
                          _ramp(t[lift], tl, tl + 0.5, params.grip_pre, peak),
                          _ramp(t[lift], th - 0.1, th, peak, g0))
    hold = (t >= th) & (t < tr)
    grip[hold] = g0
    release = t >= tr
    grip[release] = _ramp(t[release], tr, tr + 0.05, g0, 0.0)

    load = np.zeros(n)
    load[lift] = _ramp(t[lift], tl, tl + 0.3, 0.0, half_load)
    transient = lift & (t >= tl + 0.3) & (t < tl + 0.8)
    load[transient] *= 1.0 + 0.1 * np.sin(2 * np.pi * (t[transient] - tl - 0.3) / 0.5)
    load[hold] = half_load
    load[release] = _ramp(t[release], tr, tr + 0.05, half_load, 0.0)

    grasp_jitter = 0.01 * _band_limited(rng, n, corr)
    grip_j = _band_limited(rng, n, corr)
    load_j = _band_limited(rng, n, corr)
    # jitter changes steadiness, not the hold level
    grip_j[hold] -= grip_j[hold].mean()
    load_j[hold] -= load_j[hold].mean()
    active = lift | hold
    grip *= 1.0 + np.where(active, sp.grip_jitter * grip_j, grasp_jitter)
    load *= 1.0 + np.where(active, sp.load_jitter * load_j, 0.0)
    grip = np.maximum(grip, 0.0)
    load = np.maximum(load, 0.0)
    lateral = params.lateral_ratio * load

    def shares():
        raw = np.array(sp.shares)[:, None] + sp.share_jitter * np.stack(
            [_band_limited(rng, n, corr) for _ in range(3)])
        raw = np.maximum(raw, 0.02)
        return raw / raw.sum(axis=0, keepdims=True)

    normal_shares = shares()
    shear_shares = shares()

    forces = {"thumb": np.stack([lateral, load, grip], axis=1)}
    for k, finger in enumerate(FINGERS[1:]):
        forces[finger] = np.stack([shear_shares[k] * lateral, shear_shares[k] * load,
                                   normal_shares[k] * grip], axis=1)
    # exact equilibrium: the thumb carries the float sum of the finger forces
    forces["thumb"] = forces["index"] + forces["middle"] + forces["ring"]

    phases = np.empty(n, dtype=object)
    phases[:] = "pre-contact"
    phases[i_grasp:i_lift] = "grasp"
    phases[i_lift:i_hold] = "lift"
    phases[i_hold:i_replace] = "hold"
    phases[i_replace:] = "replace"

    session = GraspSession(dt=float(dt), time=t, forces=forces, phases=phases.astype(str),
                           object_weight=weight, scenario=scenario, seed=int(seed),
                           boundaries={"grasp": i_grasp, "lift": i_lift, "hold": i_hold,
                                       "replace": i_replace})
    if model is None:
        model = default_nail_model()
    return session, session_frames(session, model, frame_rate)


def frame_samples(session: GraspSession, frame_rate: float = FRAME_RATE_HZ) -> np.ndarray:
    """Sample indices captured by a camera running at ``frame_rate``."""
    n_frames = int(np.floor(session.duration * frame_rate + 1e-9))
    idx = np.round(np.arange(n_frames) / frame_rate / session.dt).astype(int)
    return idx[idx < session.n_samples]


def session_frames(session: GraspSession, model: NailForwardModel,
                   frame_rate: float = FRAME_RATE_HZ, stride: int = 1) -> Iterator[Frame]:
    """Nail frames for every ``stride``-th capture; noise depends only on the frame index."""
    noisy = model.with_noise(model.noise_sigma, seed=session.seed)
    for k, sample in enumerate(frame_samples(session, frame_rate)):
        if k % stride:
            continue
        for j, finger in enumerate(FINGERS):
            f = session.forces[finger][sample]
            img = render_nail(noisy, f, index=k * len(FINGERS) + j)
            yield Frame(k, float(session.time[sample]), finger, int(sample), img)


# -- multi-finger camera frames --------------------------------------------------

SKIN_RGB = np.array([0.86, 0.62, 0.47])
BACKGROUND_RGB = np.array([0.18, 0.22, 0.30])
CAMERA_SHAPE = (1024, 680)


def render_camera_frame(nails: Dict[str, Image], side: str, rng: np.random.Generator,
                        shape=CAMERA_SHAPE, pixel_noise: float = 0.01):
    """Compose a camera view with skin-coloured fingers carrying gray nail patches.

    Returns ``(frame, truth)`` where ``truth`` maps finger to its integer
    centre pixel ``(row, col)``.  The finger camera stacks index, middle and
    ring from top to bottom; the thumb camera holds the thumb alone.
    """
    if side == "finger":
        names = ("index", "middle", "ring")
        rows = [212, 512, 812]
    elif side == "thumb":
        names = ("thumb",)
        rows = [512]
    else:
        raise DomainError(f"unknown camera side {side!r}")
    h, w = shape
    frame = np.empty((h, w, 3))
    frame[:] = BACKGROUND_RGB
    truth = {}
    for name, row in zip(names, rows):
        cr = row + int(rng.integers(-20, 21))
        cc = w // 2 + int(rng.integers(-30, 31))
        # ellipse symmetric about the pixel-centre point (cr - 0.5, cc - 0.5);
        # only its bounding box is evaluated
        r_lo, r_hi = max(cr - 96, 0), min(cr + 96, h)
        c_lo, c_hi = max(cc - 231, 0), min(cc + 231, w)
        yy, xx = np.mgrid[r_lo:r_hi, c_lo:c_hi]
        inside = (((yy - cr + 0.5) / 95.0) ** 2 + ((xx - cc + 0.5) / 230.0) ** 2) <= 1.0
        shade = 0.9 + 0.1 * np.cos((xx - cc + 0.5) / 230.0 * np.pi / 2)
        box = frame[r_lo:r_hi, c_lo:c_hi]
        box[inside] = SKIN_RGB * shade[inside, None]
        nail = nails[name].data
        nh, nw = nail.shape
        r0, c0 = cr - nh // 2, cc - nw // 2
        frame[r0:r0 + nh, c0:c0 + nw] = nail[:, :, None]
        truth[name] = (cr, cc)
    if pixel_noise > 0:
        frame = frame + pixel_noise * rng.standard_normal(frame.shape)
    return Image(np.clip(frame, 0.0, 1.0)), truth


# -- persistence ------------------------------------------------------------------

FORCE_CSV_HEADER = ("time_s", "finger", "fx_n", "fy_n", "fz_n", "phase", "source")


def write_forces_csv(path, time, forces: Dict[str, np.ndarray], phases=None, source="oracle"):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(FORCE_CSV_HEADER)
        for i, ti in enumerate(time):
            phase = "na" if phases is None else phases[i]
            for finger in FINGERS:
                if finger not in forces:
                    continue
                fx, fy, fz = forces[finger][i]
                writer.writerow([repr(float(ti)), finger, repr(float(fx)), repr(float(fy)),
                                 repr(float(fz)), phase, source])


def read_forces_csv(path):
    """Parse a force CSV into ``(time, forces, phases, source)``.

    Rows are grouped by timestamp; ``phases`` follows the thumb rows (or the
    first finger present).
    """
    times, rows = [], {}
    phase_by_time = {}
    source = None
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(FORCE_CSV_HEADER) - set(reader.fieldnames or ())
        if missing:
            raise DomainError(f"force CSV missing columns {sorted(missing)}")
        for rec in reader:
            t = float(rec["time_s"])
            if t not in phase_by_time:
                times.append(t)
                phase_by_time[t] = rec["phase"]
            rows.setdefault(rec["finger"], {})[t] = (float(rec["fx_n"]), float(rec["fy_n"]),
                                                    float(rec["fz_n"]))
            source = rec["source"]
    forces = {}
    for finger, series in rows.items():
        forces[finger] = np.array([series.get(t, (np.nan,) * 3) for t in times])
    return np.array(times), forces, np.array([phase_by_time[t] for t in times]), source


def write_session(session: GraspSession, out_dir, frames=None, camera_frames: bool = False,
                  frame_stride: int = 1):
    """Persist forces CSV, optional frame PGMs, and a JSON manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_forces_csv(out / "forces.csv", session.time, session.forces, session.phases)
    n_frames = 0
    if frames is not None:
        fdir = out / "frames"
        fdir.mkdir(exist_ok=True)
        rng = np.random.default_rng([session.seed, 0xCA3])
        pending = {}
        for fr in frames:
            if fr.index % frame_stride:
                continue
            write_image(fr.image, fdir / f"{fr.finger}_{fr.index:05d}.pgm")
            n_frames = max(n_frames, fr.index + 1)
            if camera_frames:
                pending[fr.finger] = fr.image
                if len(pending) == len(FINGERS):
                    for side in ("finger", "thumb"):
                        img, _ = render_camera_frame(pending, side, rng)
                        write_image(img, fdir / f"camera-{side}_{fr.index:05d}.ppm")
                    pending = {}
    manifest = {
        "kind": "grasp-session",
        "scenario": session.scenario,
        "seed": session.seed,
        "dt": session.dt,
        "object_weight_n": session.object_weight,
        "n_samples": session.n_samples,
        "frame_rate_hz": FRAME_RATE_HZ,
        "frame_stride": frame_stride,
        "n_frames": n_frames,
        "boundaries": {k: int(v) for k, v in session.boundaries.items()},
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out


def session_from_csv(path, scenario="unknown", seed=0) -> GraspSession:
    time, forces, phases, _ = read_forces_csv(path)
    dt = float(np.median(np.diff(time))) if len(time) > 1 else 0.0
    boundaries = {}
    for name in ("grasp", "lift", "hold", "replace"):
        hits = np.flatnonzero(phases == name)
        if hits.size:
            boundaries[name] = int(hits[0])
    return GraspSession(dt=dt, time=time, forces=forces, phases=phases,
                        object_weight=OBJECT_MASS_KG * GRAVITY, scenario=scenario,
                        seed=seed, boundaries=boundaries)


