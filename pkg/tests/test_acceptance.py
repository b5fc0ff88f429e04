"""Acceptance suite: one test per numbered criterion, each printing a
PASS/FAIL line (also collected in the terminal summary)."""
import itertools
import math
import time
from fractions import Fraction

import numpy as np
from scipy import ndimage

from conftest import record
from nailforce import analysis, cli, eigennail, registration, segmentation, servo
from nailforce.pipeline import estimate_image
from nailforce.synth import (DENSE_GRID, FINGERS, default_nail_model, make_grid,
                             render_camera_frame, render_nail, render_nail_at, simulate_session)

AXES = ("fx", "fy", "fz")


# 1 -------------------------------------------------------------------------------

def test_c01_affine_inversion(nail_model, grid_forces):
    t0 = time.perf_counter()
    images = [render_nail(nail_model, f, i) for i, f in enumerate(grid_forces)]
    model = eigennail.train(images, grid_forces)
    pred = np.array([eigennail.predict(model, im).force for im in images])
    err = float(np.sqrt(np.mean((pred - grid_forces) ** 2)))
    elapsed = time.perf_counter() - t0
    ok = record(1, err <= 1e-6 and elapsed <= 30 and len(grid_forces) == 63,
                f"63-node grid, noise 0: RMS {err:.2e} N (<= 1e-6), {elapsed:.2f} s (<= 30)")
    assert ok


# 2 -------------------------------------------------------------------------------

def _held_out_rms(sigma, forces, test_forces):
    train_model = default_nail_model(sigma, seed=11)
    test_model = default_nail_model(sigma, seed=12)
    imgs = [render_nail(train_model, f, i) for i, f in enumerate(forces)]
    m = eigennail.train(imgs, forces)
    pred = m.predict_many([render_nail(test_model, f, i) for i, f in enumerate(test_forces)])
    return eigennail.rms(pred, test_forces), m.k


def test_c02_noise_scaled_accuracy():
    t0 = time.perf_counter()
    forces = np.array(make_grid(DENSE_GRID))
    lo, hi = forces.min(axis=0), forces.max(axis=0)
    rng = np.random.default_rng(2024)
    test_forces = rng.uniform(lo, hi, size=(1000, 3))
    rms1, k1 = _held_out_rms(0.01, forces, test_forces)
    rms2, k2 = _held_out_rms(0.02, forces, test_forces)
    rel = rms1 / (hi - lo)
    ratio = rms2 / rms1
    elapsed = time.perf_counter() - t0
    ok = (len(forces) >= 1000 and np.all(rel <= 0.07) and np.all((ratio >= 1.5) & (ratio <= 2.5))
          and elapsed <= 300)
    record(2, ok, f"{len(forces)} samples, held-out RMS/range at 0.01 = "
                  + ", ".join(f"{a} {100 * r:.2f}%" for a, r in zip(AXES, rel))
                  + " (<= 7%); RMS ratio 0.02/0.01 = "
                  + ", ".join(f"{r:.2f}" for r in ratio) + f" (in [1.5, 2.5]); k={k1}/{k2}; "
                  f"{elapsed:.1f} s")
    assert ok


# 3 -------------------------------------------------------------------------------

def test_c03_equilibrium(trained):
    session, frames = simulate_session("constrained", 7)
    b = session.boundaries
    raw_gap = analysis.equilibrium_gap(analysis.GraspTrial.from_session(session),
                                       slice(b["hold"], b["replace"]))
    est = {f: [] for f in FINGERS}
    for fr in frames:
        if b["hold"] <= fr.sample < b["replace"]:
            est[fr.finger].append(estimate_image(trained, fr.image).force)
    trial = analysis.GraspTrial(1 / 20, {f: np.array(v) for f, v in est.items()})
    gap = analysis.equilibrium_gap(trial, slice(0, len(est["thumb"])))
    ok = gap["normal"] <= 5.7 and raw_gap["normal"] <= 1e-9 and raw_gap["shear"] <= 1e-9
    record(3, ok, f"estimated hold gap {gap['normal']:.2e}% normal, {gap['shear']:.2e}% shear "
                  f"(<= 5.7%); oracle gap {raw_gap['normal']:.1e}% / {raw_gap['shear']:.1e}% (<= 1e-9%)")
    assert ok


# 4 -------------------------------------------------------------------------------

MARGIN = 24


def _similarity_scene(model, rng):
    pat = model.pattern
    c = np.array(pat.center)
    angle = np.deg2rad(rng.uniform(-10, 10))
    scale = rng.uniform(0.9, 1.1)
    shift = rng.uniform(-10, 10, size=2)
    rot = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
    offset = np.array([MARGIN, MARGIN], dtype=float)

    def forward(pts):
        return scale * (pts - c) @ rot.T + c + shift + offset

    def to_template(x, y):
        d = np.stack([x - c[0] - shift[0] - offset[0], y - c[1] - shift[1] - offset[1]], axis=-1)
        uv = d @ rot / scale + c
        return uv[..., 0], uv[..., 1]

    shape = (pat.height + 2 * MARGIN, pat.width + 2 * MARGIN)
    f = rng.uniform([-3, -6, 0], [3, 6, 18])
    img = render_nail_at(model, f, to_template, shape, background=0.3)
    return img, forward(pat.landmarks()), pat.landmarks() + offset


def test_c04_registration_recovery(nail_model, trained):
    rng = np.random.default_rng(404)
    hits, errors = 0, []
    for _ in range(50):
        img, truth, init = _similarity_scene(nail_model, rng)
        res = registration.aam_search(trained.appearance, None, img, init)
        e = float(np.mean(np.linalg.norm(res.shape - truth, axis=1)))
        errors.append(e)
        hits += e <= 1.0
    ok = hits >= 48
    record(4, ok, f"{hits}/50 recovered with mean landmark error <= 1 px (>= 48); "
                  f"median error {np.median(errors):.3f} px")
    assert ok


# 5 -------------------------------------------------------------------------------

def test_c05_warp_exactness(nail_model, template_tri):
    rng = np.random.default_rng(5)
    h, w = nail_model.shape
    scene = render_nail_at(nail_model, (1.0, -2.0, 9.0),
                           lambda x, y: (0.9 * x - 0.1 * y + 6.0, 0.08 * x + 1.05 * y - 10.0),
                           (96, 64), background=0.3)
    diffs = []
    for _ in range(10):
        # template -> scene affine map p = A t + b
        a = np.eye(2) + rng.uniform(-0.12, 0.12, size=(2, 2))
        b = rng.uniform(8, 20, size=2)
        src = template_tri.template @ a.T + b
        warped = registration.piecewise_warp(scene, src, template_tri).data
        # independent resampler: scipy maps output (row, col) to input (row, col)
        mat = np.array([[a[1, 1], a[1, 0]], [a[0, 1], a[0, 0]]])
        direct = ndimage.affine_transform(scene, mat, offset=(b[1], b[0]), output_shape=(h, w),
                                          order=1, mode="constant", cval=0.0)
        wm = registration.warp_map(template_tri)
        mask = np.zeros((h, w), dtype=bool)
        mask[wm.rows, wm.cols] = True
        diffs.append(float(np.mean(np.abs(warped[mask] - direct[mask]))))
    worst = max(diffs)
    ok = worst <= 0.01
    record(5, ok, f"mean |warp - direct affine| worst of 10 maps = {worst:.2e} (<= 0.01)")
    assert ok


# 6 -------------------------------------------------------------------------------

def test_c06_segmentation(nail_model):
    rng = np.random.default_rng(606)
    nails = {f: render_nail(nail_model, (0.0, 0.0, 5.0)) for f in FINGERS}
    good, worst = 0, 0.0
    for _ in range(200):
        frame, truth = render_camera_frame(nails, "finger", rng)
        try:
            found = segmentation.segment_frame(frame, "finger")
        except Exception:
            continue
        ok_frame = list(found) == ["index", "middle", "ring"]
        for name, (blob, crop) in found.items():
            ok_frame &= crop.shape[:2] == (600, 300)
            top, left = segmentation.crop_origin(blob)
            # centroid position inside the crop vs the crop centre
            dr = blob.centroid[0] - top - 299.5
            dc = blob.centroid[1] - left - 149.5
            worst = max(worst, abs(dr), abs(dc))
            ok_frame &= abs(dr) <= 2 and abs(dc) <= 2
            tr, tc = truth[name]
            ok_frame &= abs(blob.centroid[0] - (tr - 0.5)) <= 2 and abs(blob.centroid[1] - (tc - 0.5)) <= 2
        good += bool(ok_frame)
    ok = good == 200
    record(6, ok, f"{good}/200 frames with 3 blobs labelled index/middle/ring, 600x300 crops, "
                  f"worst centring offset {worst:.2f} px (<= 2)")
    assert ok


# 7 -------------------------------------------------------------------------------

def test_c07_servo_convergence():
    t0 = time.perf_counter()
    tr = servo.run_tracking(servo.preset("static", 100.0, 3.0), servo.ServoConfig(gain=2.0))
    cam = tr.cameras["finger"]
    e = np.array(cam.error_px)
    t = np.array(cam.times)
    converge = bool(abs(e[0] - 100.0) < 1e-6 and e[-1] < 1.0 and not tr.truncated)
    below = t[np.flatnonzero(e < 1.0)[0]] if np.any(e < 1.0) else math.inf

    tr2 = servo.run_tracking(servo.preset("static", 100.0, 2.0),
                             servo.ServoConfig(gain=2.0, control_dt=0.001, capture_dt=0.001))
    e2 = np.array(tr2.cameras["finger"].error_px)
    t2 = np.array(tr2.cameras["finger"].times)
    win = (t2 >= 0.5) & (t2 <= 2.0)
    bound_ok = bool(np.all(e2[win] <= e2[0] * np.exp(-1.8 * t2[win])))
    margin = float(np.max(e2[win] / (e2[0] * np.exp(-1.8 * t2[win]))))

    tr3 = servo.run_tracking(servo.preset("two-camera", 100.0, 3.0), servo.ServoConfig())
    caps = [tuple(c.capture_times) for c in tr3.cameras.values()]
    sync = len(caps) == 2 and caps[0] == caps[1] and len(caps[0]) > 0
    elapsed = time.perf_counter() - t0
    ok = converge and bound_ok and sync and elapsed <= 10
    record(7, ok, f"error < 1 px after {below:.3f} s (final {e[-1]:.3f} px); "
                  f"max e(t)/(e0 exp(-1.8t)) on [0.5,2] = {margin:.3f} (<= 1); "
                  f"two-camera capture clocks identical: {sync}; {elapsed:.2f} s (<= 10)")
    assert ok


# 8 -------------------------------------------------------------------------------

def _oracle_L(points, depths):
    L = np.zeros((2 * len(points), 6))
    for i in range(len(points)):
        x, y = points[i]
        z = depths[i]
        L[2 * i, 0] = -1 / z
        L[2 * i, 2] = x / z
        L[2 * i, 3] = x * y
        L[2 * i, 4] = -(1 + x ** 2)
        L[2 * i, 5] = y
        L[2 * i + 1, 1] = -1 / z
        L[2 * i + 1, 2] = y / z
        L[2 * i + 1, 3] = 1 + y ** 2
        L[2 * i + 1, 4] = -x * y
        L[2 * i + 1, 5] = -x
    return L


def test_c08_interaction_and_control():
    rng = np.random.default_rng(8)
    worst_L = worst_v = 0.0
    done = 0
    while done < 100:
        pts = rng.uniform(-0.3, 0.3, size=(4, 2))
        z = rng.uniform(0.3, 1.5, size=4)
        L = servo.interaction_matrix(servo.FeatureSet(pts, z))
        if np.linalg.cond(L) > 1e4:
            continue
        done += 1
        e = rng.normal(0, 0.05, size=8)
        gain = rng.uniform(0.5, 3)
        v = servo.control_law(L, e, gain)
        v_ref = -gain * np.linalg.solve(L.T @ L, L.T @ e)
        worst_L = max(worst_L, float(np.max(np.abs(L - _oracle_L(pts, z)))))
        worst_v = max(worst_v, float(np.max(np.abs(v - v_ref))))
    ok = worst_L <= 1e-8 and worst_v <= 1e-8
    record(8, ok, f"100 instances: max |L - oracle| {worst_L:.1e}, max |v - normal eq.| "
                  f"{worst_v:.1e} (<= 1e-8)")
    assert ok


# 9 -------------------------------------------------------------------------------

def _brute_force_p(xs, ys):
    pooled = list(xs) + list(ys)
    n1 = len(xs)

    def u_of(group_idx):
        a = [pooled[i] for i in group_idx]
        b = [pooled[i] for i in range(len(pooled)) if i not in group_idx]
        u = sum(1.0 if x > y else 0.5 if x == y else 0.0 for x in a for y in b)
        return min(u, n1 * len(b) - u)

    u_obs = u_of(tuple(range(n1)))
    labelings = list(itertools.combinations(range(len(pooled)), n1))
    hits = sum(1 for g in labelings if u_of(g) <= u_obs)
    return u_obs, Fraction(hits, len(labelings))


def test_c09_mann_whitney_exact():
    mismatches = 0
    parts = list(itertools.combinations(range(1, 9), 4))
    for xs in parts:
        ys = [v for v in range(1, 9) if v not in xs]
        res = analysis.mann_whitney_u(xs, ys, "exact")
        u_ref, p_ref = _brute_force_p(xs, ys)
        mismatches += not (res.U == u_ref and res.p == float(p_ref))
    rng = np.random.default_rng(9)
    invariant = 0
    for _ in range(100):
        n1, n2 = rng.integers(2, 9, size=2)
        x, y = rng.normal(size=n1), rng.normal(size=n2)
        a = analysis.mann_whitney_u(x, y, "exact")
        b = analysis.mann_whitney_u(np.exp(3 * x) + 1, np.exp(3 * y) + 1, "exact")
        invariant += a.U == b.U and a.p == b.p
    ok = len(parts) == 70 and mismatches == 0 and invariant == 100
    record(9, ok, f"{70 - mismatches}/70 partitions bit-identical to brute force; "
                  f"monotone invariance {invariant}/100")
    assert ok


# 10 ------------------------------------------------------------------------------

def test_c10_qualitative_findings():
    t0 = time.perf_counter()
    trials = {}
    for cond, base in (("constrained", 1000), ("unconstrained", 2000)):
        trials[cond] = [analysis.GraspTrial.from_session(simulate_session(cond, base + i)[0])
                        for i in range(6)]
    rep = analysis.trial_report(trials)
    sig = all(rep.test("hold_mean", f, c).significant for f in ("index", "middle", "ring")
              for c in ("normal", "shear"))
    thumb_ns = not any(rep.test("hold_mean", "thumb", c).significant for c in ("normal", "shear"))
    s = rep.summary
    balance = all(s["unconstrained"]["balance"][c]["mean"] < s["constrained"]["balance"][c]["mean"]
                  for c in ("normal", "shear"))
    steady = all(s["unconstrained"]["steadiness"][f][c]["mean"]
                 < s["constrained"]["steadiness"][f][c]["mean"]
                 for f in FINGERS for c in ("normal", "shear"))
    elapsed = time.perf_counter() - t0
    thumb_p = [rep.test("hold_mean", "thumb", c).p for c in ("normal", "shear")]
    ok = sig and thumb_ns and balance and steady and elapsed <= 120
    record(10, ok, f"(a) index/middle/ring significant: {sig}; (b) thumb not significant: {thumb_ns} "
                   f"(p = {thumb_p[0]:.3f}, {thumb_p[1]:.3f}); (c) balance smaller: {balance}, "
                   f"steadiness smaller: {steady}; {elapsed:.1f} s (<= 120)")
    assert ok


# 11 ------------------------------------------------------------------------------

def test_c11_phase_detection():
    worst, worst_hold = 0.0, 0.0
    for seed in range(20):
        scen = ("constrained", "unconstrained")[seed % 2]
        session, _ = simulate_session(scen, 300 + seed)
        b = analysis.detect_phases(analysis.GraspTrial.from_session(session))
        truth = session.boundaries
        dt = session.dt
        for name in ("grasp", "lift", "hold", "replace"):
            worst = max(worst, abs(getattr(b, name) - truth[name]) * dt)
        worst_hold = max(worst_hold, abs((b.hold_end - b.hold) * dt - 10.0))
    ok = worst <= 0.1 and worst_hold <= 0.2
    record(11, ok, f"20 sessions: worst boundary error {worst:.3f} s (<= 0.1), "
                   f"worst hold-duration error {worst_hold:.3f} s (<= 0.2)")
    assert ok


# 12 ------------------------------------------------------------------------------

def _run_pipeline(root):
    assert cli.main(["calibrate", "--out", str(root / "cal"), "--noise", "0.01", "--seed", "3"]) == 0
    assert cli.main(["train", "--dataset", str(root / "cal"), "--out", str(root / "model")]) == 0
    assert cli.main(["simulate-session", "--scenario", "constrained", "--seed", "3",
                     "--frame-stride", "40", "--out", str(root / "sess")]) == 0
    assert cli.main(["estimate", "--model", str(root / "model"), "--session", str(root / "sess"),
                     "--out", str(root / "est")]) == 0


def _digest(root):
    out = {}
    for p in sorted(root.rglob("*")):
        if p.is_file() and p.name != "manifest.json":
            out[str(p.relative_to(root))] = p.read_bytes()
    return out


def test_c12_determinism(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    _run_pipeline(a)
    _run_pipeline(b)
    da, db = _digest(a), _digest(b)
    differing = [k for k in da if da.get(k) != db.get(k)]
    ok = set(da) == set(db) and not differing and len(da) > 0
    record(12, ok, f"{len(da)} output files compared, {len(differing)} differ "
                   f"(manifests excluded)")
    assert ok
