import json

import numpy as np
import pytest

from nailforce.errors import DomainError
from nailforce.imaging import read_image
from nailforce.synth import (DEFAULT_GRID, DENSE_GRID, FINGERS, CalibrationGrid, default_nail_model,
                             frame_samples, make_grid, read_forces_csv, render_camera_frame,
                             render_nail, session_from_csv, simulate_session, write_session)


def test_grid_counts_and_order():
    forces = make_grid(DEFAULT_GRID)
    assert len(forces) == 63
    assert tuple(forces[0]) == (-3.0, -6.0, 0.0)
    assert tuple(forces[1]) == (-3.0, 0.0, 0.0)
    assert tuple(forces[3]) == (0.0, -6.0, 0.0)
    assert tuple(forces[9]) == (-3.0, -6.0, 3.0)
    assert 6725 <= len(make_grid(DENSE_GRID)) <= 7050


def test_grid_single_and_errors():
    assert [tuple(f) for f in make_grid(CalibrationGrid((0.0,), (0.0,), (0.0,)))] == [(0.0, 0.0, 0.0)]
    with pytest.raises(DomainError):
        CalibrationGrid((), (0.0,), (0.0,))
    with pytest.raises(DomainError):
        CalibrationGrid((1.0, 0.0), (0.0,), (0.0,))
    with pytest.raises(DomainError):
        CalibrationGrid((0.0, 20.0), (0.0,), (0.0,))


def test_basis_is_orthonormal(nail_model):
    b = nail_model.basis.reshape(3, -1)
    assert np.allclose(b @ b.T, np.eye(3), atol=1e-12)


def test_zero_force_renders_mean(nail_model):
    assert np.array_equal(render_nail(nail_model, (0, 0, 0)).data, nail_model.mean_image)


def test_linearity(nail_model):
    f1, f2 = np.array([1.0, -2.0, 4.0]), np.array([-0.5, 1.0, 3.0])
    m = nail_model.mean_image
    lhs = render_nail(nail_model, f1 + f2).data - m
    rhs = (render_nail(nail_model, f1).data - m) + (render_nail(nail_model, f2).data - m)
    assert np.allclose(lhs, rhs, atol=1e-12)


def test_pixel_matches_scalar_formula(nail_model):
    r, c = 20, 11
    f = (1.0, 2.0, 3.0)
    value = nail_model.mean_image[r, c]
    for axis in range(3):
        value += nail_model.gain[axis] * f[axis] * nail_model.basis[axis, r, c]
    assert render_nail(nail_model, f).data[r, c] == pytest.approx(min(max(value, 0), 1), abs=1e-15)


def test_no_clamping_across_grid(nail_model):
    for f in make_grid(DEFAULT_GRID):
        raw = nail_model.mean_image + nail_model.response(f)
        assert raw.min() > 0 and raw.max() < 1


def test_noise_is_deterministic_per_index():
    m = default_nail_model(0.01, seed=4)
    a = render_nail(m, (0, 0, 5), index=3).data
    b = render_nail(m, (0, 0, 5), index=3).data
    c = render_nail(m, (0, 0, 5), index=4).data
    assert np.array_equal(a, b) and not np.array_equal(a, c)
    assert np.std(a - m.mean_image - m.response((0, 0, 5))) == pytest.approx(0.01, rel=0.1)


@pytest.mark.parametrize("scenario", ["constrained", "unconstrained"])
def test_session_invariants(scenario):
    s, _ = simulate_session(scenario, 12)
    b = s.boundaries
    hold = s.hold_slice()
    fingers = s.forces["index"] + s.forces["middle"] + s.forces["ring"]
    assert np.array_equal(s.forces["thumb"][hold], fingers[hold])
    assert (b["replace"] - b["hold"]) * s.dt == pytest.approx(10.0, abs=s.dt)
    assert 45.0 <= s.duration <= 55.0
    assert all(np.all(s.forces[f][:, 2] >= 0) for f in FINGERS)
    assert list(dict.fromkeys(s.phases)) == ["pre-contact", "grasp", "lift", "hold", "replace"]
    assert s.object_weight == pytest.approx(1.14 * 9.81)


def test_session_errors():
    with pytest.raises(DomainError):
        simulate_session("sideways", 0)
    with pytest.raises(DomainError):
        simulate_session("constrained", 0, dt=0.5)


def test_session_determinism():
    a, fa = simulate_session("constrained", 5)
    b, fb = simulate_session("constrained", 5)
    for f in FINGERS:
        assert np.array_equal(a.forces[f], b.forces[f])
    for _ in range(8):
        x, y = next(fa), next(fb)
        assert x[:4] == y[:4] and x.image == y.image


def test_scenario_share_structure():
    def share_var(scen):
        vals = []
        for seed in range(4):
            s, _ = simulate_session(scen, seed)
            h = s.hold_slice()
            means = np.array([s.forces[f][h, 2].mean() for f in FINGERS[1:]])
            vals.append(np.var(100 * means / means.sum(), ddof=1))
        return np.mean(vals)
    assert share_var("unconstrained") < share_var("constrained")
    s, _ = simulate_session("constrained", 0)
    h = s.hold_slice()
    means = np.array([s.forces[f][h, 2].mean() for f in FINGERS[1:]])
    assert 100 * means / means.sum() == pytest.approx([45, 35, 20], abs=3)


def test_frames_at_20hz():
    s, frames = simulate_session("unconstrained", 1)
    idx = frame_samples(s)
    assert np.allclose(np.diff(s.time[idx]), 0.05)
    first = [next(frames) for _ in range(8)]
    assert [f.finger for f in first] == list(FINGERS) * 2
    assert first[4].time == pytest.approx(0.05)


def test_camera_frame_layout(nail_model):
    rng = np.random.default_rng(0)
    nails = {f: render_nail(nail_model, (0, 0, 1)) for f in FINGERS}
    img, truth = render_camera_frame(nails, "finger", rng)
    assert img.shape == (1024, 680, 3)
    rows = [truth[f][0] for f in ("index", "middle", "ring")]
    assert rows == sorted(rows)
    assert all(abs(r - e) <= 20 for r, e in zip(rows, (212, 512, 812)))
    with pytest.raises(DomainError):
        render_camera_frame(nails, "palm", rng)


def test_session_persistence(tmp_path):
    s, frames = simulate_session("constrained", 2)
    write_session(s, tmp_path, frames, frame_stride=100)
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["scenario"] == "constrained" and man["seed"] == 2 and man["dt"] == 0.01
    t, forces, phases, source = read_forces_csv(tmp_path / "forces.csv")
    assert source == "oracle" and len(t) == s.n_samples
    for f in FINGERS:
        assert np.array_equal(forces[f], s.forces[f])
    img = read_image(tmp_path / "frames" / "ring_00100.pgm")
    assert img.shape == (64, 32)
    back = session_from_csv(tmp_path / "forces.csv")
    assert back.boundaries == s.boundaries
    header = (tmp_path / "forces.csv").read_text().splitlines()[0]
    assert header == "time_s,finger,fx_n,fy_n,fz_n,phase,source"
