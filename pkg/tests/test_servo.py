import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from nailforce import servo
from nailforce.errors import DegenerateConfigurationError, DomainError, FeatureLossError


def test_rodrigues_matches_scipy():
    rng = np.random.default_rng(0)
    for _ in range(20):
        w = rng.normal(size=3)
        assert np.allclose(servo.rodrigues(w), Rotation.from_rotvec(w).as_matrix(), atol=1e-12)
    assert np.allclose(servo.rodrigues([0, 0, 0]), np.eye(3))


def test_orthonormalize_projects_to_rotation():
    r = Rotation.from_rotvec([0.3, -0.2, 0.1]).as_matrix() + 1e-6
    q = servo.orthonormalize(r)
    assert np.allclose(q.T @ q, np.eye(3), atol=1e-12) and np.linalg.det(q) > 0


def test_pose_validation():
    with pytest.raises(DomainError):
        servo.CameraPose([0, 0, 0], np.diag([1.0, 1.0, -1.0]))


def test_step_sim_pure_translation_and_rotation():
    p = servo.CameraPose([0, 0, -0.5], np.eye(3))
    q = servo.step_sim(p, [0.1, 0, 0, 0, 0, 0], 0.5)
    assert np.allclose(q.position, [0.05, 0, -0.5])
    q = servo.step_sim(p, [0, 0, 0, 0, 0, np.pi], 0.5)
    assert np.allclose(q.rotation, Rotation.from_rotvec([0, 0, np.pi / 2]).as_matrix())
    with pytest.raises(DomainError):
        servo.step_sim(p, np.zeros(6), 0.0)


def test_projection_of_plate_centre():
    pose = servo.FINGER_CAMERA_DESIRED
    fs = servo.project(pose, np.array([[0.0, 0.0, 0.0], [0.1, 0.0, 0.0]]))
    assert np.allclose(fs.points, [[0, 0], [0.2, 0]]) and np.allclose(fs.depths, 0.5)


def test_interaction_matrix_matches_finite_differences():
    pose = servo.CameraPose([0.01, -0.02, -0.5], Rotation.from_rotvec([0.05, -0.03, 0.02]).as_matrix())
    pts = servo.plate_corners()
    L = servo.interaction_matrix(servo.project(pose, pts))
    h = 1e-6
    for i in range(6):
        tw = np.zeros(6)
        tw[i] = 1.0
        fp = servo.project(servo.step_sim(pose, tw, h), pts).vector()
        fm = servo.project(servo.step_sim(pose, -tw, h), pts).vector()
        assert np.allclose((fp - fm) / (2 * h), L[:, i], atol=1e-5)


def test_control_law_errors():
    L = servo.interaction_matrix(servo.FeatureSet(np.zeros((2, 2)), np.ones(2)))
    with pytest.raises(DegenerateConfigurationError):
        servo.control_law(L, np.zeros(4), 1.0)
    with pytest.raises(DomainError):
        servo.control_law(np.eye(6), np.zeros(6), 0.0)
    with pytest.raises(DomainError):
        servo.interaction_matrix(servo.FeatureSet(np.zeros((4, 2)), [1, 1, -1, 1]))


def test_dot_detection_subpixel():
    centres = np.array([[100.3, 200.7], [400.0, 210.2], [390.6, 700.1], [120.9, 650.4]])
    img = servo.render_dots(centres, (1024, 680))
    found = np.array(servo.detect_dots(img))
    expected = np.array(sorted((c[1], c[0]) for c in centres))
    assert np.max(np.abs(found - expected)) < 0.05
    with pytest.raises(FeatureLossError):
        servo.detect_dots(servo.render_dots(centres[:3], (1024, 680)))


def test_config_validation():
    with pytest.raises(DomainError):
        servo.ServoConfig(capture_dt=0.0015)
    with pytest.raises(DomainError):
        servo.ServoConfig(gain=-1)
    with pytest.raises(DomainError):
        servo.ServoConfig(depth_mode="guess")
    with pytest.raises(DomainError):
        servo.preset("spinning")


def test_initial_error_is_offset():
    for name in ("static", "two-camera"):
        tr = servo.run_tracking(servo.preset(name, 100.0, 0.01))
        for cam in tr.cameras.values():
            assert cam.error_px[0] == pytest.approx(100.0)


def test_desired_depth_still_converges():
    tr = servo.run_tracking(servo.preset("static", 100.0, 3.0), servo.ServoConfig(depth_mode="desired"))
    assert tr.final_error() < 1.0


def test_image_measurement_converges():
    tr = servo.run_tracking(servo.preset("static", 60.0, 3.0), servo.ServoConfig(measure="image"))
    assert not tr.truncated
    assert tr.final_error() < 1.0


def test_moving_target_is_tracked():
    # a proportional law lags a moving plate; once it stops the error decays again
    tr = servo.run_tracking(servo.preset("two-camera-moving", 100.0, 6.0))
    assert not tr.truncated
    for cam in tr.cameras.values():
        t = np.array(cam.times)
        e = np.array(cam.error_px)
        after = e[t >= 2.6]
        assert np.all(np.diff(after) <= 1e-9)
        assert e[-1] < 1.0


def test_feature_loss_truncates():
    tr = servo.run_tracking(servo.preset("static", 3000.0, 0.5))
    assert tr.truncated and tr.loss_event["tick"] == 0


def test_trace_and_scenario_files(tmp_path):
    scen = servo.preset("moving", 100.0, 0.1)
    cfg = servo.ServoConfig()
    tr = servo.run_tracking(scen, cfg)
    servo.write_trace_csv(tr, tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0].startswith("tick,time,camera,px,py,pz,r00")
    assert len(lines) == 1 + len(tr.cameras["finger"].ticks)
    servo.write_scenario_json(scen, cfg, tmp_path / "s.json")
    import json
    back, cfg2 = servo.scenario_from_dict(json.loads((tmp_path / "s.json").read_text()))
    assert cfg2 == cfg
    assert np.allclose(back.plate_at(1.5), scen.plate_at(1.5))
