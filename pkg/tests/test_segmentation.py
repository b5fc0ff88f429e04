import numpy as np
import pytest

from nailforce import segmentation as seg
from nailforce.errors import DetectionCountError, DomainError
from nailforce.imaging import Image
from nailforce.synth import FINGERS, render_camera_frame, render_nail


def test_threshold_on_pure_colours():
    px = np.array([[[0.86, 0.62, 0.47], [0.2, 0.2, 0.2], [0.1, 0.08, 0.05], [0.9, 0.1, 0.1]]])
    assert seg.threshold_skin(Image(px)).tolist() == [[True, False, False, False]]
    with pytest.raises(DomainError):
        seg.threshold_skin(np.zeros((2, 2)))
    with pytest.raises(DomainError):
        seg.threshold_skin(Image(px), h_lo=0.5, h_hi=0.1)


def test_four_connectivity():
    mask = np.zeros((6, 6), bool)
    mask[0:2, 0:2] = True
    mask[2:4, 2:4] = True  # touches the first square only diagonally
    blobs = seg.connected_components(mask, min_area=1)
    assert [b.area for b in blobs] == [4, 4]
    assert blobs[0].bbox == (0, 0, 2, 2)
    assert blobs[1].centroid == (2.5, 2.5)
    assert seg.connected_components(mask, min_area=5) == []


def _blob(row):
    return seg.Blob(3000, (row - 10, 0, row + 10, 10), (float(row), 5.0))


def test_label_fingers_orders_by_row():
    out = seg.label_fingers([_blob(800), _blob(200), _blob(500)], "finger")
    assert [out[k].centroid[0] for k in ("index", "middle", "ring")] == [200, 500, 800]
    assert list(seg.label_fingers([_blob(400)], "thumb")) == ["thumb"]
    with pytest.raises(DetectionCountError) as err:
        seg.label_fingers([_blob(200), _blob(500)], "finger")
    assert (err.value.expected, err.value.found) == (3, 2)
    with pytest.raises(DomainError):
        seg.label_fingers([], "toe")


def test_crop_window_example():
    blob = seg.Blob(5000, (0, 0, 1, 1), (500.0, 340.0))
    assert seg.crop_origin(blob) == (200, 190)
    img = Image(np.zeros((1024, 680, 3)))
    assert seg.crop_nail(img, blob).shape == (600, 300, 3)


def test_segment_camera_frames(nail_model):
    rng = np.random.default_rng(1)
    nails = {f: render_nail(nail_model, (0, 0, 4)) for f in FINGERS}
    frame, truth = render_camera_frame(nails, "thumb", rng)
    found = seg.segment_frame(frame, "thumb")
    blob, crop = found["thumb"]
    assert abs(blob.centroid[0] - (truth["thumb"][0] - 0.5)) < 2
    assert crop.shape == (600, 300, 3)


def test_touching_fingers_raise_count_error(nail_model):
    img = np.zeros((300, 200, 3))
    img[:] = [0.18, 0.22, 0.30]
    img[20:280, 50:150] = [0.86, 0.62, 0.47]
    with pytest.raises(DetectionCountError):
        seg.segment_frame(Image(img), "finger")


def test_detection_log(tmp_path):
    seg.write_detection_log(tmp_path / "d.csv", [(0, "index", _blob(200))])
    lines = (tmp_path / "d.csv").read_text().splitlines()
    assert lines == ["frame,finger,centroid_row,centroid_col,area", "0,index,200.0,5.0,3000"]
