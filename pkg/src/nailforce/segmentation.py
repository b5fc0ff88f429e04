"""Finger detection in camera frames: HSV skin threshold, connected
components, top-to-bottom labelling and fixed-size crops."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np
from scipy import ndimage

from .errors import DetectionCountError, DomainError
from .imaging import Image, as_array, centered_window, crop, rgb_to_hsv_array

FINGER_SIDE = "finger"
THUMB_SIDE = "thumb"
CROP_ROWS = 600
CROP_COLS = 300

FOUR_CONNECTED = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])


@dataclass(frozen=True)
class SkinThreshold:
    h_lo: float = 0.02
    h_hi: float = 0.12
    s_min: float = 0.15
    v_min: float = 0.2
    min_area: int = 2000


@dataclass(frozen=True)
class Blob:
    area: int
    bbox: Tuple[int, int, int, int]  # (top, left, bottom, right), bottom/right exclusive
    centroid: Tuple[float, float]    # (row, col)


def threshold_skin(img, h_lo=0.02, h_hi=0.12, s_min=0.15, v_min=0.2) -> np.ndarray:
    if not 0.0 <= h_lo < h_hi < 1.0:
        raise DomainError(f"invalid hue band [{h_lo}, {h_hi}]")
    arr = as_array(img)
    if arr.ndim != 3:
        raise DomainError("skin thresholding needs an RGB image")
    hsv = rgb_to_hsv_array(arr)
    h, s, v = hsv[..., 0], hsv[..., 1], hsv[..., 2]
    return (h >= h_lo) & (h <= h_hi) & (s >= s_min) & (v >= v_min)


def connected_components(mask, min_area: int = 2000) -> List[Blob]:
    """4-connected components of at least ``min_area`` pixels, sorted by centroid row."""
    mask = np.asarray(mask, dtype=bool)
    labels, n = ndimage.label(mask, structure=FOUR_CONNECTED)
    if n == 0:
        return []
    index = np.arange(1, n + 1)
    areas = ndimage.sum_labels(mask, labels, index)
    centroids = ndimage.center_of_mass(mask, labels, index)
    slices = ndimage.find_objects(labels)
    blobs = []
    for area, cen, sl in zip(areas, centroids, slices):
        if area < min_area:
            continue
        bbox = (sl[0].start, sl[1].start, sl[0].stop, sl[1].stop)
        blobs.append(Blob(int(area), bbox, (float(cen[0]), float(cen[1]))))
    blobs.sort(key=lambda b: (b.centroid[0], b.centroid[1]))
    return blobs


def label_fingers(blobs, camera: str) -> Dict[str, Blob]:
    """Name blobs by vertical order: index, middle, ring top to bottom."""
    ordered = sorted(blobs, key=lambda b: (b.centroid[0], b.centroid[1]))
    if camera == FINGER_SIDE:
        names = ("index", "middle", "ring")
    elif camera == THUMB_SIDE:
        names = ("thumb",)
    else:
        raise DomainError(f"unknown camera {camera!r}")
    if len(ordered) != len(names):
        raise DetectionCountError(len(names), len(ordered))
    return dict(zip(names, ordered))


def crop_nail(img, blob: Blob, rows: int = CROP_ROWS, cols: int = CROP_COLS) -> Image:
    top, left = centered_window(blob.centroid[0], blob.centroid[1], rows, cols)
    return crop(img, top, left, rows, cols, 0.0)


def crop_origin(blob: Blob, rows: int = CROP_ROWS, cols: int = CROP_COLS):
    return centered_window(blob.centroid[0], blob.centroid[1], rows, cols)


def segment_frame(img, camera: str, thresholds: SkinThreshold = SkinThreshold()):
    """Threshold, label and crop one frame; returns ``{finger: (blob, crop)}``."""
    mask = threshold_skin(img, thresholds.h_lo, thresholds.h_hi, thresholds.s_min, thresholds.v_min)
    blobs = connected_components(mask, thresholds.min_area)
    labelled = label_fingers(blobs, camera)
    return {name: (blob, crop_nail(img, blob)) for name, blob in labelled.items()}


DETECTION_HEADER = ("frame", "finger", "centroid_row", "centroid_col", "area")


def write_detection_log(path, records) -> None:
    """``records``: iterable of ``(frame, finger, Blob)``."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(DETECTION_HEADER)
        for frame, finger, blob in records:
            wr.writerow([frame, finger, repr(blob.centroid[0]), repr(blob.centroid[1]), blob.area])
