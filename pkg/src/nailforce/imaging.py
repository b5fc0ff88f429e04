"""Image container, colour conversion, PNM file I/O and cropping.

Images are row-major with the origin at the top-left corner; row index grows
downward.  Intensities are floats in [0, 1].
"""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, FormatError

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True, eq=False)
class Image:
    """Immutable wrapper around an ``(H, W)`` or ``(H, W, 3)`` float array."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64)
        if arr.ndim not in (2, 3) or (arr.ndim == 3 and arr.shape[2] != 3):
            raise DomainError(f"image array must be HxW or HxWx3, got {arr.shape}")
        if arr.size == 0:
            raise DomainError("image must have at least one pixel")
        if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
            raise DomainError("intensities must lie in [0, 1]")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return 1 if self.data.ndim == 2 else 3

    @property
    def shape(self):
        return self.data.shape

    @property
    def pixels(self) -> np.ndarray:
        return self.data.reshape(-1)

    def __eq__(self, other):
        if not isinstance(other, Image):
            return NotImplemented
        return self.data.shape == other.data.shape and np.array_equal(self.data, other.data)

    __hash__ = None

    @classmethod
    def from_clipped(cls, arr) -> "Image":
        return cls(np.clip(arr, 0.0, 1.0))


def as_array(img) -> np.ndarray:
    return img.data if isinstance(img, Image) else np.asarray(img, dtype=np.float64)


def to_gray(img) -> Image:
    """Rec. 601 luma of an RGB image; gray images are returned unchanged."""
    arr = as_array(img)
    if arr.ndim == 2:
        return img if isinstance(img, Image) else Image(arr)
    return Image.from_clipped(arr @ LUMA_WEIGHTS)


# -- colour ------------------------------------------------------------------

def rgb_to_hsv(p):
    """Hexcone HSV of one RGB triple; hue is normalised to [0, 1)."""
    r, g, b = (float(c) for c in p)
    for c in (r, g, b):
        if not 0.0 <= c <= 1.0:
            raise DomainError(f"RGB component {c} outside [0, 1]")
    h, s, v = rgb_to_hsv_array(np.array([[r, g, b]]))[0]
    return float(h), float(s), float(v)


def hsv_to_rgb(p):
    h, s, v = (float(c) for c in p)
    return tuple(float(c) for c in hsv_to_rgb_array(np.array([[h, s, v]]))[0])


def rgb_to_hsv_array(rgb: np.ndarray) -> np.ndarray:
    """Vectorised hexcone conversion over the last axis."""
    rgb = np.asarray(rgb, dtype=np.float64)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    mx = rgb.max(axis=-1)
    mn = rgb.min(axis=-1)
    delta = mx - mn
    chroma = delta > 0
    safe = np.where(chroma, delta, 1.0)

    h = np.zeros_like(mx)
    rmax = chroma & (r == mx)
    gmax = chroma & (g == mx) & ~rmax
    bmax = chroma & ~rmax & ~gmax
    h = np.where(rmax, ((g - b) / safe) % 6.0, h)
    h = np.where(gmax, (b - r) / safe + 2.0, h)
    h = np.where(bmax, (r - g) / safe + 4.0, h)
    h = h / 6.0
    h = np.where(h >= 1.0, h - 1.0, h)

    s = np.where(mx > 0, delta / np.where(mx > 0, mx, 1.0), 0.0)
    return np.stack([h, s, mx], axis=-1)


def hsv_to_rgb_array(hsv: np.ndarray) -> np.ndarray:
    hsv = np.asarray(hsv, dtype=np.float64)
    h, s, v = hsv[..., 0], hsv[..., 1], hsv[..., 2]
    h6 = (h % 1.0) * 6.0
    sector = np.floor(h6).astype(int) % 6
    f = h6 - np.floor(h6)
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    choices_r = [v, q, p, p, t, v]
    choices_g = [t, v, v, q, p, p]
    choices_b = [p, p, t, v, v, q]
    r = np.choose(sector, choices_r)
    g = np.choose(sector, choices_g)
    b = np.choose(sector, choices_b)
    return np.stack([r, g, b], axis=-1)


# -- PNM ---------------------------------------------------------------------

def quantize(arr: np.ndarray) -> np.ndarray:
    """Map intensities to bytes with round-half-up, ``round(i * 255)``."""
    return np.floor(np.asarray(arr) * 255.0 + 0.5).astype(np.uint8)


def _header_tokens(buf: bytes, count: int):
    tokens = []
    pos = 0
    n = len(buf)
    while len(tokens) < count:
        while pos < n and buf[pos:pos + 1].isspace():
            pos += 1
        if pos < n and buf[pos:pos + 1] == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise FormatError("truncated PNM header")
        tokens.append(buf[start:pos])
    # exactly one whitespace byte separates maxval from the raster
    if pos >= n or not buf[pos:pos + 1].isspace():
        raise FormatError("missing whitespace after PNM header")
    return tokens, pos + 1


def decode_pnm(buf: bytes) -> Image:
    tokens, offset = _header_tokens(buf, 4)
    magic = tokens[0]
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"unsupported PNM magic {magic!r}")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise FormatError("non-integer PNM header field") from exc
    if width < 1 or height < 1:
        raise FormatError("PNM dimensions must be positive")
    if maxval != 255:
        raise FormatError(f"only 8-bit PNM (maxval 255) is supported, got {maxval}")
    channels = 3 if magic == b"P6" else 1
    expected = width * height * channels
    payload = buf[offset:offset + expected]
    if len(payload) < expected:
        raise FormatError(f"truncated PNM payload: {len(payload)} of {expected} bytes")
    raster = np.frombuffer(payload, dtype=np.uint8).astype(np.float64) / 255.0
    shape = (height, width, 3) if channels == 3 else (height, width)
    return Image(raster.reshape(shape))


def encode_pnm(img) -> bytes:
    arr = as_array(img)
    magic = b"P6" if arr.ndim == 3 else b"P5"
    header = b"%s\n%d %d\n255\n" % (magic, arr.shape[1], arr.shape[0])
    return header + quantize(arr).tobytes()


def read_image(path) -> Image:
    with open(path, "rb") as fh:
        return decode_pnm(fh.read())


def write_image(img, path) -> None:
    data = encode_pnm(img)
    with open(os.fspath(path), "wb") as fh:
        fh.write(data)


# -- geometry ------------------------------------------------------------------

def crop(img, top: int, left: int, h: int, w: int, fill: float = 0.0) -> Image:
    """Window of size ``(h, w)`` at ``(top, left)``; out-of-frame pixels get ``fill``."""
    if h < 1 or w < 1:
        raise DomainError("crop size must be at least 1x1")
    arr = as_array(img)
    out = np.full((h, w) + arr.shape[2:], float(fill))
    r0, c0 = max(top, 0), max(left, 0)
    r1, c1 = min(top + h, arr.shape[0]), min(left + w, arr.shape[1])
    if r1 > r0 and c1 > c0:
        out[r0 - top:r1 - top, c0 - left:c1 - left] = arr[r0:r1, c0:c1]
    return Image(out)


def centered_window(center_row: float, center_col: float, h: int, w: int):
    """Top-left corner of an ``h`` x ``w`` window centred on a point."""
    top = int(np.floor(center_row - h / 2.0 + 0.5))
    left = int(np.floor(center_col - w / 2.0 + 0.5))
    return top, left
