"""EigenNail force estimation: PCA over registered nail images, projection to
Nail Space, and an affine least-squares map from Nail Space to 3D force."""
from __future__ import annotations

import base64
import json
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import DomainError, FormatError, UnderdeterminedError
from .imaging import as_array
from .synth import ForceVector

VARIANCE_KEPT = 0.99
EIGEN_FLOOR = 1e-12
EXTRAPOLATION_MARGIN = 0.10
SCHEMA = "nailforce.eigennail"
SCHEMA_VERSION = 1


class PCAResult(NamedTuple):
    mean: np.ndarray
    eigen_images: np.ndarray  # (k, H, W), orthonormal
    eigenvalues: np.ndarray   # every positive eigenvalue, non-increasing
    k: int


def _stack(images) -> np.ndarray:
    arrs = [as_array(im) for im in images]
    if not arrs:
        raise DomainError("no images given")
    shape = arrs[0].shape
    if len(shape) != 2:
        raise DomainError("PCA expects gray images")
    for a in arrs:
        if a.shape != shape:
            raise DomainError(f"image dimension mismatch: {a.shape} vs {shape}")
    return np.stack(arrs)


def retained_count(eigenvalues, fraction: float = VARIANCE_KEPT) -> int:
    """Smallest k whose cumulative variance ratio reaches ``fraction``.

    A component tied with the last retained one is also kept.
    """
    lam = np.asarray(eigenvalues, dtype=np.float64)
    lam = lam[lam > EIGEN_FLOOR]
    total = lam.sum()
    if lam.size == 0 or total <= 0:
        return 0
    ratio = np.cumsum(lam) / total
    k = int(np.searchsorted(ratio, fraction - 1e-12) + 1)
    k = min(k, lam.size)
    while k < lam.size and lam[k] >= lam[k - 1] * (1 - 1e-9):
        k += 1
    return k


def principal_components(data: np.ndarray):
    """Eigen-decomposition of mean-centred rows.

    Returns ``(mean, components, eigenvalues)`` with components as rows,
    eigenvalues of the (n-1)-normalised covariance, and only strictly
    positive directions kept.  Uses the Gram (snapshot) matrix when there are
    fewer samples than dimensions.
    """
    x = np.asarray(data, dtype=np.float64)
    n, p = x.shape
    if n < 2:
        raise DomainError("need at least two samples")
    mean = x.mean(axis=0)
    xc = x - mean
    if n < p:
        lam, u = np.linalg.eigh(xc @ xc.T / (n - 1))
        order = np.argsort(lam)[::-1]
        lam, u = lam[order], u[:, order]
        keep = lam > EIGEN_FLOOR
        lam, u = lam[keep], u[:, keep]
        comps = u.T @ xc
        comps /= np.linalg.norm(comps, axis=1, keepdims=True)
    else:
        lam, v = np.linalg.eigh(xc.T @ xc / (n - 1))
        order = np.argsort(lam)[::-1]
        lam, v = lam[order], v[:, order]
        keep = lam > EIGEN_FLOOR
        lam, comps = lam[keep], v[:, keep].T
    # deterministic sign: largest-magnitude entry positive
    if comps.size:
        pivot = np.argmax(np.abs(comps), axis=1)
        signs = np.sign(comps[np.arange(len(comps)), pivot])
        comps = comps * signs[:, None]
    return mean, comps, lam


def pca_fit(images: Sequence, fraction: float = VARIANCE_KEPT) -> PCAResult:
    stack = _stack(images)
    if len(stack) < 2:
        raise DomainError("pca_fit needs at least two images")
    h, w = stack.shape[1:]
    mean, comps, lam = principal_components(stack.reshape(len(stack), -1))
    k = retained_count(lam, fraction)
    return PCAResult(mean.reshape(h, w), comps[:k].reshape(k, h, w), lam, k)


def _project(mean, eigen_images, img) -> np.ndarray:
    arr = as_array(img)
    if arr.shape != mean.shape:
        raise DomainError(f"image dims {arr.shape} do not match model {mean.shape}")
    return eigen_images.reshape(len(eigen_images), -1) @ (arr - mean).reshape(-1)


def fit_regression(coords, forces):
    """Per-axis ordinary least squares with intercept.

    Returns ``(coeffs, offsets)`` with ``coeffs`` shaped ``(3, k)``.
    """
    w = np.atleast_2d(np.asarray(coords, dtype=np.float64))
    f = np.asarray([np.asarray(v, dtype=np.float64) for v in forces])
    if len(w) != len(f):
        raise DomainError(f"{len(w)} coordinates but {len(f)} forces")
    if w.ndim != 2:
        raise DomainError("coordinates must be a 2-D array")
    if len(coords) == 0:
        raise UnderdeterminedError("no samples")
    n, k = w.shape
    if n <= k:
        raise UnderdeterminedError(f"{n} samples cannot determine {k} coefficients and an offset")
    design = np.hstack([w, np.ones((n, 1))])
    sol, *_ = np.linalg.lstsq(design, f, rcond=None)
    return sol[:k].T.copy(), sol[k].copy()


class Prediction(NamedTuple):
    force: ForceVector
    extrapolated: bool


@dataclass(frozen=True, eq=False)
class EigenNailModel:
    mean_image: np.ndarray
    eigen_images: np.ndarray
    eigenvalues: np.ndarray
    coeffs: np.ndarray
    offsets: np.ndarray
    force_range: np.ndarray  # (3, 2) per-axis (min, max)

    @property
    def k(self) -> int:
        return len(self.eigen_images)

    @property
    def shape(self):
        return self.mean_image.shape

    def project(self, img) -> np.ndarray:
        return _project(self.mean_image, self.eigen_images, img)

    def project_many(self, images) -> np.ndarray:
        stack = _stack(images)
        if stack.shape[1:] != self.shape:
            raise DomainError(f"image dims {stack.shape[1:]} do not match model {self.shape}")
        flat = (stack - self.mean_image).reshape(len(stack), -1)
        return flat @ self.eigen_images.reshape(self.k, -1).T

    def forces_from_coords(self, w) -> np.ndarray:
        w = np.asarray(w, dtype=np.float64)
        return w @ self.coeffs.T + self.offsets

    def is_extrapolated(self, f) -> bool:
        lo, hi = self.force_range[:, 0], self.force_range[:, 1]
        margin = EXTRAPOLATION_MARGIN * (hi - lo)
        f = np.asarray(f)
        return bool(np.any(f < lo - margin) or np.any(f > hi + margin))

    def predict(self, img) -> Prediction:
        f = self.forces_from_coords(self.project(img))
        return Prediction(ForceVector(*map(float, f)), self.is_extrapolated(f))

    def predict_many(self, images) -> np.ndarray:
        return self.forces_from_coords(self.project_many(images))

    def padded(self, extra: int = 1) -> "EigenNailModel":
        """Same model with ``extra`` all-zero eigen directions appended."""
        zeros = np.zeros((extra,) + self.shape)
        return EigenNailModel(self.mean_image, np.concatenate([self.eigen_images, zeros]),
                              np.concatenate([self.eigenvalues, np.zeros(extra)]),
                              np.hstack([self.coeffs, np.zeros((3, extra))]),
                              self.offsets, self.force_range)


def project(model: EigenNailModel, img) -> np.ndarray:
    return model.project(img)


def predict(model: EigenNailModel, img) -> Prediction:
    return model.predict(img)


def train(images: Sequence, forces: Sequence, fraction: float = VARIANCE_KEPT) -> EigenNailModel:
    """PCA, projection and regression in one pass over calibration data."""
    pca = pca_fit(images, fraction)
    f = np.asarray([np.asarray(v, dtype=np.float64) for v in forces])
    if len(f) != len(images):
        raise DomainError(f"{len(images)} images but {len(f)} forces")
    stack = _stack(images)
    coords = (stack - pca.mean).reshape(len(stack), -1) @ pca.eigen_images.reshape(pca.k, -1).T
    coeffs, offsets = fit_regression(coords, f)
    rng = np.stack([f.min(axis=0), f.max(axis=0)], axis=1)
    return EigenNailModel(pca.mean, pca.eigen_images, pca.eigenvalues, coeffs, offsets, rng)


def rms(a, b) -> np.ndarray:
    """Per-axis RMS difference between two ``(n, 3)`` arrays."""
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    return np.sqrt(np.mean(d ** 2, axis=0))


# -- persistence ------------------------------------------------------------------

def _b64(arr) -> str:
    return base64.b64encode(np.asarray(arr, dtype="<f4").tobytes()).decode("ascii")


def _unb64(text, shape) -> np.ndarray:
    raw = base64.b64decode(text)
    arr = np.frombuffer(raw, dtype="<f4").astype(np.float64)
    if arr.size != int(np.prod(shape)):
        raise FormatError(f"payload holds {arr.size} floats, expected {int(np.prod(shape))}")
    return arr.reshape(shape)


def model_to_dict(model: EigenNailModel) -> dict:
    h, w = model.shape
    return {
        "schema": SCHEMA,
        "version": SCHEMA_VERSION,
        "height": h,
        "width": w,
        "k": model.k,
        "encoding": "base64 little-endian float32, row-major",
        "mean_image": _b64(model.mean_image),
        "eigen_images": _b64(model.eigen_images),
        "eigenvalues": [float(v) for v in model.eigenvalues],
        "coeffs": [[float(v) for v in row] for row in model.coeffs],
        "offsets": [float(v) for v in model.offsets],
        "force_range": [[float(lo), float(hi)] for lo, hi in model.force_range],
    }


def model_from_dict(doc: dict) -> EigenNailModel:
    if doc.get("schema") != SCHEMA:
        raise FormatError(f"not an eigennail model document: {doc.get('schema')!r}")
    if doc.get("version") != SCHEMA_VERSION:
        raise FormatError(f"unsupported eigennail schema version {doc.get('version')!r}")
    h, w, k = int(doc["height"]), int(doc["width"]), int(doc["k"])
    coeffs = np.array(doc["coeffs"], dtype=np.float64).reshape(3, k)
    return EigenNailModel(
        mean_image=_unb64(doc["mean_image"], (h, w)),
        eigen_images=_unb64(doc["eigen_images"], (k, h, w)),
        eigenvalues=np.array(doc["eigenvalues"], dtype=np.float64),
        coeffs=coeffs,
        offsets=np.array(doc["offsets"], dtype=np.float64),
        force_range=np.array(doc["force_range"], dtype=np.float64).reshape(3, 2),
    )


def save_model(model: EigenNailModel, path) -> None:
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_model(path) -> EigenNailModel:
    with open(path) as fh:
        return model_from_dict(json.load(fh))
