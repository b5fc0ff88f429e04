"""Appearance-model registration of fingernails.

Shape and texture are modelled separately with PCA and then combined into a
single appearance model.  A search routine fits pose and shape to a new
image by minimising the texture residual, and a piecewise-linear warp maps
the located nail onto the template.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy.spatial import Delaunay

from .eigennail import EIGEN_FLOOR, VARIANCE_KEPT, principal_components, retained_count
from .errors import DomainError, FormatError, WarpError
from .imaging import LUMA_WEIGHTS, Image, as_array

MIN_TRIANGLE_AREA = 1e-9
SCHEMA = "nailforce.appearance"
SCHEMA_VERSION = 1


# -- similarity geometry -------------------------------------------------------

def _as_points(shape) -> np.ndarray:
    pts = np.asarray(shape, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise DomainError(f"landmark shape must be (L, 2), got {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise DomainError("landmark coordinates must be finite")
    return pts


def _rotation(theta) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def fit_similarity(src, dst):
    """Least-squares similarity ``dst ~ s R src + t`` without reflection.

    Returns ``(scale, rotation 2x2, translation)``.
    """
    src, dst = _as_points(src), _as_points(dst)
    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    a, b = src - mu_s, dst - mu_d
    dot = np.sum(a * b)
    cross = np.sum(a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0])
    theta = np.arctan2(cross, dot)
    norm = np.sum(a * a)
    scale = np.hypot(dot, cross) / norm if norm > 0 else 1.0
    rot = _rotation(theta)
    return scale, rot, mu_d - scale * rot @ mu_s


def _normalize(pts):
    c = pts - pts.mean(axis=0)
    n = np.linalg.norm(c)
    if n == 0:
        raise DomainError("shape has zero extent")
    return c / n


def _canonical(pts):
    """Rotate a centred shape so its first off-centre point lies straight up (-y)."""
    radius = np.linalg.norm(pts, axis=1)
    idx = int(np.argmax(radius > 1e-9 * radius.max()))
    x, y = pts[idx]
    theta = np.arctan2(-1.0, 0.0) - np.arctan2(y, x)
    return pts @ _rotation(theta).T


def _rotate_onto(pts, ref):
    cross = np.sum(pts[:, 0] * ref[:, 1] - pts[:, 1] * ref[:, 0])
    dot = np.sum(pts * ref)
    return pts @ _rotation(np.arctan2(cross, dot)).T


def procrustes_align(shapes: Sequence, tol: float = 1e-12, max_iter: int = 100):
    """Generalised Procrustes alignment.

    Shapes are centred, scaled to unit norm and rotated onto a mean whose
    orientation is canonical, so the output does not depend on any similarity
    applied to the whole input set.  Returns ``(aligned (N, L, 2), mean)``.
    """
    pts = [_normalize(_as_points(s)) for s in shapes]
    if len(pts) < 1:
        raise DomainError("no shapes given")
    n_points = pts[0].shape[0]
    for p in pts:
        if p.shape[0] != n_points:
            raise DomainError(f"inconsistent point counts: {p.shape[0]} vs {n_points}")
    mean = _canonical(pts[0])
    for _ in range(max_iter):
        aligned = [_rotate_onto(p, mean) for p in pts]
        new_mean = _canonical(_normalize(np.mean(aligned, axis=0)))
        done = np.linalg.norm(new_mean - mean) < tol
        mean = new_mean
        if done:
            break
    aligned = np.array([_rotate_onto(p, mean) for p in pts])
    return aligned, mean


# -- statistical models -----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ShapeModel:
    mean: np.ndarray        # (L, 2) in the normalised frame
    components: np.ndarray  # (k, 2L), orthonormal rows
    variances: np.ndarray   # (k,)

    @property
    def k(self) -> int:
        return len(self.variances)

    def instance(self, params) -> np.ndarray:
        params = np.asarray(params, dtype=np.float64).reshape(-1)
        return self.mean + (params @ self.components).reshape(-1, 2)

    def params(self, shape) -> np.ndarray:
        return self.components @ (np.asarray(shape).reshape(-1) - self.mean.reshape(-1))


def fit_shape_model(shapes: Sequence, fraction: float = VARIANCE_KEPT) -> ShapeModel:
    if len(shapes) < 2:
        raise DomainError("need at least two shapes")
    aligned, _ = procrustes_align(shapes)
    data = aligned.reshape(len(aligned), -1)
    mean, comps, lam = principal_components(data)
    k = retained_count(lam, fraction)
    return ShapeModel(mean.reshape(-1, 2), comps[:k], lam[:k])


@dataclass(frozen=True, eq=False)
class TextureModel:
    mean: np.ndarray
    components: np.ndarray
    variances: np.ndarray

    @property
    def k(self) -> int:
        return len(self.variances)

    def params(self, texture) -> np.ndarray:
        return self.components @ (np.asarray(texture) - self.mean)

    def instance(self, params) -> np.ndarray:
        return self.mean + np.asarray(params, dtype=np.float64) @ self.components


def fit_texture_model(textures, fraction: float = VARIANCE_KEPT,
                      max_components: Optional[int] = None) -> TextureModel:
    data = np.asarray(textures, dtype=np.float64)
    mean, comps, lam = principal_components(data)
    k = retained_count(lam, fraction)
    if max_components is not None:
        k = min(k, max_components)
    return TextureModel(mean, comps[:k], lam[:k])


@dataclass(frozen=True, eq=False)
class CombinedModel:
    """Orthonormal combined components ``phi_c`` over ``[w * b_s; b_t]``."""

    phi_c: np.ndarray       # (n_shape + n_texture, kc)
    variances: np.ndarray
    weight: float
    n_shape: int

    def params(self, b) -> np.ndarray:
        return self.phi_c.T @ np.asarray(b, dtype=np.float64)

    def reconstruct(self, c) -> np.ndarray:
        return self.phi_c @ np.asarray(c, dtype=np.float64)

    def split(self, b):
        b = np.asarray(b, dtype=np.float64)
        w = self.weight if self.weight else 1.0
        return b[:self.n_shape] / w, b[self.n_shape:]

    def concat(self, shape_params, texture_params) -> np.ndarray:
        return np.concatenate([self.weight * np.asarray(shape_params, dtype=np.float64),
                               np.asarray(texture_params, dtype=np.float64)])


def balance_weight(shape_variances, texture_variances) -> float:
    """sqrt(total texture variance / total shape variance); 1 when shape is rigid."""
    vs, vt = float(np.sum(shape_variances)), float(np.sum(texture_variances))
    if vs <= 0:
        return 1.0
    return float(np.sqrt(vt / vs))


def combine_appearance(shape_params, texture_params, weight: float,
                       fraction: float = VARIANCE_KEPT) -> CombinedModel:
    bs = np.asarray(shape_params, dtype=np.float64)
    bt = np.asarray(texture_params, dtype=np.float64)
    if bs.ndim == 1:
        bs = bs[:, None]
    if bt.ndim == 1:
        bt = bt[:, None]
    if len(bs) != len(bt):
        raise DomainError(f"{len(bs)} shape samples but {len(bt)} texture samples")
    b = np.hstack([weight * bs, bt])
    n_shape = bs.shape[1]
    if len(b) < 2 or b.shape[1] == 0:
        return CombinedModel(np.zeros((b.shape[1], 0)), np.zeros(0), float(weight), n_shape)
    # PCA and shape parameters are zero-mean already; decompose about the origin
    _, sv, vt = np.linalg.svd(b, full_matrices=False)
    lam = sv ** 2 / (len(b) - 1)
    keep = lam > EIGEN_FLOOR
    lam, comps = lam[keep], vt[keep]
    if comps.size:
        pivot = np.argmax(np.abs(comps), axis=1)
        comps = comps * np.sign(comps[np.arange(len(comps)), pivot])[:, None]
    kc = retained_count(lam, fraction) if fraction < 1.0 else len(lam)
    return CombinedModel(comps[:kc].T.copy(), lam[:kc], float(weight), n_shape)


# -- triangulation and warping ------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Triangulation:
    template: np.ndarray   # (L, 2) landmark (x, y) positions in the template image
    triangles: np.ndarray  # (T, 3) vertex indices, counter-clockwise in image axes
    shape: tuple           # template image (height, width)

    def __post_init__(self):
        areas = triangle_areas(self.template, self.triangles)
        bad = np.flatnonzero(np.abs(areas) < MIN_TRIANGLE_AREA)
        if bad.size:
            raise WarpError(int(bad[0]), float(areas[bad[0]]))


def triangle_areas(points, triangles) -> np.ndarray:
    p = np.asarray(points)[np.asarray(triangles)]
    d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def triangulate(template, shape) -> Triangulation:
    """Delaunay triangulation of the template landmarks."""
    pts = _as_points(template)
    tri = Delaunay(pts).simplices.astype(int)
    areas = triangle_areas(pts, tri)
    tri = np.where((areas < 0)[:, None], tri[:, [0, 2, 1]], tri)
    # canonical order: rotate each triple to start at its smallest index
    tri = np.array([np.roll(t, -int(np.argmin(t))) for t in tri])
    tri = tri[np.lexsort(tri.T[::-1])]
    return Triangulation(pts, tri, tuple(int(s) for s in shape))


class WarpMap(NamedTuple):
    rows: np.ndarray
    cols: np.ndarray
    triangle: np.ndarray
    bary: np.ndarray  # (n, 3)


_WARP_CACHE: dict = {}


def warp_map(tri: Triangulation) -> WarpMap:
    """Template pixels inside the mesh with their triangle and barycentric weights."""
    key = id(tri)
    hit = _WARP_CACHE.get(key)
    if hit is not None and hit[0] is tri:
        return hit[1]
    h, w = tri.shape
    owner = np.full((h, w), -1, dtype=int)
    bary = np.zeros((h, w, 3))
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    for t, (i, j, k) in enumerate(tri.triangles):
        a, b, c = tri.template[i], tri.template[j], tri.template[k]
        x0, x1 = int(np.floor(min(a[0], b[0], c[0]))), int(np.ceil(max(a[0], b[0], c[0])))
        y0, y1 = int(np.floor(min(a[1], b[1], c[1]))), int(np.ceil(max(a[1], b[1], c[1])))
        x0, y0 = max(x0, 0), max(y0, 0)
        x1, y1 = min(x1, w - 1), min(y1, h - 1)
        if x1 < x0 or y1 < y0:
            continue
        px, py = xx[y0:y1 + 1, x0:x1 + 1], yy[y0:y1 + 1, x0:x1 + 1]
        m = np.array([[b[0] - a[0], c[0] - a[0]], [b[1] - a[1], c[1] - a[1]]])
        inv = np.linalg.inv(m)
        dx, dy = px - a[0], py - a[1]
        l1 = inv[0, 0] * dx + inv[0, 1] * dy
        l2 = inv[1, 0] * dx + inv[1, 1] * dy
        l0 = 1.0 - l1 - l2
        inside = (l0 >= -1e-9) & (l1 >= -1e-9) & (l2 >= -1e-9)
        sub_owner = owner[y0:y1 + 1, x0:x1 + 1]
        take = inside & (sub_owner < 0)
        sub_owner[take] = t
        sub_bary = bary[y0:y1 + 1, x0:x1 + 1]
        sub_bary[take] = np.stack([l0[take], l1[take], l2[take]], axis=-1)
    rows, cols = np.nonzero(owner >= 0)
    wm = WarpMap(rows, cols, owner[rows, cols], bary[rows, cols])
    _WARP_CACHE[key] = (tri, wm)
    return wm


def bilinear(arr: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Bilinear samples at ``(x, y)``; neighbours outside the image count as 0."""
    h, w = arr.shape[:2]
    x0 = np.floor(x).astype(int)
    y0 = np.floor(y).astype(int)
    fx, fy = x - x0, y - y0
    out = np.zeros(x.shape + arr.shape[2:])
    for dy, wy in ((0, 1.0 - fy), (1, fy)):
        for dx, wx in ((0, 1.0 - fx), (1, fx)):
            xi, yi = x0 + dx, y0 + dy
            ok = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
            wgt = wx * wy * ok
            vals = arr[np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)]
            out += (wgt.reshape(wgt.shape + (1,) * (arr.ndim - 2))) * vals
    return out


def source_points(src, tri: Triangulation) -> np.ndarray:
    """Source-image (x, y) for every template pixel in the mesh."""
    src = _as_points(src)
    if src.shape[0] != tri.template.shape[0]:
        raise DomainError(f"shape has {src.shape[0]} points, template has {tri.template.shape[0]}")
    areas = triangle_areas(src, tri.triangles)
    bad = np.flatnonzero(np.abs(areas) < MIN_TRIANGLE_AREA)
    if bad.size:
        raise WarpError(int(bad[0]), float(areas[bad[0]]))
    wm = warp_map(tri)
    verts = src[tri.triangles[wm.triangle]]  # (n, 3, 2)
    return np.einsum("nk,nkd->nd", wm.bary, verts)


def sample_texture(img, src, tri: Triangulation) -> np.ndarray:
    """Intensities of ``img`` pulled back onto the template mesh pixels."""
    pts = source_points(src, tri)
    return bilinear(as_array(img), pts[:, 0], pts[:, 1])


def piecewise_warp(img, src, tri: Triangulation) -> Image:
    """Warp the region outlined by ``src`` onto the template image grid.

    Template pixels outside every triangle are 0.
    """
    arr = as_array(img)
    wm = warp_map(tri)
    out = np.zeros(tri.shape + arr.shape[2:])
    out[wm.rows, wm.cols] = sample_texture(arr, src, tri)
    return Image.from_clipped(out)


def texture_to_image(texture, tri: Triangulation) -> np.ndarray:
    wm = warp_map(tri)
    out = np.zeros(tri.shape)
    out[wm.rows, wm.cols] = texture
    return out


# -- appearance model ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class AppearanceModel:
    shape_model: ShapeModel
    texture_model: TextureModel
    combined: CombinedModel
    triangulation: Triangulation
    template_scale: float
    template_rotation: np.ndarray
    template_offset: np.ndarray

    @property
    def weight(self) -> float:
        return self.combined.weight

    @property
    def phi_c(self) -> np.ndarray:
        return self.combined.phi_c

    def shape_in_template(self, shape_params) -> np.ndarray:
        pts = self.shape_model.instance(shape_params)
        return self.template_scale * pts @ self.template_rotation.T + self.template_offset

    def instance(self, c):
        """Template-frame landmarks and texture for combined parameters ``c``."""
        bs, bt = self.combined.split(self.combined.reconstruct(c))
        return self.shape_in_template(bs), self.texture_model.instance(bt)

    def appearance_params(self, shape_params, texture_params) -> np.ndarray:
        return self.combined.params(self.combined.concat(shape_params, texture_params))


def build_appearance_model(images: Sequence, shapes: Sequence, tri: Triangulation,
                           fraction: float = VARIANCE_KEPT,
                           max_texture_components: Optional[int] = None) -> AppearanceModel:
    """Fit shape, texture and combined models from annotated training images."""
    if len(images) != len(shapes):
        raise DomainError(f"{len(images)} images but {len(shapes)} shapes")
    shape_model = fit_shape_model(shapes, fraction)
    scale, rot, offset = fit_similarity(shape_model.mean, tri.template)
    textures = np.array([sample_texture(to_gray_array(img), s, tri) for img, s in zip(images, shapes)])
    texture_model = fit_texture_model(textures, fraction, max_texture_components)
    aligned, _ = procrustes_align(shapes)
    bs = np.array([shape_model.params(a) for a in aligned]).reshape(len(shapes), shape_model.k)
    bt = np.array([texture_model.params(t) for t in textures]).reshape(len(shapes), texture_model.k)
    weight = balance_weight(shape_model.variances, texture_model.variances)
    combined = combine_appearance(bs, bt, weight, fraction)
    return AppearanceModel(shape_model, texture_model, combined, tri, float(scale), rot, offset)


def to_gray_array(img) -> np.ndarray:
    arr = as_array(img)
    if arr.ndim == 3:
        arr = arr @ LUMA_WEIGHTS
    return arr


# -- search -----------------------------------------------------------------------

class SearchResult(NamedTuple):
    shape: np.ndarray
    residual: float
    converged: bool
    iterations: int
    pose: np.ndarray          # (tx, ty, theta, log-scale) about the template centre
    shape_params: np.ndarray
    appearance: np.ndarray    # combined parameters c
    history: tuple            # residual after every accepted iteration


@dataclass(frozen=True)
class SearchOptions:
    rel_tol: float = 1e-4
    max_iter: int = 50
    jacobian_every: int = 5
    max_residual: float = 1e-3
    abs_tol: float = 1e-14
    halvings: int = 8
    # coarse translation scan (pixels) seeding Gauss-Newton; 0 disables it
    scan_radius: float = 12.0
    scan_step: float = 2.0
    # the scan is skipped when the initial residual is already this small
    scan_above: float = 1e-4


def _pose_points(model: AppearanceModel, pose, shape_params) -> np.ndarray:
    pts = model.shape_in_template(shape_params)
    centre = model.triangulation.template.mean(axis=0)
    tx, ty, theta, log_s = pose
    return np.exp(log_s) * (pts - centre) @ _rotation(theta).T + centre + np.array([tx, ty])


def _pose_from_shape(model: AppearanceModel, shape):
    base = model.shape_in_template(np.zeros(model.shape_model.k))
    centre = model.triangulation.template.mean(axis=0)
    scale, rot, t = fit_similarity(base - centre, shape - centre)
    theta = np.arctan2(rot[1, 0], rot[0, 0])
    return np.array([t[0], t[1], theta, np.log(scale)])


def aam_search(model: AppearanceModel, tri: Optional[Triangulation], img, init,
               options: SearchOptions = SearchOptions()) -> SearchResult:
    """Fit pose and shape so the warped texture best matches the texture model.

    Geometry is updated by damped Gauss-Newton steps on a numeric Jacobian;
    texture parameters are obtained by projection at every evaluation, so the
    residual is the part of the sampled texture the model cannot explain.
    Steps are only accepted when they lower the residual.
    """
    tri = tri or model.triangulation
    arr = to_gray_array(img)
    h, w = arr.shape
    init = _as_points(init)
    if init.shape[0] != tri.template.shape[0]:
        raise DomainError(f"init has {init.shape[0]} points, template has {tri.template.shape[0]}")
    if (init[:, 0].min() < 0 or init[:, 1].min() < 0
            or init[:, 0].max() > w - 1 or init[:, 1].max() > h - 1):
        raise DomainError("initial shape lies outside the image")

    tm = model.texture_model
    ks = model.shape_model.k
    sd = np.sqrt(np.maximum(model.shape_model.variances, 0.0))
    base_steps = np.concatenate([[0.5, 0.5, 0.01, 0.01], 0.25 * sd])

    def evaluate(theta):
        pose, bs = theta[:4], theta[4:]
        pts = _pose_points(model, pose, bs)
        try:
            g = sample_texture(arr, pts, tri)
        except WarpError:
            return None, np.inf, pts
        bt = tm.params(g)
        r = g - tm.instance(bt)
        return r, float(np.mean(r * r)), pts

    def jacobian(theta):
        cols = []
        for i, step in enumerate(base_steps):
            if step <= 0:
                cols.append(np.zeros_like(r0))
                continue
            tp, tm_ = theta.copy(), theta.copy()
            tp[i] += step
            tm_[i] -= step
            rp, _, _ = evaluate(tp)
            rm, _, _ = evaluate(tm_)
            if rp is None or rm is None:
                cols.append(np.zeros_like(r0))
            else:
                cols.append((rp - rm) / (2 * step))
        return np.stack(cols, axis=1)

    theta = np.concatenate([_pose_from_shape(model, init), np.zeros(ks)])
    r0, err, pts = evaluate(theta)
    if r0 is None:
        raise DomainError("initial shape is degenerate")
    if options.scan_radius > 0 and err > max(options.scan_above, options.abs_tol):
        offsets = np.arange(-options.scan_radius, options.scan_radius + 1e-9, options.scan_step)
        best = (err, theta, r0, pts)
        for dy in offsets:
            for dx in offsets:
                cand = theta.copy()
                cand[0] += dx
                cand[1] += dy
                r_c, e_c, p_c = evaluate(cand)
                if r_c is not None and e_c < best[0]:
                    best = (e_c, cand, r_c, p_c)
        err, theta, r0, pts = best
    history = [err]
    converged = err <= options.abs_tol
    degenerate = False
    iterations = 0
    jac = None
    jac_age = options.jacobian_every
    while not converged and iterations < options.max_iter:
        if jac is None or jac_age >= options.jacobian_every:
            jac = jacobian(theta)
            jac_age = 0
            if not np.any(jac):
                degenerate = True
                break
        delta, *_ = np.linalg.lstsq(jac, -r0, rcond=None)
        alpha, accepted = 1.0, False
        for _ in range(options.halvings):
            cand = theta + alpha * delta
            r_new, e_new, p_new = evaluate(cand)
            if r_new is not None and e_new < err:
                accepted = True
                break
            alpha *= 0.5
        iterations += 1
        jac_age += 1
        if not accepted:
            if jac_age == 1:
                break  # fresh Jacobian and still no descent: local minimum
            jac = None
            continue
        improvement = (err - e_new) / err if err > 0 else 0.0
        theta, r0, err, pts = cand, r_new, e_new, p_new
        history.append(err)
        if err <= options.abs_tol or improvement < options.rel_tol:
            converged = True
    if not degenerate and not converged and iterations < options.max_iter:
        converged = True  # stopped at a local minimum before the iteration cap
    ok = bool(converged and not degenerate and err <= options.max_residual)
    bs = theta[4:]
    g = sample_texture(arr, pts, tri)
    c = model.appearance_params(bs, tm.params(g))
    return SearchResult(pts, err, ok, iterations, theta[:4].copy(), bs.copy(), c, tuple(history))


def register(model: AppearanceModel, img, init=None, options: SearchOptions = SearchOptions()):
    """Locate the nail and warp it to the template; returns ``(warped, result)``."""
    tri = model.triangulation
    if init is None:
        init = tri.template
    res = aam_search(model, tri, img, init, options)
    return piecewise_warp(to_gray_array(img), res.shape, tri), res


# -- persistence --------------------------------------------------------------------

def _lists(arr):
    return np.asarray(arr, dtype=np.float64).tolist()


def model_to_dict(model: AppearanceModel) -> dict:
    sm, tm, cm, tri = model.shape_model, model.texture_model, model.combined, model.triangulation
    return {
        "schema": SCHEMA,
        "version": SCHEMA_VERSION,
        "shape": {"mean": _lists(sm.mean), "components": _lists(sm.components),
                  "variances": _lists(sm.variances)},
        "texture": {"mean": _lists(tm.mean), "components": _lists(tm.components),
                    "variances": _lists(tm.variances)},
        "combined": {"phi_c": _lists(cm.phi_c), "variances": _lists(cm.variances),
                     "weight": cm.weight, "n_shape": cm.n_shape},
        "template": {"landmarks": _lists(tri.template),
                     "triangles": np.asarray(tri.triangles).tolist(),
                     "height": tri.shape[0], "width": tri.shape[1]},
        "template_pose": {"scale": model.template_scale, "rotation": _lists(model.template_rotation),
                          "offset": _lists(model.template_offset)},
    }


def model_from_dict(doc: dict) -> AppearanceModel:
    if doc.get("schema") != SCHEMA or doc.get("version") != SCHEMA_VERSION:
        raise FormatError("not a version-1 appearance model document")
    s, t, c, tp = doc["shape"], doc["texture"], doc["combined"], doc["template"]
    npts = len(s["mean"])
    sm = ShapeModel(np.array(s["mean"]).reshape(npts, 2),
                    np.array(s["components"], dtype=np.float64).reshape(len(s["variances"]), 2 * npts),
                    np.array(s["variances"], dtype=np.float64))
    tex_mean = np.array(t["mean"], dtype=np.float64)
    tm = TextureModel(tex_mean,
                      np.array(t["components"], dtype=np.float64).reshape(len(t["variances"]), tex_mean.size),
                      np.array(t["variances"], dtype=np.float64))
    cm = CombinedModel(np.array(c["phi_c"], dtype=np.float64).reshape(sm.k + tm.k, len(c["variances"])),
                       np.array(c["variances"], dtype=np.float64), float(c["weight"]), int(c["n_shape"]))
    tri = Triangulation(np.array(tp["landmarks"], dtype=np.float64),
                        np.array(tp["triangles"], dtype=int), (int(tp["height"]), int(tp["width"])))
    pose = doc["template_pose"]
    return AppearanceModel(sm, tm, cm, tri, float(pose["scale"]), np.array(pose["rotation"]),
                           np.array(pose["offset"]))


def save_model(model: AppearanceModel, path) -> None:
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_model(path) -> AppearanceModel:
    with open(path) as fh:
        return model_from_dict(json.load(fh))


def write_landmarks_csv(shape, path) -> None:
    pts = _as_points(shape)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["point", "x", "y"])
        for i, (x, y) in enumerate(pts):
            wr.writerow([i, repr(float(x)), repr(float(y))])


def read_landmarks_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = sorted(csv.DictReader(fh), key=lambda r: int(r["point"]))
    return np.array([[float(r["x"]), float(r["y"])] for r in rows])
