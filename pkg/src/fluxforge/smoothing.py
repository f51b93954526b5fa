"""Smoothing of normal-trace data on the faces of a cubic decomposition.

Every face is sampled once on a tensor midpoint grid (shared by the two
cubes meeting there). The trace is cut off near the face boundary, the lost
integral is put back through a fixed bump in the middle of the face, and the
result is mollified. Integrals are preserved up to rounding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.sparse import coo_matrix
from scipy.sparse.linalg import spsolve

from .decomposition import BAD, NON_INTEGRAL, CubeRecord, CubicMesh
from .field import Cube, VectorField, WeightedMeasure, face_nodes

MIN_BAND = 3
MIN_NODES = 12

FaceId = tuple  # (axis, plane index, tangential cube index tuple)


class FaceTooCoarseError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class FaceData:
    face: FaceId
    samples: np.ndarray
    weight: float
    info: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        s = np.ascontiguousarray(np.asarray(self.samples, dtype=float))
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)
        object.__setattr__(self, "integral", float(np.sum(s)) * self.weight)

    @property
    def M(self) -> int:
        return self.samples.shape[0]

    def lp(self, p: float) -> float:
        return float(np.sum(np.abs(self.samples) ** p) * self.weight) ** (1 / p)


def ring_index(M: int, k: int) -> np.ndarray:
    """Distance (in nodes) from the face boundary, shape (M,)*k."""
    i = np.arange(M)
    d1 = np.minimum(i, M - 1 - i)
    if k == 0:
        return np.zeros(())
    grids = np.meshgrid(*([d1] * k), indexing="ij")
    return np.minimum.reduce(grids)


def bump(M: int, k: int, weight: float) -> np.ndarray:
    """Tensor (1 + cos 2 pi t) window on the middle half, quadrature sum exactly ~1."""
    u = (np.arange(M) + 0.5) / M
    t = 2 * (u - 0.5)
    w1 = np.where(np.abs(t) < 0.5, 1 + np.cos(2 * math.pi * t), 0.0)
    psi = np.ones(())
    for _ in range(k):
        psi = np.multiply.outer(psi, w1)
    return psi / (np.sum(psi) * weight)


def mollifier(radius: float, k: int) -> np.ndarray:
    """Discrete standard bump exp(-1/(1-|x|^2)) with support |offset| < radius."""
    reach = int(math.ceil(radius)) - 1 if radius > 1 else 0
    offsets = np.arange(-reach, reach + 1)
    grids = np.meshgrid(*([offsets] * k), indexing="ij")
    r2 = sum(g.astype(float) ** 2 for g in grids) / radius ** 2
    ker = np.where(r2 < 1, np.exp(-1.0 / np.maximum(1 - r2, 1e-300)), 0.0)
    return ker / ker.sum()


def _lp(arr: np.ndarray, weight: float, p: float) -> float:
    return float(np.sum(np.abs(arr) ** p) * weight) ** (1 / p)


def band_candidates(M: int) -> list[int]:
    bands = []
    b = M // 4
    while b > MIN_BAND:
        bands.append(b)
        b //= 2
    bands.append(MIN_BAND)
    return bands


def minimal_budget(g: FaceData, p: float = 2.0) -> float:
    """Smallest delta for which the thinnest admissible band passes the mass test."""
    M, k = g.M, g.samples.ndim
    ring = ring_index(M, k)
    removed = np.where(ring < MIN_BAND, g.samples, 0.0)
    s = float(np.sum(removed)) * g.weight
    psi_norm = _lp(bump(M, k, g.weight), g.weight, p)
    return max(_lp(removed, g.weight, p), abs(s) * psi_norm)


def smooth_face(g: FaceData, delta: float, p: float = 2.0) -> FaceData:
    if delta <= 0:
        raise ValueError("delta must be positive")
    M, k = g.M, g.samples.ndim
    if M < MIN_NODES:
        raise FaceTooCoarseError(f"face too coarse: {M} nodes per side, need {MIN_NODES}")
    w = g.weight
    x = g.samples
    ring = ring_index(M, k)
    psi = bump(M, k, w)
    psi_norm = _lp(psi, w, p)

    chosen = None
    for band in band_candidates(M):
        removed = np.where(ring < band, x, 0.0)
        s = float(np.sum(removed)) * w
        if _lp(removed, w, p) <= delta and abs(s) * psi_norm <= delta:
            chosen = band, s
            break
    if chosen is None:
        raise FaceTooCoarseError(
            f"face too coarse: no margin of >= {MIN_BAND} rings keeps the discarded mass below {delta:g}")
    band, s = chosen
    cut = np.where(ring < band, 0.0, x) + s * psi

    radius = 0.999 * band / 2
    out = cut
    while radius > 1.0 + 1e-3:
        ker = mollifier(radius, k)
        trial = ndimage.convolve(cut, ker, mode="constant", cval=0.0)
        if _lp(trial - cut, w, p) <= delta:
            out = trial
            break
        radius = 1.0 + (radius - 1.0) / 2
    else:
        radius = 1.0
    info = {"band": band, "mollifier_radius": radius, "reinserted": s, "delta": delta}
    return FaceData(g.face, out, w, info)


# ---------------------------------------------------------------------------
# skeleton bookkeeping


def face_cube(mesh: CubicMesh, face: FaceId) -> Cube:
    """Degenerate box describing a face; tangential edges shared with neighbours."""
    axis, plane, tang = face
    lo, hi = [], []
    t = iter(tang)
    for k in range(mesh.dim):
        e = mesh.edges(k)
        if k == axis:
            lo.append(float(e[plane]))
            hi.append(float(e[plane]))
        else:
            i = next(t)
            lo.append(float(e[i]))
            hi.append(float(e[i + 1]))
    return Cube(tuple(lo), tuple(hi))


def cube_faces(index: tuple[int, ...]) -> list[tuple[FaceId, float]]:
    """The 2n faces of a cube as (face id, outward sign relative to +e_axis)."""
    out = []
    for axis in range(len(index)):
        tang = tuple(i for j, i in enumerate(index) if j != axis)
        out.append(((axis, index[axis], tang), -1.0))
        out.append(((axis, index[axis] + 1, tang), 1.0))
    return out


def all_faces(mesh: CubicMesh) -> list[FaceId]:
    K, n = mesh.per_axis, mesh.dim
    faces = []
    for axis in range(n):
        for plane in range(K + 1):
            for tang in np.ndindex(*([K] * (n - 1))):
                faces.append((axis, plane, tuple(int(v) for v in tang)))
    return faces


def sample_face(V: VectorField, mesh: CubicMesh, face: FaceId, M: int) -> FaceData:
    axis = face[0]
    box = face_cube(mesh, face)
    pts, w = face_nodes(box, axis, False, M)
    vals = V.evaluate(pts)[:, axis].reshape((M,) * (mesh.dim - 1))
    return FaceData(face, vals, w)


def cube_flux(faces: dict, index: tuple[int, ...]) -> float:
    return float(sum(sign * faces[f].integral for f, sign in cube_faces(index)))


@dataclass(frozen=True, eq=False)
class SkeletonData:
    mesh: CubicMesh
    raw: dict
    faces: dict
    deviation: float
    widened: int
    M: int
    balance: dict = field(default_factory=dict)


def smooth_skeleton(
    V: VectorField, mesh: CubicMesh, records: list[CubeRecord], delta: float,
    M: int = 32, p: float = 2.0, mu: WeightedMeasure | None = None,
    widen: bool = False, executor=None,
) -> SkeletonData:
    """Sample and smooth every face once.

    With ``widen`` the per-face budget is raised to the smallest admissible
    value at this quadrature resolution instead of failing.
    """
    mu = mu or WeightedMeasure(0.0)
    face_ids = all_faces(mesh)

    def work(face):
        g = sample_face(V, mesh, face, M)
        d = delta
        widened = False
        if widen:
            need = minimal_budget(g, p) * (1 + 1e-9)
            if need > d:
                d, widened = need, True
        return g, smooth_face(g, d, p), widened

    results = list(executor.map(work, face_ids)) if executor is not None else [work(f) for f in face_ids]
    raw = {f: r[0] for f, r in zip(face_ids, results)}
    smooth = {f: r[1] for f, r in zip(face_ids, results)}
    widened = sum(r[2] for r in results)

    dev = 0.0
    for rec in records:
        fc = float(mu.density(np.asarray(rec.center)[None, :])[0])
        for f, _ in cube_faces(rec.index):
            diff = smooth[f].samples - raw[f].samples
            dev += float(np.sum(np.abs(diff) ** p)) * raw[f].weight * fc
    return SkeletonData(mesh, raw, smooth, dev, widened, M)


def balance_fluxes(skeleton: SkeletonData, records: list[CubeRecord], force_round: bool = False) -> SkeletonData:
    """Add bump multiples to faces so each cube flux equals its integer degree.

    Per-cube defects (quadrature error, at most the classification tolerance)
    are routed to the outside of the mesh through the face graph by the
    minimum-norm correction, a grounded graph-Laplacian solve.
    """
    mesh = skeleton.mesh
    faces = skeleton.faces
    face_ids = list(faces)
    fpos = {f: i for i, f in enumerate(face_ids)}
    ncubes = mesh.count
    rows, cols, vals = [], [], []
    defect = np.zeros(ncubes)
    for rec in records:
        if rec.cls == NON_INTEGRAL and not force_round:
            raise ValueError(f"cube {rec.index} has non-integral flux {rec.flux:.6g}")
        c = mesh.flat_index(rec.index)
        target = rec.degree if rec.cls in (BAD, NON_INTEGRAL) else 0
        defect[c] = cube_flux(faces, rec.index) - target
        for f, sign in cube_faces(rec.index):
            rows.append(c)
            cols.append(fpos[f])
            vals.append(sign)
    B = coo_matrix((vals, (rows, cols)), shape=(ncubes, len(face_ids))).tocsr()
    L = (B @ B.T).tocsc()
    lam = spsolve(L, -defect)
    corr = B.T @ lam

    M, k = skeleton.M, mesh.dim - 1
    out = {}
    for f, g in faces.items():
        c = corr[fpos[f]]
        if c == 0.0:
            out[f] = g
        else:
            out[f] = FaceData(f, g.samples + c * bump(M, k, g.weight), g.weight,
                              {**g.info, "balance": float(c)})
    info = {"max_defect": float(np.max(np.abs(defect))) if ncubes else 0.0,
            "max_correction": float(np.max(np.abs(corr))) if corr.size else 0.0}
    return SkeletonData(mesh, skeleton.raw, out, skeleton.deviation, skeleton.widened, M, info)
