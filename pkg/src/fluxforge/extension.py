"""Divergence-free extensions of boundary data into a single cube.

Good cubes (zero net flux): minimise the regularised p'-energy
    (1/p') sum (|grad u|^2 + reg^2)^{p'/2} - int_{dQ} f u
over multilinear (Q1) functions on an m^n element grid, take
V = (|grad u|^2 + reg^2)^{(p'-2)/2} grad u, then equilibrate the element
fluxes into a lowest-order Raviart-Thomas field that is exactly
divergence-free with normal trace equal to the piecewise-constant datum.

Bad cubes: the explicit radial extension
    V(x) = (eps/2)^{n-1} f(c + (eps/2)(x - c)/r) (x - c)/r^n,  r = |x - c|_inf,
whose divergence is (int f) delta_c.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations_with_replacement

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import factorized

from .field import Cube, face_nodes

GAUSS = np.array([0.5 - 0.5 / math.sqrt(3.0), 0.5 + 0.5 / math.sqrt(3.0)])


class IncompatibleDatumError(ValueError):
    pass


class SingularityError(ValueError):
    pass


class NotIntegrableError(ValueError):
    pass


def dual_exponent(p: float, n: int) -> float:
    """p' = p/(p-1); for p = 1 the fixed substitute s = n + 1 > n."""
    if p < 1:
        raise ValueError("p must be >= 1")
    if p == 1:
        return float(n + 1)
    return p / (p - 1)


@dataclass(frozen=True, eq=False)
class NeumannProblem:
    """Outward normal datum on the 2n faces of ``cube``.

    ``datum`` has shape (n, 2) + (m,)*(n-1): [axis, low/high, face cells],
    constant on each of the m^(n-1) cells of a face.
    """

    cube: Cube
    datum: np.ndarray
    p: float
    index: tuple = ()

    @property
    def dim(self) -> int:
        return self.cube.dim

    @property
    def m(self) -> int:
        return self.datum.shape[2]

    @property
    def p_prime(self) -> float:
        return dual_exponent(self.p, self.dim)

    @property
    def cell_area(self) -> float:
        return (self.cube.side / self.m) ** (self.dim - 1)

    def net_flux(self) -> float:
        return float(np.sum(self.datum)) * self.cell_area

    def l1(self) -> float:
        return float(np.sum(np.abs(self.datum))) * self.cell_area

    def check_compatible(self, tol: float = 1e-12) -> None:
        if abs(self.net_flux()) > tol * max(1.0, self.l1()):
            raise IncompatibleDatumError(
                f"boundary datum has net flux {self.net_flux():.3e}; the Neumann problem needs 0")


@dataclass(frozen=True, eq=False)
class ExtensionResult:
    index: tuple
    cube: Cube
    face_fluxes: tuple  # n arrays, axis k has shape m+1 along k and m elsewhere
    gauss_field: np.ndarray  # raw solver field at Gauss points, (n, P)
    energy: float
    iterations: int
    converged: bool
    residuals: dict = field(default_factory=dict)
    energy_trace: tuple = ()

    @property
    def m(self) -> int:
        return self.face_fluxes[0].shape[1] if self.cube.dim > 1 else self.face_fluxes[0].shape[0] - 1

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        return rt0_evaluate(self.cube, self.face_fluxes, points)

    def diagnostics(self) -> dict:
        return {"index": list(self.index), "energy": self.energy, "iterations": self.iterations,
                "converged": self.converged, **self.residuals}


# ---------------------------------------------------------------------------
# Q1 operators


@lru_cache(maxsize=16)
def _unit_operators(n: int, m: int):
    """Gradient (per unit element size) at 2x..x2 Gauss points, and node trace maps."""
    e = np.arange(m)
    # interpolation: value at Gauss point g of element e
    r_int = np.concatenate([2 * e, 2 * e + 1, 2 * e, 2 * e + 1])
    c_int = np.concatenate([e, e, e + 1, e + 1])
    v_int = np.concatenate([1 - GAUSS[0] + 0 * e, 1 - GAUSS[1] + 0 * e, GAUSS[0] + 0 * e, GAUSS[1] + 0 * e])
    interp = sp.csr_matrix((v_int, (r_int, c_int)), shape=(2 * m, m + 1))
    v_der = np.concatenate([-np.ones(2 * m), np.ones(2 * m)])
    deriv = sp.csr_matrix((v_der, (r_int, c_int)), shape=(2 * m, m + 1))
    grads = []
    for k in range(n):
        mat = sp.csr_matrix(np.ones((1, 1)))
        for j in range(n):
            mat = sp.kron(mat, deriv if j == k else interp, format="csr")
        grads.append(mat)
    avg = sp.csr_matrix((np.full(2 * m, 0.5), (np.repeat(e, 2), np.stack([e, e + 1], 1).ravel())),
                        shape=(m, m + 1))
    face_avg = sp.csr_matrix(np.ones((1, 1)))
    for _ in range(n - 1):
        face_avg = sp.kron(face_avg, avg, format="csr")
    return tuple(grads), face_avg


@lru_cache(maxsize=16)
def _stiffness_solver(n: int, m: int):
    """Factorisation of the unit Q1 stiffness with node 0 pinned."""
    grads, _ = _unit_operators(n, m)
    K = sum(G.T @ G for G in grads)
    return factorized(sp.csc_matrix(K[1:, 1:]))


@lru_cache(maxsize=16)
def _cell_laplacian_solver(n: int, m: int):
    """Two-point graph Laplacian on m^n cells, cell 0 pinned."""
    path = sp.diags([-np.ones(m - 1), np.r_[1.0, 2 * np.ones(m - 2), 1.0] if m > 1 else np.zeros(1),
                     -np.ones(m - 1)], [-1, 0, 1], format="csr")
    eye = sp.identity(m, format="csr")
    lap = None
    for k in range(n):
        mat = sp.csr_matrix(np.ones((1, 1)))
        for j in range(n):
            mat = sp.kron(mat, path if j == k else eye, format="csr")
        lap = mat if lap is None else lap + mat
    return factorized(sp.csc_matrix(lap[1:, 1:]))


def gauss_axis_points(lo: float, h: float, m: int) -> np.ndarray:
    e = np.arange(m)
    return (lo + h * (e[:, None] + GAUSS[None, :])).ravel()


def gauss_points(cube: Cube, m: int) -> np.ndarray:
    """Global Gauss points, (P, n), ordered to match the gradient operators."""
    h = cube.side / m
    axes = [gauss_axis_points(cube.lo[k], h, m) for k in range(cube.dim)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, cube.dim)


def load_vector(problem: NeumannProblem) -> np.ndarray:
    n, m = problem.dim, problem.m
    _, face_avg = _unit_operators(n, m)
    b = np.zeros((m + 1,) * n)
    area = problem.cell_area
    for k in range(n):
        for s, plane in enumerate((0, m)):
            load = face_avg.T @ (problem.datum[k, s].ravel() * area)
            idx = [slice(None)] * n
            idx[k] = plane
            b[tuple(idx)] += load.reshape((m + 1,) * (n - 1))
    return b.ravel()


class _Energy:
    def __init__(self, problem: NeumannProblem, reg: float):
        n, m = problem.dim, problem.m
        self.h = problem.cube.side / m
        unit, _ = _unit_operators(n, m)
        self.grads = [G / self.h for G in unit]
        self.w = (self.h / 2) ** n
        self.b = load_vector(problem)
        self.pp = problem.p_prime
        self.reg = reg

    def gradients(self, u: np.ndarray) -> np.ndarray:
        return np.stack([G @ u for G in self.grads])

    def value(self, u: np.ndarray) -> float:
        g = self.gradients(u)
        s = np.sum(g * g, axis=0) + self.reg ** 2
        dens = (s ** (self.pp / 2) - self.reg ** self.pp) / self.pp
        return float(self.w * np.sum(dens) - self.b @ u)

    def flux(self, g: np.ndarray) -> np.ndarray:
        s = np.sum(g * g, axis=0) + self.reg ** 2
        return s ** ((self.pp - 2) / 2) * g

    def gradient(self, u: np.ndarray) -> np.ndarray:
        V = self.flux(self.gradients(u))
        return sum(G.T @ (self.w * V[k]) for k, G in enumerate(self.grads)) - self.b

    def hessian(self, u: np.ndarray) -> sp.csr_matrix:
        g = self.gradients(u)
        s = np.sum(g * g, axis=0) + self.reg ** 2
        a = s ** ((self.pp - 2) / 2)
        c = (self.pp - 2) * s ** ((self.pp - 4) / 2)
        H = None
        n = len(self.grads)
        for k in range(n):
            for l in range(n):
                coef = c * g[k] * g[l]
                if k == l:
                    coef = coef + a
                term = self.grads[k].T @ sp.diags(self.w * coef) @ self.grads[l]
                H = term if H is None else H + term
        return H.tocsc()


def _solve_pinned(H: sp.csc_matrix, rhs: np.ndarray) -> np.ndarray:
    from scipy.sparse.linalg import spsolve

    d = np.zeros_like(rhs)
    d[1:] = spsolve(H[1:, 1:], rhs[1:])
    return d


def _local_polys(n: int) -> list[tuple[int, ...]]:
    """Non-constant monomials of degree <= 2, as tuples of axis indices."""
    return [(k,) for k in range(n)] + list(combinations_with_replacement(range(n), 2))


def _poly_eval(mono: tuple, xi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    val = np.ones(xi.shape[0])
    for k in mono:
        val = val * xi[:, k]
    grad = np.zeros_like(xi)
    for pos, k in enumerate(mono):
        rest = np.ones(xi.shape[0])
        for q, j in enumerate(mono):
            if q != pos:
                rest = rest * xi[:, j]
        grad[:, k] += rest
    return val, grad


def face_gauss(cube: Cube, m: int):
    """Per face: Gauss points (m^(n-1)*2^(n-1), n) grouped by face cell, and weight."""
    n = cube.dim
    h = cube.side / m
    out = {}
    for k in range(n):
        for s in range(2):
            axes = []
            for j in range(n):
                if j == k:
                    axes.append(np.array([cube.hi[k] if s else cube.lo[k]]))
                else:
                    axes.append(gauss_axis_points(cube.lo[j], h, m))
            pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
            out[(k, s)] = pts
    return out, (h / 2) ** (n - 1)


def _face_cell_of_gauss(m: int, n: int) -> np.ndarray:
    """Map face Gauss points (ordered like face_gauss) to flat face-cell indices."""
    e = np.repeat(np.arange(m), 2)
    grids = np.meshgrid(*([e] * (n - 1)), indexing="ij")
    if n == 1:
        return np.zeros(1, dtype=int)
    return np.ravel_multi_index(tuple(g.ravel() for g in grids), (m,) * (n - 1))


def weak_residual(cube: Cube, datum: np.ndarray, points: np.ndarray, V: np.ndarray, weight: float) -> float:
    """max over degree <= 2 polynomials of |int V.grad phi - int_{dQ} f phi|, normalised.

    ``V`` has shape (n, P) at ``points``; the interior integral uses ``weight``.
    Normalisation: ||f||_{L1(dQ)} * sup_Q |phi|.
    """
    n = cube.dim
    m = datum.shape[2]
    c, eps = cube.center, cube.side
    fg, fw = face_gauss(cube, m)
    cell = _face_cell_of_gauss(m, n)
    area = (eps / m) ** (n - 1)
    l1 = float(np.sum(np.abs(datum))) * area
    if l1 == 0.0:
        return 0.0
    xi = (points - c) / eps
    worst = 0.0
    for mono in _local_polys(n):
        _, grad = _poly_eval(mono, xi)
        interior = weight * float(np.sum(V.T * grad) / eps)
        bnd = 0.0
        for (k, s), pts in fg.items():
            val, _ = _poly_eval(mono, (pts - c) / eps)
            bnd += float(np.sum(datum[k, s].ravel()[cell] * val)) * fw
        sup = 0.5 ** len(mono)
        worst = max(worst, abs(interior - bnd) / (l1 * sup))
    return worst


def _rt0_from_cells(Vc: np.ndarray, datum: np.ndarray, h: float) -> tuple[list[np.ndarray], float]:
    """Face fluxes from cell fields, equilibrated to zero divergence per cell."""
    n = Vc.shape[0]
    m = Vc.shape[1]
    faces = []
    for k in range(n):
        shape = list(Vc.shape[1:])
        shape[k] = m + 1
        F = np.zeros(shape)
        lo = [slice(None)] * n
        hi = [slice(None)] * n
        mid = [slice(None)] * n
        lo[k], hi[k], mid[k] = slice(0, m - 1), slice(1, m), slice(1, m)
        F[tuple(mid)] = 0.5 * (Vc[k][tuple(lo)] + Vc[k][tuple(hi)])
        first = [slice(None)] * n
        last = [slice(None)] * n
        first[k], last[k] = 0, m
        F[tuple(first)] = -datum[k, 0]
        F[tuple(last)] = datum[k, 1]
        faces.append(F)
    div = _cell_divergence(faces, h)
    solve = _cell_laplacian_solver(n, m)
    psi = np.zeros(m ** n)
    psi[1:] = solve(-div.ravel()[1:] / h ** (n - 2))
    psi = psi.reshape((m,) * n)
    before = [F.copy() for F in faces]
    for k in range(n):
        inner = [slice(None)] * n
        inner[k] = slice(1, m)
        lo = [slice(None)] * n
        hi = [slice(None)] * n
        lo[k], hi[k] = slice(0, m - 1), slice(1, m)
        faces[k][tuple(inner)] -= (psi[tuple(hi)] - psi[tuple(lo)]) / h
    change = sum(float(np.sum((F - B) ** 2)) for F, B in zip(faces, before))
    scale = sum(float(np.sum(B ** 2)) for B in before)
    return faces, math.sqrt(change / scale) if scale > 0 else 0.0


def _cell_divergence(faces: list[np.ndarray], h: float) -> np.ndarray:
    n = len(faces)
    div = 0.0
    for k, F in enumerate(faces):
        m1 = F.shape[k]
        a = [slice(None)] * n
        b = [slice(None)] * n
        a[k], b[k] = slice(1, m1), slice(0, m1 - 1)
        div = div + (F[tuple(a)] - F[tuple(b)])
    return div * h ** (n - 1)


def rt0_evaluate(cube: Cube, faces, points: np.ndarray) -> np.ndarray:
    """Lowest-order Raviart-Thomas reconstruction at points (P, n) inside ``cube``."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    n = cube.dim
    m = faces[0].shape[1] if n > 1 else faces[0].shape[0] - 1
    t = (pts - np.asarray(cube.lo)) / cube.side * m
    idx = np.clip(np.floor(t).astype(int), 0, m - 1)
    frac = t - idx
    out = np.empty(pts.shape)
    for k in range(n):
        lo_idx = tuple(idx[:, j] for j in range(n))
        hi_idx = tuple(idx[:, j] + (1 if j == k else 0) for j in range(n))
        out[:, k] = (1 - frac[:, k]) * faces[k][lo_idx] + frac[:, k] * faces[k][hi_idx]
    return out


def rt0_divergence(cube: Cube, faces) -> np.ndarray:
    return _cell_divergence(list(faces), cube.side / faces[0].shape[1])


def extend_good(
    problem: NeumannProblem, reg: float | None = None, max_iter: int = 100, tol: float = 1e-10,
    method: str = "auto",
) -> ExtensionResult:
    """Solve the discrete Neumann problem on one cube.

    method: "auto" (direct solve when p' = 2, damped Newton otherwise) or
    "iterative" (always damped Newton with Armijo backtracking).
    """
    problem.check_compatible()
    n, m = problem.dim, problem.m
    if n < 2:
        raise ValueError("cube extension needs n >= 2")
    fmax = float(np.max(np.abs(problem.datum)))
    if reg is None:
        reg = 1e-6 * fmax if fmax > 0 else 1e-6
    if reg <= 0:
        raise ValueError("reg must be positive")
    en = _Energy(problem, reg)
    nodes = (m + 1) ** n
    u = np.zeros(nodes)
    trace = [0.0]
    iterations = 0
    converged = True
    bnorm = float(np.max(np.abs(en.b)))
    if bnorm > 0:
        if problem.p_prime == 2.0 and method == "auto":
            solve = _stiffness_solver(n, m)
            u[1:] = solve(en.b[1:] * 2 ** n / en.h ** (n - 2))
            iterations = 1
            trace.append(en.value(u))
        else:
            converged = False
            E = en.value(u)
            for it in range(1, max_iter + 1):
                grad = en.gradient(u)
                if np.max(np.abs(grad)) <= tol * bnorm:
                    converged = True
                    iterations = it - 1
                    break
                d = _solve_pinned(en.hessian(u), -grad)
                slope = float(grad @ d)
                if slope >= 0:
                    d, slope = -grad, -float(grad @ grad)
                t = 1.0
                while True:
                    trial = u + t * d
                    Et = en.value(trial)
                    if Et <= E + 1e-4 * t * slope:
                        break
                    t *= 0.5
                    if t < 1e-12:
                        break
                if Et > E:
                    iterations = it
                    break
                stalled = abs(E - Et) <= 1e-15 * max(1.0, abs(E))
                u, E = trial, Et
                trace.append(E)
                iterations = it
                if stalled:
                    g2 = en.gradient(u)
                    converged = bool(np.max(np.abs(g2)) <= 1e3 * tol * bnorm)
                    break
            else:
                converged = bool(np.max(np.abs(en.gradient(u))) <= tol * bnorm)
    u -= u.mean()
    g = en.gradients(u)
    V = en.flux(g)
    energy = en.value(u)

    # consistent boundary flux mismatch
    r = sum(G.T @ (en.w * V[k]) for k, G in enumerate(en.grads)) - en.b
    r = r.reshape((m + 1,) * n)
    interior = tuple(slice(1, m) for _ in range(n))
    mask = np.ones(r.shape, dtype=bool)
    mask[interior] = False
    denom = float(np.sum(np.abs(en.b))) or 1.0
    neumann = float(np.sum(np.abs(r[mask]))) / denom

    pts = gauss_points(problem.cube, m)
    raw_resid = weak_residual(problem.cube, problem.datum, pts, V, en.w)
    cells = V.reshape((n,) + tuple(x for _ in range(n) for x in (m, 2)))
    Vc = cells.mean(axis=tuple(2 + 2 * k for k in range(n)))
    faces, correction = _rt0_from_cells(Vc, problem.datum, en.h)
    Vrt = rt0_evaluate(problem.cube, faces, pts).T
    final_resid = weak_residual(problem.cube, problem.datum, pts, Vrt, en.w)

    p = problem.p
    bnd_p = float(np.sum(np.abs(problem.datum) ** p)) * problem.cell_area
    int_p = en.w * float(np.sum(np.sqrt(np.sum(V * V, axis=0)) ** p))
    residuals = {
        "divergence_residual": raw_resid,
        "neumann_mismatch": neumann,
        "equilibrated_residual": final_resid,
        "equilibration_change": correction,
        "max_cell_divergence": float(np.max(np.abs(rt0_divergence(problem.cube, faces)))),
        "lp_interior": int_p,
        "lp_boundary": bnd_p,
        "constant_ratio": int_p / bnd_p if bnd_p > 0 else 0.0,
        "reg": reg,
        "p_prime": problem.p_prime,
    }
    return ExtensionResult(problem.index, problem.cube, tuple(faces), V, energy, iterations,
                           converged, residuals, tuple(trace))


# ---------------------------------------------------------------------------
# bad cubes


def datum_lookup(cube: Cube, datum: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Piecewise-constant datum at boundary points y (P, n) of ``cube``."""
    n = cube.dim
    M = datum.shape[2]
    rel = y - cube.center
    axis = np.argmax(np.abs(rel), axis=1)
    side = (rel[np.arange(len(y)), axis] > 0).astype(int)
    t = np.clip(np.floor((y - np.asarray(cube.lo)) / cube.side * M).astype(int), 0, M - 1)
    out = np.empty(len(y))
    for k in range(n):
        sel = axis == k
        if not np.any(sel):
            continue
        for s in range(2):
            ss = sel.copy()
            ss[sel] = side[sel] == s
            if not np.any(ss):
                continue
            tang_s = tuple(t[ss, j] for j in range(n) if j != k)
            out[ss] = datum[k, s][tang_s] if tang_s else datum[k, s]
    return out


def evaluate_bad(cube: Cube, datum: np.ndarray, points: np.ndarray) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    n = cube.dim
    c = cube.center
    half = cube.side / 2
    rel = pts - c
    r = np.max(np.abs(rel), axis=1)
    if np.any(r == 0):
        raise SingularityError("evaluation at singularity")
    proj = c + half * rel / r[:, None]
    f = datum_lookup(cube, datum, proj)
    return (half ** (n - 1) * f / r ** n)[:, None] * rel


def extend_bad(cube: Cube, datum: np.ndarray, x, p: float | None = None) -> np.ndarray:
    """Radial extension at a single point; ``p`` (optional) checks integrability."""
    n = cube.dim
    if p is not None and (n - 1) * (p - 1) >= 1:
        raise NotIntegrableError("extension not p-integrable")
    x = np.asarray(x, dtype=float)
    if np.all(x == cube.center):
        raise SingularityError("evaluation at singularity")
    return evaluate_bad(cube, datum, x[None, :])[0]


def bad_cube_constant(n: int, p: float) -> float:
    """C(n,p) = sqrt(n)^p / 2^{(n-1)(p-1)} * int_0^{1/2} rho^{-(n-1)(p-1)} d rho."""
    k = (n - 1) * (p - 1)
    if k >= 1:
        raise NotIntegrableError("extension not p-integrable")
    return math.sqrt(n) ** p / 2 ** k * 0.5 ** (1 - k) / (1 - k)


def shell_integral(cube: Cube, integrand, n_radial: int = 256, M: int = 64, grading: float = 2.0) -> float:
    """int_Q g dx via the coarea formula over concentric cube shells.

    Shell at half-side rho is the image of the face midpoint grid of dQ;
    rho = (eps/2) t^grading with t on a midpoint grid.
    """
    n = cube.dim
    c = cube.center
    half = cube.side / 2
    bnd = []
    w = 0.0
    for k in range(n):
        for high in (False, True):
            pts, w = face_nodes(cube, k, high, M)
            bnd.append(pts)
    bnd = np.concatenate(bnd)
    t = (np.arange(n_radial) + 0.5) / n_radial
    rho = half * t ** grading
    drho = half * grading * t ** (grading - 1) / n_radial
    total = 0.0
    for r, dr in zip(rho, drho):
        scale = r / half
        x = c + scale * (bnd - c)
        total += float(np.sum(integrand(x))) * w * scale ** (n - 1) * dr
    return total


def bad_cube_lp(cube: Cube, datum: np.ndarray, p: float, n_radial: int = 256) -> float:
    n = cube.dim
    if (n - 1) * (p - 1) >= 1:
        raise NotIntegrableError("extension not p-integrable")
    if not np.any(datum):
        return 0.0
    M = datum.shape[2]

    def integrand(x):
        return np.linalg.norm(evaluate_bad(cube, datum, x), axis=1) ** p

    return shell_integral(cube, integrand, n_radial=n_radial, M=M)


def sample_datum(cube: Cube, fn, M: int) -> np.ndarray:
    """Outward datum array from a function of boundary points (P, n) -> (P,)."""
    n = cube.dim
    out = np.empty((n, 2) + (M,) * (n - 1))
    for k in range(n):
        for s, high in enumerate((False, True)):
            pts, _ = face_nodes(cube, k, high, M)
            out[k, s] = np.asarray(fn(pts), dtype=float).reshape((M,) * (n - 1))
    return out


def datum_from_field(cube: Cube, fn, M: int) -> np.ndarray:
    """Outward normal trace of a vector field evaluator on the faces of ``cube``."""
    n = cube.dim
    out = np.empty((n, 2) + (M,) * (n - 1))
    for k in range(n):
        for s, high in enumerate((False, True)):
            pts, _ = face_nodes(cube, k, high, M)
            sign = 1.0 if high else -1.0
            out[k, s] = sign * np.asarray(fn(pts))[:, k].reshape((M,) * (n - 1))
    return out
