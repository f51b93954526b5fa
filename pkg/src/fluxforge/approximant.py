"""Assembly of the piecewise approximating field, rescaling and eps-sweeps."""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, replace
from itertools import product

import numpy as np
from scipy.optimize import minimize

from .decomposition import (
    BAD, GOOD, NON_INTEGRAL, CubeRecord, CubicMesh, bad_cube_stats, classify_cubes, select_shift,
)
from .extension import (
    ExtensionResult, NeumannProblem, evaluate_bad, extend_good, rt0_evaluate, shell_integral,
)
from .field import ChargeSet, Cube, VectorField, WeightedMeasure
from .smoothing import SkeletonData, balance_fluxes, cube_faces, smooth_skeleton


class NonIntegralCubeError(RuntimeError):
    def __init__(self, records: list[CubeRecord]):
        self.records = records
        worst = ", ".join(f"{r.index}: flux {r.flux:.6g}" for r in records[:5])
        super().__init__(f"{len(records)} cube(s) with non-integral flux ({worst}); "
                         "rerun with force_round to round degrees")


@dataclass(frozen=True)
class PipelineSettings:
    n_candidates: int = 32
    seed: int = 42
    tol: float = 1e-2
    flux_M: int = 64
    shift_M: int = 16
    m: int = 32
    smooth_delta: float = 1e-3
    refine: int = 8
    reg: float | None = None
    max_iter: int = 100
    solver_tol: float = 1e-10
    force_round: bool = False
    threads: int = 1

    def to_json(self) -> dict:
        return asdict(self)


@contextmanager
def _pool(threads: int):
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            yield ex
    else:
        yield None


@dataclass(frozen=True, eq=False)
class ApproximantField:
    mesh: CubicMesh
    records: tuple
    good: dict  # index -> (ExtensionResult, mean vector)
    bad: dict  # index -> outward datum array
    charges: ChargeSet
    alpha: float = 1.0
    provenance: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.mesh.dim

    def cube_charges(self) -> list[tuple[np.ndarray, int]]:
        return [(np.asarray(r.center), r.degree) for r in self.records if r.index in self.bad]

    def evaluate_tilde(self, y: np.ndarray) -> np.ndarray:
        """The field on Omega_eps before rescaling; zero outside the mesh."""
        y = np.atleast_2d(np.asarray(y, dtype=float))
        n = self.dim
        out = np.zeros(y.shape)
        K = self.mesh.per_axis
        idx = np.empty(y.shape, dtype=int)
        inside = np.ones(len(y), dtype=bool)
        for k in range(n):
            e = self.mesh.edges(k)
            i = np.searchsorted(e, y[:, k], side="right") - 1
            inside &= (y[:, k] >= e[0]) & (y[:, k] <= e[-1])
            idx[:, k] = np.clip(i, 0, K - 1)
        flat = np.ravel_multi_index(tuple(idx.T), self.mesh.shape)
        order = np.argsort(flat, kind="stable")
        bounds = np.searchsorted(flat[order], np.arange(self.mesh.count + 1))
        for c in range(self.mesh.count):
            sel = order[bounds[c]:bounds[c + 1]]
            sel = sel[inside[sel]]
            if sel.size == 0:
                continue
            index = tuple(int(v) for v in np.unravel_index(c, self.mesh.shape))
            out[sel] = self.evaluate_cube(index, y[sel])
        return out

    def evaluate_cube(self, index: tuple[int, ...], y: np.ndarray) -> np.ndarray:
        """Field of one cube at points y assumed to lie in that cube."""
        cube = self.mesh.cube(index)
        if index in self.bad:
            at_center = np.all(y == cube.center, axis=1)
            vals = np.zeros(y.shape)
            if np.any(~at_center):
                vals[~at_center] = evaluate_bad(cube, self.bad[index], y[~at_center])
            return vals
        ext, mean = self.good[index]
        return rt0_evaluate(cube, ext.face_fluxes, y) + mean

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        """Rescaled field alpha^{n-1} tilde(alpha x) at points of the unit cube."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return self.alpha ** (self.dim - 1) * self.evaluate_tilde(self.alpha * x)

    def summary(self) -> dict:
        return {
            "epsilon": self.mesh.epsilon,
            "shift": list(self.mesh.shift),
            "alpha": self.alpha,
            "cubes": self.mesh.count,
            "bad_count": len(self.bad),
            "charges": self.charges.to_json(),
            "provenance": self.provenance,
            "diagnostics": self.diagnostics,
            "records": [r.to_json() for r in self.records],
            "good_cubes": [ext.diagnostics() for ext, _ in self.good.values()],
        }


def block_average(samples: np.ndarray, factor: int) -> np.ndarray:
    """Average over factor^k blocks; face integrals are unchanged."""
    if factor == 1:
        return np.array(samples)
    m = samples.shape[0] // factor
    k = samples.ndim
    shaped = samples.reshape(sum(((m, factor) for _ in range(k)), ()))
    return shaped.mean(axis=tuple(range(1, 2 * k, 2)))


def _cube_datum(skeleton: SkeletonData, index: tuple[int, ...], factor: int = 1) -> np.ndarray:
    n = len(index)
    m = skeleton.M // factor
    datum = np.empty((n, 2) + (m,) * (n - 1))
    for f, sign in cube_faces(index):
        axis = f[0]
        s = 1 if sign > 0 else 0
        datum[axis, s] = sign * block_average(skeleton.faces[f].samples, factor)
    return datum


def assemble(
    V: VectorField, epsilon: float, p: float, mu: WeightedMeasure | None = None,
    settings: PipelineSettings | None = None,
) -> ApproximantField:
    """Shift selection, classification, smoothing and per-cube extension."""
    settings = settings or PipelineSettings()
    mu = mu or WeightedMeasure(V.q)
    n = V.dim
    if settings.refine < 1:
        raise ValueError("refine must be >= 1")
    if n < 2:
        raise ValueError("the cubic pipeline needs n >= 2; use the oned module for n = 1")
    with _pool(settings.threads) as ex:
        mesh, _ = select_shift(V, epsilon, p, mu, settings.n_candidates, settings.seed,
                               M=settings.shift_M, executor=ex)
        records = classify_cubes(V, mesh, settings.tol, M=settings.flux_M)
        bad_integral = [r for r in records if r.cls == NON_INTEGRAL]
        if bad_integral and not settings.force_round:
            raise NonIntegralCubeError(bad_integral)
        if settings.force_round:
            records = [replace(r, cls=GOOD if r.degree == 0 else BAD) if r.cls == NON_INTEGRAL else r
                       for r in records]
        skeleton = smooth_skeleton(V, mesh, records, settings.smooth_delta,
                                   M=settings.m * settings.refine, p=p, mu=mu,
                                   widen=True, executor=ex)
        skeleton = balance_fluxes(skeleton, records)

        good_jobs = [r for r in records if r.cls == GOOD]

        def solve(rec: CubeRecord) -> ExtensionResult:
            datum = _cube_datum(skeleton, rec.index, settings.refine)
            mean = np.asarray(rec.mean)
            for k in range(n):
                datum[k, 0] += mean[k]
                datum[k, 1] -= mean[k]
            problem = NeumannProblem(mesh.cube(rec.index), datum, p, rec.index)
            return extend_good(problem, settings.reg, settings.max_iter, settings.solver_tol)

        results = list(ex.map(solve, good_jobs)) if ex is not None else [solve(r) for r in good_jobs]
    good = {r.index: (res, np.asarray(r.mean)) for r, res in zip(good_jobs, results)}
    bad = {r.index: _cube_datum(skeleton, r.index) for r in records if r.cls == BAD}
    charges = ChargeSet.from_pairs((r.center, r.degree) for r in records if r.cls == BAD)
    count, weighted = bad_cube_stats(records, mesh, mu)
    diagnostics = {
        "skeleton_deviation": skeleton.deviation,
        "widened_faces": skeleton.widened,
        "balance": skeleton.balance,
        "bad_weighted_volume": weighted,
        "unconverged_cubes": sum(not res.converged for res in results),
        "max_good_residual": max((res.residuals["divergence_residual"] for res in results), default=0.0),
    }
    provenance = {"epsilon": epsilon, "shift": list(mesh.shift), "p": p, "q": mu.q,
                  "settings": settings.to_json()}
    return ApproximantField(mesh, tuple(records), good, bad, charges, 1.0, provenance, diagnostics)


def rescale_factor(mesh: CubicMesh) -> float:
    """Largest alpha <= 1 with alpha * Q_1(0) inside the mesh region."""
    region = mesh.region()
    room = min(min(-lo, hi) for lo, hi in zip(region.lo, region.hi))
    return min(1.0, 2.0 * room)


def rescale(tilde: ApproximantField, alpha: float | None = None) -> ApproximantField:
    if alpha is None:
        alpha = rescale_factor(tilde.mesh)
    moved = []
    for pos, deg in tilde.cube_charges():
        x = pos / alpha
        if np.max(np.abs(x)) < 0.5:
            moved.append((tuple(float(v) for v in x), deg))
    return replace(tilde, alpha=float(alpha), charges=ChargeSet.from_pairs(moved))


def dilate(V: VectorField, alpha: float) -> VectorField:
    """P_alpha V(x) = alpha^{n-1} V(alpha x), resampled on the same grid."""
    n = V.dim
    base = V.evaluate

    def fn(x):
        return alpha ** (n - 1) * base(alpha * np.asarray(x))

    return VectorField.from_function(fn, n, V.grid.cells_per_axis, q=V.q, label=f"P_{alpha}")


# ---------------------------------------------------------------------------
# test functions and residuals


@dataclass(frozen=True)
class TestFunction:
    """Monomial times a window vanishing on the boundary of a box."""

    powers: tuple[int, ...]
    center: tuple[float, ...]
    half: float
    scale: float = 1.0

    def _parts(self, x: np.ndarray):
        c = np.asarray(self.center)
        t = (x - c) / self.half
        inside = np.all(np.abs(t) < 1, axis=1)
        win1 = np.where(np.abs(t) < 1, (1 - t * t) ** 2, 0.0)
        dwin1 = np.where(np.abs(t) < 1, -4 * t * (1 - t * t) / self.half, 0.0)
        mono1 = np.stack([x[:, k] ** p for k, p in enumerate(self.powers)], 1)
        dmono1 = np.stack([p * x[:, k] ** max(p - 1, 0) if p else np.zeros(len(x))
                           for k, p in enumerate(self.powers)], 1)
        return inside, win1, dwin1, mono1, dmono1

    def value(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        inside, win1, _, mono1, _ = self._parts(x)
        return self.scale * np.where(inside, np.prod(win1 * mono1, axis=1), 0.0)

    def gradient(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        inside, win1, dwin1, mono1, dmono1 = self._parts(x)
        f1 = win1 * mono1
        df1 = dwin1 * mono1 + win1 * dmono1
        n = x.shape[1]
        out = np.empty(x.shape)
        for k in range(n):
            others = np.prod(np.delete(f1, k, axis=1), axis=1) if n > 1 else 1.0
            out[:, k] = df1[:, k] * others
        return self.scale * np.where(inside[:, None], out, 0.0)


def default_test_functions(n: int, count: int = 20) -> list[TestFunction]:
    """Monomials of degree <= 3 under a full-cube window and a central window.

    Each is scaled so that sup |grad phi| is 1 on a fine sample grid.
    """
    powers = [pw for d in range(4) for pw in product(range(d + 1), repeat=n) if sum(pw) == d]
    windows = [((0.0,) * n, 0.5), ((0.0,) * n, 0.25)]
    fams = []
    for center, half in windows:
        for pw in powers:
            fams.append(TestFunction(tuple(pw), center, half))
            if len(fams) == count:
                break
        if len(fams) == count:
            break
    i = 0
    while len(fams) < count:
        fams.append(TestFunction(tuple(powers[i % len(powers)]), (0.1,) * n, 0.3))
        i += 1
    g = (np.arange(65) + 0.5) / 65 - 0.5
    grid = np.stack(np.meshgrid(*([g] * n), indexing="ij"), -1).reshape(-1, n)
    return [replace(tf, scale=1.0 / s if s > 0 else 1.0) for tf in fams
            for s in [_sup_gradient(tf, grid)]]


def _sup_gradient(tf: TestFunction, grid: np.ndarray, starts: int = 4) -> float:
    """Grid maximum of |grad phi|, polished by local ascent from the best grid points."""
    norms = np.linalg.norm(tf.gradient(grid), axis=1)
    best = float(np.max(norms))
    if best == 0:
        return 0.0

    def neg(x):
        return -float(np.linalg.norm(tf.gradient(x[None, :])[0]))

    for i in np.argsort(norms)[-starts:]:
        res = minimize(neg, grid[i], method="Nelder-Mead",
                       options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 4000})
        best = max(best, -float(res.fun))
    return best


def _gauss_cube(cube: Cube, cells: int, order: int = 3) -> tuple[np.ndarray, float | np.ndarray]:
    xg, wg = np.polynomial.legendre.leggauss(order)
    xg = (xg + 1) / 2
    wg = wg / 2
    n = cube.dim
    h = cube.side / cells
    axes, weights = [], []
    for k in range(n):
        e = np.arange(cells)
        axes.append((cube.lo[k] + h * (e[:, None] + xg[None, :])).ravel())
        weights.append(np.tile(wg * h, cells))
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, n)
    w = np.ones(())
    for wk in weights:
        w = np.multiply.outer(w, wk)
    return pts, w.ravel()


def divergence_residual(
    approx: ApproximantField, test_functions: list[TestFunction] | None = None,
    charges: ChargeSet | None = None, subtract: VectorField | None = None,
    n_radial: int = 128, per_function: bool = False,
):
    """max_phi |int field . grad phi + sum_j d_j phi(x_j)| over the family.

    Integrals over the unit cube are pulled back to Omega_eps (y = alpha x)
    and done cube by cube: Gauss-Legendre on good cubes, coarea shells on bad
    ones. ``subtract`` is a field on the unit cube removed before testing.
    """
    n = approx.dim
    tfs = test_functions or default_test_functions(n)
    charges = approx.charges if charges is None else charges
    alpha = approx.alpha
    mesh = approx.mesh

    def integrand_field(index, y: np.ndarray) -> np.ndarray:
        val = approx.evaluate_cube(index, y)
        if subtract is not None:
            val = val - alpha ** (1 - n) * subtract.evaluate(y / alpha)
        return val

    totals = np.zeros(len(tfs))
    for index in mesh.indices():
        cube = mesh.cube(index)
        if index in approx.bad:
            M = 2 * approx.bad[index].shape[2]
            for i, tf in enumerate(tfs):
                def g(y, tf=tf, index=index):
                    return np.sum(integrand_field(index, y) * tf.gradient(y / alpha), axis=1) / alpha
                totals[i] += shell_integral(cube, g, n_radial=n_radial, M=M)
        else:
            cells = approx.good[index][0].m if index in approx.good else 8
            pts, w = _gauss_cube(cube, cells)
            vals = integrand_field(index, pts)
            for i, tf in enumerate(tfs):
                totals[i] += float(np.sum(w * np.sum(vals * tf.gradient(pts / alpha), axis=1))) / alpha
    # pulled back: int_{Q1} Vbar . grad phi dx = int Vtilde(y) . grad_y[phi(y/alpha)] dy
    resid = []
    for i, tf in enumerate(tfs):
        s = totals[i]
        for c in charges:
            s += c.deg * float(tf.value(np.asarray(c.pos)[None, :])[0])
        resid.append(abs(s))
    if per_function:
        return resid
    return max(resid) if resid else 0.0


def lp_error(approx: ApproximantField, V: VectorField, p: float, mu: WeightedMeasure | None = None) -> float:
    """||Vbar - V||_{L^p(mu)} on V's grid."""
    mu = mu or WeightedMeasure(V.q)
    pts = V.grid.centers().reshape(-1, V.dim)
    diff = approx.evaluate(pts) - V.values.reshape(-1, V.dim)
    dens = mu.density(pts)
    total = float(np.sum(np.linalg.norm(diff, axis=1) ** p * dens)) * V.grid.h ** V.dim
    return total ** (1 / p)


def converge_sweep(
    V: VectorField, p: float, mu: WeightedMeasure | None, eps_list, settings: PipelineSettings | None = None,
) -> list[dict]:
    settings = settings or PipelineSettings()
    mu = mu or WeightedMeasure(V.q)

    def run(eps: float) -> dict:
        start = time.perf_counter()
        row = {"epsilon": float(eps)}
        try:
            tilde = assemble(V, eps, p, mu, replace(settings, threads=1))
            bar = rescale(tilde)
            row.update(lp_error=lp_error(bar, V, p, mu), bad_count=len(tilde.bad), alpha=bar.alpha,
                       charges=bar.charges.to_json(), error="")
        except Exception as exc:  # recorded per row, sweep continues
            row.update(lp_error=math.nan, bad_count=-1, alpha=math.nan, charges=[], error=str(exc))
        row["wallclock_ms"] = (time.perf_counter() - start) * 1e3
        return row

    with _pool(settings.threads) as ex:
        rows = list(ex.map(run, eps_list)) if ex is not None else [run(e) for e in eps_list]
    return rows
