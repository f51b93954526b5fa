"""Grid-sampled vector fields on the open unit cube (-1/2, 1/2)^n.

Holds the basic containers (grids, weighted measures, charges, cubes),
tensor-midpoint face quadrature, weighted L^p norms, boundary fluxes and
the analytic generators used as pipeline inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.interpolate import RegularGridInterpolator

MAX_DIM = 4
# fixed, irrational-looking direction used to push singularities off nodes
_NUDGE_DIRECTION = np.array([0.7548776662, 0.5698402910, 0.4301597090, 0.2451223338])
NUDGE = 1e-9

Evaluator = Callable[[np.ndarray], np.ndarray]


class CorruptFieldError(ValueError):
    pass


@dataclass(frozen=True)
class GridSpec:
    dim: int
    cells_per_axis: int

    def __post_init__(self) -> None:
        if not 1 <= self.dim <= MAX_DIM:
            raise ValueError(f"dimension must be in 1..{MAX_DIM}, got {self.dim}")
        if self.cells_per_axis < 1:
            raise ValueError("cells_per_axis must be positive")

    @property
    def h(self) -> float:
        return 1.0 / self.cells_per_axis

    def axis_centers(self) -> np.ndarray:
        N = self.cells_per_axis
        return -0.5 + (np.arange(N) + 0.5) / N

    def centers(self) -> np.ndarray:
        """Cell centers, shape (N,)*n + (n,), axes in row-major order."""
        axes = [self.axis_centers()] * self.dim
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


@dataclass(frozen=True)
class WeightedMeasure:
    """Density (1/2 - |x|_inf)^q on the unit cube."""

    q: float = 0.0

    def __post_init__(self) -> None:
        if not (self.q <= 1.0) or not math.isfinite(self.q):
            raise ValueError(f"q must be a finite real <= 1, got {self.q}")

    def density(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.q == 0.0:
            return np.ones(x.shape[:-1])
        dist = 0.5 - np.max(np.abs(x), axis=-1)
        return np.power(dist, self.q)


@dataclass(frozen=True)
class Charge:
    pos: tuple[float, ...]
    deg: int


@dataclass(frozen=True)
class ChargeSet:
    charges: tuple[Charge, ...] = ()

    def __post_init__(self) -> None:
        seen = set()
        for c in self.charges:
            if int(c.deg) != c.deg or c.deg == 0:
                raise ValueError(f"charge degree must be a nonzero integer, got {c.deg}")
            if max(abs(v) for v in c.pos) >= 0.5:
                raise ValueError(f"charge at {c.pos} is not strictly inside the unit cube")
            if c.pos in seen:
                raise ValueError(f"duplicate charge position {c.pos}")
            seen.add(c.pos)
        dims = {len(c.pos) for c in self.charges}
        if len(dims) > 1:
            raise ValueError("charges have inconsistent dimensions")

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[Sequence[float], int]]) -> ChargeSet:
        return cls(tuple(Charge(tuple(float(v) for v in pos), int(d)) for pos, d in pairs))

    def __len__(self) -> int:
        return len(self.charges)

    def __iter__(self):
        return iter(self.charges)

    @property
    def positions(self) -> np.ndarray:
        if not self.charges:
            return np.zeros((0, 0))
        return np.array([c.pos for c in self.charges], dtype=float)

    @property
    def degrees(self) -> np.ndarray:
        return np.array([c.deg for c in self.charges], dtype=int)

    def total_degree(self) -> int:
        return int(sum(c.deg for c in self.charges))

    def to_json(self) -> list[dict]:
        return [{"pos": list(c.pos), "deg": int(c.deg)} for c in self.charges]


@dataclass(frozen=True)
class Cube:
    """Closed axis-aligned box [lo, hi] (cubes in practice).

    Face nodes are computed from lo/hi directly, so two cubes built from the
    same edge coordinates share bitwise-identical nodes on a common face.
    """

    lo: tuple[float, ...]
    hi: tuple[float, ...]

    @classmethod
    def centered(cls, center: Sequence[float], side: float) -> Cube:
        c = np.asarray(center, dtype=float)
        return cls(tuple(c - side / 2), tuple(c + side / 2))

    @property
    def dim(self) -> int:
        return len(self.lo)

    @property
    def center(self) -> np.ndarray:
        return (np.asarray(self.lo) + np.asarray(self.hi)) / 2

    @property
    def side(self) -> float:
        return float(self.hi[0] - self.lo[0])

    def inside_unit_cube(self) -> bool:
        return min(self.lo) > -0.5 and max(self.hi) < 0.5


def face_nodes(cube: Cube, axis: int, high: bool, M: int) -> tuple[np.ndarray, float]:
    """Tensor midpoint nodes (M^(n-1), n) on one face and the uniform weight."""
    n = cube.dim
    tangential = []
    weight = 1.0
    for j in range(n):
        if j == axis:
            continue
        lo, hi = cube.lo[j], cube.hi[j]
        tangential.append(lo + (np.arange(M) + 0.5) * (hi - lo) / M)
        weight *= (hi - lo) / M
    if tangential:
        mesh = np.meshgrid(*tangential, indexing="ij")
        cols = [m.ravel() for m in mesh]
    else:
        cols = []
    count = M ** (n - 1)
    pts = np.empty((count, n))
    k = 0
    for j in range(n):
        if j == axis:
            pts[:, j] = cube.hi[j] if high else cube.lo[j]
        else:
            pts[:, j] = cols[k]
            k += 1
    return pts, weight


@dataclass(frozen=True, eq=False)
class VectorField:
    """Samples of a map Q_1(0) -> R^n at cell centers.

    ``values`` has shape (N,)*n + (n,). ``analytic`` (optional) evaluates the
    field exactly at arbitrary points of shape (..., n).
    """

    grid: GridSpec
    values: np.ndarray
    analytic: Evaluator | None = None
    q: float = 0.0
    label: str = ""
    charges: ChargeSet = field(default_factory=ChargeSet)

    def __post_init__(self) -> None:
        n, N = self.grid.dim, self.grid.cells_per_axis
        shape = (N,) * n + (n,)
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != shape:
            if vals.size == np.prod(shape):
                vals = vals.reshape(shape)
            else:
                raise ValueError(f"values shape {vals.shape} does not match grid {shape}")
        vals = np.ascontiguousarray(vals)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "_interp", None)

    @classmethod
    def from_function(
        cls, fn: Evaluator, dim: int, N: int, q: float = 0.0, label: str = "",
        charges: ChargeSet | None = None,
    ) -> VectorField:
        grid = GridSpec(dim, N)
        vals = fn(grid.centers())
        return cls(grid, vals, analytic=fn, q=q, label=label, charges=charges or ChargeSet())

    @property
    def dim(self) -> int:
        return self.grid.dim

    @property
    def flat_values(self) -> np.ndarray:
        """Values as (N^n, n), component-fastest."""
        return self.values.reshape(-1, self.dim)

    def check_finite(self) -> None:
        if not np.all(np.isfinite(self.values)):
            raise CorruptFieldError("corrupt field: nonfinite values")

    def _interpolator(self) -> RegularGridInterpolator:
        interp = self._interp
        if interp is None:
            axes = [self.grid.axis_centers()] * self.dim
            interp = RegularGridInterpolator(axes, self.values, method="linear")
            object.__setattr__(self, "_interp", interp)
        return interp

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        """Field at arbitrary points (..., n); exact if analytic, else multilinear."""
        pts = np.asarray(points, dtype=float)
        if self.analytic is not None:
            return np.asarray(self.analytic(pts), dtype=float)
        if self.grid.cells_per_axis == 1:
            return np.broadcast_to(self.values.reshape(-1), pts.shape).copy()
        c = self.grid.axis_centers()
        clipped = np.clip(pts, c[0], c[-1])
        flat = clipped.reshape(-1, self.dim)
        return self._interpolator()(flat).reshape(pts.shape)

    def scaled(self, factor: float) -> VectorField:
        fn = None
        if self.analytic is not None:
            base = self.analytic
            fn = lambda x: factor * base(x)  # noqa: E731
        return VectorField(self.grid, factor * self.values, analytic=fn, q=self.q,
                           label=f"{factor}*{self.label}")


def lp_norm(V: VectorField, p: float, mu: WeightedMeasure | None = None) -> float:
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    V.check_finite()
    mag = np.linalg.norm(V.values, axis=-1) ** p
    if mu is not None and mu.q != 0.0:
        mag = mag * mu.density(V.grid.centers())
    total = float(np.sum(mag)) * V.grid.h ** V.dim
    return total ** (1.0 / p)


def face_normal_integrals(V: VectorField | Evaluator, cube: Cube, M: int) -> np.ndarray:
    """Integral of the field's component along +e_k over each face.

    Returns shape (n, 2): [axis, low/high]. Orientation is the fixed +e_k
    direction, not the outward normal.
    """
    evaluate = V.evaluate if isinstance(V, VectorField) else V
    n = cube.dim
    out = np.empty((n, 2))
    for axis in range(n):
        for s, high in enumerate((False, True)):
            pts, w = face_nodes(cube, axis, high, M)
            out[axis, s] = np.sum(evaluate(pts)[:, axis]) * w
    return out


def boundary_flux(V: VectorField | Evaluator, cube: Cube, M: int = 256) -> float:
    """Outward flux through the boundary of ``cube`` by face midpoint quadrature."""
    if M < 2:
        raise ValueError("quadrature resolution M must be >= 2")
    if not cube.inside_unit_cube():
        raise ValueError(f"cube [{cube.lo}, {cube.hi}] extends outside the unit cube")
    faces = face_normal_integrals(V, cube, M)
    return float(np.sum(faces[:, 1] - faces[:, 0]))


def unit_ball_volume(n: int) -> float:
    return math.pi ** (n / 2) / math.gamma(n / 2 + 1)


def _nudged(positions: np.ndarray) -> np.ndarray:
    if positions.size == 0:
        return positions
    n = positions.shape[1]
    return positions + NUDGE * _NUDGE_DIRECTION[:n]


def vortex_evaluator(positions: np.ndarray, degrees: np.ndarray, n: int) -> Evaluator:
    """Superposition of fundamental-solution gradients, sum d (x-y)/(n w_n |x-y|^n)."""
    positions = np.asarray(positions, dtype=float).reshape(-1, n)
    degrees = np.asarray(degrees, dtype=float)
    norm = n * unit_ball_volume(n)

    def evaluate(x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape)
        for y, d in zip(positions, degrees):
            diff = x - y
            r2 = np.sum(diff * diff, axis=-1)
            r2 = np.maximum(r2, 1e-300)
            out += (d / norm) * diff / (r2 ** (n / 2))[..., None]
        return out

    return evaluate


def gen_vortex(n: int, charges: ChargeSet, N: int = 128, q: float = 0.0) -> VectorField:
    if n not in (2, 3):
        raise ValueError("gen_vortex supports n in {2, 3}")
    if len(charges) and charges.positions.shape[1] != n:
        raise ValueError("charge dimension does not match n")
    pos = _nudged(charges.positions.reshape(-1, n))
    fn = vortex_evaluator(pos, charges.degrees, n)
    return VectorField.from_function(fn, n, N, q=q, label="vortex", charges=charges)


def circle_map_evaluator(points: np.ndarray, signs: np.ndarray) -> Evaluator:
    """(1/2pi) u ^ grad-perp u for u = prod ((z-a)/|z-a|)^(+-1).

    u ^ d_k u = Im(conj(u) d_k u) = d_k theta with theta the total phase,
    and the perpendicular gradient is taken so that a +1 point has outward
    flux +1.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    signs = np.asarray(signs, dtype=float)

    def evaluate(x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        u = np.ones(x.shape[:-1], dtype=complex)
        du = [np.zeros(x.shape[:-1], dtype=complex) for _ in range(2)]
        for a, s in zip(points, signs):
            z = (x[..., 0] - a[0]) + 1j * (x[..., 1] - a[1])
            r2 = np.maximum((z * z.conjugate()).real, 1e-300)
            # d_k of the phase of z: (-dy, dx)/r^2 ; factor e^{i s theta}
            dtheta = (-z.imag / r2, z.real / r2)
            ua = np.exp(1j * s * np.angle(z))
            for k in range(2):
                du[k] = du[k] * ua + u * (1j * s * dtheta[k]) * ua
            u = u * ua
        # wedge with each partial derivative
        w = [np.imag(np.conj(u) * du[k]) for k in range(2)]
        # rotate so that the field is outward for a +1 point: (d_y theta, -d_x theta)
        out = np.empty(x.shape)
        out[..., 0] = w[1]
        out[..., 1] = -w[0]
        return out / (2 * math.pi)

    return evaluate


def gen_circle_map_current(
    a_list: Sequence[tuple[Sequence[float], int]], n: int = 2, N: int = 128, q: float = 0.0,
) -> VectorField:
    if n != 2:
        raise ValueError("circle-map generator requires n = 2")
    signs = np.array([int(s) for _, s in a_list], dtype=float)
    if np.any(np.abs(signs) != 1):
        raise ValueError("circle-map points carry signs +1 or -1")
    pts = np.array([list(a) for a, _ in a_list], dtype=float).reshape(-1, 2)
    fn = circle_map_evaluator(_nudged(pts), signs)
    charges = ChargeSet.from_pairs((tuple(a), int(s)) for a, s in a_list)
    return VectorField.from_function(fn, 2, N, q=q, label="circle-map", charges=charges)


def _random_profile(rng: np.random.Generator, modes: int) -> Callable[[np.ndarray], np.ndarray]:
    """Random smooth 1-periodic-ish function of one variable."""
    amps = rng.normal(size=(modes, 2)) / (1.0 + np.arange(modes))[:, None]
    freqs = 2 * math.pi * (1 + np.arange(modes))
    shift = rng.normal()

    def g(t: np.ndarray) -> np.ndarray:
        out = np.full(np.shape(t), shift)
        for k in range(modes):
            out = out + amps[k, 0] * np.cos(freqs[k] * t) + amps[k, 1] * np.sin(freqs[k] * t)
        return out

    return g


def divfree_evaluator(seed: int, n: int, modes: int = 4) -> Evaluator:
    """Divergence-free field whose k-th component does not depend on x_k.

    For n=2 this is rot(psi) with psi(x) = F(x_2) - G(x_1); for n=3 it is a
    curl. Because V_k is constant along e_k, opposite faces of any box see
    identical normal samples and the discrete flux vanishes exactly.
    """
    if n not in (2, 3):
        raise ValueError("gen_divfree supports n in {2, 3}")
    rng = np.random.default_rng(seed)
    if n == 2:
        profiles = [_random_profile(rng, modes) for _ in range(2)]

        def evaluate(x: np.ndarray) -> np.ndarray:
            x = np.asarray(x, dtype=float)
            out = np.empty(x.shape)
            out[..., 0] = profiles[0](x[..., 1])
            out[..., 1] = profiles[1](x[..., 0])
            return out

        return evaluate

    pairs = [[_random_profile(rng, modes) for _ in range(2)] for _ in range(3)]

    def evaluate3(x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.empty(x.shape)
        for k in range(3):
            a, b = [j for j in range(3) if j != k]
            out[..., k] = pairs[k][0](x[..., a]) * pairs[k][1](x[..., b])
        return out

    return evaluate3


def gen_divfree(seed: int, n: int, N: int = 128, q: float = 0.0) -> VectorField:
    fn = divfree_evaluator(seed, n)
    return VectorField.from_function(fn, n, N, q=q, label=f"divfree(seed={seed})")


def constant_field(value: Sequence[float], N: int = 64, q: float = 0.0) -> VectorField:
    c = np.asarray(value, dtype=float)
    n = c.size

    def fn(x: np.ndarray) -> np.ndarray:
        return np.broadcast_to(c, np.shape(x)).copy()

    return VectorField.from_function(fn, n, N, q=q, label="constant")
