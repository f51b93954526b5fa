"""Connections for finite integer charge sets in the unit cube.

A connection is a sum of oriented segments with integer multiplicities whose
boundary inside the open cube is the given charge set. Endpoints on the cube
boundary carry no charge.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .field import ChargeSet

BOUNDARY_TOL = 1e-12


@dataclass(frozen=True)
class Segment:
    a: tuple[float, ...]
    b: tuple[float, ...]
    mult: int

    @property
    def length(self) -> float:
        return math.dist(self.a, self.b)


@dataclass(frozen=True)
class OneCurrent:
    """Sum of mult * [a, b]; the boundary of [a, b] is delta_b - delta_a."""

    segments: tuple[Segment, ...] = ()

    def __post_init__(self) -> None:
        for s in self.segments:
            if int(s.mult) != s.mult or s.mult <= 0:
                raise ValueError(f"segment multiplicity must be a positive integer, got {s.mult}")
            if len(s.a) != len(s.b):
                raise ValueError("segment endpoints have different dimensions")
            if max(abs(v) for v in s.a + s.b) > 0.5 + BOUNDARY_TOL:
                raise ValueError("segment leaves the closed unit cube")

    @property
    def mass(self) -> float:
        return float(sum(s.mult * s.length for s in self.segments))

    def to_json(self) -> dict:
        return {"segments": [{"a": list(s.a), "b": list(s.b), "mult": s.mult} for s in self.segments]}

    @classmethod
    def from_json(cls, data: dict) -> OneCurrent:
        return cls(tuple(Segment(tuple(float(v) for v in s["a"]), tuple(float(v) for v in s["b"]),
                                 int(s["mult"])) for s in data["segments"]))


def _tuple(x) -> tuple[float, ...]:
    return tuple(float(v) for v in x)


def boundary_distance(x) -> float:
    """Euclidean distance from an interior point to the boundary of the unit cube."""
    return 0.5 - float(np.max(np.abs(np.asarray(x, dtype=float))))


def nearest_boundary_point(x) -> tuple[float, ...]:
    x = np.asarray(x, dtype=float)
    k = int(np.argmax(np.abs(x)))
    y = x.copy()
    y[k] = 0.5 if x[k] >= 0 else -0.5
    return _tuple(y)


def on_boundary(x) -> bool:
    return float(np.max(np.abs(np.asarray(x, dtype=float)))) >= 0.5 - BOUNDARY_TOL


def greedy_connection(charges: ChargeSet, boundary_point=None) -> OneCurrent:
    """Walk positives and negatives in input order, pairing residual charge.

    Each positive absorbs negatives until its charge is used up; a partially
    used negative carries its remainder to the next positive. Whatever is left
    on either side is sent to ``boundary_point``.
    """
    pos = [(c.pos, c.deg) for c in charges if c.deg > 0]
    neg = [(c.pos, -c.deg) for c in charges if c.deg < 0]
    total = charges.total_degree()
    if total != 0:
        if boundary_point is None:
            raise ValueError(f"total degree {total} is nonzero; a boundary point is required")
        if not on_boundary(boundary_point):
            raise ValueError("boundary_point must lie on the boundary of the unit cube")
        boundary_point = _tuple(boundary_point)

    segments = []
    i = j = 0
    left_p = pos[0][1] if pos else 0
    left_n = neg[0][1] if neg else 0
    while i < len(pos) and j < len(neg):
        m = min(left_p, left_n)
        segments.append(Segment(neg[j][0], pos[i][0], m))
        left_p -= m
        left_n -= m
        if left_p == 0:
            i += 1
            left_p = pos[i][1] if i < len(pos) else 0
        if left_n == 0:
            j += 1
            left_n = neg[j][1] if j < len(neg) else 0
    while i < len(pos):
        segments.append(Segment(boundary_point, pos[i][0], left_p))
        i += 1
        left_p = pos[i][1] if i < len(pos) else 0
    while j < len(neg):
        segments.append(Segment(neg[j][0], boundary_point, left_n))
        j += 1
        left_n = neg[j][1] if j < len(neg) else 0
    return OneCurrent(tuple(segments))


def boundary_of_current(current: OneCurrent) -> ChargeSet:
    """Signed endpoint multiset; boundary endpoints dropped, coincident points merged."""
    acc: dict[tuple[float, ...], int] = {}
    for s in current.segments:
        for point, sign in ((s.b, 1), (s.a, -1)):
            if on_boundary(point):
                continue
            acc[point] = acc.get(point, 0) + sign * s.mult
    return ChargeSet.from_pairs((p, d) for p, d in acc.items() if d != 0)


# ---------------------------------------------------------------------------
# minimum-cost flow


class _FlowGraph:
    def __init__(self, n: int):
        self.n = n
        self.to: list[int] = []
        self.cap: list[int] = []
        self.cost: list[float] = []
        self.adj: list[list[int]] = [[] for _ in range(n)]

    def add(self, u: int, v: int, cap: int, cost: float) -> int:
        e = len(self.to)
        self.to += [v, u]
        self.cap += [cap, 0]
        self.cost += [cost, -cost]
        self.adj[u].append(e)
        self.adj[v].append(e + 1)
        return e

    def flow(self, e: int) -> int:
        return self.cap[e ^ 1]

    def min_cost_flow(self, s: int, t: int, demand: int) -> float:
        """Successive shortest augmenting paths with Johnson potentials."""
        pot = [0.0] * self.n  # all initial costs are nonnegative
        total = 0.0
        sent = 0
        while sent < demand:
            dist = [math.inf] * self.n
            prev = [-1] * self.n
            dist[s] = 0.0
            heap = [(0.0, s)]
            while heap:
                d, u = heapq.heappop(heap)
                if d > dist[u]:
                    continue
                for e in self.adj[u]:
                    if self.cap[e] <= 0:
                        continue
                    v = self.to[e]
                    # reduced costs are >= 0 up to rounding
                    nd = d + max(self.cost[e] + pot[u] - pot[v], 0.0)
                    if nd < dist[v] - 1e-15:
                        dist[v] = nd
                        prev[v] = e
                        heapq.heappush(heap, (nd, v))
            if math.isinf(dist[t]):
                raise RuntimeError("flow network cannot carry the required supply")
            for v in range(self.n):
                if not math.isinf(dist[v]):
                    pot[v] += dist[v]
            push = demand - sent
            v = t
            while v != s:
                e = prev[v]
                push = min(push, self.cap[e])
                v = self.to[e ^ 1]
            v = t
            while v != s:
                e = prev[v]
                self.cap[e] -= push
                self.cap[e ^ 1] += push
                total += push * self.cost[e]
                v = self.to[e ^ 1]
            sent += push
        return total


def minimal_connection(charges: ChargeSet) -> tuple[OneCurrent, float]:
    """Transport positives to negatives, with the boundary as a free reservoir.

    Sources are positive charges, sinks negative charges; a positive may also
    end on the boundary and a negative may be fed from it, at cost equal to the
    distance to the boundary. Segments are straight.
    """
    items = list(charges)
    if not items:
        return OneCurrent(()), 0.0
    pos = [c for c in items if c.deg > 0]
    neg = [c for c in items if c.deg < 0]
    P = sum(c.deg for c in pos)
    Q = sum(-c.deg for c in neg)
    # nodes: S, T, B_out (feeds negatives), B_in (absorbs positives), charges
    S, T, BOUT, BIN = 0, 1, 2, 3
    off_p = 4
    off_n = off_p + len(pos)
    g = _FlowGraph(off_n + len(neg))
    big = P + Q
    for a, c in enumerate(pos):
        g.add(S, off_p + a, c.deg, 0.0)
    for b, c in enumerate(neg):
        g.add(off_n + b, T, -c.deg, 0.0)
    g.add(S, BOUT, Q, 0.0)
    g.add(BIN, T, P, 0.0)
    g.add(BOUT, BIN, big, 0.0)
    pair_edges = {}
    for a, cp in enumerate(pos):
        for b, cn in enumerate(neg):
            pair_edges[a, b] = g.add(off_p + a, off_n + b, big, math.dist(cp.pos, cn.pos))
    to_bnd = [g.add(off_p + a, BIN, big, boundary_distance(c.pos)) for a, c in enumerate(pos)]
    from_bnd = [g.add(BOUT, off_n + b, big, boundary_distance(c.pos)) for b, c in enumerate(neg)]
    cost = g.min_cost_flow(S, T, P + Q)

    segments = []
    for a, cp in enumerate(pos):
        for b, cn in enumerate(neg):
            f = g.flow(pair_edges[a, b])
            if f:
                segments.append(Segment(cn.pos, cp.pos, f))
        f = g.flow(to_bnd[a])
        if f:
            segments.append(Segment(nearest_boundary_point(cp.pos), cp.pos, f))
    for b, cn in enumerate(neg):
        f = g.flow(from_bnd[b])
        if f:
            segments.append(Segment(cn.pos, nearest_boundary_point(cn.pos), f))
    current = OneCurrent(tuple(segments))
    return current, float(current.mass) if segments else float(cost)


# ---------------------------------------------------------------------------
# dual certificate


@dataclass(frozen=True, eq=False)
class DualCertificate:
    grid_res: int
    potential: np.ndarray  # values at grid nodes, shape (grid_res + 1,)*n
    charge_values: np.ndarray
    value: float
    feasibility_residual: float
    extra: dict = field(default_factory=dict)

    def to_json(self, include_grid: bool = False) -> dict:
        out = {"grid_res": self.grid_res, "value": self.value,
               "feasibility_residual": self.feasibility_residual,
               "charge_values": self.charge_values.tolist(), **self.extra}
        if include_grid:
            out["potential"] = self.potential.tolist()
        return out


def _extend_potential(points: np.ndarray, values: np.ndarray, x: np.ndarray) -> np.ndarray:
    """1-Lipschitz extension vanishing on the cube boundary.

    Upper McShane envelope clipped to [-d, d], d the boundary distance; both
    operations keep the Lipschitz constant and the prescribed values.
    """
    d = 0.5 - np.max(np.abs(x), axis=-1)
    if len(values) == 0:
        return np.zeros(x.shape[:-1])
    diff = x[..., None, :] - points
    u = np.min(values + np.linalg.norm(diff, axis=-1), axis=-1)
    return np.clip(u, -d, d)


def _grid_slope_excess(phi: np.ndarray, h: float) -> float:
    worst = 0.0
    for axis in range(phi.ndim):
        slope = np.abs(np.diff(phi, axis=axis)) / h
        if slope.size:
            worst = max(worst, float(np.max(slope)) - 1.0)
    return max(worst, 0.0)


def dual_value(charges: ChargeSet, grid_res: int = 128) -> DualCertificate:
    """Lower bound for the minimal mass from a 1-Lipschitz potential.

    The potential's values at the charges solve the linear program
    max sum d_j phi_j subject to |phi_i - phi_j| <= |x_i - x_j| and
    |phi_j| <= dist(x_j, boundary). They are then extended to a grid
    function vanishing on the boundary.
    """
    if grid_res < 8:
        raise ValueError("grid_res must be >= 8")
    items = list(charges)
    n = len(items[0].pos) if items else 2
    axis = np.linspace(-0.5, 0.5, grid_res + 1)
    nodes = np.stack(np.meshgrid(*([axis] * n), indexing="ij"), axis=-1)
    h = 1.0 / grid_res
    if not items:
        phi = np.zeros((grid_res + 1,) * n)
        return DualCertificate(grid_res, phi, np.zeros(0), 0.0, 0.0)

    x = charges.positions
    d = charges.degrees.astype(float)
    N = len(items)
    rows, rhs = [], []
    for i in range(N):
        for j in range(i + 1, N):
            r = np.zeros(N)
            r[i], r[j] = 1.0, -1.0
            dist = math.dist(x[i], x[j])
            rows += [r, -r]
            rhs += [dist, dist]
    bounds = [(-boundary_distance(p), boundary_distance(p)) for p in x]
    res = linprog(-d, A_ub=np.array(rows) if rows else None, b_ub=np.array(rhs) if rhs else None,
                  bounds=bounds, method="highs")
    if res.status != 0:
        raise RuntimeError(f"dual linear program failed: {res.message}")
    vals = np.asarray(res.x, dtype=float)
    # shave LP rounding so the prescribed values are exactly feasible
    for _ in range(3):
        vals = _extend_potential(x, vals, x)
    phi = _extend_potential(x, vals, nodes)
    value = float(np.dot(d, vals))
    return DualCertificate(grid_res, phi, vals, value, _grid_slope_excess(phi, h),
                           {"h": h, "lp_status": res.message})


# ---------------------------------------------------------------------------


def dipole_decomposition(current: OneCurrent) -> tuple[list[tuple[tuple[float, ...], tuple[float, ...]]], float]:
    """Unit dipoles (P_i, N_i) with sum of delta_P - delta_N equal to the current's boundary.

    Pairs come from a minimal connection of the boundary charges; a charge
    routed to the cube boundary pairs with its nearest boundary point.
    Returns the pairs and sum |P_i - N_i|, which equals the minimal mass.
    """
    charges = boundary_of_current(current)
    minimal, mass = minimal_connection(charges)
    pairs = []
    for s in minimal.segments:
        pairs.extend([(s.b, s.a)] * s.mult)
    total = float(sum(math.dist(p, q) for p, q in pairs))
    return pairs, total if pairs else mass
