"""Independent reference computations used by the tests."""

from __future__ import annotations

import itertools
import math

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve


def q1_quadratic_energy(side: float, datum: np.ndarray) -> float:
    """min_u 1/2 int |grad u|^2 - int_{dQ} f u on a square, by an element loop.

    Bilinear elements on an m x m grid, exact element stiffness, datum
    constant on each boundary segment (so each segment loads its two end
    nodes with f h / 2). Returns -1/2 b.u at the minimizer.
    """
    m = datum.shape[2]
    h = side / m
    Ke = np.array([[4, -1, -2, -1], [-1, 4, -1, -2], [-2, -1, 4, -1], [-1, -2, -1, 4]]) / 6.0

    def node(i, j):
        return i * (m + 1) + j

    rows, cols, vals = [], [], []
    for i in range(m):
        for j in range(m):
            loc = [node(i, j), node(i + 1, j), node(i + 1, j + 1), node(i, j + 1)]
            for a in range(4):
                for b in range(4):
                    rows.append(loc[a])
                    cols.append(loc[b])
                    vals.append(Ke[a, b])
    N = (m + 1) ** 2
    K = sp.coo_matrix((vals, (rows, cols)), shape=(N, N)).tocsr()
    b = np.zeros(N)
    for k in range(2):
        for s, plane in enumerate((0, m)):
            for t in range(m):
                f = datum[k, s, t]
                for end in (t, t + 1):
                    idx = (plane, end) if k == 0 else (end, plane)
                    b[node(*idx)] += f * h / 2
    u = np.zeros(N)
    u[1:] = spsolve(K[1:, 1:].tocsc(), b[1:])
    return -0.5 * float(b @ u)


def bad_cube_l1_unit_datum() -> float:
    """int over the unit square of |V| for the radial extension of f = 1.

    |V| = |x| / (2 r^2), r = |x|_inf; integrating over square level sets gives
    (sqrt 2 + asinh 1).
    """
    return math.sqrt(2) + math.asinh(1)


def brute_force_connection(pos, neg) -> float:
    """Minimal mass for unit charges: each positive pairs with a distinct
    negative or with the boundary; unpaired negatives go to the boundary."""
    def bdist(x):
        return 0.5 - max(abs(v) for v in x)

    best = math.inf
    P, Q = len(pos), len(neg)
    for k in range(min(P, Q) + 1):
        for ps in itertools.combinations(range(P), k):
            for qs in itertools.permutations(range(Q), k):
                cost = sum(math.dist(pos[a], neg[b]) for a, b in zip(ps, qs))
                cost += sum(bdist(pos[a]) for a in range(P) if a not in ps)
                cost += sum(bdist(neg[b]) for b in range(Q) if b not in qs)
                best = min(best, cost)
    return best
