"""Integer-valued functions on the unit interval.

Two constructions: projecting a sampled function onto integer step functions
plus a constant, and an integer-valued sequence with the same dyadic averages
as a given function, which converges to it only weakly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np


class NotIntegerValuedError(ValueError):
    def __init__(self, distance: float, tol: float):
        self.distance = distance
        super().__init__(f"samples are at L^p distance {distance:.6g} > tol {tol:g} "
                         "from every integer step function plus constant at this resolution")


@dataclass(frozen=True, eq=False)
class StepFunction:
    breakpoints: np.ndarray  # 0 = b_0 < b_1 < ... < b_L = 1
    values: np.ndarray  # value on [b_i, b_{i+1})
    offset: float = 0.0

    def __post_init__(self) -> None:
        b = np.asarray(self.breakpoints, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if b.ndim != 1 or b.size < 2 or b[0] != 0.0 or b[-1] != 1.0:
            raise ValueError("breakpoints must run from 0 to 1")
        if np.any(np.diff(b) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        if v.shape != (b.size - 1,):
            raise ValueError("need exactly one value per interval")
        if not np.all(np.isfinite(v)) or not math.isfinite(self.offset):
            raise ValueError("values must be finite")
        object.__setattr__(self, "breakpoints", b)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_samples(cls, samples, offset: float = 0.0) -> StepFunction:
        """Piecewise constant on N equal cells, one sample per cell."""
        s = np.asarray(samples, dtype=float)
        return cls(np.linspace(0.0, 1.0, s.size + 1), s - offset, offset)

    def evaluate(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        i = np.clip(np.searchsorted(self.breakpoints, x, side="right") - 1, 0, self.values.size - 1)
        return self.offset + self.values[i]

    __call__ = evaluate

    def integrate(self, a: float, b: float) -> float:
        """Exact integral over [a, b]."""
        lo = np.clip(self.breakpoints[:-1], a, b)
        hi = np.clip(self.breakpoints[1:], a, b)
        return float(np.sum(self.values * (hi - lo))) + self.offset * (b - a)

    def lp_norm(self, p: float = 2.0) -> float:
        lengths = np.diff(self.breakpoints)
        return float(np.sum(np.abs(self.values + self.offset) ** p * lengths)) ** (1 / p)

    @property
    def is_integer_step(self) -> bool:
        return bool(np.all(self.values == np.rint(self.values)))

    def merged(self) -> StepFunction:
        """Drop breakpoints between equal values."""
        keep = np.concatenate([[True], self.values[1:] != self.values[:-1]])
        starts = self.breakpoints[:-1][keep]
        return StepFunction(np.append(starts, 1.0), self.values[keep], self.offset)

    def to_json(self) -> dict:
        return {"breakpoints": self.breakpoints.tolist(), "values": self.values.tolist(),
                "offset": self.offset}

    @classmethod
    def from_json(cls, data: dict) -> StepFunction:
        return cls(np.asarray(data["breakpoints"]), np.asarray(data["values"]), float(data.get("offset", 0.0)))


def circular_offset(samples: np.ndarray) -> float:
    """Constant c in [0, 1) best explaining samples as c + integers.

    Uses the mean of exp(2 pi i f), which is invariant under integer shifts.
    """
    z = np.mean(np.exp(2j * math.pi * np.asarray(samples, dtype=float)))
    if abs(z) < 1e-12:
        return 0.0
    c = (math.atan2(z.imag, z.real) / (2 * math.pi)) % 1.0
    return 0.0 if c > 1.0 - 1e-12 else c


def integer_step_projection(
    samples, K: int | None = None, tol: float = 1e-2, p: float = 2.0,
) -> StepFunction:
    """Integer step function plus constant closest to cell samples of f on [0, 1).

    The offset is the circular mean of the fractional parts, taken as 0 when
    it is within tol of an integer and 0 still fits. The remainder is
    truncated at level K (values above K in modulus become 0), rounded, and
    grouped into runs of equal cells.
    """
    f = np.asarray(samples, dtype=float)
    if f.ndim != 1 or f.size == 0:
        raise ValueError("samples must be a nonempty 1-D array")
    if not np.all(np.isfinite(f)):
        raise ValueError("samples must be finite")
    if K is not None and K < 0:
        raise ValueError("K must be nonnegative")
    c = circular_offset(f)
    candidates = [c]
    # an offset within tol of an integer is noise around 0
    if min(c, 1.0 - c) < tol and c != 0.0:
        candidates.insert(0, 0.0)
    best = None
    for off in candidates:
        levels, distance = _round_levels(f, off, K, p)
        if distance <= tol:
            return StepFunction(np.linspace(0.0, 1.0, f.size + 1), levels, off).merged()
        best = distance if best is None else min(best, distance)
    raise NotIntegerValuedError(best, tol)


def _round_levels(f: np.ndarray, offset: float, K: int | None, p: float) -> tuple[np.ndarray, float]:
    g = f - offset
    if K is None:
        K = int(math.ceil(float(np.max(np.abs(g)))))
    truncated = np.where(np.abs(g) <= K + 0.5, g, 0.0)
    levels = np.clip(np.rint(truncated), -K, K) + 0.0  # no negative zeros
    return levels, float(np.mean(np.abs(g - levels) ** p)) ** (1 / p)


def _gauss_average(f: Callable, a: float, b: float, order: int, pieces: int) -> float:
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(a, b, pieces + 1)
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        mid, half = (lo + hi) / 2, (hi - lo) / 2
        total += half * float(np.dot(w, f(mid + half * x)))
    return total / (b - a)


def dyadic_averages(f, levels: int, order: int = 16, pieces: int = 4) -> np.ndarray:
    """Averages of f on the 2^levels dyadic intervals.

    Exact for step functions; Gauss-Legendre otherwise.
    """
    count = 2 ** levels
    edges = np.arange(count + 1) / count
    if isinstance(f, StepFunction):
        return np.array([f.integrate(a, b) for a, b in zip(edges[:-1], edges[1:])]) * count
    return np.array([_gauss_average(f, a, b, order, pieces) for a, b in zip(edges[:-1], edges[1:])])


def weak_approx_sequence(f, levels: int, averages: np.ndarray | None = None) -> StepFunction:
    """Integer-valued f_n with the same averages as f on every dyadic interval.

    On each interval the value ceil(c) (floor(c) for negative c) occupies an
    initial sub-segment of length c / (2^n ceil(c)); the rest is 0.
    """
    if levels < 0:
        raise ValueError("levels must be >= 0")
    count = 2 ** levels
    c = np.asarray(averages if averages is not None else dyadic_averages(f, levels), dtype=float)
    if c.shape != (count,):
        raise ValueError(f"need {count} averages")
    if not np.all(np.isfinite(c)):
        raise ValueError("f must be bounded")
    width = 1.0 / count
    bps = [0.0]
    vals = []
    for k, ck in enumerate(c):
        start = k * width
        top = math.ceil(ck) if ck > 0 else math.floor(ck)
        if top == 0 or start + ck / (count * top) <= start:
            vals.append(0.0)
        elif top == ck:
            vals.append(float(top))
        else:
            length = ck / (count * top)
            bps.append(start + length)
            vals += [float(top), 0.0]
        bps.append((k + 1) / count)
    bps[-1] = 1.0
    return StepFunction(np.array(bps), np.array(vals)).merged()
