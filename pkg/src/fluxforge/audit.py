"""Sampling audit for integer-valued fluxes through cubes."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .field import Cube, VectorField, boundary_flux

INTEGRAL = "integral"
NON_INTEGRAL = "non-integral"
INCONCLUSIVE = "inconclusive"
REQUIRED_PASS_FRACTION = 0.95


@dataclass(frozen=True)
class FluxSample:
    center: tuple[float, ...]
    edge: float
    flux: float
    nearest: int
    deviation: float


@dataclass(frozen=True)
class FluxAuditReport:
    samples: tuple[FluxSample, ...]
    tolerance: float
    skipped: int = 0
    quadrature: int = 256
    extra: dict = field(default_factory=dict)

    @property
    def pass_fraction(self) -> float:
        if not self.samples:
            return 0.0
        return sum(s.deviation < self.tolerance for s in self.samples) / len(self.samples)

    @property
    def max_deviation(self) -> float:
        return max((s.deviation for s in self.samples), default=0.0)

    @property
    def max_passing_deviation(self) -> float:
        return max((s.deviation for s in self.samples if s.deviation < self.tolerance), default=0.0)

    @property
    def verdict(self) -> str:
        if not self.samples or self.skipped > len(self.samples):
            return INCONCLUSIVE
        if self.pass_fraction >= REQUIRED_PASS_FRACTION and self.max_passing_deviation < self.tolerance:
            return INTEGRAL
        return NON_INTEGRAL

    def to_json(self) -> dict:
        return {
            "verdict": self.verdict,
            "pass_fraction": self.pass_fraction,
            "max_deviation": self.max_deviation,
            "tolerance": self.tolerance,
            "quadrature": self.quadrature,
            "evaluated": len(self.samples),
            "skipped": self.skipped,
            **self.extra,
            "samples": [
                {"center": list(s.center), "edge": s.edge, "flux": s.flux,
                 "nearest": s.nearest, "deviation": s.deviation}
                for s in self.samples
            ],
        }


def _sample(V: VectorField, center: np.ndarray, edge: float, M: int) -> FluxSample:
    flux = boundary_flux(V, Cube.centered(center, edge), M)
    nearest = int(np.rint(flux))
    return FluxSample(tuple(float(c) for c in center), float(edge), flux, nearest,
                      abs(flux - nearest))


def integer_flux_scan(
    V: VectorField, tolerance: float = 1e-2, n_centers: int = 50, n_radii: int = 20,
    seed: int = 42, M: int = 256,
) -> FluxAuditReport:
    """Random cubes Q_rho(x0) inside the unit cube, flux checked against integers."""
    if not 0 < tolerance < 0.5:
        raise ValueError("tolerance must lie in (0, 0.5)")
    rng = np.random.default_rng(seed)
    n = V.dim
    min_edge = 2 * V.grid.h
    samples = []
    skipped = 0
    for _ in range(n_centers):
        center = rng.uniform(-0.5, 0.5, size=n)
        room = 2 * (0.5 - np.max(np.abs(center)))
        edges = rng.uniform(0.0, 1.0, size=n_radii) * room
        for edge in edges:
            if edge < min_edge or edge >= room:
                skipped += 1
                continue
            samples.append(_sample(V, center, edge, M))
    return FluxAuditReport(tuple(samples), tolerance, skipped, M)


def lipschitz_slice_check(
    V: VectorField, x0, n_levels: int = 10, tolerance: float = 1e-2, M: int = 256,
) -> FluxAuditReport:
    """Level sets of min(|x - x0|_inf, r/2) are boundaries of concentric cubes.

    Level t in (0, r/2) gives the cube of edge 2t around x0, with r the
    sup-distance from x0 to the boundary of the unit cube.
    """
    x0 = np.asarray(x0, dtype=float)
    if np.max(np.abs(x0)) >= 0.5:
        raise ValueError("x0 must lie inside the unit cube")
    r = 0.5 - float(np.max(np.abs(x0)))
    levels = (np.arange(n_levels) + 0.5) / n_levels * (r / 2)
    samples = []
    skipped = 0
    for t in levels:
        if 2 * t < 2 * V.grid.h:
            skipped += 1
            continue
        samples.append(_sample(V, x0, 2 * t, M))
    return FluxAuditReport(tuple(samples), tolerance, skipped, M,
                           extra={"x0": x0.tolist(), "levels": levels.tolist()})
