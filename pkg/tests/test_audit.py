from __future__ import annotations

import numpy as np
import pytest

from fluxforge.audit import (
    INCONCLUSIVE, INTEGRAL, NON_INTEGRAL, FluxAuditReport, FluxSample, integer_flux_scan,
    lipschitz_slice_check,
)
from fluxforge.field import ChargeSet, constant_field, gen_divfree, gen_vortex


@pytest.fixture(scope="module")
def vortex():
    return gen_vortex(2, ChargeSet.from_pairs([((0.0, 0.0), 1)]), N=128)


def test_vortex_scan_integral(vortex):
    report = integer_flux_scan(vortex, 1e-2, 50, 20, seed=42)
    assert report.verdict == INTEGRAL
    assert report.pass_fraction >= 0.95
    assert {s.nearest for s in report.samples} <= {0, 1}


def test_constant_scan_all_zero():
    report = integer_flux_scan(constant_field((0.37, 0.0), N=32), 1e-2, 20, 10)
    assert report.verdict == INTEGRAL
    assert all(s.flux == 0.0 for s in report.samples)


def test_half_vortex_non_integral(vortex):
    report = integer_flux_scan(vortex.scaled(0.5), 1e-2, 50, 20, seed=42)
    assert report.verdict == NON_INTEGRAL
    failing = np.array([s.deviation for s in report.samples if s.deviation >= 1e-2])
    # a cube face grazing the charge can give any value; the bulk sits at 1/2
    assert failing.size > 0.05 * len(report.samples)
    assert np.mean(np.abs(failing - 0.5) < 0.05) >= 0.95
    assert abs(np.median(failing) - 0.5) < 1e-2


def test_scan_deterministic(vortex):
    a = integer_flux_scan(vortex, 1e-2, 10, 5, seed=3)
    b = integer_flux_scan(vortex, 1e-2, 10, 5, seed=3)
    assert a.to_json() == b.to_json()


def test_tolerance_range(vortex):
    for tol in (0.0, 0.5):
        with pytest.raises(ValueError):
            integer_flux_scan(vortex, tol, 2, 2)


def test_refinement_does_not_increase_deviation(vortex):
    coarse = integer_flux_scan(vortex, 1e-2, 20, 10, seed=1, M=64)
    fine = integer_flux_scan(vortex, 1e-2, 20, 10, seed=1, M=512)
    assert fine.max_deviation <= coarse.max_deviation


def test_coarse_grid_is_inconclusive():
    V = gen_divfree(1, 2, N=2)
    assert integer_flux_scan(V, 1e-2, 10, 10).verdict == INCONCLUSIVE


def test_empty_report_inconclusive():
    assert FluxAuditReport((), 1e-2).verdict == INCONCLUSIVE


def test_verdict_threshold():
    good = FluxSample((0.0, 0.0), 0.1, 1.0, 1, 0.0)
    bad = FluxSample((0.0, 0.0), 0.1, 0.5, 0, 0.5)
    assert FluxAuditReport((good,) * 95 + (bad,) * 5, 1e-2).verdict == INTEGRAL
    assert FluxAuditReport((good,) * 94 + (bad,) * 6, 1e-2).verdict == NON_INTEGRAL


def test_slices_of_vortex(vortex):
    report = lipschitz_slice_check(vortex, (0.0, 0.0), 10)
    assert report.verdict == INTEGRAL
    assert all(s.nearest == 1 for s in report.samples)


def test_slices_of_divfree():
    report = lipschitz_slice_check(gen_divfree(4, 2, N=64), (0.1, -0.1), 8)
    assert all(abs(s.flux) < 1e-6 for s in report.samples)


def test_slices_of_dipole():
    V = gen_vortex(2, ChargeSet.from_pairs([((0.1, 0.0), 1), ((-0.1, 0.0), -1)]), N=128)
    x0 = np.array([0.0, 0.0])
    report = lipschitz_slice_check(V, x0, 10)
    for s in report.samples:
        # level cube of edge 2t encloses both charges once t > 0.1
        assert s.nearest == 0
        assert s.deviation < 1e-2
    off = lipschitz_slice_check(V, (0.12, 0.0), 10)
    half_gap = 0.02
    for s in off.samples:
        expected = 1 if s.edge / 2 > half_gap and s.edge / 2 < 0.22 else 0
        if abs(s.edge / 2 - 0.22) > 0.01 and abs(s.edge / 2 - half_gap) > 0.01:
            assert s.nearest == expected


def test_slice_rejects_outside_point(vortex):
    with pytest.raises(ValueError):
        lipschitz_slice_check(vortex, (0.5, 0.0))


def test_halving_breaks_integrality():
    V = gen_vortex(2, ChargeSet.from_pairs([((0.2, -0.1), 2), ((-0.15, 0.1), -1)]), N=64)
    assert integer_flux_scan(V, 1e-2, 30, 10).verdict == INTEGRAL
    assert integer_flux_scan(V.scaled(0.5), 1e-2, 30, 10).verdict == NON_INTEGRAL
