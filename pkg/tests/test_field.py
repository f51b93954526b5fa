from __future__ import annotations

import math

import numpy as np
import pytest

from fluxforge.field import (
    ChargeSet, Cube, CorruptFieldError, GridSpec, VectorField, WeightedMeasure, boundary_flux,
    constant_field, face_nodes, face_normal_integrals, gen_circle_map_current, gen_divfree, gen_vortex, lp_norm,
)

# 2-D midpoint sum of 1/(2 pi |x|) over the unit square at N=1024 (plain numpy)
VORTEX_L1_FINE = 0.5608488285824326


def unit_vortex(N=128, n=2):
    return gen_vortex(n, ChargeSet.from_pairs([((0.0,) * n, 1)]), N=N)


def test_grid_centers():
    g = GridSpec(2, 4)
    assert g.h == 0.25
    np.testing.assert_allclose(g.axis_centers(), [-0.375, -0.125, 0.125, 0.375])
    assert g.centers().shape == (4, 4, 2)


@pytest.mark.parametrize("dim", [0, 5])
def test_grid_rejects_dimension(dim):
    with pytest.raises(ValueError):
        GridSpec(dim, 8)


def test_density():
    mu = WeightedMeasure(0.5)
    np.testing.assert_allclose(mu.density(np.array([[0.0, 0.0], [0.25, -0.1]])), [0.5 ** 0.5, 0.25 ** 0.5])
    assert np.all(WeightedMeasure(0.0).density(np.zeros((3, 2))) == 1)
    with pytest.raises(ValueError):
        WeightedMeasure(1.5)


def test_lp_norm_constant_and_zero():
    assert lp_norm(constant_field((1.0, 0.0), N=16), 2.0) == pytest.approx(1.0, abs=1e-14)
    for q in (0.0, 0.5, -0.5):
        assert lp_norm(constant_field((0.0, 0.0), N=8, q=q), 1.5, WeightedMeasure(q)) == 0.0


def test_lp_norm_vortex_matches_fine_grid():
    assert lp_norm(unit_vortex(128), 1.0) == pytest.approx(VORTEX_L1_FINE, rel=1e-2)


def test_lp_norm_homogeneous_and_weight_consistent():
    V = gen_divfree(3, 2, N=32)
    for c in (2.5, -0.3):
        assert lp_norm(V.scaled(c), 1.7) == pytest.approx(abs(c) * lp_norm(V, 1.7), rel=1e-12)
    assert lp_norm(V, 2.0, WeightedMeasure(0.0)) == lp_norm(V, 2.0)


def test_lp_norm_rejects_nonfinite():
    vals = np.zeros((4, 4, 2))
    vals[1, 2, 0] = np.nan
    with pytest.raises(CorruptFieldError, match="corrupt field"):
        lp_norm(VectorField(GridSpec(2, 4), vals), 2.0)


def test_vortex_flux_centered_and_offcenter():
    V = unit_vortex()
    assert boundary_flux(V, Cube.centered((0.0, 0.0), 0.5), 256) == pytest.approx(1.0, abs=1e-3)
    assert boundary_flux(V, Cube.centered((0.3, 0.3), 0.2), 256) == pytest.approx(0.0, abs=1e-3)
    for rho in (0.05, 0.3, 0.9):
        assert boundary_flux(V, Cube.centered((0.0, 0.0), rho), 256) == pytest.approx(1.0, abs=1e-3)


def test_constant_flux_is_exactly_zero():
    V = constant_field((0.37, -1.2), N=8)
    assert boundary_flux(V, Cube.centered((0.1, -0.05), 0.3), 64) == 0.0


def test_flux_rejects_cube_outside():
    with pytest.raises(ValueError):
        boundary_flux(unit_vortex(32), Cube.centered((0.4, 0.0), 0.4), 16)


def test_shared_faces_are_bitwise_equal():
    a = Cube((-0.3, -0.2), (0.1, 0.2))
    b = Cube((0.1, -0.2), (0.4, 0.2))
    pa, _ = face_nodes(a, 0, True, 17)
    pb, _ = face_nodes(b, 0, False, 17)
    assert np.array_equal(pa, pb)


def test_flux_telescopes_over_partition():
    V = gen_vortex(2, ChargeSet.from_pairs([((0.01, 0.02), 1), ((-0.2, 0.1), -2)]), N=32)
    edges = [-0.4, -0.1, 0.05, 0.3]
    total = 0.0
    outer = 0.0
    for i in range(3):
        for j in range(3):
            cube = Cube((edges[i], edges[j]), (edges[i + 1], edges[j + 1]))
            total += boundary_flux(V, cube, 32)
            faces = face_normal_integrals(V, cube, 32)
            # faces of this subcube lying on the boundary of the union
            outer -= faces[0, 0] if i == 0 else 0.0
            outer += faces[0, 1] if i == 2 else 0.0
            outer -= faces[1, 0] if j == 0 else 0.0
            outer += faces[1, 1] if j == 2 else 0.0
    # interior faces cancel bitwise; only summation order differs
    assert total == pytest.approx(outer, abs=1e-13)
    assert round(outer) == -1


def test_vortex_flux_quantized_on_random_cubes():
    charges = ChargeSet.from_pairs([((0.12, -0.07), 1), ((-0.2, 0.15), -1), ((0.3, 0.3), 2)])
    V = gen_vortex(2, charges, N=64)
    rng = np.random.default_rng(5)
    checked = 0
    while checked < 200:
        c = rng.uniform(-0.45, 0.45, 2)
        room = 2 * (0.5 - np.max(np.abs(c)))
        e = rng.uniform(0.02, 1.0) * room
        cube = Cube.centered(c, e * 0.999)
        dist = [np.max(np.abs(np.array(ch.pos) - c)) for ch in charges]
        # skip cubes whose boundary passes within quadrature reach of a charge
        if min(abs(d - cube.side / 2) for d in dist) < 0.02:
            continue
        enclosed = sum(ch.deg for ch, d in zip(charges, dist) if d < cube.side / 2)
        assert abs(boundary_flux(V, cube, 256) - enclosed) < 1e-2
        checked += 1


def test_dipole_fluxes():
    V = gen_vortex(2, ChargeSet.from_pairs([((0.1, 0.0), 1), ((-0.1, 0.0), -1)]), N=64)
    assert abs(boundary_flux(V, Cube.centered((0.0, 0.0), 0.8), 256)) < 1e-3
    assert boundary_flux(V, Cube.centered((0.1, 0.0), 0.05), 256) == pytest.approx(1.0, abs=1e-3)


def test_vortex_3d_flux():
    V = gen_vortex(3, ChargeSet.from_pairs([((0.0, 0.0, 0.0), 1)]), N=16)
    assert boundary_flux(V, Cube.centered((0.0, 0.0, 0.0), 0.5), 64) == pytest.approx(1.0, abs=1e-3)


def test_empty_charges_zero_field():
    V = gen_vortex(2, ChargeSet(), N=8)
    assert np.all(V.values == 0)


def test_circle_map_fluxes():
    one = gen_circle_map_current([((0.0, 0.0), 1)], N=64)
    for rho in (0.1, 0.5, 0.9):
        assert boundary_flux(one, Cube.centered((0.0, 0.0), rho), 256) == pytest.approx(1.0, abs=1e-3)
    off = gen_circle_map_current([((0.2, 0.1), 1)], N=64)
    assert boundary_flux(off, Cube.centered((0.2, 0.1), 0.1), 256) == pytest.approx(1.0, abs=1e-3)
    pair = gen_circle_map_current([((0.1, 0.0), 1), ((-0.1, 0.05), -1)], N=64)
    assert abs(boundary_flux(pair, Cube.centered((0.0, 0.0), 0.9), 256)) < 1e-3


def test_circle_map_differs_from_vortex_by_divergence_free_part():
    pts = [((0.1, 0.0), 1), ((-0.1, 0.05), -1)]
    J = gen_circle_map_current(pts, N=32)
    V = gen_vortex(2, ChargeSet.from_pairs(pts), N=32)
    diff = J.evaluate
    rng = np.random.default_rng(2)
    for _ in range(20):
        c = rng.uniform(-0.3, 0.3, 2)
        cube = Cube.centered(c, 0.15)
        if any(np.max(np.abs(np.array(p) - c)) < 0.1 for p, _ in pts):
            continue
        f = boundary_flux(lambda x: diff(x) - V.evaluate(x), cube, 256)
        assert abs(f) < 1e-3


def test_divfree_fluxes_vanish_and_reproducible():
    V = gen_divfree(7, 2, N=64)
    rng = np.random.default_rng(0)
    for _ in range(100):
        c = rng.uniform(-0.4, 0.4, 2)
        room = 2 * (0.5 - np.max(np.abs(c)))
        cube = Cube.centered(c, rng.uniform(0.05, 0.99) * room)
        assert abs(boundary_flux(V, cube, 128)) < 1e-6
    assert np.array_equal(V.values, gen_divfree(7, 2, N=64).values)
    assert lp_norm(V, 2.0) > 0
    W = gen_divfree(8, 3, N=16)
    assert abs(boundary_flux(W, Cube.centered((0.05, 0.0, -0.1), 0.4), 32)) < 1e-6


def test_analytic_matches_grid_values():
    V = unit_vortex(32)
    assert np.allclose(V.analytic(V.grid.centers()), V.values, rtol=0, atol=1e-12)


def test_interpolation_fallback():
    V = gen_divfree(2, 2, N=64)
    W = VectorField(V.grid, V.values)
    pts = np.random.default_rng(1).uniform(-0.4, 0.4, (50, 2))
    assert np.max(np.abs(W.evaluate(pts) - V.evaluate(pts))) < 5e-2


def test_charge_set_validation():
    with pytest.raises(ValueError):
        ChargeSet.from_pairs([((0.5, 0.0), 1)])
    with pytest.raises(ValueError):
        ChargeSet.from_pairs([((0.0, 0.0), 0)])
    with pytest.raises(ValueError):
        ChargeSet.from_pairs([((0.1, 0.0), 1), ((0.1, 0.0), -1)])
    S = ChargeSet.from_pairs([((0.1, 0.0), 2), ((0.0, 0.2), -1)])
    assert S.total_degree() == 1
    assert S.to_json() == [{"pos": [0.1, 0.0], "deg": 2}, {"pos": [0.0, 0.2], "deg": -1}]


def test_unit_ball_volume_known_values():
    from fluxforge.field import unit_ball_volume
    assert unit_ball_volume(2) == pytest.approx(math.pi)
    assert unit_ball_volume(3) == pytest.approx(4 * math.pi / 3)
