from __future__ import annotations

import numpy as np
import pytest

from fluxforge.decomposition import (
    BAD, GOOD, NON_INTEGRAL, CubeRecord, bad_cube_stats, build_mesh, candidate_shifts, classify_cubes,
    cube_means, cubes_per_side, select_shift, skeleton_deviation,
)
from fluxforge.field import ChargeSet, WeightedMeasure, boundary_flux, constant_field, gen_divfree, gen_vortex


def test_quarter_mesh_centers():
    mesh = build_mesh(0.25, (0.0, 0.0))
    assert mesh.q_eps == 3
    assert mesh.count == 4
    np.testing.assert_allclose(sorted(set(mesh.centers[:, 0])), [-0.125, 0.125])


def test_cubes_per_side_values():
    assert cubes_per_side(0.3) == 2
    assert build_mesh(0.3, (0.0, 0.0)).count == 1
    assert cubes_per_side(0.125) == 7
    assert cubes_per_side(0.1) == 9  # 0.9/0.1 lands a hair below 9 in floating point


@pytest.mark.parametrize("eps", [0.25, 0.2, 0.125, 0.07])
def test_cube_count_and_containment(eps):
    rng = np.random.default_rng(0)
    shift = rng.uniform(-eps / 2, eps / 2, 3) * 0.99
    mesh = build_mesh(eps, shift)
    assert mesh.count == (mesh.q_eps - 1) ** 3
    for idx in mesh.indices():
        assert mesh.cube(idx).inside_unit_cube()


def test_mesh_argument_checks():
    with pytest.raises(ValueError):
        build_mesh(0.25, (0.125, 0.0))
    with pytest.raises(ValueError):
        build_mesh(0.5, (0.0, 0.0))
    with pytest.raises(ValueError):
        build_mesh(0.0, (0.0, 0.0))


def test_adjacent_cubes_share_edges():
    mesh = build_mesh(0.2, (0.013, -0.04))
    assert mesh.cube((0, 1)).hi[0] == mesh.cube((1, 1)).lo[0]


def test_cube_means_of_constant():
    V = constant_field((0.3, -0.7), N=32)
    means = cube_means(V, build_mesh(0.2, (0.03, -0.01)))
    np.testing.assert_allclose(means, np.broadcast_to([0.3, -0.7], means.shape), atol=1e-14)


def test_cube_means_of_linear_field():
    from fluxforge.field import VectorField

    V = VectorField.from_function(lambda x: np.stack([x[..., 0], 2 * x[..., 1]], -1), 2, 64)
    mesh = build_mesh(0.25, (0.0, 0.0))
    means = cube_means(V, mesh)
    for idx in mesh.indices():
        c = mesh.cube(idx).center
        np.testing.assert_allclose(means[idx], [c[0], 2 * c[1]], atol=1e-12)


def test_constant_field_picks_zero_shift():
    V = constant_field((0.6, -0.8), N=64)
    mesh, table = select_shift(V, 0.125, 2.0)
    assert mesh.shift == (0.0, 0.0)
    assert len(table) == 33
    assert all(d < 1e-20 for _, d in table)
    assert skeleton_deviation(V, mesh, 2.0) < 1e-25


def test_candidates_seeded():
    assert candidate_shifts(0.2, 2, 5, 42) == candidate_shifts(0.2, 2, 5, 42)
    assert candidate_shifts(0.2, 2, 5, 42) != candidate_shifts(0.2, 2, 5, 43)
    assert all(max(abs(v) for v in a) < 0.1 for a in candidate_shifts(0.2, 2, 50, 1))


def test_selected_shift_is_the_argmin():
    V = gen_vortex(2, ChargeSet.from_pairs([((0.05, -0.02), 1)]), N=64)
    mesh, table = select_shift(V, 0.2, 1.5, n_candidates=8)
    best = min(d for _, d in table)
    chosen = dict(table)[mesh.shift]
    assert chosen <= best * (1 + 1e-12)


def test_vortex_one_bad_cube():
    V = gen_vortex(2, ChargeSet.from_pairs([((0.0, 0.0), 1)]), N=128)
    mesh = build_mesh(0.25, (0.05, 0.06))  # origin inside cube (0, 0)
    recs = classify_cubes(V, mesh)
    bad = [r for r in recs if r.cls == BAD]
    assert len(bad) == 1 and bad[0].degree == 1
    assert all(r.cls == GOOD for r in recs if r.cls != BAD)
    assert bad_cube_stats(recs, mesh) == (1, 0.25 ** 2)


@pytest.mark.parametrize("eps", [0.25, 0.125, 0.0625])
def test_divfree_has_no_bad_cubes(eps):
    V = gen_divfree(7, 2, N=64)
    mesh, _ = select_shift(V, eps, 2.0, n_candidates=4)
    assert all(r.cls == GOOD for r in classify_cubes(V, mesh))


def test_half_vortex_flags_one_cube():
    V = gen_vortex(2, ChargeSet.from_pairs([((0.0, 0.0), 1)]), N=64).scaled(0.5)
    recs = classify_cubes(V, build_mesh(0.25, (0.05, 0.06)))
    flagged = [r for r in recs if r.cls == NON_INTEGRAL]
    assert len(flagged) == 1
    assert flagged[0].flux == pytest.approx(0.5, abs=1e-3)


def test_classification_tolerance_range():
    V = constant_field((1.0, 0.0), N=8)
    with pytest.raises(ValueError):
        classify_cubes(V, build_mesh(0.25, (0.0, 0.0)), tolerance=0.6)


def test_bad_cube_stats_cases():
    mesh = build_mesh(0.125, (0.0, 0.0))
    assert bad_cube_stats([], mesh) == (0, 0.0)
    rec = CubeRecord((0, 0), (0.0, 0.0), (0.0, 0.0), 1.0, 1, BAD)
    assert bad_cube_stats([rec], mesh) == (1, 0.125 ** 2)
    pos = [(-0.3, -0.3), (0.0, 0.2), (0.31, -0.1)]
    V = gen_vortex(2, ChargeSet.from_pairs([(p, 1) for p in pos]), N=128)
    mesh = build_mesh(0.125, (0.011, 0.013))
    count, vol = bad_cube_stats(classify_cubes(V, mesh), mesh)
    assert count == 3 and vol == pytest.approx(3 * 0.125 ** 2)


def test_weighted_bad_volume():
    mesh = build_mesh(0.25, (0.0, 0.0))
    rec = CubeRecord((0, 0), (0.125, 0.125), (0.0, 0.0), 1.0, 1, BAD)
    _, vol = bad_cube_stats([rec], mesh, WeightedMeasure(1.0))
    assert vol == pytest.approx(0.0625 * 0.375)


def test_degree_conservation_and_charge_containment():
    charges = ChargeSet.from_pairs([((0.11, -0.07), 1), ((-0.2, 0.15), -1), ((0.27, 0.3), 2)])
    V = gen_vortex(2, charges, N=128)
    mesh, _ = select_shift(V, 0.125, 1.5, n_candidates=8)
    recs = classify_cubes(V, mesh)
    region = mesh.region()
    assert sum(r.degree for r in recs) == round(boundary_flux(V, region, 512))
    for r in recs:
        if r.cls == BAD:
            cube = mesh.cube(r.index)
            assert any(np.all(np.abs(np.array(c.pos) - cube.center) < cube.side / 2) for c in charges)


def test_bad_volume_shrinks_with_eps():
    V = gen_vortex(2, ChargeSet.from_pairs([((0.02, 0.03), 1), ((-0.2, 0.1), -1)]), N=128)
    vols = []
    for eps in (0.25, 0.125, 0.0625):
        mesh, _ = select_shift(V, eps, 1.5, n_candidates=8)
        vols.append(bad_cube_stats(classify_cubes(V, mesh), mesh)[1])
    assert vols[1] <= 1.5 * vols[0] and vols[2] <= 1.5 * vols[1]
