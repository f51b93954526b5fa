from __future__ import annotations

import numpy as np
import pytest

from fluxforge.decomposition import BAD, build_mesh, classify_cubes
from fluxforge.field import ChargeSet, gen_divfree, gen_vortex
from fluxforge.smoothing import (
    FaceData, FaceTooCoarseError, all_faces, balance_fluxes, bump, cube_faces, cube_flux, minimal_budget,
    mollifier, ring_index, smooth_face, smooth_skeleton,
)


def face(samples, side=0.25):
    s = np.asarray(samples, dtype=float)
    return FaceData((0, 0, ()), s, (side / s.shape[0]) ** s.ndim)


def test_integral_cached():
    g = face(np.arange(16.0))
    assert g.integral == float(np.sum(g.samples)) * g.weight
    with pytest.raises(ValueError):
        g.samples[0] = 1.0


def test_zero_face_stays_zero():
    out = smooth_face(face(np.zeros((32, 32))), 1e-3)
    assert np.all(out.samples == 0)


@pytest.mark.parametrize("shape", [(64,), (40, 40)])
def test_unit_face(shape):
    g = face(np.ones(shape))
    out = smooth_face(g, 0.5)
    assert out.integral == pytest.approx(g.integral, rel=1e-13)
    psi = bump(shape[0], len(shape), g.weight)
    assert np.max(out.samples) <= 1 + abs(out.info["reinserted"]) * psi.max() + 1e-12


def test_bump_normalized():
    for k, M in ((1, 50), (2, 24)):
        w = (0.3 / M) ** k
        assert np.sum(bump(M, k, w)) * w == pytest.approx(1.0, rel=1e-14)
        r = ring_index(M, k)
        assert np.all(bump(M, k, w)[r < M // 4] == 0)


def test_mollifier_normalized_and_supported():
    ker = mollifier(3.5, 2)
    assert ker.sum() == pytest.approx(1.0, abs=1e-15)
    assert ker.shape == (7, 7)


def test_outer_ring_vanishes_and_support_inside():
    rng = np.random.default_rng(3)
    g = face(rng.normal(size=(48, 48)))
    out = smooth_face(g, 10.0)
    ring = ring_index(48, 2)
    assert np.all(out.samples[ring == 0] == 0)


def test_noise_within_three_delta():
    rng = np.random.default_rng(7)
    for _ in range(20):
        g = face(rng.normal(size=256), side=0.2)
        delta = 1.5 * minimal_budget(g)
        out = smooth_face(g, delta)
        diff = float(np.sum((out.samples - g.samples) ** 2) * g.weight) ** 0.5
        assert diff <= 3 * delta
        assert abs(out.integral - g.integral) <= 1e-13 * max(1.0, float(np.sum(np.abs(g.samples)) * g.weight))


def test_second_differences_bounded():
    rng = np.random.default_rng(1)
    g = face(np.cos(np.linspace(0, 7, 128)) + 0.1 * rng.normal(size=128))
    out = smooth_face(g, 1.0)
    r = out.info["mollifier_radius"]
    d2 = np.abs(np.diff(out.samples, 2))
    assert d2.max() <= 10.0 / r ** 2 * np.max(np.abs(g.samples)) * 3


def test_face_too_coarse():
    with pytest.raises(FaceTooCoarseError, match="face too coarse"):
        smooth_face(face(np.ones(8)), 1.0)
    with pytest.raises(FaceTooCoarseError, match="face too coarse"):
        smooth_face(face(np.ones(64)), 1e-6)
    with pytest.raises(ValueError):
        smooth_face(face(np.ones(64)), 0.0)


def test_face_bookkeeping():
    mesh = build_mesh(0.25, (0.0, 0.0))
    faces = all_faces(mesh)
    assert len(faces) == 2 * 3 * 2
    shared = set(f for f, _ in cube_faces((0, 0))) & set(f for f, _ in cube_faces((1, 0)))
    assert shared == {(0, 1, (0,))}


def test_divfree_skeleton_fluxes_vanish():
    V = gen_divfree(5, 2, N=64)
    mesh = build_mesh(0.2, (0.01, -0.02))
    recs = classify_cubes(V, mesh)
    sk = smooth_skeleton(V, mesh, recs, 1e-3, M=64, widen=True)
    for r in recs:
        assert abs(cube_flux(sk.faces, r.index)) < 1e-13


def test_vortex_bad_cube_flux_preserved():
    V = gen_vortex(2, ChargeSet.from_pairs([((0.0, 0.0), 1)]), N=128)
    mesh = build_mesh(0.25, (0.05, 0.06))
    recs = classify_cubes(V, mesh)
    sk = smooth_skeleton(V, mesh, recs, 1e-3, M=128, widen=True)
    bad = [r for r in recs if r.cls == BAD][0]
    raw = cube_flux(sk.raw, bad.index)
    assert cube_flux(sk.faces, bad.index) == pytest.approx(raw, rel=1e-13)
    balanced = balance_fluxes(sk, recs)
    for r in recs:
        target = r.degree if r.cls == BAD else 0
        assert cube_flux(balanced.faces, r.index) == pytest.approx(target, abs=1e-12)
    assert balanced.balance["max_defect"] < 1e-2


def test_halving_delta():
    V = gen_vortex(2, ChargeSet.from_pairs([((0.0, 0.0), 1)]), N=128)
    mesh = build_mesh(0.25, (0.05, 0.06))
    recs = classify_cubes(V, mesh)
    a = smooth_skeleton(V, mesh, recs, 0.2, M=256)
    b = smooth_skeleton(V, mesh, recs, 0.1, M=256)
    assert b.deviation <= 1.1 * a.deviation


def test_three_dimensional_faces():
    V = gen_vortex(3, ChargeSet.from_pairs([((0.0, 0.0, 0.0), 1)]), N=16)
    mesh = build_mesh(0.25, (0.05, 0.06, 0.04))
    recs = classify_cubes(V, mesh, M=32)
    sk = balance_fluxes(smooth_skeleton(V, mesh, recs, 1e-3, M=24, widen=True), recs)
    for r in recs:
        target = r.degree if r.cls == BAD else 0
        assert cube_flux(sk.faces, r.index) == pytest.approx(target, abs=1e-12)
