"""Distortion metrics against brute-force and algebraic oracles."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from meshmark import metrics
from meshmark.attacks import rotation_matrix
from meshmark.mesh import Mesh
from meshmark.model import Watermark
from meshmark.synth import icosphere


def cloud(v):
    return Mesh(np.asarray(v, dtype=float), np.zeros((0, 3), dtype=np.int64))


def test_hausdorff_identical_zero(ico2):
    assert metrics.hausdorff(ico2, ico2) == 0.0


def test_hausdorff_single_points():
    assert metrics.hausdorff(cloud([[0, 0, 0]]), cloud([[1, 0, 0]])) == pytest.approx(1.0)


def test_hausdorff_empty_rejected():
    with pytest.raises(ValueError):
        metrics.hausdorff(cloud(np.zeros((0, 3))), cloud([[0, 0, 0]]))


def test_hausdorff_matches_bruteforce(rng):
    a = cloud(rng.normal(size=(50, 3)))
    b = cloud(rng.normal(size=(60, 3)))
    got = metrics.hausdorff(a, b)
    # O(N^2) scan with explicit loops
    def directed(xs, ys):
        worst = 0.0
        for x in xs:
            best = min(float(np.sqrt(((x - y) ** 2).sum())) for y in ys)
            worst = max(worst, best)
        return worst
    want = max(directed(a.vertices, b.vertices), directed(b.vertices, a.vertices))
    assert abs(got - want) < 1e-9


def test_hausdorff_symmetry(rng):
    a = cloud(rng.normal(size=(30, 3)))
    b = cloud(rng.normal(size=(25, 3)))
    assert metrics.hausdorff(a, b) == pytest.approx(metrics.hausdorff(b, a), abs=0)


def test_mrms_examples():
    a = cloud([[0, 0, 0]])
    b = cloud([[0.2, 0, 0]])
    assert metrics.mrms(a, a) == 0.0
    assert metrics.mrms(a, b) == pytest.approx(0.2)


def test_mrms_matches_direct_formula(rng):
    av = rng.normal(size=(40, 3))
    bv = rng.normal(size=(40, 3))
    got = metrics.mrms(cloud(av), cloud(bv))
    want = np.sqrt(np.mean(np.sum((av - bv) ** 2, axis=1)))
    assert abs(got - want) < 1e-12


def test_mrms_count_mismatch():
    with pytest.raises(ValueError):
        metrics.mrms(cloud(np.zeros((2, 3))), cloud(np.zeros((3, 3))))


def test_curvature_distortion_identical_zero(ico2):
    assert metrics.curvature_distortion(ico2, ico2) == 0.0


def test_curvature_distortion_rotation_invariant(ico2, rng):
    r = rotation_matrix(rng.uniform(-180, 180, 3))
    rotated = ico2.with_vertices(ico2.vertices @ r.T)
    assert metrics.curvature_distortion(ico2, rotated) < 1e-9


def test_curvature_distortion_hand_value():
    # pyramid vs its flattened copy: only the apex curvature changes
    verts = np.array([(1.0, 1, 0), (-1.0, 1, 0), (-1.0, -1, 0), (1.0, -1, 0),
                      (0.0, 0, 1)])
    faces = np.array([(4, 0, 1), (4, 1, 2), (4, 2, 3), (4, 3, 0)])
    pyramid = Mesh(verts, faces)
    flat = Mesh(np.concatenate([verts[:4], [[0, 0, 0]]]), faces)
    got = metrics.curvature_distortion(pyramid, flat)

    # hand evaluation: per-vertex curvatures of both meshes
    from meshmark.mesh import build_neighborhood, vertex_curvature, vertex_normals
    def curv(m):
        nb = build_neighborhood(m)
        return vertex_curvature(m, nb, vertex_normals(m))
    wa, wb = curv(pyramid), curv(flat)
    want = float(((wa - wb) ** 2).mean())
    assert got == pytest.approx(want, abs=1e-15)
    # the apex difference alone: flat apex has curvature 0, pyramid -4/sqrt(3)
    assert wa[4] == pytest.approx(-4 / np.sqrt(3))
    assert abs(wb[4]) < 1e-12


def test_bit_accuracy_examples():
    a = Watermark(np.array([1, 0, 1, 0]))
    assert metrics.bit_accuracy(a, a) == 100.0
    assert metrics.bit_accuracy(a, Watermark(1 - a.bits)) == 0.0
    w64 = Watermark(np.zeros(64, dtype=np.uint8))
    flipped = w64.bits.copy()
    flipped[:16] = 1
    assert metrics.bit_accuracy(w64, Watermark(flipped)) == 75.0


def test_bit_accuracy_length_mismatch():
    with pytest.raises(ValueError):
        metrics.bit_accuracy(Watermark(np.zeros(4, dtype=np.uint8)),
                             Watermark(np.zeros(8, dtype=np.uint8)))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(0, 1), min_size=1, max_size=64))
def test_bit_accuracy_self_is_100(bits):
    w = Watermark(np.array(bits, dtype=np.uint8))
    assert metrics.bit_accuracy(w, w) == 100.0


def test_displacement_map_examples(rng):
    av = rng.normal(size=(10, 3))
    bv = av.copy()
    bv[3] += [0.3, 0, 0]
    d = metrics.displacement_map(cloud(av), cloud(bv))
    assert d[3] == pytest.approx(0.3)
    mask = np.ones(10, dtype=bool)
    mask[3] = False
    assert (d[mask] == 0).all()


def test_displacement_mrms_algebraic_identity(rng):
    av = rng.normal(size=(33, 3))
    bv = av + rng.normal(scale=0.05, size=(33, 3))
    d = metrics.displacement_map(cloud(av), cloud(bv))
    m = metrics.mrms(cloud(av), cloud(bv))
    assert abs((d ** 2).sum() - 33 * m ** 2) < 1e-9


def test_distortion_report_fields(ico2):
    rep = metrics.distortion_report(ico2, ico2)
    assert rep.hd == 0.0 and rep.mrms == 0.0 and rep.l_cur == 0.0
    assert rep.displacement.shape == (ico2.n_vertices,)
