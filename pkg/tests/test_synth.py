"""Synthetic dataset: icosphere counts, determinism, and mesh validity."""

import numpy as np
import pytest

from meshmark.mesh import build_neighborhood, parse_obj, vertex_normals
from meshmark.synth import SynthSpec, generate, icosphere, load_dataset, write_dataset


def test_icosahedron_counts():
    m = icosphere(0)
    assert m.n_vertices == 12 and m.n_faces == 20


def test_level3_counts_via_recurrence():
    # V_{k+1} = V_k + E_k, F_{k+1} = 4 F_k, E from Euler's formula (chi = 2)
    v, f = 12, 20
    for _ in range(3):
        e = v + f - 2
        v, f = v + e, 4 * f
    m = icosphere(3)
    assert (m.n_vertices, m.n_faces) == (v, f) == (642, 1280)


@pytest.mark.parametrize("level", range(4))
def test_euler_characteristic_every_level(level):
    m = icosphere(level)
    nb = build_neighborhood(m)
    e = nb.degrees.sum() // 2
    assert m.n_vertices - e + m.n_faces == 2


def test_icosphere_level_out_of_range():
    with pytest.raises(ValueError):
        icosphere(6)


def test_spec_validation():
    with pytest.raises(ValueError):
        SynthSpec(level=0)
    with pytest.raises(ValueError):
        SynthSpec(amplitude=0.5)


def test_zero_amplitude_gives_identical_spheres():
    meshes = generate(SynthSpec(level=1, count=3, amplitude=0.0, seed=5))
    for m in meshes[1:]:
        assert np.array_equal(m.vertices, meshes[0].vertices)


def test_same_seed_bitwise_identical():
    a = generate(SynthSpec(level=1, count=4, seed=9))
    b = generate(SynthSpec(level=1, count=4, seed=9))
    for ma, mb in zip(a, b):
        assert ma.vertices.tobytes() == mb.vertices.tobytes()


def test_generated_meshes_are_valid_and_positive_area():
    meshes = generate(SynthSpec(level=3, count=3, amplitude=0.2, seed=2))
    for m in meshes:
        assert m.normalized
        assert np.abs(m.vertices).max() <= 0.5 + 1e-12
        v, f = m.vertices, m.faces
        areas = 0.5 * np.linalg.norm(
            np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]]), axis=1)
        assert areas.min() > 0
        # outward orientation survives the radial deformation
        n = vertex_normals(m)
        assert (np.einsum("ij,ij->i", n, v - v.mean(axis=0)) > 0).mean() > 0.99


def test_write_dataset_round_trip(tmp_path):
    spec = SynthSpec(level=1, count=3, seed=3)
    paths = write_dataset(spec, tmp_path)
    assert len(paths) == 3
    assert (tmp_path / "manifest.json").exists()
    loaded = load_dataset(tmp_path)
    direct = generate(spec)
    for a, b in zip(loaded, direct):
        assert np.abs(a.vertices - b.vertices).max() < 1e-6
        assert np.array_equal(a.faces, b.faces)


def test_write_dataset_reruns_byte_equal(tmp_path):
    spec = SynthSpec(level=1, count=2, seed=4)
    write_dataset(spec, tmp_path / "a")
    write_dataset(spec, tmp_path / "b")
    for name in ("mesh_0000.obj", "mesh_0001.obj", "manifest.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
