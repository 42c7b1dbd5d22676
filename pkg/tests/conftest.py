import numpy as np
import pytest

from meshmark.mesh import Mesh, build_neighborhood, laplacian_matrix, normalize_unit_cube
from meshmark.synth import icosphere


def rel_err(got: np.ndarray, want: np.ndarray) -> float:
    """Max absolute deviation over the max magnitude (floored so exactly-zero
    gradients compare absolutely rather than noise-to-noise)."""
    got = np.asarray(got, dtype=np.float64)
    want = np.asarray(want, dtype=np.float64)
    scale = 1e-6
    if want.size:
        scale = max(scale, np.abs(want).max(), np.abs(got).max())
    return float(np.abs(got - want).max() / scale)


def random_mesh(rng: np.random.Generator, n_extra: int = 4) -> Mesh:
    """Small random closed-ish mesh: a jittered icosahedron (12 vertices)."""
    base = icosphere(0)
    v = base.vertices + rng.normal(scale=0.05, size=base.vertices.shape)
    m, _ = normalize_unit_cube(Mesh(v, base.faces))
    return m


def randomize_output_conv(params, rng: np.random.Generator, scale: float = 0.05):
    """Give the (zero-initialized) coordinate-offset branch random weights so
    embedding actually moves vertices in tests that need it."""
    dtype = params.output_conv.w0.dtype
    params.output_conv.w0[...] = rng.normal(scale=scale,
                                            size=params.output_conv.w0.shape).astype(dtype)
    params.output_conv.w1[...] = rng.normal(scale=scale,
                                            size=params.output_conv.w1.shape).astype(dtype)
    params.output_conv.bias[...] = rng.normal(scale=scale,
                                              size=params.output_conv.bias.shape).astype(dtype)
    return params


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def ico2():
    m, _ = normalize_unit_cube(icosphere(2))
    return m


@pytest.fixture(scope="session")
def ico3():
    m, _ = normalize_unit_cube(icosphere(3))
    return m


@pytest.fixture(scope="session")
def ico2_nbhd(ico2):
    return build_neighborhood(ico2)


@pytest.fixture(scope="session")
def ico3_nbhd(ico3):
    return build_neighborhood(ico3)


@pytest.fixture(scope="session")
def ico3_lap(ico3_nbhd):
    return laplacian_matrix(ico3_nbhd)
