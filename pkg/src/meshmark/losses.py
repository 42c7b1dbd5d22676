"""Training losses and their differentiable geometry.

The curvature consistency loss needs vertex normals and curvatures of the
watermarked coordinates on the tape; the original mesh side is a constant
computed once with the plain-numpy mesh routines.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import DiffArray
from .mesh import Mesh, Neighborhood, vertex_curvature, vertex_normals

EDGE_NORM_EPS = 1e-8    # keeps the curvature quotient differentiable
NORMAL_NORM_EPS = 1e-12  # guards normal normalization without visible bias

_SHIFT_A = np.array([1, 2, 0], dtype=np.int64)
_SHIFT_B = np.array([2, 0, 1], dtype=np.int64)


def _cols(x: DiffArray, order: np.ndarray) -> DiffArray:
    return ad.transpose(ad.gather_rows(ad.transpose(x), order))


def _cross_rows(a: DiffArray, b: DiffArray) -> DiffArray:
    return ad.sub(ad.mul(_cols(a, _SHIFT_A), _cols(b, _SHIFT_B)),
                  ad.mul(_cols(a, _SHIFT_B), _cols(b, _SHIFT_A)))


def tape_vertex_normals(v: DiffArray, faces: np.ndarray) -> DiffArray:
    """Area-weighted vertex normals of on-tape coordinates."""
    n = v.data.shape[0]
    v0 = ad.gather_rows(v, faces[:, 0])
    fn = _cross_rows(ad.sub(ad.gather_rows(v, faces[:, 1]), v0),
                     ad.sub(ad.gather_rows(v, faces[:, 2]), v0))
    acc = ad.add(ad.add(ad.scatter_add_rows(fn, faces[:, 0], n),
                        ad.scatter_add_rows(fn, faces[:, 1], n)),
                 ad.scatter_add_rows(fn, faces[:, 2], n))
    return ad.divide_rows(acc, ad.l2_norm_rows(acc, eps=NORMAL_NORM_EPS))


def tape_vertex_curvature(v: DiffArray, nbhd: Neighborhood,
                          normals: DiffArray) -> DiffArray:
    """On-tape counterpart of mesh.vertex_curvature."""
    i, j = nbhd.edge_sources, nbhd.targets
    d = ad.sub(ad.gather_rows(v, j), ad.gather_rows(v, i))
    dots = ad.sum_(ad.mul(d, ad.gather_rows(normals, i)), axis=1)
    cos = ad.divide(dots, ad.l2_norm_rows(d, eps=EDGE_NORM_EPS))
    return ad.scatter_add_rows(cos, i, nbhd.n_vertices)


def loss_w(w_in, w_ext) -> DiffArray:
    """Watermark recovery loss: mean squared error over the bit vector."""
    a = w_in.data if isinstance(w_in, DiffArray) else np.asarray(w_in)
    b = w_ext.data if isinstance(w_ext, DiffArray) else np.asarray(w_ext)
    if a.shape != b.shape:
        raise ValueError(f"watermark length mismatch: {a.shape} vs {b.shape}")
    return ad.mean_(ad.square(ad.sub(w_in, w_ext)))


def loss_m(v_in, v_wm) -> DiffArray:
    """Vertex displacement loss: mean over vertices of the squared offset."""
    a = v_in.data if isinstance(v_in, DiffArray) else np.asarray(v_in)
    b = v_wm.data if isinstance(v_wm, DiffArray) else np.asarray(v_wm)
    if a.shape != b.shape:
        raise ValueError(f"vertex shape mismatch: {a.shape} vs {b.shape}")
    return ad.scalar_mul(ad.sum_(ad.square(ad.sub(v_in, v_wm))), 1.0 / a.shape[0])


def loss_cur(mesh_in: Mesh, v_wm: DiffArray, nbhd: Neighborhood,
             cur_in: Optional[np.ndarray] = None) -> DiffArray:
    """Curvature consistency loss between the input mesh and the on-tape
    watermarked coordinates (connectivity is shared).

    cur_in may be precomputed once per mesh and passed in.
    """
    if cur_in is None:
        cur_in = vertex_curvature(mesh_in, nbhd, vertex_normals(mesh_in))
    normals = tape_vertex_normals(v_wm, mesh_in.faces)
    cur_wm = tape_vertex_curvature(v_wm, nbhd, normals)
    return ad.mean_(ad.square(ad.sub(cur_wm, cur_in.astype(cur_wm.data.dtype))))


def total_loss(l_w, l_cur, l_m, lambda1: float = 1.0, lambda2: float = 1.0,
               lambda3: float = 5.0, no_curvature: bool = False) -> DiffArray:
    """Weighted objective; the curvature term drops out under its ablation."""
    out = ad.add(ad.scalar_mul(l_w, lambda1), ad.scalar_mul(l_m, lambda3))
    if not no_curvature and lambda2 != 0.0:
        out = ad.add(out, ad.scalar_mul(l_cur, lambda2))
    return out
