"""Distortion and robustness measurement: Hausdorff distance, RMS distance,
curvature distortion, bit accuracy, and the per-vertex displacement map."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import Mesh, build_neighborhood, vertex_curvature, vertex_normals
from .model import Watermark


@dataclass(frozen=True)
class DistortionReport:
    hd: float
    mrms: float
    l_cur: float
    displacement: np.ndarray


def _directed_max_min(a: np.ndarray, b: np.ndarray, chunk: int = 512) -> float:
    worst = 0.0
    for s in range(0, len(a), chunk):
        block = a[s:s + chunk]
        d2 = ((block[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)
        worst = max(worst, float(np.sqrt(d2.min(axis=1)).max()))
    return worst


def hausdorff(a: Mesh, b: Mesh) -> float:
    """Symmetric vertex-set Hausdorff distance."""
    if a.n_vertices == 0 or b.n_vertices == 0:
        raise ValueError("Hausdorff distance needs non-empty meshes")
    return max(_directed_max_min(a.vertices, b.vertices),
               _directed_max_min(b.vertices, a.vertices))


def mrms(a: Mesh, b: Mesh) -> float:
    """RMS distance over index-corresponding vertices (both directions of
    the max coincide under index correspondence)."""
    if a.n_vertices != b.n_vertices:
        raise ValueError(
            f"vertex count mismatch: {a.n_vertices} vs {b.n_vertices}")
    d2 = ((a.vertices - b.vertices) ** 2).sum(axis=1)
    return float(np.sqrt(d2.mean()))


def curvature_distortion(a: Mesh, b: Mesh) -> float:
    """Mean squared difference of per-vertex curvatures, each mesh using its
    own recomputed normals."""
    if a.n_vertices != b.n_vertices:
        raise ValueError(
            f"vertex count mismatch: {a.n_vertices} vs {b.n_vertices}")
    nb_a = build_neighborhood(a)
    nb_b = build_neighborhood(b)
    cur_a = vertex_curvature(a, nb_a, vertex_normals(a))
    cur_b = vertex_curvature(b, nb_b, vertex_normals(b))
    return float(((cur_a - cur_b) ** 2).mean())


def bit_accuracy(w_in, w_dec) -> float:
    """Percentage of matching bits."""
    a = w_in.bits if isinstance(w_in, Watermark) else np.asarray(w_in)
    b = w_dec.bits if isinstance(w_dec, Watermark) else np.asarray(w_dec)
    if a.shape != b.shape:
        raise ValueError(f"bit length mismatch: {a.shape} vs {b.shape}")
    return float(100.0 * (a == b).mean())


def displacement_map(a: Mesh, b: Mesh) -> np.ndarray:
    """Per-vertex Euclidean displacement, for external coloring."""
    if a.n_vertices != b.n_vertices:
        raise ValueError(
            f"vertex count mismatch: {a.n_vertices} vs {b.n_vertices}")
    return np.linalg.norm(a.vertices - b.vertices, axis=1)


def distortion_report(a: Mesh, b: Mesh) -> DistortionReport:
    return DistortionReport(hausdorff(a, b), mrms(a, b),
                            curvature_distortion(a, b), displacement_map(a, b))
