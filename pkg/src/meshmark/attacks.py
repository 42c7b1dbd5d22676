"""Differentiable attack layers: rotation, Gaussian noise, Laplacian
smoothing, cropping, plus the identity pass-through.

Each layer maps watermarked coordinates to attacked coordinates on the tape,
so gradients reach the embedder through the attack. Intensities are drawn
once per mesh from the configured laws; kind selection happens once per
minibatch in the trainer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import DiffArray
from .sparse import CsrMatrix

KINDS = ("identity", "rotation", "noise", "smoothing", "cropping")


class AttackError(ValueError):
    """Attack cannot be applied to this input."""


@dataclass(frozen=True)
class AttackConfig:
    """Intensity laws: rotation scope in degrees, noise deviation cap,
    smoothing cap, minimum retained fraction for cropping."""

    theta_max: float = 15.0
    sigma_max: float = 0.03
    alpha_max: float = 0.2
    beta_min: float = 0.8
    enabled: tuple[str, ...] = KINDS

    def __post_init__(self):
        if not 0.0 <= self.theta_max <= 180.0:
            raise ValueError(f"theta_max must be in [0, 180] degrees, got {self.theta_max}")
        if self.sigma_max < 0 or self.alpha_max < 0:
            raise ValueError("sigma_max and alpha_max must be >= 0")
        if not 0.0 <= self.beta_min <= 1.0:
            raise ValueError(f"beta_min must be in [0, 1], got {self.beta_min}")
        unknown = set(self.enabled) - set(KINDS)
        if unknown:
            raise ValueError(f"unknown attack kinds: {sorted(unknown)}")


@dataclass
class AttackInstance:
    """One sampled attack: its kind, intensity draw, and (after a cropping
    application) the retained-vertex index map."""

    kind: str
    angles_deg: Optional[np.ndarray] = None
    sigma: Optional[float] = None
    alpha: Optional[float] = None
    beta: Optional[float] = None
    kept: Optional[np.ndarray] = field(default=None, repr=False)


def sample_kind(config: AttackConfig, rng: np.random.Generator) -> str:
    if not config.enabled:
        raise AttackError("no attack kinds enabled")
    return config.enabled[int(rng.integers(len(config.enabled)))]


def sample_intensity(config: AttackConfig, kind: str,
                     rng: np.random.Generator) -> AttackInstance:
    if kind == "identity":
        return AttackInstance("identity")
    if kind == "rotation":
        return AttackInstance("rotation",
                              angles_deg=rng.uniform(-config.theta_max,
                                                     config.theta_max, size=3))
    if kind == "noise":
        return AttackInstance("noise", sigma=float(rng.uniform(0.0, config.sigma_max)))
    if kind == "smoothing":
        return AttackInstance("smoothing", alpha=float(rng.uniform(0.0, config.alpha_max)))
    if kind == "cropping":
        return AttackInstance("cropping", beta=float(rng.uniform(config.beta_min, 1.0)))
    raise AttackError(f"unknown attack kind {kind!r}")


def sample_attack(config: AttackConfig, rng: np.random.Generator) -> AttackInstance:
    """Uniform kind over the enabled set, then the kind's intensity law."""
    return sample_intensity(config, sample_kind(config, rng), rng)


def fixed_instance(kind: str, intensity: float) -> AttackInstance:
    """Attack at an exact intensity (evaluation grids, CLI); no sampling."""
    if kind == "identity":
        return AttackInstance("identity")
    if kind == "rotation":
        if not -180.0 <= intensity <= 180.0:
            raise AttackError(f"rotation angle {intensity} out of [-180, 180]")
        return AttackInstance("rotation", angles_deg=np.full(3, float(intensity)))
    if kind == "noise":
        if intensity < 0:
            raise AttackError(f"noise deviation {intensity} must be >= 0")
        return AttackInstance("noise", sigma=float(intensity))
    if kind == "smoothing":
        if intensity < 0:
            raise AttackError(f"smoothing level {intensity} must be >= 0")
        return AttackInstance("smoothing", alpha=float(intensity))
    if kind == "cropping":
        if not 0.0 < intensity <= 1.0:
            raise AttackError(f"retention ratio {intensity} out of (0, 1]")
        return AttackInstance("cropping", beta=float(intensity))
    raise AttackError(f"unknown attack kind {kind!r}")


def rotation_matrix(angles_deg: np.ndarray) -> np.ndarray:
    """R = Rz @ Ry @ Rx from per-axis angles in degrees."""
    rx, ry, rz = (math.radians(float(a)) for a in angles_deg)
    cx, sx = math.cos(rx), math.sin(rx)
    cy, sy = math.cos(ry), math.sin(ry)
    cz, sz = math.cos(rz), math.sin(rz)
    mx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    my = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    mz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return mz @ my @ mx


def rotate(vertices: DiffArray, inst: AttackInstance) -> DiffArray:
    """Rotate about the origin of the normalized frame; a linear map, so
    exactly differentiable."""
    r = rotation_matrix(inst.angles_deg)
    return ad.matmul(vertices, r.T)


def gaussian_noise(vertices: DiffArray, inst: AttackInstance,
                   rng: np.random.Generator) -> DiffArray:
    """Add i.i.d. zero-mean noise; the draw is a constant in the backward
    pass (additive layer)."""
    n = vertices.data.shape[0]
    noise = rng.normal(0.0, inst.sigma, size=(n, 3)) if inst.sigma > 0 \
        else np.zeros((n, 3))
    return ad.add(vertices, noise)


def laplacian_smooth(vertices: DiffArray, laplacian: CsrMatrix,
                     inst: AttackInstance) -> DiffArray:
    """One umbrella-operator smoothing step: v - alpha * L v."""
    if laplacian.shape[0] != vertices.data.shape[0]:
        raise AttackError(
            f"Laplacian {laplacian.shape} does not match {vertices.data.shape[0]} vertices")
    return ad.sub(vertices, ad.scalar_mul(ad.sparse_matvec(laplacian, vertices),
                                          inst.alpha))


def _extreme_vertex(v: np.ndarray, positive: bool) -> int:
    sums = v.sum(axis=1)
    mask = (v >= 0).all(axis=1) if positive else (v <= 0).all(axis=1)
    if mask.any():
        cand = np.flatnonzero(mask)
        pick = cand[np.argmax(sums[cand])] if positive else cand[np.argmin(sums[cand])]
        return int(pick)
    return int(np.argmax(sums) if positive else np.argmin(sums))


def crop(vertices: DiffArray, faces: np.ndarray,
         inst: AttackInstance) -> tuple[DiffArray, np.ndarray, np.ndarray]:
    """Cut by a plane perpendicular to the line joining the extreme corners.

    Keeps the ceil(beta * N) vertices with the largest projection onto that
    line (ties broken by vertex index), drops faces touching removed
    vertices, and records the kept->original index map on the instance.
    Gradients flow only to retained vertices.
    """
    v = vertices.data
    n = v.shape[0]
    p_neg = _extreme_vertex(v, positive=False)
    p_pos = _extreme_vertex(v, positive=True)
    axis = v[p_pos] - v[p_neg]
    norm = np.linalg.norm(axis)
    if p_pos == p_neg or norm == 0.0:
        raise AttackError("cropping axis is degenerate: extreme corners coincide")
    axis = axis / norm
    # tolerance keeps ceil() honest when beta*n rounds just above an integer
    k = int(np.ceil(inst.beta * n - 1e-9))
    if k < 3:
        raise AttackError(f"cropping would retain {k} < 3 vertices")
    t = v @ axis
    order = np.lexsort((np.arange(n), -t))
    kept = np.sort(order[:k])
    inst.kept = kept
    v_att = ad.gather_rows(vertices, kept)
    if len(faces):
        keep_mask = np.isin(faces, kept).all(axis=1)
        new_index = np.searchsorted(kept, faces[keep_mask])
    else:
        new_index = np.zeros((0, 3), dtype=np.int64)
    return v_att, new_index.astype(np.int64), kept


def apply(vertices: DiffArray, faces: np.ndarray, laplacian: CsrMatrix,
          inst: AttackInstance,
          rng: Optional[np.random.Generator] = None
          ) -> tuple[DiffArray, np.ndarray, Optional[np.ndarray]]:
    """Dispatch one attack; returns (attacked vertices, attacked faces,
    kept-index map or None). Identity returns the inputs untouched."""
    if inst.kind == "identity":
        return vertices, faces, None
    if inst.kind == "rotation":
        return rotate(vertices, inst), faces, None
    if inst.kind == "noise":
        if rng is None:
            raise AttackError("noise attack needs a random generator")
        return gaussian_noise(vertices, inst, rng), faces, None
    if inst.kind == "smoothing":
        return laplacian_smooth(vertices, laplacian, inst), faces, None
    if inst.kind == "cropping":
        v_att, f_att, kept = crop(vertices, faces, inst)
        return v_att, f_att, kept
    raise AttackError(f"unknown attack kind {inst.kind!r}")
