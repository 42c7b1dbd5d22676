"""Deterministic synthetic mesh dataset: radially deformed icospheres.

Gives training and tests a shape family with shared character but varying
geometry, generated in milliseconds and reproducible bit-for-bit from the
seed.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .mesh import Mesh, normalize_unit_cube, write_obj

_GOLDEN = (1.0 + np.sqrt(5.0)) / 2.0

_ICO_VERTS = [
    (-1, _GOLDEN, 0), (1, _GOLDEN, 0), (-1, -_GOLDEN, 0), (1, -_GOLDEN, 0),
    (0, -1, _GOLDEN), (0, 1, _GOLDEN), (0, -1, -_GOLDEN), (0, 1, -_GOLDEN),
    (_GOLDEN, 0, -1), (_GOLDEN, 0, 1), (-_GOLDEN, 0, -1), (-_GOLDEN, 0, 1),
]

_ICO_FACES = [
    (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
    (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
    (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
    (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
]


def icosphere(level: int) -> Mesh:
    """Icosahedron subdivided `level` times, vertices projected to the unit
    sphere. Level 2 has 162 vertices, level 3 has 642."""
    if not 0 <= level <= 5:
        raise ValueError(f"icosphere level must be in [0, 5], got {level}")
    verts = [np.asarray(v, dtype=np.float64) for v in _ICO_VERTS]
    verts = [v / np.linalg.norm(v) for v in verts]
    faces = list(_ICO_FACES)
    for _ in range(level):
        cache: dict[tuple[int, int], int] = {}

        def midpoint(a: int, b: int) -> int:
            key = (a, b) if a < b else (b, a)
            hit = cache.get(key)
            if hit is not None:
                return hit
            m = verts[a] + verts[b]
            verts.append(m / np.linalg.norm(m))
            cache[key] = len(verts) - 1
            return cache[key]

        next_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            next_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = next_faces
    return Mesh(np.asarray(verts), np.asarray(faces, dtype=np.int64))


@dataclass(frozen=True)
class SynthSpec:
    """Recipe for a deformed-icosphere dataset."""

    level: int = 3
    count: int = 100
    amplitude: float = 0.2
    frequency: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.level < 1:
            raise ValueError("subdivision level must be >= 1")
        if not 0.0 <= self.amplitude < 0.5:
            raise ValueError("amplitude must be in [0, 0.5) to stay star-shaped")
        if self.count < 0 or self.frequency < 1:
            raise ValueError("count must be >= 0 and frequency >= 1")


def _deform(base: Mesh, spec: SynthSpec, index: int) -> Mesh:
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([spec.seed, index])))
    v = base.vertices
    bump = np.zeros(len(v))
    for k in range(1, spec.frequency + 1):
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        weight = rng.normal() / k
        bump += weight * np.cos(k * np.pi * (v @ direction) + phase)
    peak = np.abs(bump).max()
    if peak > 0:
        bump /= peak
    return base.with_vertices(v * (1.0 + spec.amplitude * bump)[:, None])


def generate(spec: SynthSpec) -> list[Mesh]:
    """Deterministic list of unit-cube-normalized deformed icospheres."""
    base = icosphere(spec.level)
    out = []
    for i in range(spec.count):
        mesh, _ = normalize_unit_cube(_deform(base, spec, i))
        out.append(mesh)
    return out


def write_dataset(spec: SynthSpec, out_dir: str | Path) -> list[Path]:
    """Write numbered OBJ files and a manifest echoing the recipe."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, mesh in enumerate(generate(spec)):
        p = out_dir / f"mesh_{i:04d}.obj"
        p.write_text(write_obj(mesh))
        paths.append(p)
    (out_dir / "manifest.json").write_text(
        json.dumps({"kind": "meshmark-synth", **asdict(spec)}, indent=2) + "\n")
    return paths


def load_dataset(directory: str | Path) -> list[Mesh]:
    """Load every .obj in a directory in name order."""
    from .mesh import parse_obj

    paths = sorted(Path(directory).glob("*.obj"))
    if not paths:
        raise FileNotFoundError(f"no .obj files found in {directory}")
    return [parse_obj(p.read_text()) for p in paths]
