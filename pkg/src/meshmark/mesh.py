"""Triangle mesh representation, OBJ I/O, adjacency, Laplacian and curvature.

Meshes are immutable after construction (arrays are frozen), so every
operation here is a pure function that is safe to call concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .sparse import CsrMatrix


class MeshValidationError(ValueError):
    """Mesh data violates a structural invariant."""


class ObjParseError(ValueError):
    """Malformed OBJ content; message carries the offending line number."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Mesh:
    """Triangle mesh: vertex coordinates plus faces as vertex-index triples.

    normalized marks coordinates expressed in the centered unit-cube frame
    produced by normalize_unit_cube (network frame).
    """

    vertices: np.ndarray
    faces: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        v = _frozen(np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3))
        f = _frozen(np.asarray(self.faces, dtype=np.int64).reshape(-1, 3))
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        if f.size:
            if f.min() < 0 or f.max() >= len(v):
                raise MeshValidationError(
                    f"face index out of range [0, {len(v)}): "
                    f"min {f.min()}, max {f.max()}")
            degenerate = (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])
            if degenerate.any():
                raise MeshValidationError(
                    f"face {int(np.flatnonzero(degenerate)[0])} repeats a vertex index")

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def with_vertices(self, vertices: np.ndarray, normalized: bool | None = None) -> "Mesh":
        """Same connectivity, new coordinates."""
        return Mesh(vertices, self.faces,
                    self.normalized if normalized is None else normalized)


@dataclass(frozen=True)
class Transform:
    """Record of a unit-cube normalization; inverts it exactly."""

    center: np.ndarray
    scale: float

    def to_normalized(self, vertices: np.ndarray) -> np.ndarray:
        return (np.asarray(vertices, dtype=np.float64) - self.center) / self.scale

    def to_original(self, vertices: np.ndarray) -> np.ndarray:
        return np.asarray(vertices, dtype=np.float64) * self.scale + self.center


class Neighborhood:
    """Per-vertex sorted adjacency built from the undirected face edge set."""

    def __init__(self, offsets: np.ndarray, targets: np.ndarray, n_vertices: int):
        self.offsets = _frozen(np.asarray(offsets, dtype=np.int64))
        self.targets = _frozen(np.asarray(targets, dtype=np.int64))
        self.n_vertices = n_vertices
        self.degrees = _frozen(np.diff(self.offsets))

    def neighbors(self, i: int) -> np.ndarray:
        return self.targets[self.offsets[i]:self.offsets[i + 1]]

    def degree(self, i: int) -> int:
        return int(self.degrees[i])

    @property
    def edge_sources(self) -> np.ndarray:
        """Directed edge list source i, aligned with targets (one per i->j pair)."""
        return np.repeat(np.arange(self.n_vertices), self.degrees)

    @cached_property
    def neighbor_mean_matrix(self) -> CsrMatrix:
        """CSR operator averaging neighbor rows: (A x)_i = mean_{j in N(i)} x_j."""
        inv = np.zeros(self.n_vertices)
        nz = self.degrees > 0
        inv[nz] = 1.0 / self.degrees[nz]
        data = np.repeat(inv, self.degrees)
        return CsrMatrix(self.offsets, self.targets, data,
                         (self.n_vertices, self.n_vertices))

    @cached_property
    def neighbor_sum_matrix(self) -> CsrMatrix:
        """CSR operator summing neighbor rows (degree normalization disabled)."""
        data = np.ones(self.targets.shape[0])
        return CsrMatrix(self.offsets, self.targets, data,
                         (self.n_vertices, self.n_vertices))


def build_neighborhood(mesh: Mesh) -> Neighborhood:
    """Undirected, deduplicated edge set of all faces; isolated vertices keep
    empty neighbor lists."""
    n = mesh.n_vertices
    if mesh.n_faces == 0:
        return Neighborhood(np.zeros(n + 1, dtype=np.int64),
                            np.zeros(0, dtype=np.int64), n)
    f = mesh.faces
    pairs = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    und = np.unique(np.sort(pairs, axis=1), axis=0)
    directed = np.concatenate([und, und[:, ::-1]])
    order = np.lexsort((directed[:, 1], directed[:, 0]))
    directed = directed[order]
    counts = np.bincount(directed[:, 0], minlength=n)
    offsets = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    return Neighborhood(offsets, directed[:, 1], n)


def laplacian_matrix(nbhd: Neighborhood) -> CsrMatrix:
    """Graph Laplacian: 1 on the diagonal, -1/deg(i) at (i, j) for j in N(i).

    Degree-0 vertices get a bare identity row.
    """
    n = nbhd.n_vertices
    counts = nbhd.degrees + 1
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    indices = np.empty(indptr[-1], dtype=np.int64)
    data = np.empty(indptr[-1])
    for i in range(n):
        nbrs = nbhd.neighbors(i)
        pos = int(np.searchsorted(nbrs, i))
        lo = indptr[i]
        indices[lo:lo + pos] = nbrs[:pos]
        indices[lo + pos] = i
        indices[lo + pos + 1:indptr[i + 1]] = nbrs[pos:]
        if len(nbrs):
            data[lo:indptr[i + 1]] = -1.0 / len(nbrs)
        data[lo + pos] = 1.0
    return CsrMatrix(indptr, indices, data, (n, n))


def vertex_normals(mesh: Mesh) -> np.ndarray:
    """Unit vertex normals: area-weighted average of incident face normals.

    A vertex that accumulates a zero vector (isolated, or cancelling faces)
    falls back to (0, 0, 1).
    """
    v, f = mesh.vertices, mesh.faces
    acc = np.zeros((mesh.n_vertices, 3))
    if len(f):
        fn = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
        for c in range(3):
            np.add.at(acc, f[:, c], fn)
    lens = np.linalg.norm(acc, axis=1)
    zero = lens < 1e-300
    lens[zero] = 1.0
    out = acc / lens[:, None]
    out[zero] = (0.0, 0.0, 1.0)
    return out


def vertex_curvature(mesh: Mesh, nbhd: Neighborhood,
                     normals: np.ndarray) -> np.ndarray:
    """Per-vertex curvature: sum over neighbors of the cosine of the angle
    between the vertex normal and the direction to the neighbor.

    Zero on flat regions, signed on convex/concave ones; 0 for isolated
    vertices.
    """
    v = mesh.vertices
    i, j = nbhd.edge_sources, nbhd.targets
    if len(i) == 0:
        return np.zeros(mesh.n_vertices)
    d = v[j] - v[i]
    lens = np.linalg.norm(d, axis=1)
    bad = lens < 1e-12
    if bad.any():
        k = int(np.flatnonzero(bad)[0])
        raise MeshValidationError(
            f"coincident neighbors: vertices {int(i[k])} and {int(j[k])} "
            f"are closer than 1e-12")
    cos = np.einsum("ed,ed->e", d, normals[i]) / lens
    return np.bincount(i, weights=cos, minlength=mesh.n_vertices)


def normalize_unit_cube(mesh: Mesh) -> tuple[Mesh, Transform]:
    """Center on the bounding-box midpoint and scale by the longest edge so
    every coordinate lands in [-0.5, 0.5]."""
    if mesh.n_vertices < 1:
        raise MeshValidationError("cannot normalize an empty mesh")
    lo = mesh.vertices.min(axis=0)
    hi = mesh.vertices.max(axis=0)
    scale = float((hi - lo).max())
    if scale <= 0.0:
        raise MeshValidationError(
            "degenerate mesh: zero bounding-box extent on every axis")
    center = (hi + lo) / 2.0
    t = Transform(_frozen(center), scale)
    out = t.to_normalized(mesh.vertices)
    return Mesh(out, mesh.faces, normalized=True), t


def parse_obj(content: bytes | str) -> Mesh:
    """Parse ASCII OBJ text; only v and f records are honored.

    Face tokens may carry v/vt/vn slashes; polygons are fan-triangulated
    from their first vertex. Indices are validated after the whole file is
    read, so forward references are allowed.
    """
    if isinstance(content, bytes):
        content = content.decode("utf-8")
    vertices: list[tuple[float, float, float]] = []
    tris: list[tuple[int, int, int]] = []
    for lineno, raw in enumerate(content.splitlines(), start=1):
        parts = raw.split()
        if not parts:
            continue
        if parts[0] == "v":
            if len(parts) < 4:
                raise ObjParseError(f"line {lineno}: vertex record needs 3 coordinates")
            try:
                x, y, z = (float(p) for p in parts[1:4])
            except ValueError as e:
                raise ObjParseError(f"line {lineno}: malformed numeric field: {e}") from None
            vertices.append((x, y, z))
        elif parts[0] == "f":
            if len(parts) < 4:
                raise ObjParseError(f"line {lineno}: face record needs at least 3 indices")
            try:
                idx = [int(p.split("/")[0]) for p in parts[1:]]
            except ValueError as e:
                raise ObjParseError(f"line {lineno}: malformed face index: {e}") from None
            for k in range(1, len(idx) - 1):
                tris.append((idx[0], idx[k], idx[k + 1]))
    n = len(vertices)
    for a, b, c in tris:
        for one_based in (a, b, c):
            if one_based < 1 or one_based > n:
                raise MeshValidationError(
                    f"face index {one_based} out of range for {n} vertices")
    faces = np.asarray(tris, dtype=np.int64).reshape(-1, 3) - 1
    return Mesh(np.asarray(vertices, dtype=np.float64).reshape(-1, 3), faces,
                normalized=False)


def write_obj(mesh: Mesh) -> str:
    """Serialize to ASCII OBJ with 8 significant digits per coordinate."""
    lines = [f"v {x:.8g} {y:.8g} {z:.8g}" for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces]
    return "\n".join(lines) + ("\n" if lines else "")
