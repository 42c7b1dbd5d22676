"""Reverse-mode automatic differentiation over shaped numpy arrays.

A Tape records primitive applications; backward() replays the adjoint rules
in reverse to produce gradients keyed by node id. The primitive catalogue is
deliberately small: everything the mesh networks, losses, and attack layers
need, and nothing else. There is no implicit broadcasting; the only shape
expansion is the explicit broadcast_rows primitive.

Training runs in float32; gradient verification against finite differences
uses float64 tapes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np

from . import kernels
from .sparse import CsrMatrix

Arrayish = Union["DiffArray", np.ndarray, float, int]


class TapeError(ValueError):
    """Misuse of the tape: unknown primitive, cross-tape input, bad output."""


class ShapeMismatch(TapeError):
    """Primitive applied to nonconforming shapes."""


class DiffArray:
    """A shaped array, optionally attached to a tape node.

    Constants carry tape=None and node=None and never receive gradients.
    """

    __slots__ = ("data", "tape", "node")

    def __init__(self, data: np.ndarray, tape: Optional["Tape"] = None,
                 node: Optional[int] = None):
        self.data = data
        self.tape = tape
        self.node = node

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def is_constant(self) -> bool:
        return self.node is None

    def __repr__(self):
        tag = "const" if self.is_constant else f"node {self.node}"
        return f"DiffArray({tag}, shape={self.data.shape}, dtype={self.data.dtype})"

    def __add__(self, other: Arrayish) -> "DiffArray":
        return add(self, other)

    def __sub__(self, other: Arrayish) -> "DiffArray":
        return sub(self, other)

    def __mul__(self, other: Arrayish) -> "DiffArray":
        return mul(self, other)


@dataclass
class _Record:
    name: str
    out_id: int
    in_ids: tuple[Optional[int], ...]
    in_vals: tuple[np.ndarray, ...]
    out_val: np.ndarray
    attrs: dict


class Tape:
    """Ordered record of primitive applications for one forward pass."""

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self.records: list[_Record] = []
        self._leaf_vals: dict[int, np.ndarray] = {}
        self._next_id = 0

    def _new_id(self) -> int:
        nid = self._next_id
        self._next_id += 1
        return nid

    def leaf(self, value) -> DiffArray:
        """Register an input node (a differentiation target)."""
        arr = np.asarray(value, dtype=self.dtype)
        nid = self._new_id()
        self._leaf_vals[nid] = arr
        return DiffArray(arr, self, nid)

    @property
    def leaf_ids(self) -> list[int]:
        return list(self._leaf_vals)

    def replay(self) -> bool:
        """Recompute every record from the leaves; True if bitwise identical."""
        env = dict(self._leaf_vals)
        for rec in self.records:
            vals = tuple(
                env[iid] if iid is not None else val
                for iid, val in zip(rec.in_ids, rec.in_vals)
            )
            out = _CATALOGUE[rec.name].forward(vals, rec.attrs)
            if out.dtype != rec.out_val.dtype or out.shape != rec.out_val.shape:
                return False
            if np.asarray(out).tobytes() != np.asarray(rec.out_val).tobytes():
                return False
            env[rec.out_id] = out
        return True


@dataclass(frozen=True)
class _Primitive:
    forward: Callable[[tuple[np.ndarray, ...], dict], np.ndarray]
    vjp: Callable[[np.ndarray, _Record], Sequence[Optional[np.ndarray]]]


def _require(cond: bool, name: str, message: str):
    if not cond:
        raise ShapeMismatch(f"{name}: {message}")


def _same_shape(vals, name):
    _require(all(v.shape == vals[0].shape for v in vals[1:]), name,
             f"operand shapes differ: {[v.shape for v in vals]}")


# --- primitive forwards -----------------------------------------------------

def _fw_add(v, a):
    _same_shape(v, "add")
    return v[0] + v[1]


def _fw_sub(v, a):
    _same_shape(v, "sub")
    return v[0] - v[1]


def _fw_mul(v, a):
    _same_shape(v, "mul")
    return v[0] * v[1]


def _fw_divide(v, a):
    _same_shape(v, "divide")
    return v[0] / v[1]


def _fw_scalar_mul(v, a):
    return v[0] * v[0].dtype.type(a["value"])


def _fw_matmul(v, a):
    x, y = v
    _require(x.ndim == 2 and y.ndim == 2 and x.shape[1] == y.shape[0], "matmul",
             f"shapes {x.shape} and {y.shape} are not compatible")
    return x @ y


def _fw_relu(v, a):
    return np.maximum(v[0], 0)


def _fw_square(v, a):
    return v[0] * v[0]


def _axis_count(x: np.ndarray, axis) -> int:
    return x.size if axis is None else x.shape[axis]


def _check_axis(x, axis, name):
    _require(axis in (None, 0, 1), name, f"axis must be None, 0 or 1, got {axis}")
    if axis == 1:
        _require(x.ndim == 2, name, f"axis=1 requires a 2-D input, got {x.shape}")
    if axis == 0:
        _require(x.ndim in (1, 2), name, f"axis=0 requires 1-D or 2-D, got {x.shape}")


def _fw_sum(v, a):
    axis = a.get("axis")
    _check_axis(v[0], axis, "sum")
    return v[0].sum(axis=axis)


def _fw_mean(v, a):
    axis = a.get("axis")
    _check_axis(v[0], axis, "mean")
    _require(_axis_count(v[0], axis) > 0, "mean", "cannot average zero elements")
    return v[0].mean(axis=axis)


def _fw_concat(v, a):
    axis = a["axis"]
    _require(axis in (0, 1), "concat", f"axis must be 0 or 1, got {axis}")
    _require(all(x.ndim == v[0].ndim for x in v), "concat",
             f"rank mismatch: {[x.shape for x in v]}")
    return np.concatenate(v, axis=axis)


def _fw_gather_rows(v, a):
    idx = a["idx"]
    n = v[0].shape[0]
    _require(idx.size == 0 or (idx.min() >= 0 and idx.max() < n), "gather_rows",
             f"index out of range for {n} rows")
    return v[0][idx]


def _fw_scatter_add_rows(v, a):
    idx, n_rows = a["idx"], a["n_rows"]
    _require(v[0].shape[0] == idx.shape[0], "scatter_add_rows",
             f"{v[0].shape[0]} rows but {idx.shape[0]} indices")
    _require(idx.size == 0 or (idx.min() >= 0 and idx.max() < n_rows),
             "scatter_add_rows", f"index out of range for {n_rows} rows")
    return kernels.scatter_add_rows(v[0], idx, n_rows)


def _fw_sparse_matvec(v, a):
    m: CsrMatrix = a["matrix"]
    _require(v[0].shape[0] == m.shape[1], "sparse_matvec",
             f"matrix {m.shape} against operand {v[0].shape}")
    data = m.data if m.data.dtype == v[0].dtype else m.data.astype(v[0].dtype)
    return kernels.csr_matvec(m.indptr, m.indices, data, v[0])


def _fw_l2_norm_rows(v, a):
    x = v[0]
    _require(x.ndim == 2, "l2_norm_rows", f"requires a 2-D input, got {x.shape}")
    eps = x.dtype.type(a.get("eps", 1e-8))
    return np.sqrt(np.einsum("ij,ij->i", x, x) + eps)


def _fw_broadcast_rows(v, a):
    x, n = v[0], a["n"]
    _require(x.ndim == 1, "broadcast_rows", f"requires a 1-D input, got {x.shape}")
    return np.broadcast_to(x, (n, x.shape[0]))


def _fw_transpose(v, a):
    _require(v[0].ndim == 2, "transpose", f"requires a 2-D input, got {v[0].shape}")
    # materialized: downstream elementwise ops on the result stay contiguous
    return np.ascontiguousarray(v[0].T)


# --- adjoint rules ----------------------------------------------------------

def _vjp_add(g, rec):
    return [g, g]


def _vjp_sub(g, rec):
    return [g, -g]


def _vjp_mul(g, rec):
    x, y = rec.in_vals
    return [g * y, g * x]


def _vjp_divide(g, rec):
    x, y = rec.in_vals
    return [g / y, -g * x / (y * y)]


def _vjp_scalar_mul(g, rec):
    return [g * g.dtype.type(rec.attrs["value"])]


def _vjp_matmul(g, rec):
    x, y = rec.in_vals
    return [g @ y.T, x.T @ g]


def _vjp_relu(g, rec):
    return [g * (rec.in_vals[0] > 0)]


def _vjp_square(g, rec):
    x = rec.in_vals[0]
    return [g * (x + x)]


def _expand_reduction(g, x, axis):
    if axis is None:
        return np.broadcast_to(g, x.shape)
    if axis == 0:
        return np.broadcast_to(g, x.shape)
    return np.broadcast_to(g[:, None], x.shape)


def _vjp_sum(g, rec):
    return [_expand_reduction(g, rec.in_vals[0], rec.attrs.get("axis"))]


def _vjp_mean(g, rec):
    x = rec.in_vals[0]
    axis = rec.attrs.get("axis")
    return [_expand_reduction(g / _axis_count(x, axis), x, axis)]


def _vjp_concat(g, rec):
    axis = rec.attrs["axis"]
    sizes = [v.shape[axis] for v in rec.in_vals]
    return np.split(g, np.cumsum(sizes)[:-1], axis=axis)


def _vjp_gather_rows(g, rec):
    return [kernels.scatter_add_rows(g, rec.attrs["idx"], rec.in_vals[0].shape[0])]


def _vjp_scatter_add_rows(g, rec):
    return [g[rec.attrs["idx"]]]


def _vjp_sparse_matvec(g, rec):
    m: CsrMatrix = rec.attrs["matrix"]
    data = m.data if m.data.dtype == g.dtype else m.data.astype(g.dtype)
    return [kernels.csr_matvec_t(m.indptr, m.indices, data, g, m.shape[1])]


def _vjp_l2_norm_rows(g, rec):
    x = rec.in_vals[0]
    return [x * (g / rec.out_val)[:, None]]


def _vjp_broadcast_rows(g, rec):
    return [g.sum(axis=0)]


def _vjp_transpose(g, rec):
    return [np.ascontiguousarray(g.T)]


_CATALOGUE: dict[str, _Primitive] = {
    "add": _Primitive(_fw_add, _vjp_add),
    "sub": _Primitive(_fw_sub, _vjp_sub),
    "mul": _Primitive(_fw_mul, _vjp_mul),
    "divide": _Primitive(_fw_divide, _vjp_divide),
    "scalar_mul": _Primitive(_fw_scalar_mul, _vjp_scalar_mul),
    "matmul": _Primitive(_fw_matmul, _vjp_matmul),
    "relu": _Primitive(_fw_relu, _vjp_relu),
    "square": _Primitive(_fw_square, _vjp_square),
    "sum": _Primitive(_fw_sum, _vjp_sum),
    "mean": _Primitive(_fw_mean, _vjp_mean),
    "concat": _Primitive(_fw_concat, _vjp_concat),
    "gather_rows": _Primitive(_fw_gather_rows, _vjp_gather_rows),
    "scatter_add_rows": _Primitive(_fw_scatter_add_rows, _vjp_scatter_add_rows),
    "sparse_matvec": _Primitive(_fw_sparse_matvec, _vjp_sparse_matvec),
    "l2_norm_rows": _Primitive(_fw_l2_norm_rows, _vjp_l2_norm_rows),
    "broadcast_rows": _Primitive(_fw_broadcast_rows, _vjp_broadcast_rows),
    "transpose": _Primitive(_fw_transpose, _vjp_transpose),
}


def catalogue_names() -> list[str]:
    return list(_CATALOGUE)


def apply_primitive(tape: Optional[Tape], name: str, inputs: Iterable[Arrayish],
                    attrs: Optional[dict] = None) -> DiffArray:
    """Apply a catalogue primitive, recording it when a tape is given.

    With tape=None all inputs must be constants and the result is a constant:
    the same code paths then run as plain numpy.
    """
    prim = _CATALOGUE.get(name)
    if prim is None:
        raise TapeError(f"unknown primitive '{name}'")
    attrs = attrs or {}
    dtype = tape.dtype if tape is not None else None

    in_ids: list[Optional[int]] = []
    in_vals: list[np.ndarray] = []
    for x in inputs:
        if isinstance(x, DiffArray):
            if x.tape is not None:
                if tape is None:
                    raise TapeError(
                        f"{name}: tape-attached input passed to a tape-less application")
                if x.tape is not tape:
                    raise TapeError(f"{name}: input belongs to a different tape")
            in_ids.append(x.node)
            in_vals.append(x.data)
        else:
            arr = np.asarray(x, dtype=dtype)
            if dtype is None and arr.dtype.kind != "f":
                arr = arr.astype(np.float64)
            in_ids.append(None)
            in_vals.append(arr)

    out_val = prim.forward(tuple(in_vals), attrs)
    if tape is None:
        return DiffArray(out_val)
    out = DiffArray(out_val, tape, tape._new_id())
    tape.records.append(_Record(name, out.node, tuple(in_ids), tuple(in_vals),
                                out_val, attrs))
    return out


def backward(tape: Tape, output: DiffArray) -> dict[int, np.ndarray]:
    """Gradients of a scalar output with respect to every tape node.

    Returns a map node-id -> gradient array. Leaves the output does not
    depend on are present with zero gradients.
    """
    if output.tape is not tape or output.node is None:
        raise TapeError("backward: output was not recorded on this tape")
    if output.data.shape != ():
        raise TapeError(
            f"backward: output must be scalar, got shape {output.data.shape}")

    grads: dict[int, np.ndarray] = {output.node: np.ones((), dtype=tape.dtype)}
    for rec in reversed(tape.records):
        g = grads.get(rec.out_id)
        if g is None:
            continue
        contribs = _CATALOGUE[rec.name].vjp(g, rec)
        for iid, contrib in zip(rec.in_ids, contribs):
            if iid is None or contrib is None:
                continue
            cur = grads.get(iid)
            # never mutate stored arrays in place: vjp outputs may alias them
            grads[iid] = contrib if cur is None else cur + contrib
    for leaf_id, val in tape._leaf_vals.items():
        if leaf_id not in grads:
            grads[leaf_id] = np.zeros_like(val)
    return grads


def grad_of(grads: dict[int, np.ndarray], x: DiffArray) -> np.ndarray:
    """Gradient of a tape node from a backward() result (zeros if unreached)."""
    if x.node is None:
        raise TapeError("constants do not carry gradients")
    g = grads.get(x.node)
    return np.zeros_like(x.data) if g is None else np.ascontiguousarray(g)


def finite_difference_gradient(f: Callable[[np.ndarray], float], x: np.ndarray,
                               eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function, one coordinate at a time."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = np.array(x, dtype=np.float64)  # private copy: coordinates are nudged in place
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + eps
        fp = float(f(x))
        flat[k] = orig - eps
        fm = float(f(x))
        flat[k] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError(
                f"finite_difference_gradient: non-finite evaluation at coordinate {k}")
        gflat[k] = (fp - fm) / (2 * eps)
    return grad


# --- thin helpers: infer the tape from the operands -------------------------

def _tape_of(*xs: Arrayish) -> Optional[Tape]:
    for x in xs:
        if isinstance(x, DiffArray) and x.tape is not None:
            return x.tape
    return None


def add(a, b):
    return apply_primitive(_tape_of(a, b), "add", (a, b))


def sub(a, b):
    return apply_primitive(_tape_of(a, b), "sub", (a, b))


def mul(a, b):
    return apply_primitive(_tape_of(a, b), "mul", (a, b))


def divide(a, b):
    return apply_primitive(_tape_of(a, b), "divide", (a, b))


def scalar_mul(a, value: float):
    return apply_primitive(_tape_of(a), "scalar_mul", (a,), {"value": float(value)})


def matmul(a, b):
    return apply_primitive(_tape_of(a, b), "matmul", (a, b))


def relu(a):
    return apply_primitive(_tape_of(a), "relu", (a,))


def square(a):
    return apply_primitive(_tape_of(a), "square", (a,))


def sum_(a, axis=None):
    return apply_primitive(_tape_of(a), "sum", (a,), {"axis": axis})


def mean_(a, axis=None):
    return apply_primitive(_tape_of(a), "mean", (a,), {"axis": axis})


def concat(parts: Sequence[Arrayish], axis: int):
    return apply_primitive(_tape_of(*parts), "concat", tuple(parts), {"axis": axis})


def gather_rows(a, idx: np.ndarray):
    idx = np.ascontiguousarray(idx, dtype=np.int64)
    return apply_primitive(_tape_of(a), "gather_rows", (a,), {"idx": idx})


def scatter_add_rows(a, idx: np.ndarray, n_rows: int):
    idx = np.ascontiguousarray(idx, dtype=np.int64)
    return apply_primitive(_tape_of(a), "scatter_add_rows", (a,),
                           {"idx": idx, "n_rows": int(n_rows)})


def sparse_matvec(matrix: CsrMatrix, a):
    return apply_primitive(_tape_of(a), "sparse_matvec", (a,), {"matrix": matrix})


def l2_norm_rows(a, eps: float = 1e-8):
    return apply_primitive(_tape_of(a), "l2_norm_rows", (a,), {"eps": float(eps)})


def broadcast_rows(a, n: int):
    return apply_primitive(_tape_of(a), "broadcast_rows", (a,), {"n": int(n)})


def transpose(a):
    return apply_primitive(_tape_of(a), "transpose", (a,))


def scale_rows(a, s):
    """Multiply row i of a (n,d) array by s[i]; composed from the catalogue."""
    k = a.data.shape[1] if isinstance(a, DiffArray) else np.asarray(a).shape[1]
    return transpose(mul(transpose(a), broadcast_rows(s, k)))


def divide_rows(a, s):
    """Divide row i of a (n,d) array by s[i]; composed from the catalogue."""
    k = a.data.shape[1] if isinstance(a, DiffArray) else np.asarray(a).shape[1]
    return transpose(divide(transpose(a), broadcast_rows(s, k)))
