"""Hot numeric kernels with a compiled core and a pure-numpy fallback.

Row scatter-add and CSR mat-vec sit on the critical path of every forward
and backward pass (neighbor aggregation, its adjoint, Laplacian smoothing).
A Cython extension implements them; if it is absent or the environment
variable MESHMARK_PURE_PYTHON is set, the numpy fallback is used instead.

Both backends accumulate in the same element order, so results are
bitwise identical either way.
"""

import os

import numpy as np

from . import numpy_backend as _np_impl

if os.environ.get("MESHMARK_PURE_PYTHON"):
    _impl = _np_impl
    BACKEND = "numpy"
else:
    try:
        from . import _fastops as _impl  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        _impl = _np_impl
        BACKEND = "numpy"


def backend_name() -> str:
    """Name of the active kernel backend: 'compiled' or 'numpy'."""
    return BACKEND


def _as_rows(a: np.ndarray) -> tuple[np.ndarray, bool]:
    # Kernels operate on 2-D row blocks; 1-D inputs are width-1 views.
    if a.ndim == 1:
        return np.ascontiguousarray(a).reshape(-1, 1), True
    return np.ascontiguousarray(a), False


def scatter_add_rows(src: np.ndarray, idx: np.ndarray, n_rows: int) -> np.ndarray:
    """out[idx[m]] += src[m] into a fresh zero array of n_rows rows."""
    rows, was_1d = _as_rows(src)
    idx = np.ascontiguousarray(idx, dtype=np.int64)
    out = np.zeros((n_rows, rows.shape[1]), dtype=rows.dtype)
    if rows.shape[0]:
        _impl.scatter_add_rows(out, idx, rows)
    return out[:, 0] if was_1d else out


def csr_matvec(indptr: np.ndarray, indices: np.ndarray, data: np.ndarray,
               x: np.ndarray) -> np.ndarray:
    """y = A @ x for a CSR matrix A and a dense column block x."""
    rows, was_1d = _as_rows(x)
    n = indptr.shape[0] - 1
    out = np.zeros((n, rows.shape[1]), dtype=rows.dtype)
    _impl.csr_matvec(
        np.ascontiguousarray(indptr, dtype=np.int64),
        np.ascontiguousarray(indices, dtype=np.int64),
        np.ascontiguousarray(data, dtype=rows.dtype),
        rows,
        out,
    )
    return out[:, 0] if was_1d else out


def csr_matvec_t(indptr: np.ndarray, indices: np.ndarray, data: np.ndarray,
                 g: np.ndarray, n_cols: int) -> np.ndarray:
    """y = A.T @ g for a CSR matrix A (adjoint of csr_matvec)."""
    rows, was_1d = _as_rows(g)
    out = np.zeros((n_cols, rows.shape[1]), dtype=rows.dtype)
    _impl.csr_matvec_t(
        np.ascontiguousarray(indptr, dtype=np.int64),
        np.ascontiguousarray(indices, dtype=np.int64),
        np.ascontiguousarray(data, dtype=rows.dtype),
        rows,
        out,
    )
    return out[:, 0] if was_1d else out
