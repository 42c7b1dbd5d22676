"""Pure-numpy kernel fallback.

np.add.at applies updates in index order, matching the compiled loops, so
both backends produce bitwise-identical accumulations.
"""

import numpy as np


def scatter_add_rows(out: np.ndarray, idx: np.ndarray, src: np.ndarray) -> None:
    np.add.at(out, idx, src)


def csr_matvec(indptr: np.ndarray, indices: np.ndarray, data: np.ndarray,
               x: np.ndarray, out: np.ndarray) -> None:
    n = indptr.shape[0] - 1
    row_ids = np.repeat(np.arange(n), np.diff(indptr))
    np.add.at(out, row_ids, data[:, None] * x[indices])


def csr_matvec_t(indptr: np.ndarray, indices: np.ndarray, data: np.ndarray,
                 g: np.ndarray, out: np.ndarray) -> None:
    n = indptr.shape[0] - 1
    row_ids = np.repeat(np.arange(n), np.diff(indptr))
    np.add.at(out, indices, data[:, None] * g[row_ids])
