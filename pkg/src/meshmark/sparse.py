"""Minimal immutable CSR matrix container used for graph operators."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels


@dataclass(frozen=True)
class CsrMatrix:
    """Compressed sparse row matrix with int64 index arrays."""

    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray
    shape: tuple[int, int]

    def __post_init__(self):
        n_rows = self.shape[0]
        if self.indptr.shape != (n_rows + 1,):
            raise ValueError(
                f"indptr length {self.indptr.shape[0]} does not match {n_rows} rows"
            )
        if self.indices.shape != self.data.shape:
            raise ValueError("indices and data must have equal length")

    @property
    def nnz(self) -> int:
        return int(self.indices.shape[0])

    def matvec(self, x: np.ndarray) -> np.ndarray:
        """Dense product A @ x (x may be 1-D or a 2-D column block)."""
        return kernels.csr_matvec(self.indptr, self.indices, self.data, x)

    def rmatvec(self, g: np.ndarray) -> np.ndarray:
        """Transpose product A.T @ g."""
        return kernels.csr_matvec_t(self.indptr, self.indices, self.data, g,
                                    self.shape[1])

    def row(self, i: int) -> dict[int, float]:
        """Column -> coefficient mapping of row i (for tests and inspection)."""
        lo, hi = int(self.indptr[i]), int(self.indptr[i + 1])
        return {int(c): float(v) for c, v in zip(self.indices[lo:hi], self.data[lo:hi])}

    def todense(self) -> np.ndarray:
        out = np.zeros(self.shape, dtype=self.data.dtype)
        for i in range(self.shape[0]):
            for c, v in self.row(i).items():
                out[i, c] += v
        return out

    def astype(self, dtype) -> "CsrMatrix":
        return CsrMatrix(self.indptr, self.indices,
                         np.asarray(self.data, dtype=dtype), self.shape)
