"""Sparse and dense positive-definite factorizations with log-determinants.

sparse matrices are factored with CHOLMOD (approximate minimum degree ordering)
when scikit-sparse is installed, otherwise with SuperLU using a symmetric
minimum degree ordering and diagonal pivoting, which for a positive definite
matrix is an LDL' factorization in disguise.
"""

from __future__ import annotations

import logging
from typing import Any

import numpy as np
import numpy.typing as npt
from scipy import linalg, sparse
from scipy.sparse import linalg as splinalg

from gridmrf.errors import NotPositiveDefiniteError
from gridmrf.lattice import FloatArray

# try to import cholmod, fall back to superlu
try:
    from sksparse.cholmod import (  # type: ignore[import-not-found]
        CholmodNotPositiveDefiniteError,
        cholesky,
    )

    CHOLMOD_AVAILABLE = True
except ImportError:
    CHOLMOD_AVAILABLE = False
    cholesky = None
    CholmodNotPositiveDefiniteError = None

logger = logging.getLogger(__name__)

# dense blocks up to this size get a condition-number diagnostic on failure
CONDITION_DIAGNOSTIC_LIMIT = 4096


class SparseCholesky:
    """Fill-reducing factorization of a sparse symmetric positive definite matrix.

    handles are immutable after construction and safe for concurrent solves.
    """

    def __init__(self, matrix: sparse.spmatrix | sparse.sparray, label: str = "matrix") -> None:
        """Factor the matrix.

        Args:
            matrix: square sparse symmetric matrix
            label: name used in error messages

        Raises:
            NotPositiveDefiniteError: if the matrix is not positive definite
        """
        csc = sparse.csc_matrix(matrix)
        self.n = int(csc.shape[0])
        self.label = label
        self._factor: Any = None
        self._logdet = 0.0
        if self.n == 0:
            return
        if CHOLMOD_AVAILABLE:
            self._factor_cholmod(csc)
        else:
            self._factor_superlu(csc)
        logger.debug("factored %s (n=%d, nnz=%d)", label, self.n, csc.nnz)

    def _factor_cholmod(self, csc: sparse.csc_matrix) -> None:
        try:
            factor = cholesky(csc, ordering_method="amd")
        except CholmodNotPositiveDefiniteError as e:
            msg = f"{self.label} is not positive definite"
            raise NotPositiveDefiniteError(msg) from e
        self._factor = factor
        self._logdet = float(factor.logdet())

    def _factor_superlu(self, csc: sparse.csc_matrix) -> None:
        try:
            lu = splinalg.splu(
                csc,
                permc_spec="MMD_AT_PLUS_A",
                diag_pivot_thresh=0.0,
                options={"SymmetricMode": True},
            )
        except RuntimeError as e:
            msg = f"{self.label} is singular"
            raise NotPositiveDefiniteError(msg) from e
        pivots = lu.U.diagonal()
        if not np.array_equal(lu.perm_r, lu.perm_c) or np.any(pivots <= 0):
            msg = f"{self.label} is not positive definite"
            raise NotPositiveDefiniteError(msg)
        self._factor = lu
        self._logdet = float(np.log(pivots).sum())

    @property
    def logdet(self) -> float:
        """log det of the factored matrix."""
        return self._logdet

    def solve(self, rhs: npt.ArrayLike) -> FloatArray:
        """Solve the system for a vector or a block of columns."""
        b = np.asarray(rhs, dtype=float)
        if self.n == 0:
            return b.copy()
        if CHOLMOD_AVAILABLE:
            return np.asarray(self._factor(b))
        return np.asarray(self._factor.solve(b))


class DenseCholesky:
    """Cholesky factorization of a dense symmetric positive definite matrix."""

    def __init__(self, matrix: npt.ArrayLike, label: str = "matrix") -> None:
        """Factor the matrix.

        Args:
            matrix: square symmetric array
            label: name used in error messages

        Raises:
            NotPositiveDefiniteError: if a pivot is not positive
        """
        arr = np.asarray(matrix, dtype=float)
        self.n = int(arr.shape[0])
        self.label = label
        if self.n == 0:
            self._factor = (np.zeros((0, 0)), True)
            self._logdet = 0.0
            return
        try:
            self._factor = linalg.cho_factor(arr, lower=True, check_finite=True)
        except (linalg.LinAlgError, ValueError) as e:
            condition = (
                float(np.linalg.cond(arr))
                if self.n <= CONDITION_DIAGNOSTIC_LIMIT and np.all(np.isfinite(arr))
                else None
            )
            msg = f"cholesky factorization of {label} failed"
            raise NotPositiveDefiniteError(msg, condition) from e
        self._logdet = float(2.0 * np.log(np.diag(self._factor[0])).sum())

    @property
    def logdet(self) -> float:
        """log det of the factored matrix."""
        return self._logdet

    def solve(self, rhs: npt.ArrayLike) -> FloatArray:
        """Solve the system for a vector or a block of columns."""
        b = np.asarray(rhs, dtype=float)
        if self.n == 0:
            return b.copy()
        return np.asarray(linalg.cho_solve(self._factor, b))

    def inverse(self) -> FloatArray:
        """Explicit symmetric inverse."""
        inv = self.solve(np.eye(self.n))
        return 0.5 * (inv + inv.T)
