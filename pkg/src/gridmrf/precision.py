"""Sparse precision matrices assembled from stencils, and the dense corner block.

the precision of the observations agrees with the stencil, Q[i, j] = eta(x_i - x_j),
whenever observation i or j is fully neighbored. the remaining block, between two
partially neighbored observations, is either computed exactly (q11_dense) or
replaced by one of the edge-correction approximations (approx_Q).

all sparse matrices here are indexed by observation (row-major cell order).
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Literal

import numpy as np
from scipy import sparse

from gridmrf.cholesky import SparseCholesky
from gridmrf.errors import InapplicableError, InputError
from gridmrf.lattice import FloatArray, GridMask, IntArray, PartitionIndex
from gridmrf.spectral import Stencil

logger = logging.getLogger(__name__)

Scheme = Literal["none", "precision", "periodic"]
SCHEMES: tuple[Scheme, ...] = ("none", "precision", "periodic")


def _stencil_pairs(mask: GridMask, stencil: Stencil) -> tuple[IntArray, IntArray, FloatArray]:
    """Observation pairs (i, j) with x_j = x_i + h for every stencil lag h.

    Returns:
        (rows, cols, values) with values = eta(h), diagonal included
    """
    idx = mask.index_grid()
    n1, n2 = mask.shape
    rows, cols, vals = [], [], []
    for (h1, h2), v in stencil.coefficients.items():
        r0, r1 = max(0, -h1), min(n1, n1 - h1)
        c0, c1 = max(0, -h2), min(n2, n2 - h2)
        if r0 >= r1 or c0 >= c1:
            continue
        a = idx[r0:r1, c0:c1]
        b = idx[r0 + h1 : r1 + h1, c0 + h2 : c1 + h2]
        keep = (a >= 0) & (b >= 0)
        rows.append(a[keep])
        cols.append(b[keep])
        vals.append(np.full(int(keep.sum()), v))
    return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)


def _check_index(mask: GridMask, index: PartitionIndex) -> None:
    if index.shape != mask.shape or index.n_obs != mask.n_obs:
        msg = (
            f"partition index ({index.shape}, {index.n_obs} obs) does not match "
            f"mask ({mask.shape}, {mask.n_obs} obs)"
        )
        raise InputError(msg)


def _to_csc(rows: IntArray, cols: IntArray, vals: FloatArray, n: int) -> sparse.csc_matrix:
    return sparse.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsc()


def assemble_sparse_Q(
    mask: GridMask, index: PartitionIndex, stencil: Stencil
) -> sparse.csc_matrix:
    """Exactly known entries of the observation precision.

    entries between two partially neighbored observations are left out.

    Args:
        mask: observation pattern
        index: partition built from (mask, stencil)
        stencil: conditional specification

    Returns:
        n_obs x n_obs sparse symmetric matrix
    """
    _check_index(mask, index)
    rows, cols, vals = _stencil_pairs(mask, stencil)
    keep = index.fully[rows] | index.fully[cols]
    return _to_csc(rows[keep], cols[keep], vals[keep], index.n_obs)


def split_blocks(
    Q: sparse.spmatrix, index: PartitionIndex
) -> tuple[sparse.csr_matrix, sparse.csc_matrix]:
    """The (partial, fully) block Q12 and the (fully, fully) block Q22.

    Args:
        Q: observation-ordered precision (only Q12, Q21, Q22 entries are read)
        index: partition index

    Returns:
        (Q12, Q22)
    """
    csr = sparse.csr_matrix(Q)
    fully = index.fully_obs
    Q12 = csr[index.partial_obs][:, fully].tocsr()
    Q22 = csr[fully][:, fully].tocsc()
    return Q12, Q22


def column_chunk(m: int, n_fully: int, limit: int) -> int:
    """Columns solved together, keeping each n_fully x chunk block within m x m."""
    if n_fully == 0:
        return max(1, limit)
    return max(1, min(limit, (m * m) // n_fully))


def schur_terms(
    Q12: sparse.csr_matrix,
    factors: list[SparseCholesky],
    workers: int = 1,
    chunk: int = 64,
) -> list[FloatArray]:
    """Dense products Q12 F^-1 Q21 for each factored matrix F.

    columns of Q21 are solved in fixed chunks, so no n_fully x m_n block is ever
    held and the result does not depend on the worker count.

    Args:
        Q12: partial x fully block
        factors: factorizations of fully x fully matrices
        workers: threads used for the column chunks
        chunk: columns per solve

    Returns:
        one m_n x m_n array per factor
    """
    m = Q12.shape[0]
    Q21 = sparse.csc_matrix(Q12.T)
    outputs = [np.zeros((m, m)) for _ in factors]
    if m == 0 or Q12.shape[1] == 0:
        return outputs
    starts = list(range(0, m, chunk))

    def solve_chunk(start: int) -> None:
        stop = min(start + chunk, m)
        rhs = Q21[:, start:stop].toarray()
        for factor, out in zip(factors, outputs, strict=True):
            out[:, start:stop] = Q12 @ factor.solve(rhs)

    if workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(solve_chunk, starts))
    else:
        for start in starts:
            solve_chunk(start)
    logger.debug("schur terms: %d columns in %d chunks", m, len(starts))
    return [0.5 * (out + out.T) for out in outputs]


def q11_dense(
    sigma11_inv: FloatArray,
    Q12: sparse.csr_matrix,
    Q22_factor: SparseCholesky,
    workers: int = 1,
    chunk: int = 64,
) -> FloatArray:
    """Corner precision block Q11 = Sigma11^-1 + Q12 Q22^-1 Q21.

    Args:
        sigma11_inv: inverse covariance of the partially neighbored observations
        Q12: partial x fully block
        Q22_factor: factorization of the fully x fully block
        workers: threads used for the column chunks
        chunk: columns per solve

    Returns:
        dense symmetric m_n x m_n array
    """
    m = sigma11_inv.shape[0]
    if Q12.shape[0] != m or Q12.shape[1] != Q22_factor.n:
        msg = f"block shapes disagree: Sigma11 {m}, Q12 {Q12.shape}, Q22 {Q22_factor.n}"
        raise InputError(msg)
    (correction,) = schur_terms(Q12, [Q22_factor], workers, chunk)
    return sigma11_inv + correction


def precision_lambda(stencil: Stencil) -> float:
    """Diagonal dominance ratio eta(0) / sum_{h != 0} |eta(h)|."""
    mass = stencil.off_center_mass()
    return float("inf") if mass == 0 else stencil.center / mass


def approx_Q(
    mask: GridMask, index: PartitionIndex, stencil: Stencil, scheme: Scheme
) -> sparse.csc_matrix:
    """Approximate observation precision from an edge-correction scheme.

    none: eta(x_i - x_j) everywhere. precision: as none, but partially neighbored
    diagonals become lambda * sum over observed j != i of |eta(x_i - x_j)|.
    periodic: eta at the minimal lag on the torus of the grid (complete grids only).

    Args:
        mask: observation pattern
        index: partition built from (mask, stencil)
        stencil: conditional specification
        scheme: one of "none", "precision", "periodic"

    Returns:
        n_obs x n_obs sparse symmetric matrix

    Raises:
        InapplicableError: periodic on an incomplete grid, or precision with lambda <= 1
    """
    _check_index(mask, index)
    n = index.n_obs
    if scheme == "none":
        return _to_csc(*_stencil_pairs(mask, stencil), n)
    if scheme == "precision":
        return _precision_adjusted(mask, index, stencil)
    if scheme == "periodic":
        return _periodic(mask, stencil)
    msg = f"unknown approximation scheme '{scheme}', expected one of {SCHEMES}"
    raise InputError(msg)


def _precision_adjusted(
    mask: GridMask, index: PartitionIndex, stencil: Stencil
) -> sparse.csc_matrix:
    lam = precision_lambda(stencil)
    if lam <= 1.0:
        msg = f"precision adjustment inapplicable (diagonal dominance ratio {lam:.4g} <= 1)"
        raise InapplicableError(msg)
    rows, cols, vals = _stencil_pairs(mask, stencil)
    n = index.n_obs
    off = rows != cols
    observed_mass = np.bincount(rows[off], weights=np.abs(vals[off]), minlength=n)
    diagonal = np.full(n, stencil.center)
    # isolated observations keep eta(0); the dominance bound is vacuous there
    adjust = ~index.fully & (observed_mass > 0)
    diagonal[adjust] = lam * observed_mass[adjust]
    obs = np.arange(n)
    return _to_csc(
        np.concatenate([rows[off], obs]),
        np.concatenate([cols[off], obs]),
        np.concatenate([vals[off], diagonal]),
        n,
    )


def _min_image(d: IntArray, n: int) -> IntArray:
    """d + k n for k in {-1, 0, 1} minimizing the magnitude, ties keep k = 0."""
    best = d.copy()
    for k in (-1, 1):
        cand = d + k * n
        best = np.where(np.abs(cand) < np.abs(best), cand, best)
    return best


def _periodic(mask: GridMask, stencil: Stencil) -> sparse.csc_matrix:
    if not mask.is_complete:
        msg = "periodic adjustment requires a complete rectangular grid"
        raise InapplicableError(msg)
    n1, n2 = mask.shape
    rr, cc = np.divmod(np.arange(n1 * n2), n2)
    rows, cols, vals = [], [], []
    for (h1, h2), v in stencil.coefficients.items():
        tr, tc = (rr + h1) % n1, (cc + h2) % n2
        keep = (_min_image(rr - tr, n1) == -h1) & (_min_image(cc - tc, n2) == -h2)
        rows.append(np.flatnonzero(keep))
        cols.append((tr * n2 + tc)[keep])
        vals.append(np.full(int(keep.sum()), v))
    return _to_csc(np.concatenate(rows), np.concatenate(cols), np.concatenate(vals), n1 * n2)
