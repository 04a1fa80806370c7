"""Exact and approximate Gaussian loglikelihoods of masked grid data.

every method reduces to a covariance solver: an object exposing the log-determinant
of the observation covariance Sigma + sigma2 I and a solve against it. the exact
solvers never form the n_obs x n_obs covariance; their dense work is confined to
the m_n partially neighbored observations.

    NoNuggetSolver  sigma2 = 0, log det Sigma = log det Sigma11 - log det Q22
    FullQSolver     sigma2 > 0, full precision Q with a dense Q11 corner
    LeanSolver      sigma2 > 0, Schur complement of A22 = I + sigma2 Q22 only
    ApproxSolver    approximate precision from an edge-correction scheme
    BlockSolver     independent dense blocks
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass
from typing import Literal, Protocol

import numpy as np
import numpy.typing as npt
from scipy import sparse

from gridmrf.cholesky import DenseCholesky, SparseCholesky
from gridmrf.config import ComputeConfig
from gridmrf.errors import InapplicableError, InputError, SizeGuardError
from gridmrf.lattice import (
    FloatArray,
    GridMask,
    IntArray,
    PartitionIndex,
    block_merge,
    block_view,
    classify,
)
from gridmrf.precision import (
    SCHEMES,
    Scheme,
    approx_Q,
    assemble_sparse_Q,
    column_chunk,
    q11_dense,
    schur_terms,
    split_blocks,
)
from gridmrf.spectral import (
    CovarianceTable,
    ModelParams,
    circ_matvec,
    model_table,
    stencil_from_params,
)

logger = logging.getLogger(__name__)

Method = Literal[
    "exact",
    "exact-nugget",
    "nugget-fullq",
    "nugget-lean",
    "none",
    "precision",
    "periodic",
    "indblocks",
]
METHODS: tuple[Method, ...] = (
    "exact",
    "exact-nugget",
    "nugget-fullq",
    "nugget-lean",
    "none",
    "precision",
    "periodic",
    "indblocks",
)
APPROX_METHODS: tuple[Scheme, ...] = SCHEMES
DEFAULT_BLOCK_SHAPE = (40, 40)

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class LoglikBreakdown:
    """Gaussian loglikelihood and its two ingredients.

    Attributes:
        loglik: -n_obs/2 log(2 pi) - logdet/2 - quadform/2
        logdet: log det of the covariance of the observations
        quadform: (y - mu)' (Sigma + sigma2 I)^-1 (y - mu)
        n_obs: number of observations
        method: method tag
        wall_time: seconds spent in the evaluation
    """

    loglik: float
    logdet: float
    quadform: float
    n_obs: int
    method: str
    wall_time: float = 0.0

    @classmethod
    def from_parts(
        cls, logdet: float, quadform: float, n_obs: int, method: str, wall_time: float = 0.0
    ) -> LoglikBreakdown:
        """Assemble the breakdown from log-determinant and quadratic form."""
        loglik = -0.5 * n_obs * LOG_2PI - 0.5 * logdet - 0.5 * quadform
        return cls(loglik, logdet, quadform, n_obs, method, wall_time)

    def to_dict(self) -> dict[str, float | int | str]:
        """Convert to dictionary."""
        return {
            "loglik": self.loglik,
            "logdet": self.logdet,
            "quadform": self.quadform,
            "n_obs": self.n_obs,
            "method": self.method,
            "wall_time": self.wall_time,
        }


class CovarianceSolver(Protocol):
    """log det and solves for the covariance of the observations."""

    n_obs: int

    @property
    def logdet(self) -> float:
        """log det (Sigma + sigma2 I)."""
        ...

    def solve(self, v: npt.ArrayLike) -> FloatArray:
        """(Sigma + sigma2 I)^-1 v in observation order, v of shape (n,) or (n, k)."""
        ...


@dataclass(frozen=True, eq=False)
class FactorBundle:
    """Shared pieces of the exact solvers.

    Attributes:
        table: covariance table of the unit rectangle
        mask: observation pattern
        index: partially/fully neighbored partition
        partial_locs: locations of the partially neighbored observations
        fully_locs: locations of the fully neighbored observations
        sigma11: dense Cholesky of Sigma11
        Q12: sparse precision block (partial x fully)
        Q22: sparse precision block (fully x fully)
        q22: sparse Cholesky of Q22
    """

    table: CovarianceTable
    mask: GridMask
    index: PartitionIndex
    partial_locs: IntArray
    fully_locs: IntArray
    sigma11: DenseCholesky
    Q12: sparse.csr_matrix
    Q22: sparse.csc_matrix
    q22: SparseCholesky


def factor_bundle(
    table: CovarianceTable, mask: GridMask, config: ComputeConfig | None = None
) -> FactorBundle:
    """Classify the observations and factor Sigma11 and Q22.

    Args:
        table: covariance table whose rectangle is the mask's
        mask: observation pattern
        config: compute configuration

    Returns:
        the factor bundle

    Raises:
        SizeGuardError: if m_n exceeds config.max_partial
    """
    cfg = config or ComputeConfig()
    if table.grid != mask.shape:
        msg = f"covariance table serves {table.grid}, mask is {mask.shape}"
        raise InputError(msg)
    index = classify(mask, table.stencil)
    if index.m_n > cfg.max_partial:
        msg = (
            f"m_n = {index.m_n} partially neighbored observations exceeds the cap of "
            f"{cfg.max_partial}; impute scattered missing cells to shrink m_n"
        )
        raise SizeGuardError(msg)
    logger.debug("partition: n_obs=%d, m_n=%d", index.n_obs, index.m_n)
    locs = mask.locations()
    partial_locs = locs[index.partial_obs]
    sigma11 = DenseCholesky(table.cross(partial_locs, partial_locs), "Sigma11")
    Q = assemble_sparse_Q(mask, index, table.stencil)
    Q12, Q22 = split_blocks(Q, index)
    q22 = SparseCholesky(Q22, "Q22")
    return FactorBundle(
        table=table,
        mask=mask,
        index=index,
        partial_locs=partial_locs,
        fully_locs=locs[index.fully_obs],
        sigma11=sigma11,
        Q12=Q12,
        Q22=Q22,
        q22=q22,
    )


class NoNuggetSolver:
    """Solver for Sigma with the precision known outside the corner block."""

    def __init__(self, bundle: FactorBundle, workers: int = 1) -> None:
        """Wrap a factor bundle.

        Args:
            bundle: factored blocks
            workers: FFT threads for the covariance block actions
        """
        self.bundle = bundle
        self.n_obs = bundle.index.n_obs
        self.workers = workers

    @property
    def logdet(self) -> float:
        """log det Sigma = log det Sigma11 - log det Q22."""
        return self.bundle.sigma11.logdet - self.bundle.q22.logdet

    def solve(self, v: npt.ArrayLike) -> FloatArray:
        """Sigma^-1 v through the block form of the precision."""
        b = self.bundle
        v1, v2 = block_view(b.index, v)
        if b.index.n_fully == 0:
            return block_merge(b.index, b.sigma11.solve(v1), v2)
        a = b.sigma11.solve(v1)
        r2 = v2 - circ_matvec(b.table, a, b.partial_locs, b.fully_locs, self.workers)
        x2 = b.Q22 @ r2
        x1 = a - b.sigma11.solve(
            circ_matvec(b.table, x2, b.fully_locs, b.partial_locs, self.workers)
        )
        return block_merge(b.index, x1, x2)


class FullQSolver:
    """Solver for Sigma + sigma2 I = Q^-1 (I + sigma2 Q) with Q held whole."""

    def __init__(self, bundle: FactorBundle, sigma2: float, config: ComputeConfig) -> None:
        """Complete Q with its dense corner block and factor Q and I + sigma2 Q.

        Args:
            bundle: factored blocks
            sigma2: nugget variance
            config: compute configuration
        """
        self.bundle = bundle
        self.n_obs = bundle.index.n_obs
        index = bundle.index
        chunk = column_chunk(index.m_n, index.n_fully, config.column_chunk)
        Q11 = q11_dense(
            bundle.sigma11.inverse(), bundle.Q12, bundle.q22, config.workers, chunk
        )
        # block order: partially neighbored first, so the dense corner leads
        if index.n_fully == 0:
            Q = sparse.csc_matrix(Q11)
        else:
            Q = sparse.bmat(
                [[sparse.csr_matrix(Q11), bundle.Q12], [bundle.Q12.T, bundle.Q22]],
                format="csc",
            )
        self.Q = Q
        self.q = SparseCholesky(Q, "Q")
        self.a = SparseCholesky(
            sparse.identity(self.n_obs, format="csc") + sigma2 * Q, "I + sigma2 Q"
        )

    @property
    def logdet(self) -> float:
        """log det (Sigma + sigma2 I) = -log det Q + log det (I + sigma2 Q)."""
        return self.a.logdet - self.q.logdet

    def solve(self, v: npt.ArrayLike) -> FloatArray:
        """(I + sigma2 Q)^-1 Q v."""
        index = self.bundle.index
        v1, v2 = block_view(index, v)
        x = self.a.solve(self.Q @ np.concatenate([v1, v2]))
        return block_merge(index, x[: index.m_n], x[index.m_n :])


class LeanSolver:
    """Solver for Sigma + sigma2 I holding only m_n x m_n dense blocks.

    with A = I + sigma2 Q and S = I + sigma2 Q11 - sigma2^2 Q12 A22^-1 Q21 the Schur
    complement of A22, log det A = log det A22 + log det S and A^-1 follows from
    the block elimination of the fully neighbored group.
    """

    def __init__(self, bundle: FactorBundle, sigma2: float, config: ComputeConfig) -> None:
        """Factor A22 and the Schur complement S.

        Args:
            bundle: factored blocks
            sigma2: nugget variance
            config: compute configuration
        """
        self.bundle = bundle
        self.sigma2 = sigma2
        self.n_obs = bundle.index.n_obs
        self.inner = NoNuggetSolver(bundle, config.workers)
        index = bundle.index
        self.a22 = SparseCholesky(
            sparse.identity(index.n_fully, format="csc") + sigma2 * bundle.Q22,
            "I + sigma2 Q22",
        )
        chunk = column_chunk(index.m_n, index.n_fully, config.column_chunk)
        q22_term, a22_term = schur_terms(
            bundle.Q12, [bundle.q22, self.a22], config.workers, chunk
        )
        schur = sigma2 * (bundle.sigma11.inverse() + q22_term) - sigma2**2 * a22_term
        schur[np.diag_indices_from(schur)] += 1.0
        self.s = DenseCholesky(schur, "Schur complement of I + sigma2 Q22")

    @property
    def logdet(self) -> float:
        """log det Sigma + log det A22 + log det S."""
        return self.inner.logdet + self.a22.logdet + self.s.logdet

    def solve(self, v: npt.ArrayLike) -> FloatArray:
        """A^-1 Q v with Q v taken from the no-nugget solver."""
        b = self.bundle
        u1, u2 = block_view(b.index, self.inner.solve(v))
        a = self.a22.solve(u2)
        s1 = self.s.solve(u1 - self.sigma2 * (b.Q12 @ a))
        t2 = a - self.sigma2 * self.a22.solve(b.Q12.T @ s1)
        return block_merge(b.index, s1, t2)


class ApproxSolver:
    """Solver treating an approximate sparse precision as exact."""

    def __init__(self, Q: sparse.spmatrix, label: str) -> None:
        """Factor the approximate precision.

        Args:
            Q: observation-ordered approximate precision
            label: scheme name used in error messages
        """
        self.Q = sparse.csc_matrix(Q)
        self.n_obs = int(self.Q.shape[0])
        self.q = SparseCholesky(self.Q, f"approximate precision ({label})")

    @property
    def logdet(self) -> float:
        """-log det Q."""
        return -self.q.logdet

    def solve(self, v: npt.ArrayLike) -> FloatArray:
        """Q v."""
        return np.asarray(self.Q @ np.asarray(v, dtype=float))


class BlockSolver:
    """Solver of the block-diagonal covariance of independent blocks."""

    def __init__(
        self,
        table: CovarianceTable,
        locations: IntArray,
        blocks: list[IntArray],
        sigma2: float,
        dense_guard: int = 4096,
    ) -> None:
        """Factor every dense block covariance.

        Args:
            table: covariance table
            locations: observation locations
            blocks: disjoint observation index arrays covering all observations
            sigma2: nugget variance
            dense_guard: largest block size

        Raises:
            InputError: if the blocks do not partition the observations
            SizeGuardError: if a block exceeds dense_guard
        """
        self.n_obs = len(locations)
        counts = np.zeros(self.n_obs, dtype=np.int64)
        for block in blocks:
            if len(block) > dense_guard:
                msg = f"block of {len(block)} observations exceeds the dense limit {dense_guard}"
                raise SizeGuardError(msg)
            np.add.at(counts, block, 1)
        if not np.all(counts == 1):
            msg = "blocks must partition the observed cells"
            raise InputError(msg)
        self.blocks = [np.asarray(block, dtype=np.int64) for block in blocks]
        self.factors = []
        for k, block in enumerate(self.blocks):
            cov = table.cross(locations[block], locations[block])
            cov[np.diag_indices_from(cov)] += sigma2
            self.factors.append(DenseCholesky(cov, f"block {k}"))

    @property
    def logdet(self) -> float:
        """Sum of block log-determinants."""
        return float(sum(f.logdet for f in self.factors))

    def solve(self, v: npt.ArrayLike) -> FloatArray:
        """Blockwise solves."""
        vals = np.asarray(v, dtype=float)
        out = np.empty_like(vals)
        for block, factor in zip(self.blocks, self.factors, strict=True):
            out[block] = factor.solve(vals[block])
        return out


def rectangular_blocks(mask: GridMask, block_shape: tuple[int, int]) -> list[IntArray]:
    """Partition the observations by tiling the grid into rectangles.

    Args:
        mask: observation pattern
        block_shape: tile dimensions

    Returns:
        observation index arrays of the non-empty tiles, row-major tile order
    """
    b1, b2 = block_shape
    if b1 < 1 or b2 < 1:
        msg = f"block shape must be positive, got {block_shape}"
        raise InputError(msg)
    locs = mask.locations()
    n_tiles2 = -(-mask.n2 // b2)
    tile = (locs[:, 0] // b1) * n_tiles2 + locs[:, 1] // b2
    order = np.argsort(tile, kind="stable")
    _, starts = np.unique(tile[order], return_index=True)
    return [part.astype(np.int64) for part in np.split(order, starts[1:])]


def _require_approx_scheme(method: str) -> Scheme:
    for scheme in SCHEMES:
        if scheme == method:
            return scheme
    msg = f"unknown approximation scheme '{method}', expected one of {SCHEMES}"
    raise InputError(msg)


def build_solver(
    params: ModelParams,
    mask: GridMask,
    method: Method = "exact",
    config: ComputeConfig | None = None,
    blocks: list[IntArray] | None = None,
    table: CovarianceTable | None = None,
) -> CovarianceSolver:
    """Covariance solver of a likelihood method.

    "exact" and "exact-nugget" pick the no-nugget path when sigma2 = 0 and the
    configured nugget path otherwise.

    Args:
        params: model parameters (the mean is not used)
        mask: observation pattern
        method: method tag
        config: compute configuration
        blocks: observation partition for "indblocks" (default: 40 x 40 tiles)
        table: covariance table for the mask's rectangle (built when None)

    Returns:
        the solver

    Raises:
        InapplicableError: for an approximation with sigma2 > 0
    """
    cfg = config or ComputeConfig()
    if method not in METHODS:
        msg = f"unknown method '{method}', expected one of {METHODS}"
        raise InputError(msg)
    if method in APPROX_METHODS:
        if params.sigma2 > 0:
            msg = f"approximation '{method}' is defined for sigma2 = 0 only"
            raise InapplicableError(msg)
        stencil = table.stencil if table is not None else stencil_from_params(params)
        scheme = _require_approx_scheme(method)
        index = classify(mask, stencil)
        return ApproxSolver(approx_Q(mask, index, stencil, scheme), scheme)

    tbl = table if table is not None else model_table(params, mask.shape, cfg)
    if method == "indblocks":
        parts = blocks if blocks is not None else rectangular_blocks(mask, DEFAULT_BLOCK_SHAPE)
        return BlockSolver(tbl, mask.locations(), parts, params.sigma2, cfg.dense_guard)

    if method in ("nugget-fullq", "nugget-lean") and params.sigma2 <= 0:
        msg = f"method '{method}' needs sigma2 > 0"
        raise InputError(msg)
    bundle = factor_bundle(tbl, mask, cfg)
    if params.sigma2 == 0:
        return NoNuggetSolver(bundle, cfg.workers)
    path = {"nugget-fullq": "fullq", "nugget-lean": "lean"}.get(method, cfg.nugget_path)
    if path == "fullq":
        return FullQSolver(bundle, params.sigma2, cfg)
    return LeanSolver(bundle, params.sigma2, cfg)


def oriented(field: npt.ArrayLike) -> FloatArray:
    """Field with axes ordered so that n1 <= n2."""
    values = np.asarray(field, dtype=float)
    if values.ndim != 2:  # noqa: PLR2004
        msg = f"field must be 2-D, got shape {values.shape}"
        raise InputError(msg)
    return values.T if values.shape[0] > values.shape[1] else values


def oriented_with_blocks(
    field: npt.ArrayLike, blocks: list[IntArray] | None = None
) -> tuple[FloatArray, list[IntArray] | None]:
    """Oriented field together with blocks renumbered for its observation order.

    Args:
        field: 2-D array, NaN marks missing cells
        blocks: observation partition in the input orientation

    Returns:
        (field with n1 <= n2, blocks in the oriented observation order)
    """
    values = np.asarray(field, dtype=float)
    turned = oriented(values)
    if turned is values or blocks is None:
        return turned, blocks
    # observation order changes with the transpose; remap block members
    original = GridMask.from_field(values)
    remap = GridMask.from_field(turned).index_grid().T[original.observed]
    return turned, [remap[np.asarray(b, dtype=np.int64)] for b in blocks]


def evaluate(
    solver: CovarianceSolver, y: npt.ArrayLike, mu: float, method: str, started: float
) -> LoglikBreakdown:
    """Loglikelihood of y from a solver.

    Args:
        solver: covariance solver
        y: observations in observation order
        mu: constant mean
        method: method tag recorded in the breakdown
        started: perf_counter value when the evaluation began

    Returns:
        the breakdown
    """
    r = np.asarray(y, dtype=float) - mu
    quadform = float(r @ solver.solve(r))
    logdet = solver.logdet
    elapsed = time.perf_counter() - started
    logger.debug(
        "loglik[%s]: n_obs=%d logdet=%.10g quadform=%.10g (%.3fs)",
        method,
        solver.n_obs,
        logdet,
        quadform,
        elapsed,
    )
    return LoglikBreakdown.from_parts(logdet, quadform, solver.n_obs, method, elapsed)


def loglik(
    params: ModelParams,
    field: npt.ArrayLike,
    method: Method = "exact",
    config: ComputeConfig | None = None,
    blocks: list[IntArray] | None = None,
) -> LoglikBreakdown:
    """Loglikelihood of a NaN-masked field under any method.

    Args:
        params: model parameters
        field: 2-D array, NaN marks missing cells
        method: method tag
        config: compute configuration
        blocks: observation partition for "indblocks", in the input orientation

    Returns:
        the breakdown
    """
    started = time.perf_counter()
    values, blocks = oriented_with_blocks(field, blocks)
    mask = GridMask.from_field(values)
    solver = build_solver(params, mask, method, config, blocks)
    return evaluate(solver, values[mask.observed], params.mu, method, started)


def loglik_exact(
    params: ModelParams, field: npt.ArrayLike, config: ComputeConfig | None = None
) -> LoglikBreakdown:
    """Exact loglikelihood without a nugget.

    Raises:
        InputError: if params.sigma2 > 0
    """
    if params.sigma2 != 0:
        msg = "loglik_exact needs sigma2 = 0"
        raise InputError(msg)
    return loglik(params, field, "exact", config)


def loglik_nugget_fullQ(
    params: ModelParams, field: npt.ArrayLike, config: ComputeConfig | None = None
) -> LoglikBreakdown:
    """Exact nugget loglikelihood through the full precision matrix."""
    return loglik(params, field, "nugget-fullq", config)


def loglik_nugget_lean(
    params: ModelParams, field: npt.ArrayLike, config: ComputeConfig | None = None
) -> LoglikBreakdown:
    """Exact nugget loglikelihood holding no dense block beyond m_n x m_n."""
    return loglik(params, field, "nugget-lean", config)


def loglik_approx(
    params: ModelParams,
    field: npt.ArrayLike,
    scheme: Scheme,
    config: ComputeConfig | None = None,
) -> LoglikBreakdown:
    """Approximate loglikelihood with an edge-corrected sparse precision."""
    return loglik(params, field, _require_approx_scheme(scheme), config)


def loglik_indblocks(
    params: ModelParams,
    field: npt.ArrayLike,
    blocks: list[IntArray] | None = None,
    config: ComputeConfig | None = None,
    block_shape: tuple[int, int] = DEFAULT_BLOCK_SHAPE,
) -> LoglikBreakdown:
    """Independent-blocks loglikelihood, the sum of dense block loglikelihoods.

    Args:
        params: model parameters
        field: 2-D array, NaN marks missing cells
        blocks: observation partition (default: tiles of block_shape)
        config: compute configuration
        block_shape: tile dimensions when blocks is None

    Returns:
        the breakdown
    """
    if blocks is None:
        blocks = rectangular_blocks(GridMask.from_field(field), block_shape)
    return loglik(params, field, "indblocks", config, blocks)
