"""Dense reference computations for small problems.

these form the full observation covariance from a finely oversampled table and
use plain dense Cholesky factorizations. they are slow and obviously correct,
and back the `--verify` option of the command line.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

from gridmrf.cholesky import DenseCholesky
from gridmrf.config import ComputeConfig
from gridmrf.errors import InputError, SizeGuardError
from gridmrf.lattice import FloatArray, GridMask, IntArray
from gridmrf.likelihood import LoglikBreakdown
from gridmrf.spectral import (
    CovarianceTable,
    ModelParams,
    Stencil,
    auto_oversampling,
    covariance_table,
)

logger = logging.getLogger(__name__)

DEFAULT_J_HI = 64
DENSE_LIMIT = 4096
INVERSE_LIMIT = 2048


@dataclass(frozen=True, eq=False)
class DenseModel:
    """Full covariance of the observations and its factorization.

    Attributes:
        covariance: [K(x_i - x_j)] + sigma2 I over all observations
        factor: dense Cholesky of the covariance
        locations: observation locations, row-major
    """

    covariance: FloatArray
    factor: DenseCholesky
    locations: IntArray

    @property
    def logdet(self) -> float:
        """log det of the covariance."""
        return self.factor.logdet

    @property
    def inverse(self) -> FloatArray:
        """Explicit inverse of the covariance."""
        return self.factor.inverse()


def oracle_table(
    model: ModelParams | Stencil,
    n: tuple[int, int],
    j_hi: int = DEFAULT_J_HI,
    config: ComputeConfig | None = None,
) -> CovarianceTable:
    """High-resolution table, at least as oversampled as the automatic rule.

    the torus side is capped at config.max_torus.

    Args:
        model: parameters or stencil
        n: grid dimensions
        j_hi: requested oversampling
        config: compute configuration

    Returns:
        the table
    """
    cfg = config or ComputeConfig()
    oversampling = j_hi
    if isinstance(model, ModelParams):
        oversampling = max(j_hi, auto_oversampling(model, n, cfg))
    oversampling = max(1, min(oversampling, cfg.max_torus // max(n)))
    return covariance_table(model, n, oversampling, workers=cfg.workers)


def dense_model(
    model: ModelParams | Stencil,
    mask: GridMask,
    j_hi: int = DEFAULT_J_HI,
    config: ComputeConfig | None = None,
    sigma2: float | None = None,
) -> DenseModel:
    """Dense covariance of the observed cells.

    Args:
        model: parameters or stencil
        mask: observation pattern
        j_hi: oversampling of the reference table
        config: compute configuration
        sigma2: nugget variance (default: params.sigma2, or 0 for a stencil)

    Returns:
        the dense model

    Raises:
        SizeGuardError: if there are more than 4096 observations
    """
    if mask.n_obs > DENSE_LIMIT:
        msg = f"dense oracle limited to {DENSE_LIMIT} observations, got {mask.n_obs}"
        raise SizeGuardError(msg)
    nugget = sigma2 if sigma2 is not None else getattr(model, "sigma2", 0.0)
    table = oracle_table(model, mask.shape, j_hi, config)
    locs = mask.locations()
    cov = table.cross(locs, locs)
    cov[np.diag_indices_from(cov)] += nugget
    return DenseModel(
        covariance=cov, factor=DenseCholesky(cov, "dense covariance"), locations=locs
    )


def dense_loglik(
    params: ModelParams,
    data: npt.ArrayLike,
    j_hi: int = DEFAULT_J_HI,
    config: ComputeConfig | None = None,
) -> LoglikBreakdown:
    """Loglikelihood by dense Cholesky of the full covariance.

    Args:
        params: model parameters
        data: 2-D array, NaN marks missing cells
        j_hi: oversampling of the reference table
        config: compute configuration

    Returns:
        the breakdown, method "dense"
    """
    started = time.perf_counter()
    values = np.asarray(data, dtype=float)
    mask = GridMask.from_field(values)
    model = dense_model(params, mask, j_hi, config)
    r = values[mask.observed] - params.mu
    quadform = float(r @ model.factor.solve(r))
    return LoglikBreakdown.from_parts(
        model.logdet, quadform, mask.n_obs, "dense", time.perf_counter() - started
    )


def dense_Q(
    model: ModelParams | Stencil,
    mask: GridMask,
    j_hi: int = DEFAULT_J_HI,
    config: ComputeConfig | None = None,
) -> FloatArray:
    """Explicit inverse of the covariance (no nugget) of the observed cells.

    Raises:
        SizeGuardError: if there are more than 2048 observations
    """
    if mask.n_obs > INVERSE_LIMIT:
        msg = f"dense inverse limited to {INVERSE_LIMIT} observations, got {mask.n_obs}"
        raise SizeGuardError(msg)
    return dense_model(model, mask, j_hi, config, sigma2=0.0).inverse


def dense_conditional(
    params: ModelParams,
    data: npt.ArrayLike,
    targets: npt.ArrayLike,
    j_hi: int = DEFAULT_J_HI,
    config: ComputeConfig | None = None,
) -> tuple[FloatArray, FloatArray]:
    """Conditional mean and covariance of Y at target cells given the data.

    Args:
        params: model parameters
        data: 2-D array, NaN marks missing cells
        targets: (row, col) cells inside the data rectangle
        j_hi: oversampling of the reference table
        config: compute configuration

    Returns:
        (mean, covariance) with shapes (t,) and (t, t)
    """
    values = np.asarray(data, dtype=float)
    tgt = np.asarray(targets, dtype=np.int64).reshape(-1, 2)
    n1, n2 = values.shape
    if (tgt < 0).any() or (tgt[:, 0] >= n1).any() or (tgt[:, 1] >= n2).any():
        msg = "oracle targets must lie inside the data rectangle"
        raise InputError(msg)
    mask = GridMask.from_field(values)
    model = dense_model(params, mask, j_hi, config)
    table = oracle_table(params, mask.shape, j_hi, config)
    cross = table.cross(model.locations, tgt)
    prior = table.cross(tgt, tgt) + params.sigma2 * np.eye(len(tgt))
    weights = model.factor.solve(cross)
    mean = params.mu + weights.T @ (values[mask.observed] - params.mu)
    cov = prior - cross.T @ weights
    return mean, 0.5 * (cov + cov.T)


def delta_J(model: ModelParams | Stencil, n: tuple[int, int], oversampling: int) -> float:
    """Largest change of K over the grid lags between oversampling J and J + 1.

    Args:
        model: parameters or stencil
        n: grid dimensions
        oversampling: J >= 1

    Returns:
        max over |h_l| < n_l of |K(h; J, n) - K(h; J + 1, n)|
    """
    if oversampling < 1:
        msg = f"oversampling must be >= 1, got {oversampling}"
        raise InputError(msg)
    lo = covariance_table(model, n, oversampling)
    hi = covariance_table(model, n, oversampling + 1)
    delta = _table_gap(lo, hi, n)
    logger.debug("delta_J for J=%d on %s: %.3g", oversampling, n, delta)
    return delta


def _table_gap(lo: CovarianceTable, hi: CovarianceTable, n: tuple[int, int]) -> float:
    h1, h2 = np.meshgrid(
        np.arange(-n[0] + 1, n[0]), np.arange(-n[1] + 1, n[1]), indexing="ij"
    )
    lags = np.stack([h1, h2], axis=-1)
    return float(np.abs(lo.at(lags) - hi.at(lags)).max())


def delta_sequence(
    model: ModelParams | Stencil, n: tuple[int, int], j_max: int
) -> list[float]:
    """delta_J for J = 1, ..., j_max, building each table once."""
    if j_max < 1:
        msg = f"j_max must be >= 1, got {j_max}"
        raise InputError(msg)
    tables = [covariance_table(model, n, j) for j in range(1, j_max + 2)]
    return [_table_gap(lo, hi, n) for lo, hi in zip(tables, tables[1:], strict=False)]
