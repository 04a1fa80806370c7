"""Maximum likelihood fitting with the mean and scale profiled out.

with C the covariance at tau = 1 and M = C + delta I (delta = tau^2 sigma2), the
mean and precision scale have closed forms

    mu_hat    = 1' M^-1 y / 1' M^-1 1
    tau_hat^2 = n / (y - mu_hat)' M^-1 (y - mu_hat)

so the likelihood is optimized over log kappa, plus log delta for nugget fits,
with a Nelder-Mead simplex.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, fields
from typing import Any

import numpy as np
import numpy.typing as npt
from scipy import optimize

from gridmrf.config import ComputeConfig
from gridmrf.errors import InapplicableError, InputError, NumericalError
from gridmrf.lattice import GridMask, IntArray
from gridmrf.likelihood import (
    APPROX_METHODS,
    CovarianceSolver,
    LoglikBreakdown,
    Method,
    build_solver,
    oriented_with_blocks,
    rectangular_blocks,
)
from gridmrf.spectral import ModelParams, model_table

logger = logging.getLogger(__name__)

FIT_METHODS = ("exact", "exact-nugget", "none", "precision", "periodic", "indblocks")
# log kappa outside this window is rejected by the objective
LOG_KAPPA_BOUNDS = (math.log(1e-4), math.log(1e3))


@dataclass(frozen=True)
class OptimizerConfig:
    """Settings of the simplex search.

    Attributes:
        log_kappa0: starting log kappa
        delta_factor0: starting delta as a fraction of the unit-scale variance K(0)
        fatol: absolute tolerance on the objective
        xatol: absolute tolerance on the log parameters
        max_iter: iteration cap
    """

    log_kappa0: float = math.log(0.1)
    delta_factor0: float = 0.01
    fatol: float = 1e-6
    xatol: float = 1e-4
    max_iter: int = 200

    def __post_init__(self) -> None:
        """Validate ranges."""
        if self.delta_factor0 <= 0:
            msg = "delta_factor0 must be positive"
            raise InputError(msg)
        if self.max_iter < 1:
            msg = "max_iter must be >= 1"
            raise InputError(msg)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> OptimizerConfig:
        """Build from a dictionary of field values."""
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            msg = f"unknown optimizer settings: {sorted(unknown)}"
            raise InputError(msg)
        return cls(**data)


@dataclass(frozen=True)
class ProfileResult:
    """Profiled likelihood at fixed (kappa, nu, delta).

    Attributes:
        params: model with the closed-form mean and scale substituted
        delta: noise-to-signal ratio tau^2 sigma2
        loglik: loglikelihood breakdown at params
    """

    params: ModelParams
    delta: float
    loglik: LoglikBreakdown


@dataclass(frozen=True)
class TracePoint:
    """One objective evaluation of a fit."""

    kappa: float
    delta: float
    loglik: float

    def to_dict(self) -> dict[str, float]:
        """Convert to dictionary."""
        return {"kappa": self.kappa, "delta": self.delta, "loglik": self.loglik}


@dataclass
class FitResult:
    """Outcome of a maximum likelihood fit.

    Attributes:
        params: parameters at the best evaluated point
        loglik: loglikelihood breakdown there
        iterations: simplex iterations
        evaluations: objective evaluations
        converged: the simplex met its tolerances
        method: method tag
        nugget: whether delta was optimized
        trace: every evaluated point
        wall_time: seconds spent fitting
    """

    params: ModelParams
    loglik: LoglikBreakdown
    iterations: int
    evaluations: int
    converged: bool
    method: str
    nugget: bool
    trace: list[TracePoint] = field(default_factory=list)
    wall_time: float = 0.0

    def to_dict(self, include_trace: bool = False) -> dict[str, Any]:  # noqa: FBT001, FBT002
        """Convert to dictionary."""
        out: dict[str, Any] = {
            "params": self.params.to_dict(),
            "loglik": self.loglik.to_dict(),
            "iterations": self.iterations,
            "evaluations": self.evaluations,
            "converged": self.converged,
            "method": self.method,
            "nugget": self.nugget,
            "wall_time": self.wall_time,
            "wall_minutes": self.wall_time / 60.0,
        }
        if include_trace:
            out["trace"] = [p.to_dict() for p in self.trace]
        return out


def _solver_method(method: str) -> Method:
    if method not in FIT_METHODS:
        msg = f"unknown fit method '{method}', expected one of {FIT_METHODS}"
        raise InputError(msg)
    return "exact" if method == "exact-nugget" else method  # type: ignore[return-value]


def profile_solver(
    solver: CovarianceSolver, y: npt.ArrayLike, method: str, started: float | None = None
) -> tuple[float, float, LoglikBreakdown]:
    """Closed-form mean and scale for a unit-scale covariance solver.

    Args:
        solver: solver of M = C + delta I
        y: observations in observation order
        method: method tag recorded in the breakdown
        started: perf_counter value when the evaluation began

    Returns:
        (mu_hat, tau_hat^2, loglik breakdown at those values)
    """
    t0 = time.perf_counter() if started is None else started
    obs = np.asarray(y, dtype=float)
    n = len(obs)
    solved = solver.solve(np.column_stack([obs, np.ones(n)]))
    m_y, m_1 = solved[:, 0], solved[:, 1]
    one_m_one = float(m_1.sum())
    if not one_m_one > 0:
        msg = f"1' M^-1 1 = {one_m_one:.3g} is not positive"
        raise NumericalError(msg)
    mu_hat = float(m_y.sum()) / one_m_one
    quad_unit = float((obs - mu_hat) @ (m_y - mu_hat * m_1))
    if not quad_unit > 0:
        msg = f"residual quadratic form {quad_unit:.3g} is not positive"
        raise NumericalError(msg)
    tau2 = n / quad_unit
    # Sigma + sigma2 I = M / tau^2
    logdet = solver.logdet - n * math.log(tau2)
    breakdown = LoglikBreakdown.from_parts(
        logdet, tau2 * quad_unit, n, method, time.perf_counter() - t0
    )
    return mu_hat, tau2, breakdown


def profile_closed_forms(
    kappa: float,
    nu: int,
    delta: float,
    data: npt.ArrayLike,
    method: str = "exact",
    config: ComputeConfig | None = None,
    blocks: list[IntArray] | None = None,
) -> ProfileResult:
    """Profile mu and tau out of the likelihood at fixed (kappa, nu, delta).

    Args:
        kappa: inverse range
        nu: smoothness
        delta: noise-to-signal ratio tau^2 sigma2 (0 for no nugget)
        data: 2-D array, NaN marks missing cells
        method: likelihood method tag
        config: compute configuration
        blocks: observation partition for "indblocks", in the input orientation

    Returns:
        the profiled result

    Raises:
        NumericalError: if 1' M^-1 1 or the residual quadratic form is not positive
    """
    started = time.perf_counter()
    if delta < 0:
        msg = f"delta must be nonnegative, got {delta}"
        raise InputError(msg)
    values, blocks = oriented_with_blocks(data, blocks)
    mask = GridMask.from_field(values)
    unit = ModelParams(tau=1.0, kappa=kappa, nu=nu, sigma2=delta)
    solver = build_solver(unit, mask, _solver_method(method), config, blocks)
    mu_hat, tau2, breakdown = profile_solver(
        solver, values[mask.observed], method, started
    )
    params = ModelParams(
        tau=math.sqrt(tau2), kappa=kappa, nu=nu, sigma2=delta / tau2, mu=mu_hat
    )
    logger.debug(
        "profile kappa=%.6g delta=%.4g: mu=%.6g tau=%.6g loglik=%.10g",
        kappa,
        delta,
        mu_hat,
        params.tau,
        breakdown.loglik,
    )
    return ProfileResult(params=params, delta=delta, loglik=breakdown)


def fit(
    data: npt.ArrayLike,
    nu: int,
    method: str = "exact",
    config: ComputeConfig | None = None,
    optimizer: OptimizerConfig | None = None,
    nugget: bool = False,  # noqa: FBT001, FBT002
    blocks: list[IntArray] | None = None,
) -> FitResult:
    """Maximize the profiled loglikelihood over kappa (and delta).

    Args:
        data: 2-D array, NaN marks missing cells
        nu: fixed smoothness
        method: one of FIT_METHODS; "exact-nugget" implies nugget=True
        config: compute configuration
        optimizer: simplex settings
        nugget: optimize the noise-to-signal ratio as well
        blocks: observation partition for "indblocks" in the input orientation
            (default: 40 x 40 tiles)

    Returns:
        the fit; converged is False when the iteration cap was hit

    Raises:
        InapplicableError: nugget fit with an approximation scheme
    """
    started = time.perf_counter()
    cfg = config or ComputeConfig()
    opt = optimizer or OptimizerConfig()
    _solver_method(method)
    with_nugget = nugget or method == "exact-nugget"
    if with_nugget and method in APPROX_METHODS:
        msg = f"approximation '{method}' is defined for sigma2 = 0 only"
        raise InapplicableError(msg)
    values, blocks = oriented_with_blocks(data, blocks)
    if method == "indblocks" and blocks is None:
        blocks = rectangular_blocks(GridMask.from_field(values), (40, 40))

    x0 = [opt.log_kappa0]
    if with_nugget:
        unit_var = model_table(
            ModelParams(tau=1.0, kappa=math.exp(opt.log_kappa0), nu=nu), values.shape, cfg
        ).variance
        x0.append(math.log(opt.delta_factor0 * unit_var))

    trace: list[TracePoint] = []
    results: list[ProfileResult] = []

    def objective(x: npt.NDArray[np.float64]) -> float:
        if not LOG_KAPPA_BOUNDS[0] <= x[0] <= LOG_KAPPA_BOUNDS[1]:
            return math.inf
        kappa = math.exp(x[0])
        delta = math.exp(x[1]) if with_nugget else 0.0
        try:
            result = profile_closed_forms(kappa, nu, delta, values, method, cfg, blocks)
        except NumericalError as e:
            logger.debug("objective failed at kappa=%.6g delta=%.4g: %s", kappa, delta, e)
            return math.inf
        trace.append(TracePoint(kappa, delta, result.loglik.loglik))
        results.append(result)
        return -result.loglik.loglik

    res = optimize.minimize(
        objective,
        np.asarray(x0),
        method="Nelder-Mead",
        options={"fatol": opt.fatol, "xatol": opt.xatol, "maxiter": opt.max_iter},
    )
    if not results:
        msg = "every likelihood evaluation failed"
        raise NumericalError(msg)
    best = max(results, key=lambda r: r.loglik.loglik)
    elapsed = time.perf_counter() - started
    logger.info(
        "fit[%s] nu=%d: kappa=%.6g tau=%.6g loglik=%.10g after %d iterations (%s)",
        method,
        nu,
        best.params.kappa,
        best.params.tau,
        best.loglik.loglik,
        res.nit,
        "converged" if res.success else "not converged",
    )
    return FitResult(
        params=best.params,
        loglik=best.loglik,
        iterations=int(res.nit),
        evaluations=int(res.nfev),
        converged=bool(res.success),
        method=method,
        nugget=with_nugget,
        trace=trace,
        wall_time=elapsed,
    )


@dataclass(frozen=True)
class NuComparison:
    """Fits across candidate smoothness values.

    Attributes:
        fits: fit per nu
        best_nu: nu with the largest loglikelihood
    """

    fits: dict[int, FitResult]
    best_nu: int

    def loglik_gaps(self) -> dict[int, float]:
        """loglik of each nu minus the best loglik (zero for the best)."""
        top = self.fits[self.best_nu].loglik.loglik
        return {nu: f.loglik.loglik - top for nu, f in self.fits.items()}


def fit_nu(
    data: npt.ArrayLike,
    nus: list[int],
    method: str = "exact",
    config: ComputeConfig | None = None,
    optimizer: OptimizerConfig | None = None,
    nugget: bool = False,  # noqa: FBT001, FBT002
) -> NuComparison:
    """Fit every candidate nu and compare loglikelihoods.

    Args:
        data: 2-D array, NaN marks missing cells
        nus: candidate smoothness values
        method: fit method
        config: compute configuration
        optimizer: simplex settings
        nugget: optimize the noise-to-signal ratio as well

    Returns:
        the comparison
    """
    if not nus:
        msg = "need at least one nu"
        raise InputError(msg)
    fits = {nu: fit(data, nu, method, config, optimizer, nugget) for nu in nus}
    best_nu = max(fits, key=lambda nu: fits[nu].loglik.loglik)
    return NuComparison(fits=fits, best_nu=best_nu)
