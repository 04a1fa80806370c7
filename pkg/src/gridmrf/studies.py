"""Simulation study, timing benchmark and covariance convergence runners.

each runner returns plain row dictionaries; the command line writes them as CSV.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any

import numpy as np

from gridmrf.config import ComputeConfig
from gridmrf.errors import GridMRFError, InputError
from gridmrf.estimate import OptimizerConfig, fit
from gridmrf.likelihood import Method, loglik
from gridmrf.oracle import delta_sequence
from gridmrf.spectral import ModelParams, simulate_field

logger = logging.getLogger(__name__)

SIMSTUDY_FIELDS = [
    "nu",
    "kappa",
    "rep",
    "method",
    "kappa_hat",
    "log_kappa_hat",
    "tau_hat",
    "mu_hat",
    "loglik",
    "converged",
    "n_reps",
    "se",
    "z",
]
CONVERGENCE_FIELDS = ["nu", "kappa", "n1", "n2", "J", "delta_J"]


@dataclass(frozen=True)
class StudyDesign:
    """Design of a maximum likelihood simulation study.

    Attributes:
        nu: smoothness of the generating model (and of every fit)
        kappas: generating inverse ranges
        grid: grid dimensions
        reps: replicates per kappa
        methods: fit methods compared on each replicate
        seed: root seed; replicate (k, r) uses child k * reps + r
        tau: generating precision scale
    """

    nu: int
    kappas: tuple[float, ...]
    grid: tuple[int, int] = (100, 100)
    reps: int = 100
    methods: tuple[str, ...] = ("exact", "none", "precision", "periodic")
    seed: int = 0
    tau: float = 1.0

    def __post_init__(self) -> None:
        """Validate counts."""
        if self.reps < 1:
            msg = f"reps must be >= 1, got {self.reps}"
            raise InputError(msg)
        if not self.kappas or not self.methods:
            msg = "need at least one kappa and one method"
            raise InputError(msg)


def _replicate(
    design: StudyDesign,
    kappa: float,
    rep: int,
    child: np.random.SeedSequence,
    config: ComputeConfig,
    optimizer: OptimizerConfig,
) -> list[dict[str, Any]]:
    truth = ModelParams(tau=design.tau, kappa=kappa, nu=design.nu)
    data = simulate_field(truth, design.grid, 1, np.random.default_rng(child), config)[0]
    rows = []
    for method in design.methods:
        row: dict[str, Any] = {"nu": design.nu, "kappa": kappa, "rep": rep, "method": method}
        try:
            result = fit(data, design.nu, method, config, optimizer)
        except GridMRFError as e:
            logger.warning("replicate %d, kappa=%.4g, %s skipped: %s", rep, kappa, method, e)
            rows.append(row)
            continue
        row.update(
            kappa_hat=result.params.kappa,
            log_kappa_hat=math.log(result.params.kappa),
            tau_hat=result.params.tau,
            mu_hat=result.params.mu,
            loglik=result.loglik.loglik,
            converged=int(result.converged),
        )
        rows.append(row)
    logger.info("replicate %d of kappa=%.4g done", rep, kappa)
    return rows


def summarize(rows: list[dict[str, Any]]) -> list[dict[str, Any]]:
    """Mean log kappa_hat per (kappa, method) with its standard error.

    z is the mean's distance from log kappa in standard errors.

    Args:
        rows: replicate rows

    Returns:
        one summary row per (kappa, method)
    """
    groups: dict[tuple[float, str], list[float]] = {}
    nus: dict[tuple[float, str], int] = {}
    for row in rows:
        if "log_kappa_hat" not in row:
            continue
        key = (row["kappa"], row["method"])
        groups.setdefault(key, []).append(row["log_kappa_hat"])
        nus[key] = row["nu"]
    summary = []
    for (kappa, method), values in groups.items():
        arr = np.asarray(values)
        mean = float(arr.mean())
        se = float(arr.std(ddof=1) / math.sqrt(len(arr))) if len(arr) > 1 else math.nan
        z = (mean - math.log(kappa)) / se if se > 0 else math.nan
        summary.append(
            {
                "nu": nus[(kappa, method)],
                "kappa": kappa,
                "rep": "mean",
                "method": method,
                "log_kappa_hat": mean,
                "kappa_hat": math.exp(mean),
                "n_reps": len(arr),
                "se": se,
                "z": z,
            }
        )
    return summary


def simstudy(
    design: StudyDesign,
    config: ComputeConfig | None = None,
    optimizer: OptimizerConfig | None = None,
) -> tuple[list[dict[str, Any]], list[dict[str, Any]]]:
    """Fit every method to replicates simulated from the design.

    replicates run in parallel over config.workers threads; each replicate
    has its own spawned seed, so the rows do not depend on the worker count.

    Args:
        design: study design
        config: compute configuration
        optimizer: simplex settings

    Returns:
        (replicate rows sorted by kappa, rep and method, summary rows)
    """
    cfg = config or ComputeConfig()
    opt = optimizer or OptimizerConfig()
    children = np.random.SeedSequence(design.seed).spawn(len(design.kappas) * design.reps)
    jobs = [
        (kappa, rep, children[k * design.reps + rep])
        for k, kappa in enumerate(design.kappas)
        for rep in range(design.reps)
    ]
    inner = cfg.with_overrides(workers=1) if cfg.workers > 1 else cfg
    if cfg.workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            batches = list(
                pool.map(
                    lambda job: _replicate(design, job[0], job[1], job[2], inner, opt), jobs
                )
            )
    else:
        batches = [_replicate(design, kappa, rep, child, cfg, opt) for kappa, rep, child in jobs]
    rows = [row for batch in batches for row in batch]
    return rows, summarize(rows)


def loglog_slope(sizes: list[float], times: list[float]) -> float:
    """Least squares slope of log time against log size."""
    if len(sizes) < 2:  # noqa: PLR2004
        msg = "need at least two sizes for a slope"
        raise InputError(msg)
    slope, _ = np.polyfit(np.log(sizes), np.log(times), 1)
    return float(slope)


def benchmark(
    sizes: list[int],
    nus: list[int],
    sigma2s: list[float],
    kappa: float = 0.1,
    reps: int = 1,
    seed: int = 0,
    config: ComputeConfig | None = None,
) -> list[dict[str, Any]]:
    """Seconds per loglikelihood evaluation on complete square grids.

    columns per nu: approx (no edge adjustment), exact (sigma2 = 0) and
    nugget (exact with the first positive sigma2), the best of reps runs each.

    Args:
        sizes: grid side lengths
        nus: smoothness values
        sigma2s: nugget variances; 0 enables the approx and exact columns
        kappa: inverse range of the simulated data
        reps: timing repetitions
        seed: seed of the simulated fields
        config: compute configuration

    Returns:
        one row per size
    """
    cfg = config or ComputeConfig()
    positive = [s for s in sigma2s if s > 0]
    rng = np.random.default_rng(seed)
    rows = []
    for side in sizes:
        row: dict[str, Any] = {"size": side, "n_obs": side * side}
        for nu in nus:
            base = ModelParams(tau=1.0, kappa=kappa, nu=nu)
            data = simulate_field(base, (side, side), 1, rng, cfg)[0]
            runs: dict[str, tuple[ModelParams, Method]] = {}
            if 0 in sigma2s:
                runs["approx"] = (base, "none")
                runs["exact"] = (base, "exact")
            if positive:
                nugget = ModelParams(tau=1.0, kappa=kappa, nu=nu, sigma2=positive[0])
                runs["nugget"] = (nugget, "exact")
            for kind, (params, method) in runs.items():
                seconds = min(
                    loglik(params, data, method, cfg).wall_time for _ in range(reps)
                )
                row[f"{kind}_nu{nu}"] = seconds
            logger.info("benchmark %dx%d nu=%d done", side, side, nu)
        rows.append(row)
    return rows


def benchmark_fields(nus: list[int], sigma2s: list[float]) -> list[str]:
    """Column order of the benchmark table."""
    kinds = []
    if 0 in sigma2s:
        kinds += ["approx", "exact"]
    if any(s > 0 for s in sigma2s):
        kinds.append("nugget")
    return ["size", "n_obs"] + [f"{kind}_nu{nu}" for nu in nus for kind in kinds]


def convergence(
    nus: list[int], kappas: list[float], n: tuple[int, int], j_max: int
) -> list[dict[str, Any]]:
    """delta_J for every (nu, kappa) and J = 1, ..., j_max.

    Args:
        nus: smoothness values
        kappas: inverse ranges
        n: grid dimensions
        j_max: largest oversampling compared with J + 1

    Returns:
        one row per (nu, kappa, J)
    """
    rows = []
    for nu in nus:
        for kappa in kappas:
            params = ModelParams(tau=1.0, kappa=kappa, nu=nu)
            for j, delta in enumerate(delta_sequence(params, n, j_max), start=1):
                rows.append(
                    {"nu": nu, "kappa": kappa, "n1": n[0], "n2": n[1], "J": j, "delta_J": delta}
                )
    return rows
