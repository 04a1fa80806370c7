"""Kriging and conditional simulation at grid cells.

predictions target the noisy process Y = mu + Z + eps, so the prior variance at a
target is K(0) + sigma2. conditional draws use the conditioning of unconditional
torus simulations: draw (Y*, Y0*) jointly, krige Y0* from Y*, and add the misfit
Y0* - E[Y0* | Y*] to the kriging mean of the data.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

from gridmrf.config import ComputeConfig
from gridmrf.errors import InputError
from gridmrf.lattice import FloatArray, GridMask, IntArray
from gridmrf.likelihood import CovarianceSolver, Method, build_solver
from gridmrf.spectral import ModelParams, circ_matvec, model_table, simulate_torus

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PredictionRequest:
    """Cells to predict and what to compute there.

    Attributes:
        targets: (row, col) cells, shape (t, 2); may lie outside the data rectangle
        want_sd: compute prediction standard deviations
        n_sims: conditional simulations to draw
        rng_seed: seed for the simulations
    """

    targets: IntArray
    want_sd: bool = False
    n_sims: int = 0
    rng_seed: int | None = None

    def __post_init__(self) -> None:
        """Normalize targets and validate counts."""
        targets = np.asarray(self.targets, dtype=np.int64).reshape(-1, 2)
        if self.n_sims < 0:
            msg = f"n_sims must be nonnegative, got {self.n_sims}"
            raise InputError(msg)
        object.__setattr__(self, "targets", targets)


@dataclass(frozen=True)
class Prediction:
    """Kriging output at the requested targets.

    Attributes:
        targets: (row, col) cells, shape (t, 2)
        mean: conditional mean per target
        sd: conditional standard deviation per target (None unless requested)
        sims: conditional draws, shape (n_sims, t) (None unless requested)
        seed: seed the draws were made from
    """

    targets: IntArray
    mean: FloatArray
    sd: FloatArray | None = None
    sims: FloatArray | None = None
    seed: int | None = None


class Kriger:
    """Conditional mean, variance and draws given a NaN-masked field.

    the rectangle is enlarged to cover every location in `cover`; cells added
    by the enlargement are missing, so the observed cells keep their
    fully/partially neighbored status.
    """

    def __init__(
        self,
        params: ModelParams,
        data: npt.ArrayLike,
        config: ComputeConfig | None = None,
        method: Method = "exact",
        cover: npt.ArrayLike | None = None,
    ) -> None:
        """Build the covariance solver of the observations.

        Args:
            params: model parameters
            data: 2-D array, NaN marks missing cells
            config: compute configuration
            method: likelihood method whose solver is used
            cover: extra (row, col) locations the frame must contain
        """
        values = np.asarray(data, dtype=float)
        if values.ndim != 2:  # noqa: PLR2004
            msg = f"field must be 2-D, got shape {values.shape}"
            raise InputError(msg)
        self.params = params
        self.config = config or ComputeConfig()
        extra = np.asarray(cover if cover is not None else [], dtype=np.int64).reshape(-1, 2)
        low = np.minimum(0, extra.min(axis=0)) if len(extra) else np.zeros(2, np.int64)
        high = np.maximum(values.shape, extra.max(axis=0) + 1) if len(extra) else values.shape
        self.origin = low.astype(np.int64)
        self.shape = (int(high[0] - low[0]), int(high[1] - low[1]))
        frame = np.full(self.shape, np.nan)
        frame[-low[0] : -low[0] + values.shape[0], -low[1] : -low[1] + values.shape[1]] = values

        self.table = model_table(params, self.shape, self.config)
        observed = np.isfinite(frame)
        self.mask: GridMask | None = GridMask(observed) if observed.any() else None
        self.solver: CovarianceSolver | None = None
        self.weights = np.zeros(0)
        if self.mask is not None:
            self.locations = self.mask.locations()
            self.solver = build_solver(params, self.mask, method, self.config, table=self.table)
            self.weights = self.solver.solve(frame[observed] - params.mu)
            logger.debug(
                "kriger on %dx%d frame with %d observations", *self.shape, self.mask.n_obs
            )

    @property
    def prior_variance(self) -> float:
        """K(0) + sigma2."""
        return self.table.variance + self.params.sigma2

    def _frame(self, targets: npt.ArrayLike) -> IntArray:
        locs = np.asarray(targets, dtype=np.int64).reshape(-1, 2) - self.origin
        outside = (locs < 0).any(axis=1) | (locs[:, 0] >= self.shape[0]) | (
            locs[:, 1] >= self.shape[1]
        )
        if outside.any():
            bad = locs[outside][0] + self.origin
            msg = f"target ({bad[0]}, {bad[1]}) lies outside the prediction frame"
            raise InputError(msg)
        return locs

    def _cross(self, v: FloatArray, targets: IntArray) -> FloatArray:
        """Sigma0' v for frame targets."""
        return circ_matvec(self.table, v, self.locations, targets, self.config.workers)

    def mean_at(self, targets: npt.ArrayLike) -> FloatArray:
        """Conditional mean mu + Sigma0' (Sigma + sigma2 I)^-1 (y - mu 1).

        Args:
            targets: (row, col) cells in data coordinates; observed cells allowed

        Returns:
            mean per target
        """
        locs = self._frame(targets)
        if self.solver is None:
            return np.full(len(locs), self.params.mu)
        return self.params.mu + self._cross(self.weights, locs)

    def variance_at(self, targets: npt.ArrayLike, batch: int = 256) -> FloatArray:
        """Exact conditional variance K(0) + sigma2 - Sigma0' (Sigma + sigma2 I)^-1 Sigma0.

        Args:
            targets: (row, col) cells in data coordinates
            batch: targets whose covariance columns are solved together

        Returns:
            variance per target, clipped at zero
        """
        locs = self._frame(targets)
        var = np.full(len(locs), self.prior_variance)
        if self.solver is None:
            return var
        for start in range(0, len(locs), batch):
            part = locs[start : start + batch]
            cols = self.table.cross(self.locations, part)
            var[start : start + batch] -= np.einsum("ij,ij->j", cols, self.solver.solve(cols))
        return np.maximum(var, 0.0)

    def simulate_at(
        self,
        targets: npt.ArrayLike,
        n_sims: int,
        seed: int | np.random.SeedSequence | None = None,
    ) -> FloatArray:
        """Conditional draws at the targets.

        every draw has its own generator spawned from the seed, so draws do not
        depend on the worker count.

        Args:
            targets: (row, col) cells in data coordinates
            n_sims: number of draws
            seed: root seed

        Returns:
            array of shape (n_sims, t)
        """
        if n_sims < 1:
            msg = f"n_sims must be >= 1, got {n_sims}"
            raise InputError(msg)
        locs = self._frame(targets)
        root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        children = root.spawn(n_sims)
        noise_sd = math.sqrt(self.params.sigma2)

        def draw(child: np.random.SeedSequence) -> tuple[FloatArray, FloatArray]:
            rng = np.random.default_rng(child)
            torus = simulate_torus(self.table, rng, 1)[0]
            at_targets = torus[locs[:, 0], locs[:, 1]]
            at_obs = (
                torus[self.locations[:, 0], self.locations[:, 1]]
                if self.solver is not None
                else np.zeros(0)
            )
            if noise_sd > 0:
                at_targets = at_targets + noise_sd * rng.standard_normal(len(locs))
                at_obs = at_obs + noise_sd * rng.standard_normal(len(at_obs))
            return at_targets, at_obs

        workers = max(1, self.config.workers)
        if workers > 1 and n_sims > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                pairs = list(pool.map(draw, children))
        else:
            pairs = [draw(child) for child in children]
        sim_targets = np.stack([p[0] for p in pairs])
        mean = self.mean_at(targets)
        if self.solver is None:
            return mean + sim_targets
        sim_obs = np.stack([p[1] for p in pairs], axis=1)
        kriged = self._cross(self.solver.solve(sim_obs), locs).T
        return mean + sim_targets - kriged


def _check_targets(data: FloatArray, targets: IntArray) -> None:
    inside = (
        (targets[:, 0] >= 0)
        & (targets[:, 0] < data.shape[0])
        & (targets[:, 1] >= 0)
        & (targets[:, 1] < data.shape[1])
    )
    hits = inside.copy()
    hits[inside] = np.isfinite(data[targets[inside, 0], targets[inside, 1]])
    if hits.any():
        bad = targets[hits][0]
        msg = f"target ({bad[0]}, {bad[1]}) overlaps an observation"
        raise InputError(msg)


def krige(
    params: ModelParams,
    data: npt.ArrayLike,
    request: PredictionRequest,
    config: ComputeConfig | None = None,
    method: Method = "exact",
) -> Prediction:
    """Kriging means (and optionally sds and draws) at unobserved cells.

    standard deviations are exact for up to config.exact_sd_limit targets and
    estimated from config.sd_sims conditional draws beyond that.

    Args:
        params: model parameters
        data: 2-D array, NaN marks missing cells
        request: targets and outputs wanted
        config: compute configuration
        method: likelihood method whose solver is used

    Returns:
        the prediction

    Raises:
        InputError: if a target is an observed cell
    """
    cfg = config or ComputeConfig()
    values = np.asarray(data, dtype=float)
    targets = request.targets
    _check_targets(values, targets)
    kriger = Kriger(params, values, cfg, method, cover=targets)
    mean = kriger.mean_at(targets)
    sd = None
    if request.want_sd:
        if len(targets) <= cfg.exact_sd_limit:
            sd = np.sqrt(kriger.variance_at(targets))
        else:
            logger.info(
                "estimating sd at %d targets from %d conditional draws",
                len(targets),
                cfg.sd_sims,
            )
            sd = kriger.simulate_at(targets, cfg.sd_sims, request.rng_seed).std(
                axis=0, ddof=1
            )
    sims = None
    if request.n_sims > 0:
        sims = kriger.simulate_at(targets, request.n_sims, request.rng_seed)
    return Prediction(targets=targets, mean=mean, sd=sd, sims=sims, seed=request.rng_seed)


def cond_sim(
    params: ModelParams,
    data: npt.ArrayLike,
    request: PredictionRequest,
    config: ComputeConfig | None = None,
    method: Method = "exact",
) -> FloatArray:
    """Conditional simulations at unobserved cells.

    Args:
        params: model parameters
        data: 2-D array, NaN marks missing cells
        request: targets, n_sims >= 1 and seed
        config: compute configuration
        method: likelihood method whose solver is used

    Returns:
        array of shape (n_sims, t)
    """
    if request.n_sims < 1:
        msg = "cond_sim needs n_sims >= 1"
        raise InputError(msg)
    values = np.asarray(data, dtype=float)
    _check_targets(values, request.targets)
    kriger = Kriger(params, values, config, method, cover=request.targets)
    return kriger.simulate_at(request.targets, request.n_sims, request.rng_seed)


def missing_cells(data: npt.ArrayLike) -> IntArray:
    """(row, col) of every NaN cell, row-major."""
    return np.argwhere(~np.isfinite(np.asarray(data, dtype=float))).astype(np.int64)
