"""exact gaussian likelihoods for stationary markov random fields on gridded data.

provides covariance tables by FFT on an oversampled torus, sparse inverse
covariances of incomplete grids, likelihood evaluation with and without a
nugget, maximum likelihood fitting, kriging and conditional simulation.
"""

from gridmrf.config import ComputeConfig
from gridmrf.errors import (
    GridMRFError,
    InapplicableError,
    InputError,
    NoObservationsError,
    NotPositiveDefiniteError,
    NumericalError,
    SingularSpectrumError,
    SizeGuardError,
)
from gridmrf.estimate import FitResult, OptimizerConfig, fit, fit_nu, profile_closed_forms
from gridmrf.lattice import GridMask, PartitionIndex, classify
from gridmrf.likelihood import (
    LoglikBreakdown,
    loglik,
    loglik_approx,
    loglik_exact,
    loglik_indblocks,
    loglik_nugget_fullQ,
    loglik_nugget_lean,
)
from gridmrf.precision import approx_Q, assemble_sparse_Q
from gridmrf.predict import (
    Kriger,
    Prediction,
    PredictionRequest,
    cond_sim,
    krige,
    missing_cells,
)
from gridmrf.spectral import (
    CovarianceTable,
    ModelParams,
    Stencil,
    circ_matvec,
    covariance_table,
    spectral_density,
    stencil_from_params,
    unconditional_sim,
)

__all__ = [
    "ComputeConfig",
    "CovarianceTable",
    "FitResult",
    "GridMRFError",
    "GridMask",
    "InapplicableError",
    "InputError",
    "Kriger",
    "LoglikBreakdown",
    "ModelParams",
    "NoObservationsError",
    "NotPositiveDefiniteError",
    "NumericalError",
    "OptimizerConfig",
    "PartitionIndex",
    "Prediction",
    "PredictionRequest",
    "SingularSpectrumError",
    "SizeGuardError",
    "Stencil",
    "approx_Q",
    "assemble_sparse_Q",
    "circ_matvec",
    "classify",
    "cond_sim",
    "covariance_table",
    "fit",
    "fit_nu",
    "krige",
    "loglik",
    "loglik_approx",
    "loglik_exact",
    "loglik_indblocks",
    "loglik_nugget_fullQ",
    "loglik_nugget_lean",
    "missing_cells",
    "profile_closed_forms",
    "spectral_density",
    "stencil_from_params",
    "unconditional_sim",
]
