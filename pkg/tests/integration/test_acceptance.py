"""End-to-end acceptance checks against dense references and known properties.

these are slow; run them with `pytest -m e2e`.
"""

import math
import tracemalloc

import numpy as np
import pytest

from gridmrf.config import ComputeConfig
from gridmrf.estimate import OptimizerConfig, fit, profile_closed_forms
from gridmrf.lattice import GridMask, classify
from gridmrf.likelihood import loglik
from gridmrf.oracle import delta_sequence, dense_conditional, dense_loglik, dense_model
from gridmrf.precision import assemble_sparse_Q
from gridmrf.predict import PredictionRequest, krige
from gridmrf.spectral import (
    ModelParams,
    covariance_table,
    model_table,
    simulate_field,
    stencil_from_params,
)
from gridmrf.studies import StudyDesign, benchmark, loglog_slope, simstudy

pytestmark = pytest.mark.e2e

COMBOS = [(nu, kappa) for nu in (0, 1) for kappa in (0.2, 0.1, 0.05)]


def _random_field(rng: np.random.Generator, n1: int, n2: int, fraction: float) -> np.ndarray:
    field = rng.standard_normal((n1, n2))
    field[rng.random((n1, n2)) < fraction] = np.nan
    field[0, 0] = 0.0
    return field


class TestCovarianceConvergence:
    """Oversampled covariance tables on a 100x100 grid."""

    @pytest.mark.parametrize(("nu", "kappa"), COMBOS)
    def test_delta_decreases_to_roundoff(self, nu: int, kappa: float) -> None:
        """test that delta_J shrinks with J until it reaches FFT roundoff."""
        # given
        params = ModelParams(tau=1.0, kappa=kappa, nu=nu)
        floor = 1e-13 * covariance_table(params, (100, 100), 5).variance

        # when
        deltas = delta_sequence(params, (100, 100), 5)

        # then
        for previous, current in zip(deltas, deltas[1:], strict=False):
            if previous > floor:
                assert current < previous

    @pytest.mark.parametrize("nu", [0, 1])
    def test_three_fold_oversampling_suffices_for_short_range(self, nu: int) -> None:
        """test that J=3 already agrees with J=4 to 1e-10 at kappa=1/5."""
        deltas = delta_sequence(ModelParams(tau=1.0, kappa=0.2, nu=nu), (100, 100), 3)
        assert deltas[2] < 1e-10


class TestSparsePrecision:
    """Sparse precision entries on random masks."""

    def test_entries_match_dense_inverse_on_random_masks(self) -> None:
        """test that assembled entries equal the dense inverse on 30 masks."""
        rng = np.random.default_rng(101)
        for trial in range(30):
            # given
            n1, n2 = rng.integers(4, 9, size=2)
            nu = int(rng.integers(0, 2))
            kappa = float(rng.choice([0.2, 0.3, 0.5]))
            observed = rng.random((n1, n2)) >= rng.uniform(0.2, 0.4)
            observed[0, 0] = True
            mask = GridMask(observed)
            params = ModelParams(tau=1.0, kappa=kappa, nu=nu)
            stencil = stencil_from_params(params)

            # when
            Q = assemble_sparse_Q(mask, classify(mask, stencil), stencil).tocoo()

            # then
            dense = dense_model(params, mask, sigma2=0.0).inverse
            assert np.allclose(Q.data, dense[Q.row, Q.col], atol=1e-6, rtol=0), trial


class TestExactLikelihood:
    """Exact likelihood paths against the dense loglikelihood."""

    def test_fifty_random_masks(self) -> None:
        """test that every exact path matches the dense value on 50 masks."""
        rng = np.random.default_rng(202)
        config = ComputeConfig(workers=2)
        for trial in range(50):
            # given
            n1, n2 = rng.integers(6, 21, size=2)
            field = _random_field(rng, n1, n2, rng.uniform(0.05, 0.3))
            nu = int(rng.integers(0, 2))
            kappa = float(rng.choice([0.2, 0.3, 0.5]))
            sigma2 = float(rng.choice([0.0, 0.01, 0.05]))
            params = ModelParams(tau=1.0, kappa=kappa, nu=nu, sigma2=sigma2)

            # when
            reference = dense_loglik(params, field, config=config).loglik
            if sigma2 == 0:
                values = [loglik(params, field, "exact", config).loglik]
            else:
                lean = loglik(params, field, "nugget-lean", config).loglik
                full = loglik(params, field, "nugget-fullq", config).loglik
                assert abs(lean - full) / abs(full) < 1e-9, trial
                values = [lean, full]

            # then
            for value in values:
                assert abs(value - reference) / abs(reference) < 1e-8, trial

    def test_border_count_on_large_complete_grid(self) -> None:
        """test that a 1000x1000 first-order grid has 3996 partial cells."""
        stencil = stencil_from_params(ModelParams(tau=1.0, kappa=0.1))
        index = classify(GridMask.complete(1000, 1000), stencil)
        assert index.m_n == 3996

    def test_lean_nugget_path_memory(self) -> None:
        """test that the nugget path on 200x200 holds only m_n x m_n dense blocks."""
        # given
        params = ModelParams(tau=1.0, kappa=0.5, sigma2=0.05)
        field = simulate_field(params, (200, 200), 1, np.random.default_rng(7))[0]
        config = ComputeConfig(workers=1)
        m_n = 4 * 200 - 4
        table = model_table(params, (200, 200), config)
        table_bytes = table.values.nbytes + table.eigen_rfft.nbytes

        def traced_peak(method: str, at: ModelParams) -> tuple[float, int]:
            tracemalloc.start()
            try:
                value = loglik(at, field, method, config).loglik
                _, peak = tracemalloc.get_traced_memory()
            finally:
                tracemalloc.stop()
            return value, peak

        # when
        # one sparse factorization of the whole grid bounds the traced factor copies
        _, sparse_peak = traced_peak("none", ModelParams(tau=1.0, kappa=0.5))
        value, lean_peak = traced_peak("nugget-lean", params)

        # then
        assert math.isfinite(value)
        assert lean_peak - sparse_peak < 12 * m_n**2 * 8 + 4 * table_bytes


class TestKriging:
    """Kriging on a grid with a missing patch."""

    def test_patch_means_and_sds_match_dense(self) -> None:
        """test that means and sds inside a 4x4 hole match the dense conditional."""
        # given
        params = ModelParams(tau=1.0, kappa=0.2, nu=1, sigma2=0.01, mu=0.3)
        field = simulate_field(params, (20, 20), 1, np.random.default_rng(8))[0]
        field[8:12, 5:9] = np.nan
        targets = np.argwhere(np.isnan(field))

        # when
        prediction = krige(params, field, PredictionRequest(targets=targets, want_sd=True))

        # then
        mean, cov = dense_conditional(params, field, targets)
        assert np.allclose(prediction.mean, mean, atol=1e-8, rtol=0)
        assert np.allclose(prediction.sd, np.sqrt(np.diag(cov)), rtol=1e-6)


class TestSimulationStudy:
    """Desk-scale simulation study of the kappa estimates."""

    def test_exact_fit_is_unbiased(self) -> None:
        """test that the exact MLE of log kappa is within 3 se of the truth."""
        # given
        design = StudyDesign(nu=0, kappas=(0.2,), grid=(64, 64), reps=40, methods=("exact",), seed=1)

        # when
        _, summary = simstudy(design, ComputeConfig(), OptimizerConfig())

        # then
        assert abs(summary[0]["z"]) < 3.0

    def test_periodic_adjustment_is_biased_for_long_range(self) -> None:
        """test that wrapping the grid biases log kappa at nu=1, kappa=1/20."""
        # given
        design = StudyDesign(
            nu=1, kappas=(0.05,), grid=(64, 64), reps=40, methods=("periodic",), seed=2
        )

        # when
        _, summary = simstudy(design, ComputeConfig(), OptimizerConfig())

        # then
        assert abs(summary[0]["z"]) > 3.0


class TestScaling:
    """Timing of likelihood evaluations over complete grids."""

    def test_exact_grows_slower_than_quadratic(self) -> None:
        """test that exact time grows slower than n^2 and approx is faster."""
        # when
        rows = benchmark([100, 150, 200], [0], [0.0], kappa=0.1, reps=3)

        # then
        slope = loglog_slope([r["n_obs"] for r in rows], [r["exact_nu0"] for r in rows])
        assert slope < 2.0
        assert all(r["approx_nu0"] <= r["exact_nu0"] for r in rows)


class TestNuggetAnalysis:
    """Fitting a smooth field with measurement error."""

    def test_fits_beat_truth_and_blocks_lose_likelihood(self) -> None:
        """test the argmax property and the deficit of independent blocks."""
        # given
        truth = ModelParams(tau=1.0, kappa=0.2, nu=1, sigma2=0.05)
        field = simulate_field(truth, (150, 150), 1, np.random.default_rng(9))[0]
        config = ComputeConfig()
        optimizer = OptimizerConfig(max_iter=80)

        # when
        exact = fit(field, 1, "exact-nugget", config, optimizer)
        blocks = fit(field, 1, "indblocks", config, optimizer, nugget=True)

        # then
        at_truth = profile_closed_forms(0.2, 1, 0.05, field, "exact", config)
        assert exact.loglik.loglik >= at_truth.loglik.loglik - 1e-6
        p = blocks.params
        blocks_under_exact = profile_closed_forms(
            p.kappa, 1, p.sigma2 * p.tau**2, field, "exact", config
        )
        assert blocks_under_exact.loglik.loglik - exact.loglik.loglik < 1e-6
