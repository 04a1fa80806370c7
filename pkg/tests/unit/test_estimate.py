"""Unit tests for estimate module."""

import math

import numpy as np
import pytest
from scipy import sparse

from gridmrf.config import ComputeConfig
from gridmrf.errors import InapplicableError, InputError
from gridmrf.estimate import (
    FitResult,
    OptimizerConfig,
    fit,
    fit_nu,
    profile_closed_forms,
    profile_solver,
)
from gridmrf.lattice import GridMask
from gridmrf.likelihood import ApproxSolver, loglik, rectangular_blocks
from gridmrf.oracle import dense_model
from gridmrf.spectral import ModelParams, simulate_field


@pytest.fixture
def simulated(config: ComputeConfig) -> np.ndarray:
    """16x16 field from kappa=0.3, nu=0 with a few gaps."""
    truth = ModelParams(tau=1.0, kappa=0.3, mu=2.0)
    field = simulate_field(truth, (16, 16), 1, np.random.default_rng(42), config)[0]
    field[4, 4] = field[10, 12] = field[0, 7] = np.nan
    return field


class TestOptimizerConfig:
    """Tests for OptimizerConfig dataclass."""

    def test_default_values(self) -> None:
        """test that defaults start at kappa=0.1 with tolerance 1e-6."""
        # given
        opt = OptimizerConfig()

        # then
        assert opt.log_kappa0 == pytest.approx(math.log(0.1))
        assert opt.delta_factor0 == 0.01
        assert opt.fatol == 1e-6
        assert opt.max_iter == 200

    def test_from_dict_rejects_unknown_keys(self) -> None:
        """test that unknown settings raise InputError."""
        with pytest.raises(InputError, match="unknown optimizer settings"):
            OptimizerConfig.from_dict({"tolerance": 1e-3})

    def test_invalid_values_raise(self) -> None:
        """test that nonpositive delta_factor0 and max_iter are rejected."""
        with pytest.raises(InputError):
            OptimizerConfig(delta_factor0=0.0)
        with pytest.raises(InputError):
            OptimizerConfig(max_iter=0)


class TestProfile:
    """Tests for the closed-form mean and scale."""

    def test_white_noise_closed_forms(self) -> None:
        """test that an identity precision gives the sample mean and variance."""
        # given
        y = np.array([1.0, 2.0, 3.0, 4.0, 6.0])
        solver = ApproxSolver(sparse.identity(5, format="csc"), "identity")

        # when
        mu_hat, tau2, breakdown = profile_solver(solver, y, "none")

        # then
        assert mu_hat == pytest.approx(3.2)
        assert tau2 == pytest.approx(5.0 / np.sum((y - 3.2) ** 2))
        assert breakdown.quadform == pytest.approx(5.0)
        assert breakdown.logdet == pytest.approx(-5.0 * math.log(tau2))

    @pytest.mark.parametrize("delta", [0.0, 0.05])
    def test_profiled_value_is_full_loglik(self, delta: float, simulated, config) -> None:
        """test that the full loglik at (mu_hat, tau_hat) equals the profiled value."""
        # when
        result = profile_closed_forms(0.3, 0, delta, simulated, "exact", config)

        # then
        full = loglik(result.params, simulated, "exact", config)
        assert full.loglik == pytest.approx(result.loglik.loglik, rel=1e-9)
        assert result.params.sigma2 == pytest.approx(delta / result.params.tau**2)

    def test_mean_and_scale_maximize_loglik(self, simulated, config) -> None:
        """test that moving mu or tau away from the closed forms lowers loglik."""
        # given
        result = profile_closed_forms(0.3, 0, 0.0, simulated, "exact", config)
        p = result.params

        # then
        moves = [
            (p.mu + 0.05, p.tau),
            (p.mu - 0.05, p.tau),
            (p.mu, 1.05 * p.tau),
            (p.mu, 0.95 * p.tau),
        ]
        for mu, tau in moves:
            moved = ModelParams(tau=tau, kappa=p.kappa, nu=p.nu, mu=mu)
            assert loglik(moved, simulated, "exact", config).loglik < result.loglik.loglik

    def test_closed_forms_match_grid_search(self, make_field, config) -> None:
        """test that mu_hat and tau_hat agree with a brute-force (mu, tau) search."""
        # given
        field = make_field((5, 5), [(1, 3)], seed=23, mean=2.0)
        kappa = 0.3
        mask = GridMask.from_field(field)
        y = field[mask.observed]
        n = len(y)
        model = dense_model(ModelParams(tau=1.0, kappa=kappa), mask, config=config)
        c_y = model.factor.solve(y)
        c_1 = model.factor.solve(np.ones(n))
        a, b, c = y @ c_y, np.sum(c_y), np.sum(c_1)

        def search(mus: np.ndarray, taus: np.ndarray) -> tuple[float, float]:
            mu, tau = np.meshgrid(mus, taus, indexing="ij")
            quad = a - 2.0 * mu * b + mu**2 * c
            ll = n * np.log(tau) - 0.5 * tau**2 * quad
            i, j = np.unravel_index(np.argmax(ll), ll.shape)
            return float(mus[i]), float(taus[j])

        # when
        result = profile_closed_forms(kappa, 0, 0.0, field, "exact", config)
        mu0, tau0 = search(np.linspace(-4.0, 8.0, 801), np.geomspace(0.05, 20.0, 401))
        mu_best, tau_best = search(
            np.linspace(mu0 - 0.03, mu0 + 0.03, 401),
            np.geomspace(tau0 / 1.04, tau0 * 1.04, 401),
        )

        # then
        assert result.params.mu == pytest.approx(mu_best, rel=1e-3, abs=1e-3)
        assert result.params.tau == pytest.approx(tau_best, rel=1e-3)

    def test_tall_grid_blocks_follow_input_orientation(self, make_field, config) -> None:
        """test that indblocks profiling remaps blocks given for a tall grid."""
        # given
        tall = make_field((9, 4), [(5, 2)], seed=29)
        tall_blocks = rectangular_blocks(GridMask.from_field(tall), (3, 2))
        wide_blocks = rectangular_blocks(GridMask.from_field(tall.T), (2, 3))

        # when
        from_tall = profile_closed_forms(0.5, 0, 0.0, tall, "indblocks", config, tall_blocks)
        from_wide = profile_closed_forms(0.5, 0, 0.0, tall.T, "indblocks", config, wide_blocks)

        # then
        assert from_tall.loglik.loglik == pytest.approx(from_wide.loglik.loglik, rel=1e-10)
        assert from_tall.params.tau == pytest.approx(from_wide.params.tau, rel=1e-10)
        assert from_tall.params.mu == pytest.approx(from_wide.params.mu, rel=1e-10, abs=1e-10)

    def test_negative_delta_raises(self, simulated) -> None:
        """test that a negative noise-to-signal ratio is rejected."""
        with pytest.raises(InputError, match="delta"):
            profile_closed_forms(0.3, 0, -1.0, simulated)


class TestFit:
    """Tests for maximum likelihood fitting."""

    def test_exact_fit_beats_true_parameters(self, simulated, config) -> None:
        """test that the fitted profile loglik is at least the one at the truth."""
        # when
        result = fit(simulated, 0, "exact", config)

        # then
        at_truth = profile_closed_forms(0.3, 0, 0.0, simulated, "exact", config)
        assert result.loglik.loglik >= at_truth.loglik.loglik - 1e-6
        assert result.converged
        assert result.params.sigma2 == 0.0
        assert max(p.loglik for p in result.trace) == result.loglik.loglik
        assert len(result.trace) <= result.evaluations

    def test_approximate_fit_runs(self, simulated, config) -> None:
        """test that an approximation scheme can be fitted."""
        # when
        result = fit(simulated, 0, "precision", config)

        # then
        assert result.method == "precision"
        assert 1e-4 <= result.params.kappa <= 1e3
        assert math.isfinite(result.loglik.loglik)

    def test_nugget_fit_estimates_sigma2(self, simulated, config) -> None:
        """test that the nugget fit returns a positive nugget variance."""
        # given
        optimizer = OptimizerConfig(max_iter=60)

        # when
        result = fit(simulated, 0, "exact-nugget", config, optimizer)

        # then
        assert result.nugget
        assert result.params.sigma2 > 0
        assert math.isfinite(result.loglik.loglik)

    @pytest.mark.parametrize(("method", "max_iter"), [("exact", 200), ("exact-nugget", 40)])
    def test_scaling_data_scales_tau_only(
        self, method: str, max_iter: int, simulated, config
    ) -> None:
        """test that fitting c * y keeps kappa and delta and divides tau by c."""
        # given
        c = 10.0
        optimizer = OptimizerConfig(max_iter=max_iter)

        # when
        base = fit(simulated, 0, method, config, optimizer)
        scaled = fit(c * simulated, 0, method, config, optimizer)

        # then
        assert scaled.params.kappa == pytest.approx(base.params.kappa, rel=1e-5)
        assert scaled.params.tau == pytest.approx(base.params.tau / c, rel=1e-5)
        assert scaled.params.mu == pytest.approx(c * base.params.mu, rel=1e-5)
        base_delta = base.params.sigma2 * base.params.tau**2
        scaled_delta = scaled.params.sigma2 * scaled.params.tau**2
        assert scaled_delta == pytest.approx(base_delta, rel=1e-5)

    def test_tall_grid_fit_uses_remapped_blocks(self, make_field, config) -> None:
        """test that an indblocks fit on a tall grid scores the caller's tiles."""
        # given
        tall = make_field((9, 4), [(5, 2)], seed=29)
        tall_blocks = rectangular_blocks(GridMask.from_field(tall), (3, 2))
        wide_blocks = rectangular_blocks(GridMask.from_field(tall.T), (2, 3))

        # when
        result = fit(tall, 0, "indblocks", config, OptimizerConfig(max_iter=20), blocks=tall_blocks)

        # then
        same_tiles = profile_closed_forms(
            result.params.kappa, 0, 0.0, tall.T, "indblocks", config, wide_blocks
        )
        assert result.loglik.loglik == pytest.approx(same_tiles.loglik.loglik, rel=1e-10)

    def test_nugget_with_approximation_is_inapplicable(self, simulated, config) -> None:
        """test that approximations cannot fit a nugget."""
        with pytest.raises(InapplicableError):
            fit(simulated, 0, "none", config, nugget=True)

    def test_unknown_method_raises(self, simulated, config) -> None:
        """test that an unknown fit method raises InputError."""
        with pytest.raises(InputError, match="unknown fit method"):
            fit(simulated, 0, "nugget-lean", config)

    def test_iteration_cap_reports_not_converged(self, simulated, config) -> None:
        """test that hitting max_iter returns the best point found so far."""
        # when
        result = fit(simulated, 0, "exact", config, OptimizerConfig(max_iter=2))

        # then
        assert not result.converged
        assert result.iterations <= 2

    def test_to_dict_with_trace(self, simulated, config) -> None:
        """test that the serialized fit includes minutes and the trace."""
        # given
        result: FitResult = fit(simulated, 0, "none", config, OptimizerConfig(max_iter=5))

        # when
        data = result.to_dict(include_trace=True)

        # then
        assert data["wall_minutes"] == pytest.approx(result.wall_time / 60.0)
        assert len(data["trace"]) == len(result.trace)
        assert "trace" not in result.to_dict()


class TestFitNu:
    """Tests for comparing smoothness values."""

    def test_best_nu_has_zero_gap(self, simulated, config) -> None:
        """test that gaps are relative to the best nu."""
        # when
        comparison = fit_nu(simulated, [0, 1], "exact", config, OptimizerConfig(max_iter=40))

        # then
        gaps = comparison.loglik_gaps()
        assert gaps[comparison.best_nu] == 0.0
        assert all(gap <= 0.0 for gap in gaps.values())
        assert set(comparison.fits) == {0, 1}

    def test_empty_candidates_raise(self, simulated) -> None:
        """test that at least one nu is required."""
        with pytest.raises(InputError):
            fit_nu(simulated, [])
