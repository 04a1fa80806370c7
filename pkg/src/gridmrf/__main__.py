"""CLI entry point for the gridmrf package.

allows running computations via: python -m gridmrf <command>
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any

import click
import numpy as np

from gridmrf.config import THREADS_ENV, ComputeConfig, load_config_file
from gridmrf.errors import GridMRFError, SizeGuardError
from gridmrf.estimate import FIT_METHODS, OptimizerConfig, fit_nu
from gridmrf.gridfile import (
    RunRecord,
    read_grid,
    write_covariance_table,
    write_csv,
    write_grid,
)
from gridmrf.lattice import GridMask
from gridmrf.likelihood import METHODS, loglik, rectangular_blocks
from gridmrf.oracle import DENSE_LIMIT, delta_J, dense_loglik
from gridmrf.predict import PredictionRequest, cond_sim, krige, missing_cells
from gridmrf.spectral import ModelParams, model_table, simulate_field
from gridmrf.studies import (
    CONVERGENCE_FIELDS,
    SIMSTUDY_FIELDS,
    StudyDesign,
    benchmark,
    benchmark_fields,
    convergence,
    loglog_slope,
    simstudy,
)

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def parse_grid(grid_str: str) -> tuple[int, int]:
    """Parse grid dimensions from an "N1xN2" string.

    Args:
        grid_str: dimensions as "N1xN2" (e.g., "100x100")

    Returns:
        Tuple of (n1, n2)

    Raises:
        ValueError: If the string is not two positive integers joined by x
    """
    parts = grid_str.lower().split("x")
    if len(parts) == 2:  # noqa: PLR2004
        try:
            n1, n2 = int(parts[0]), int(parts[1])
        except ValueError:
            pass
        else:
            if n1 > 0 and n2 > 0:
                return (n1, n2)
    msg = f"invalid grid size: {grid_str}. use N1xN2 format (e.g., 100x100)"
    raise ValueError(msg)


def parse_floats(text: str) -> list[float]:
    """Parse a comma-separated list of numbers."""
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError as e:
        msg = f"invalid number list: {text}"
        raise ValueError(msg) from e


def parse_ints(text: str) -> list[int]:
    """Parse a comma-separated list of integers."""
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError as e:
        msg = f"invalid integer list: {text}"
        raise ValueError(msg) from e


def _grid_option(_ctx: click.Context, _param: click.Parameter, value: str | None) -> Any:  # noqa: ANN401
    if value is None:
        return None
    try:
        return parse_grid(value)
    except ValueError as e:
        raise click.BadParameter(str(e)) from e


def _list_option(parser: Any) -> Any:  # noqa: ANN401
    def callback(_ctx: click.Context, _param: click.Parameter, value: str | None) -> Any:  # noqa: ANN401
        if value is None:
            return None
        try:
            return parser(value)
        except ValueError as e:
            raise click.BadParameter(str(e)) from e

    return callback


@dataclass
class Settings:
    """Configuration shared by every command."""

    compute: ComputeConfig
    optimizer: OptimizerConfig

    def with_oversampling(self, oversampling: int | None) -> ComputeConfig:
        """Compute configuration with a command's --J applied."""
        return self.compute.with_overrides(oversampling=oversampling)


class GridMRFGroup(click.Group):
    """Command group that maps library errors onto exit codes."""

    def invoke(self, ctx: click.Context) -> Any:  # noqa: ANN401
        """Run the command, reporting GridMRFError as `error: ...` on stderr."""
        try:
            return super().invoke(ctx)
        except GridMRFError as e:
            click.echo(f"error: {e}", err=True)
            ctx.exit(e.exit_code)


def _echo_json(data: dict[str, Any]) -> None:
    click.echo(json.dumps(data, indent=2))


def _model_options(func: Any) -> Any:  # noqa: ANN401
    options = [
        click.option("--nu", type=int, default=0, show_default=True, help="integer smoothness"),
        click.option("--kappa", type=float, default=0.2, show_default=True, help="inverse range"),
        click.option("--tau", type=float, default=1.0, show_default=True, help="precision scale"),
        click.option("--sigma2", type=float, default=0.0, show_default=True, help="nugget variance"),
        click.option("--mu", type=float, default=0.0, show_default=True, help="constant mean"),
        click.option("--J", "oversampling", type=int, default=None, help="torus oversampling (default: automatic)"),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def _params(nu: int, kappa: float, tau: float, sigma2: float, mu: float) -> ModelParams:
    return ModelParams(tau=tau, kappa=kappa, nu=nu, sigma2=sigma2, mu=mu)


@click.group(cls=GridMRFGroup)
@click.option(
    "--threads",
    type=int,
    envvar=THREADS_ENV,
    default=None,
    help=f"cap on worker threads (default: ${THREADS_ENV} or all cores)",
)
@click.option("-v", "--verbose", is_flag=True, help="debug logging")
@click.option(
    "--config",
    "config_path",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    default=None,
    help="JSON file with 'compute' and 'optimizer' settings",
)
@click.pass_context
def cli(ctx: click.Context, threads: int | None, verbose: bool, config_path: Path | None) -> None:
    """exact likelihoods for Gaussian Markov random fields on incomplete grids.

    covariance tables, simulation, likelihood evaluation, fitting, kriging and
    the reproducible simulation, timing and convergence studies.
    """
    logging.basicConfig(level=logging.DEBUG if verbose else logging.WARNING, format=LOG_FORMAT)
    sections: dict[str, dict[str, Any]] = {"compute": {}, "optimizer": {}}
    if config_path is not None:
        sections = load_config_file(config_path)
    compute = ComputeConfig(**sections["compute"]).with_overrides(workers=threads)
    ctx.obj = Settings(compute, OptimizerConfig.from_dict(sections["optimizer"]))


@cli.command("cov")
@_model_options
@click.option("--n1", type=int, required=True, help="grid rows")
@click.option("--n2", type=int, required=True, help="grid columns")
@click.option("--out", type=click.Path(path_type=Path), default=None, help="table output (.bin + .json)")
@click.option("--check", is_flag=True, help="also report delta_J against J + 1")
@click.pass_obj
def cov_command(
    settings: Settings,
    nu: int,
    kappa: float,
    tau: float,
    sigma2: float,
    mu: float,
    oversampling: int | None,
    n1: int,
    n2: int,
    out: Path | None,
    check: bool,
) -> None:
    """compute the covariance table of the model on an n1 x n2 grid."""
    params = _params(nu, kappa, tau, sigma2, mu)
    table = model_table(params, (n1, n2), settings.with_oversampling(oversampling))
    report: dict[str, Any] = {
        "K0": float(table.variance),
        "J": int(table.oversampling),
        "torus": [int(s) for s in table.shape],
    }
    if check:
        report["delta_J"] = delta_J(params, (n1, n2), table.oversampling)
    if out is not None:
        report["path"] = str(write_covariance_table(out, table))
    _echo_json(report)


@cli.command("loglik")
@click.option("--data", type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True)
@click.option("--method", type=click.Choice(METHODS), default="exact", show_default=True)
@_model_options
@click.option("--block-shape", callback=_grid_option, default="40x40", show_default=True, help="tiles for indblocks")
@click.option("--verify", is_flag=True, help="compare with the dense oracle (n_obs <= 4096)")
@click.option("--out", type=click.Path(path_type=Path), default=None, help="run record JSON")
@click.pass_obj
def loglik_command(
    settings: Settings,
    data: Path,
    method: str,
    nu: int,
    kappa: float,
    tau: float,
    sigma2: float,
    mu: float,
    oversampling: int | None,
    block_shape: tuple[int, int],
    verify: bool,
    out: Path | None,
) -> None:
    """evaluate the loglikelihood of a grid file."""
    params = _params(nu, kappa, tau, sigma2, mu)
    config = settings.with_oversampling(oversampling)
    field = read_grid(data)
    blocks = rectangular_blocks(GridMask.from_field(field), block_shape) if method == "indblocks" else None
    result = loglik(params, field, method, config, blocks)  # type: ignore[arg-type]
    report: dict[str, Any] = result.to_dict()
    if verify:
        n_obs = int(np.isfinite(field).sum())
        if n_obs > DENSE_LIMIT:
            msg = f"--verify needs n_obs <= {DENSE_LIMIT}, got {n_obs}"
            raise SizeGuardError(msg)
        reference = dense_loglik(params, field, config=config)
        report["dense_loglik"] = reference.loglik
        report["discrepancy"] = abs(result.loglik - reference.loglik) / max(1.0, abs(reference.loglik))
    _echo_json(report)
    if out is not None:
        RunRecord(
            command="loglik",
            params={**params.to_dict(), "method": method, "data": str(data)},
            results=report,
            timings={"loglik": result.wall_time},
        ).write(out)


@cli.command("fit")
@click.option("--data", type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True)
@click.option("--method", type=click.Choice(FIT_METHODS), default="exact", show_default=True)
@click.option("--nu", "nus", type=int, multiple=True, default=(0,), show_default=True, help="candidate smoothness (repeatable)")
@click.option("--nugget", is_flag=True, help="estimate the nugget as well")
@click.option("--J", "oversampling", type=int, default=None, help="torus oversampling (default: automatic)")
@click.option("--opt-tol", type=float, default=None, help="simplex tolerance on the loglikelihood")
@click.option("--max-iter", type=int, default=None, help="simplex iteration cap")
@click.option("--reference-loglik", type=float, default=None, help="loglik the fits are compared with")
@click.option("--out", type=click.Path(path_type=Path), default=None, help="run record JSON")
@click.pass_obj
def fit_command(
    settings: Settings,
    data: Path,
    method: str,
    nus: tuple[int, ...],
    nugget: bool,
    oversampling: int | None,
    opt_tol: float | None,
    max_iter: int | None,
    reference_loglik: float | None,
    out: Path | None,
) -> None:
    """fit the model by maximum likelihood with mu and tau profiled out."""
    config = settings.with_oversampling(oversampling)
    overrides = {k: v for k, v in {"fatol": opt_tol, "max_iter": max_iter}.items() if v is not None}
    optimizer = OptimizerConfig.from_dict({**asdict(settings.optimizer), **overrides})
    field = read_grid(data)
    comparison = fit_nu(field, list(nus), method, config, optimizer, nugget)
    gaps = comparison.loglik_gaps()
    rows = {}
    for nu, result in comparison.fits.items():
        p = result.params
        row = {
            "mu": p.mu,
            "tau": p.tau,
            "kappa": p.kappa,
            "sigma": math.sqrt(p.sigma2),
            "loglik": result.loglik.loglik,
            "loglik_gap": gaps[nu],
            "minutes": result.wall_time / 60.0,
            "converged": result.converged,
        }
        if reference_loglik is not None:
            row["dloglik"] = result.loglik.loglik - reference_loglik
        rows[str(nu)] = row
    report = {"method": method, "best_nu": comparison.best_nu, "fits": rows}
    _echo_json(report)
    if out is not None:
        RunRecord(
            command="fit",
            params={"method": method, "nus": list(nus), "nugget": nugget, "data": str(data)},
            results={
                "summary": report,
                "fits": {str(nu): r.to_dict(include_trace=True) for nu, r in comparison.fits.items()},
            },
            timings={str(nu): r.wall_time for nu, r in comparison.fits.items()},
        ).write(out)


def _numbered(path: Path, k: int, count: int) -> Path:
    return path if count == 1 else path.with_name(f"{path.stem}_{k}{path.suffix}")


def _resolve_seed(seed: int | None) -> int:
    """The given seed, or fresh entropy that is reported so the run can be repeated."""
    if seed is not None:
        return seed
    entropy = int(np.random.SeedSequence().entropy)
    logger.info("no seed given, drew %d", entropy)
    return entropy


@cli.command("simulate")
@_model_options
@click.option("--n1", type=int, required=True, help="grid rows")
@click.option("--n2", type=int, required=True, help="grid columns")
@click.option("--count", type=int, default=1, show_default=True, help="number of fields")
@click.option("--mask", "mask_path", type=click.Path(exists=True, dir_okay=False, path_type=Path), default=None, help="grid file whose NaN cells stay missing")
@click.option("--seed", type=int, default=None, help="random seed, drawn and reported when omitted")
@click.option("--out", type=click.Path(path_type=Path), required=True, help="output grid file")
@click.pass_obj
def simulate_command(
    settings: Settings,
    nu: int,
    kappa: float,
    tau: float,
    sigma2: float,
    mu: float,
    oversampling: int | None,
    n1: int,
    n2: int,
    count: int,
    mask_path: Path | None,
    seed: int | None,
    out: Path,
) -> None:
    """simulate fields by circulant embedding."""
    params = _params(nu, kappa, tau, sigma2, mu)
    seed = _resolve_seed(seed)
    rng = np.random.default_rng(seed)
    fields = simulate_field(params, (n1, n2), count, rng, settings.with_oversampling(oversampling))
    if mask_path is not None:
        mask = GridMask.from_field(read_grid(mask_path))
        if mask.shape != (n1, n2):
            msg = f"mask is {mask.shape}, grid is {(n1, n2)}"
            raise click.BadParameter(msg)
        fields[:, ~mask.observed] = np.nan
    paths = [str(write_grid(_numbered(out, k, count), f)) for k, f in enumerate(fields)]
    _echo_json({"paths": paths, "seed": seed})


@cli.command("krige")
@click.option("--data", type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True)
@_model_options
@click.option("--sd-out", type=click.Path(path_type=Path), default=None, help="grid file of prediction sds")
@click.option("--seed", type=int, default=None, help="seed for simulated sds beyond the exact limit")
@click.option("--out", type=click.Path(path_type=Path), required=True, help="grid file with missing cells predicted")
@click.pass_obj
def krige_command(
    settings: Settings,
    data: Path,
    nu: int,
    kappa: float,
    tau: float,
    sigma2: float,
    mu: float,
    oversampling: int | None,
    sd_out: Path | None,
    seed: int | None,
    out: Path,
) -> None:
    """predict every missing cell of a grid file."""
    params = _params(nu, kappa, tau, sigma2, mu)
    field = read_grid(data)
    targets = missing_cells(field)
    seed = _resolve_seed(seed)
    request = PredictionRequest(targets=targets, want_sd=sd_out is not None, rng_seed=seed)
    started = time.perf_counter()
    prediction = krige(params, field, request, settings.with_oversampling(oversampling))
    completed = field.copy()
    completed[targets[:, 0], targets[:, 1]] = prediction.mean
    write_grid(out, completed)
    if sd_out is not None and prediction.sd is not None:
        sd_grid = np.full(field.shape, np.nan)
        sd_grid[targets[:, 0], targets[:, 1]] = prediction.sd
        write_grid(sd_out, sd_grid)
    _echo_json(
        {
            "targets": len(targets),
            "out": str(out),
            "sd_out": str(sd_out) if sd_out else None,
            "seconds": time.perf_counter() - started,
            "seed": seed,
        }
    )


@cli.command("condsim")
@click.option("--data", type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True)
@_model_options
@click.option("--n-sims", type=int, default=1, show_default=True, help="number of conditional draws")
@click.option("--seed", type=int, default=None, help="random seed, drawn and reported when omitted")
@click.option("--out", type=click.Path(path_type=Path), required=True, help="output grid file (numbered when n-sims > 1)")
@click.pass_obj
def condsim_command(
    settings: Settings,
    data: Path,
    nu: int,
    kappa: float,
    tau: float,
    sigma2: float,
    mu: float,
    oversampling: int | None,
    n_sims: int,
    seed: int | None,
    out: Path,
) -> None:
    """draw the missing cells of a grid file conditionally on the observed ones."""
    params = _params(nu, kappa, tau, sigma2, mu)
    field = read_grid(data)
    targets = missing_cells(field)
    seed = _resolve_seed(seed)
    request = PredictionRequest(targets=targets, n_sims=n_sims, rng_seed=seed)
    draws = cond_sim(params, field, request, settings.with_oversampling(oversampling))
    paths = []
    for k, draw in enumerate(draws):
        completed = field.copy()
        completed[targets[:, 0], targets[:, 1]] = draw
        paths.append(str(write_grid(_numbered(out, k, n_sims), completed)))
    _echo_json({"paths": paths, "seed": seed})


@cli.command("simstudy")
@click.option("--nu", type=int, default=0, show_default=True, help="smoothness")
@click.option("--kappa-list", callback=_list_option(parse_floats), default="0.2,0.1,0.05", show_default=True)
@click.option("--grid", callback=_grid_option, default="100x100", show_default=True, help="grid size as N1xN2")
@click.option("--reps", type=int, default=100, show_default=True, help="replicates per kappa")
@click.option("--methods", default="exact,none,precision,periodic", show_default=True, help="comma-separated fit methods")
@click.option("--seed", type=int, default=0, show_default=True, help="root seed")
@click.option("--out", type=click.Path(path_type=Path), required=True, help="CSV output")
@click.pass_obj
def simstudy_command(
    settings: Settings,
    nu: int,
    kappa_list: list[float],
    grid: tuple[int, int],
    reps: int,
    methods: str,
    seed: int,
    out: Path,
) -> None:
    """fit every method to simulated replicates and summarize log kappa bias."""
    method_list = tuple(m.strip() for m in methods.split(",") if m.strip())
    unknown = [m for m in method_list if m not in FIT_METHODS]
    if unknown:
        msg = f"unknown methods {unknown}, expected from {FIT_METHODS}"
        raise click.BadParameter(msg)
    design = StudyDesign(nu=nu, kappas=tuple(kappa_list), grid=grid, reps=reps, methods=method_list, seed=seed)
    started = time.perf_counter()
    rows, summary = simstudy(design, settings.compute, settings.optimizer)
    meta = {
        "command": "simstudy",
        "nu": nu,
        "kappas": list(kappa_list),
        "grid": list(grid),
        "reps": reps,
        "methods": list(method_list),
        "seed": seed,
        "seconds": time.perf_counter() - started,
    }
    write_csv(out, rows + summary, SIMSTUDY_FIELDS, meta)
    for row in summary:
        click.echo(
            f"kappa={row['kappa']:g} {row['method']}: mean log kappa_hat={row['log_kappa_hat']:.4f} "
            f"(se {row['se']:.4f}, z {row['z']:+.2f})"
        )


@cli.command("benchmark")
@click.option("--sizes", callback=_list_option(parse_ints), default="100,150,200,250,300", show_default=True)
@click.option("--nu", "nus", callback=_list_option(parse_ints), default="0,1", show_default=True)
@click.option("--sigma2", "sigma2s", callback=_list_option(parse_floats), default="0,0.01", show_default=True)
@click.option("--kappa", type=float, default=0.1, show_default=True, help="inverse range of the data")
@click.option("--reps", type=int, default=1, show_default=True, help="timing repetitions")
@click.option("--seed", type=int, default=0, show_default=True, help="seed of the simulated data")
@click.option("--out", type=click.Path(path_type=Path), required=True, help="CSV output")
@click.pass_obj
def benchmark_command(
    settings: Settings,
    sizes: list[int],
    nus: list[int],
    sigma2s: list[float],
    kappa: float,
    reps: int,
    seed: int,
    out: Path,
) -> None:
    """time one likelihood evaluation per method over complete grids."""
    rows = benchmark(sizes, nus, sigma2s, kappa, reps, seed, settings.compute)
    write_csv(out, rows, benchmark_fields(nus, sigma2s), {"command": "benchmark", "kappa": kappa, "seed": seed})
    if 0 in sigma2s and len(sizes) > 1:
        for nu in nus:
            times = [row[f"exact_nu{nu}"] for row in rows]
            slope = loglog_slope([row["n_obs"] for row in rows], times)
            click.echo(f"nu={nu}: exact time ~ n^{slope:.2f}")


@cli.command("convergence")
@click.option("--nu", "nus", callback=_list_option(parse_ints), default="0,1", show_default=True)
@click.option("--kappa-list", callback=_list_option(parse_floats), default="0.2,0.1,0.05", show_default=True)
@click.option("--n1", type=int, default=100, show_default=True, help="grid rows")
@click.option("--n2", type=int, default=100, show_default=True, help="grid columns")
@click.option("--J-max", "j_max", type=int, default=5, show_default=True, help="largest J compared with J + 1")
@click.option("--out", type=click.Path(path_type=Path), required=True, help="CSV output")
def convergence_command(
    nus: list[int], kappa_list: list[float], n1: int, n2: int, j_max: int, out: Path
) -> None:
    """tabulate delta_J, the table change from oversampling J to J + 1."""
    rows = convergence(nus, kappa_list, (n1, n2), j_max)
    write_csv(out, rows, CONVERGENCE_FIELDS, {"command": "convergence", "n1": n1, "n2": n2})
    click.echo(f"wrote {len(rows)} rows to {out}")


if __name__ == "__main__":
    cli()
