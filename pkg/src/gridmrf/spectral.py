"""Stationary model family, spectral densities and FFT covariance tables.

the model is specified through its stencil eta(h), the coefficients of the
conditional specification. its spectral density is the reciprocal of the
stencil's Fourier series, and lattice covariances are Riemann sums of the
spectral density on an oversampled torus:

    K(h; J, n) = (n1 n2 J^2)^-1 sum_j f(w_j) exp(i w_j . h),  w_j = 2 pi j / (n J)

computed for every lag at once with one inverse FFT. covariances use the
(2 pi)^-2 normalization, so a white-noise stencil eta(0) = c has variance 1/c.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import numpy.typing as npt
from scipy import fft, signal

from gridmrf.config import ComputeConfig
from gridmrf.errors import InputError, NumericalError, SingularSpectrumError
from gridmrf.lattice import FloatArray, GridMask, IntArray

logger = logging.getLogger(__name__)

# relative threshold below which a sampled stencil symbol counts as zero
SYMBOL_EPSILON = 1e-14
# tolerated imaginary residue of the inverse FFT, relative to K(0)
IMAGINARY_TOLERANCE = 1e-10
# torus margin, in decay lengths, left beyond the grid by the automatic rule
MARGIN_DECAY_LENGTHS = 36.0
MARGIN_PER_NU = 10.0
# grids with a side below this are placed on a torus of at least min_torus
SMALL_GRID = 20
DEFAULT_OVERSAMPLING = 3


@dataclass(frozen=True)
class ModelParams:
    """Parameters of the stationary family with spectral density

        f(w) = tau^-2 (kappa^2 + 4 - 2 cos w1 - 2 cos w2)^(-nu - 1)

    plus a nugget variance and a constant mean.

    Attributes:
        tau: precision scale
        kappa: inverse range (0 gives an intrinsic, singular model)
        nu: integer smoothness
        sigma2: nugget variance
        mu: constant mean
    """

    tau: float
    kappa: float
    nu: int = 0
    sigma2: float = 0.0
    mu: float = 0.0

    def __post_init__(self) -> None:
        """Validate parameter ranges."""
        if not (math.isfinite(self.tau) and self.tau > 0):
            msg = f"tau must be positive, got {self.tau}"
            raise InputError(msg)
        if not (math.isfinite(self.kappa) and self.kappa >= 0):
            msg = f"kappa must be nonnegative, got {self.kappa}"
            raise InputError(msg)
        if int(self.nu) != self.nu or self.nu < 0:
            msg = f"nu must be a nonnegative integer, got {self.nu}"
            raise InputError(msg)
        if not (math.isfinite(self.sigma2) and self.sigma2 >= 0):
            msg = f"sigma2 must be nonnegative, got {self.sigma2}"
            raise InputError(msg)
        if not math.isfinite(self.mu):
            msg = f"mu must be finite, got {self.mu}"
            raise InputError(msg)
        object.__setattr__(self, "nu", int(self.nu))

    def to_dict(self) -> dict[str, float]:
        """Convert to dictionary."""
        return {
            "tau": self.tau,
            "kappa": self.kappa,
            "nu": self.nu,
            "sigma2": self.sigma2,
            "mu": self.mu,
        }


@dataclass(frozen=True, eq=False)
class Stencil:
    """Finite symmetric map from integer lags to conditional coefficients.

    Attributes:
        coefficients: eta(h) keyed by lag (h1, h2); zero entries are dropped
    """

    coefficients: dict[tuple[int, int], float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        """Validate symmetry, positivity of eta(0) and finiteness."""
        coeffs = {
            (int(h1), int(h2)): float(v)
            for (h1, h2), v in self.coefficients.items()
            if v != 0.0
        }
        for lag, value in coeffs.items():
            if not math.isfinite(value):
                msg = f"stencil coefficient at {lag} is not finite"
                raise InputError(msg)
            mirror = coeffs.get((-lag[0], -lag[1]))
            if mirror is None or not math.isclose(
                mirror, value, rel_tol=1e-12, abs_tol=1e-300
            ):
                msg = f"stencil is not symmetric at lag {lag}"
                raise InputError(msg)
        if coeffs.get((0, 0), 0.0) <= 0:
            msg = "stencil center eta(0) must be positive"
            raise InputError(msg)
        object.__setattr__(self, "coefficients", coeffs)

    @classmethod
    def white_noise(cls, center: float) -> Stencil:
        """Stencil of independent cells with variance 1/center."""
        return cls({(0, 0): center})

    @classmethod
    def from_array(cls, kernel: npt.ArrayLike) -> Stencil:
        """Stencil from a (2r+1) x (2r+1) array centered on lag (0, 0)."""
        arr = np.asarray(kernel, dtype=float)
        r1, r2 = arr.shape[0] // 2, arr.shape[1] // 2
        return cls(
            {
                (i - r1, j - r2): float(arr[i, j])
                for i, j in zip(*np.nonzero(arr), strict=True)
            }
        )

    @property
    def center(self) -> float:
        """eta(0)."""
        return self.coefficients[(0, 0)]

    @property
    def radius(self) -> int:
        """Largest absolute lag component with a nonzero coefficient."""
        return max(max(abs(h1), abs(h2)) for h1, h2 in self.coefficients)

    def __getitem__(self, lag: tuple[int, int]) -> float:
        """eta(h), zero outside the support."""
        return self.coefficients.get(lag, 0.0)

    def neighbor_lags(self) -> list[tuple[int, int]]:
        """Nonzero lags other than (0, 0), sorted."""
        return sorted(h for h in self.coefficients if h != (0, 0))

    def off_center_mass(self) -> float:
        """Sum of |eta(h)| over h != 0."""
        return sum(abs(v) for h, v in self.coefficients.items() if h != (0, 0))

    def transposed(self) -> Stencil:
        """Stencil acting on the transposed grid."""
        return Stencil({(h2, h1): v for (h1, h2), v in self.coefficients.items()})

    def to_array(self) -> FloatArray:
        """Dense (2r+1) x (2r+1) kernel centered on lag (0, 0)."""
        r = self.radius
        out = np.zeros((2 * r + 1, 2 * r + 1))
        for (h1, h2), v in self.coefficients.items():
            out[r + h1, r + h2] = v
        return out

    def symbol(self, omega1: npt.ArrayLike, omega2: npt.ArrayLike) -> FloatArray:
        """Fourier series sum_h eta(h) exp(i w.h), real by symmetry."""
        w1 = np.asarray(omega1, dtype=float)
        w2 = np.asarray(omega2, dtype=float)
        total = np.zeros(np.broadcast(w1, w2).shape)
        for (h1, h2), v in self.coefficients.items():
            total = total + v * np.cos(w1 * h1 + w2 * h2)
        return total


def stencil_from_params(params: ModelParams) -> Stencil:
    """Stencil of the five-point family: tau^2 times the (nu+1)-fold self-convolution
    of the five-point base kernel b(0) = kappa^2 + 4, b(+-e1) = b(+-e2) = -1.

    Args:
        params: model parameters

    Returns:
        the stencil
    """
    base = np.array(
        [[0.0, -1.0, 0.0], [-1.0, params.kappa**2 + 4.0, -1.0], [0.0, -1.0, 0.0]]
    )
    kernel = base
    for _ in range(params.nu):
        kernel = signal.convolve2d(kernel, base)
    return Stencil.from_array(params.tau**2 * kernel)


def spectral_density(
    params: ModelParams, omega1: npt.ArrayLike, omega2: npt.ArrayLike
) -> FloatArray:
    """Spectral density tau^-2 (kappa^2 + 4 - 2 cos w1 - 2 cos w2)^(-nu-1).

    Args:
        params: model parameters
        omega1: first frequency component(s)
        omega2: second frequency component(s)

    Returns:
        density values, broadcast over the inputs

    Raises:
        SingularSpectrumError: if the density is infinite (kappa = 0 at w = 0)
    """
    base = params.kappa**2 + 4.0 - 2.0 * np.cos(omega1) - 2.0 * np.cos(omega2)
    if np.any(base <= SYMBOL_EPSILON * (params.kappa**2 + 8.0)):
        msg = "spectral density singular"
        raise SingularSpectrumError(msg)
    return np.asarray(params.tau**-2 * base ** (-params.nu - 1.0), dtype=float)


def decay_rate(params: ModelParams) -> float:
    """Exponential decay rate of the lattice covariance, arccosh(1 + kappa^2 / 2)."""
    return math.acosh(1.0 + params.kappa**2 / 2.0)


def torus_shape(
    n: tuple[int, int], oversampling: int, min_torus: int = 0
) -> tuple[int, int]:
    """Torus dimensions (n1 J, n2 J), floored at min_torus per axis."""
    return (
        max(n[0] * oversampling, min_torus),
        max(n[1] * oversampling, min_torus),
    )


def auto_oversampling(
    params: ModelParams | Stencil, n: tuple[int, int], config: ComputeConfig
) -> int:
    """Oversampling factor J used when none is configured.

    picks the smallest J >= 3 that leaves a margin of (36 + 10 nu) decay lengths
    around the grid on the shorter axis, capped so no torus side exceeds
    config.max_torus.

    Args:
        params: model parameters (a bare stencil gets the default J)
        n: grid dimensions
        config: compute configuration

    Returns:
        oversampling factor
    """
    if config.oversampling is not None:
        return config.oversampling
    if not isinstance(params, ModelParams) or params.kappa == 0:
        return DEFAULT_OVERSAMPLING
    margin = (MARGIN_DECAY_LENGTHS + MARGIN_PER_NU * params.nu) / decay_rate(params)
    n_short = min(n)
    wanted = max(DEFAULT_OVERSAMPLING, math.ceil((n_short + margin) / n_short))
    cap = max(1, config.max_torus // max(n))
    if wanted > cap:
        logger.warning(
            "torus capped at J=%d (wanted J=%d for kappa=%.4g on %dx%d); "
            "covariances carry wrap-around error",
            cap,
            wanted,
            params.kappa,
            n[0],
            n[1],
        )
        return cap
    return wanted


@dataclass(frozen=True, eq=False)
class CovarianceTable:
    """Lattice covariances at every lag of the oversampled torus.

    Attributes:
        values: K at each torus lag, shape equal to the torus dimensions
        spectrum: spectral density samples on the torus Fourier grid
        oversampling: J
        grid: dimensions (n1, n2) of the rectangle the table serves
        stencil: model stencil
        params: model parameters when the table came from the five-point family
    """

    values: FloatArray
    spectrum: FloatArray
    oversampling: int
    grid: tuple[int, int]
    stencil: Stencil
    params: ModelParams | None = None

    @property
    def shape(self) -> tuple[int, int]:
        """Torus dimensions."""
        return (int(self.values.shape[0]), int(self.values.shape[1]))

    @property
    def variance(self) -> float:
        """K(0)."""
        return float(self.values[0, 0])

    @cached_property
    def eigen_rfft(self) -> npt.NDArray[np.complex128]:
        """Half-spectrum eigenvalues of the circulant covariance operator."""
        return np.asarray(fft.rfft2(self.values))

    def at(self, lags: npt.ArrayLike) -> FloatArray:
        """K at integer lags of shape (..., 2), wrapped onto the torus."""
        h = np.asarray(lags, dtype=np.int64)
        return self.values[h[..., 0] % self.shape[0], h[..., 1] % self.shape[1]]

    def cross(self, locs_a: IntArray, locs_b: IntArray) -> FloatArray:
        """Dense covariance block [K(a_i - b_j)]."""
        lags = locs_a[:, None, :] - locs_b[None, :, :]
        return self.at(lags)


def covariance_table(
    model: ModelParams | Stencil,
    n: tuple[int, int],
    oversampling: int = DEFAULT_OVERSAMPLING,
    min_torus: int = 0,
    workers: int | None = None,
) -> CovarianceTable:
    """Covariances at all torus lags from one inverse FFT of the sampled spectrum.

    Args:
        model: five-point family parameters or an explicit stencil
        n: grid dimensions (n1, n2)
        oversampling: J >= 1
        min_torus: torus floor per axis
        workers: FFT threads

    Returns:
        the covariance table

    Raises:
        SingularSpectrumError: if a spectrum sample is infinite or nonfinite
    """
    if min(n) < 1:
        msg = f"grid dimensions must be positive, got {n}"
        raise InputError(msg)
    if oversampling < 1:
        msg = f"oversampling must be >= 1, got {oversampling}"
        raise InputError(msg)
    params = model if isinstance(model, ModelParams) else None
    stencil = stencil_from_params(model) if isinstance(model, ModelParams) else model
    shape = torus_shape(n, oversampling, min_torus)

    # symbol on the Fourier grid: FFT of the stencil wrapped onto the torus
    wrapped = np.zeros(shape)
    for (h1, h2), v in stencil.coefficients.items():
        wrapped[h1 % shape[0], h2 % shape[1]] += v
    symbol = fft.fft2(wrapped, workers=workers).real
    scale = np.abs(symbol).max()
    if not np.all(np.isfinite(symbol)) or np.any(symbol <= SYMBOL_EPSILON * scale):
        msg = "singular spectrum sample"
        raise SingularSpectrumError(msg)
    spectrum = 1.0 / symbol

    values = fft.ifft2(spectrum, workers=workers)
    k0 = values[0, 0].real
    residue = np.abs(values.imag).max()
    if residue >= IMAGINARY_TOLERANCE * max(k0, 1e-300):
        msg = f"covariance table imaginary residue {residue:.3g} exceeds tolerance"
        raise NumericalError(msg)
    logger.debug("covariance table on torus %s (J=%d), K(0)=%.6g", shape, oversampling, k0)

    real_values = np.ascontiguousarray(values.real)
    real_values.setflags(write=False)
    spectrum.setflags(write=False)
    return CovarianceTable(
        values=real_values,
        spectrum=spectrum,
        oversampling=oversampling,
        grid=(int(n[0]), int(n[1])),
        stencil=stencil,
        params=params,
    )


def model_table(
    params: ModelParams, n: tuple[int, int], config: ComputeConfig | None = None
) -> CovarianceTable:
    """Covariance table sized by the configured or automatic oversampling.

    Args:
        params: model parameters
        n: grid dimensions the table must serve
        config: compute configuration

    Returns:
        the covariance table
    """
    cfg = config or ComputeConfig()
    oversampling = auto_oversampling(params, n, cfg)
    min_torus = cfg.min_torus if min(n) < SMALL_GRID else 0
    return covariance_table(params, n, oversampling, min_torus, workers=cfg.workers)


def circ_matvec(
    table: CovarianceTable,
    v: npt.ArrayLike,
    sources: IntArray,
    targets: IntArray,
    workers: int | None = None,
) -> FloatArray:
    """Sum_y K(x - y) v(y) for every target x, by FFT on the table's torus.

    Args:
        table: covariance table whose rectangle contains all locations
        v: values at the sources, shape (k,) or (k, m) for m vectors at once
        sources: source locations, shape (k, 2)
        targets: target locations, shape (t, 2)
        workers: FFT threads

    Returns:
        array of shape (t,) or (t, m)
    """
    src = np.asarray(sources, dtype=np.int64).reshape(-1, 2)
    tgt = np.asarray(targets, dtype=np.int64).reshape(-1, 2)
    for name, locs in (("source", src), ("target", tgt)):
        outside = (locs < 0).any(axis=1) | (locs[:, 0] >= table.grid[0]) | (
            locs[:, 1] >= table.grid[1]
        )
        if outside.any():
            bad = locs[outside][0]
            msg = f"{name} location ({bad[0]}, {bad[1]}) out of rectangle {table.grid}"
            raise InputError(msg)
    vals = np.asarray(v, dtype=float)
    single = vals.ndim == 1
    if vals.ndim not in (1, 2) or vals.shape[0] != len(src):
        msg = f"got values of shape {vals.shape} for {len(src)} sources"
        raise InputError(msg)
    cols = vals[:, None] if single else vals

    buffer = np.zeros((cols.shape[1], *table.shape))
    np.add.at(buffer, (slice(None), src[:, 0], src[:, 1]), cols.T)
    spectrum = fft.rfft2(buffer, workers=workers)
    spectrum *= table.eigen_rfft
    conv = fft.irfft2(spectrum, s=table.shape, workers=workers)
    out = conv[:, tgt[:, 0], tgt[:, 1]].T
    return out[:, 0] if single else out


def simulate_torus(
    table: CovarianceTable, rng: np.random.Generator, count: int = 1
) -> FloatArray:
    """Exact zero-mean samples of the torus-periodic field with covariance table.values.

    each complex Gaussian draw yields two independent real fields.

    Args:
        table: covariance table
        rng: random generator
        count: number of fields

    Returns:
        array of shape (count, N1, N2)
    """
    if np.any(table.spectrum < 0):
        msg = "nonpositive spectrum sample"
        raise SingularSpectrumError(msg)
    n_complex = math.ceil(count / 2)
    shape = table.shape
    amplitude = np.sqrt(table.spectrum)
    noise = rng.standard_normal((n_complex, *shape)) + 1j * rng.standard_normal(
        (n_complex, *shape)
    )
    fields = math.sqrt(shape[0] * shape[1]) * fft.ifft2(amplitude * noise)
    return np.concatenate([fields.real, fields.imag])[:count]


def simulate_field(
    params: ModelParams,
    shape: tuple[int, int],
    count: int = 1,
    rng: np.random.Generator | None = None,
    config: ComputeConfig | None = None,
) -> FloatArray:
    """Unconditional simulations of Y = mu + Z + noise on a complete grid.

    Args:
        params: model parameters
        shape: grid dimensions
        count: number of fields
        rng: random generator (fresh unseeded generator when None)
        config: compute configuration

    Returns:
        array of shape (count, n1, n2)
    """
    generator = rng if rng is not None else np.random.default_rng()
    table = model_table(params, shape, config)
    fields = simulate_torus(table, generator, count)[:, : shape[0], : shape[1]]
    if params.sigma2 > 0:
        fields = fields + math.sqrt(params.sigma2) * generator.standard_normal(
            fields.shape
        )
    return fields + params.mu


def unconditional_sim(
    params: ModelParams,
    mask: GridMask,
    oversampling: int | None = None,
    rng_seed: int | np.random.SeedSequence | None = None,
    config: ComputeConfig | None = None,
) -> FloatArray:
    """One unconditional simulation restricted to the observed cells.

    Args:
        params: model parameters
        mask: observation pattern
        oversampling: J >= 2 (None picks J from the model range)
        rng_seed: seed for a fresh generator
        config: compute configuration

    Returns:
        simulated values in observation order
    """
    if oversampling is not None and oversampling < 2:  # noqa: PLR2004
        msg = f"simulation needs oversampling J >= 2, got {oversampling}"
        raise InputError(msg)
    cfg = (config or ComputeConfig()).with_overrides(oversampling=oversampling)
    rng = np.random.default_rng(rng_seed)
    grid = simulate_field(params, mask.shape, 1, rng, cfg)[0]
    return grid[mask.observed]
