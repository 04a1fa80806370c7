"""Observation grids with missing cells and the fully/partially neighbored split.

locations are (row, col) integer pairs on an n1 x n2 rectangle. observations are
indexed in row-major scan order of their cells; a PartitionIndex reorders them
so that the partially neighbored observations come first.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
import numpy.typing as npt

from gridmrf.errors import InputError, NoObservationsError

if TYPE_CHECKING:
    from gridmrf.spectral import Stencil

FloatArray = npt.NDArray[np.float64]
IntArray = npt.NDArray[np.int64]
BoolArray = npt.NDArray[np.bool_]


@dataclass(frozen=True, eq=False)
class GridMask:
    """Observation pattern on a rectangular grid.

    Attributes:
        observed: boolean array of shape (n1, n2), True where a value is observed
    """

    observed: BoolArray

    def __post_init__(self) -> None:
        """Validate the mask and freeze its storage."""
        observed = np.array(self.observed, dtype=bool)
        if observed.ndim != 2 or min(observed.shape) < 1:
            msg = f"mask must be a non-empty 2-D array, got shape {observed.shape}"
            raise InputError(msg)
        if not observed.any():
            msg = "no observations"
            raise NoObservationsError(msg)
        observed.setflags(write=False)
        object.__setattr__(self, "observed", observed)

    @classmethod
    def complete(cls, n1: int, n2: int) -> GridMask:
        """Mask with every cell observed."""
        return cls(np.ones((n1, n2), dtype=bool))

    @classmethod
    def from_field(cls, field: npt.ArrayLike) -> GridMask:
        """Mask of the finite cells of a field (NaN marks missing)."""
        return cls(np.isfinite(np.asarray(field, dtype=float)))

    @classmethod
    def from_locations(cls, n1: int, n2: int, locations: npt.ArrayLike) -> GridMask:
        """Mask from explicit (row, col) observation locations.

        Args:
            n1: number of rows
            n2: number of columns
            locations: array of shape (k, 2)

        Returns:
            mask with exactly those cells observed

        Raises:
            InputError: if a location falls outside the rectangle
        """
        locs = np.asarray(locations, dtype=np.int64).reshape(-1, 2)
        inside = (
            (locs[:, 0] >= 0) & (locs[:, 0] < n1) & (locs[:, 1] >= 0) & (locs[:, 1] < n2)
        )
        if not inside.all():
            bad = locs[~inside][0]
            msg = f"location ({bad[0]}, {bad[1]}) lies outside the {n1}x{n2} grid"
            raise InputError(msg)
        observed = np.zeros((n1, n2), dtype=bool)
        observed[locs[:, 0], locs[:, 1]] = True
        return cls(observed)

    @property
    def n1(self) -> int:
        """Number of rows."""
        return int(self.observed.shape[0])

    @property
    def n2(self) -> int:
        """Number of columns."""
        return int(self.observed.shape[1])

    @property
    def shape(self) -> tuple[int, int]:
        """Grid dimensions (n1, n2)."""
        return (self.n1, self.n2)

    @property
    def n_obs(self) -> int:
        """Number of observed cells."""
        return int(self.observed.sum())

    @property
    def is_complete(self) -> bool:
        """True when every cell is observed."""
        return bool(self.observed.all())

    def locations(self) -> IntArray:
        """Observed (row, col) pairs in row-major order, shape (n_obs, 2)."""
        return np.argwhere(self.observed).astype(np.int64)

    def index_grid(self) -> IntArray:
        """Observation index per cell, -1 where missing."""
        grid = np.full(self.shape, -1, dtype=np.int64)
        grid[self.observed] = np.arange(self.n_obs)
        return grid

    def transposed(self) -> GridMask:
        """Mask of the transposed grid."""
        return GridMask(self.observed.T)


@dataclass(frozen=True, eq=False)
class PartitionIndex:
    """Permutation of observations into partially then fully neighbored groups.

    Attributes:
        order: observation index at each block position (partially first)
        position: block position of each observation (inverse of order)
        fully: per-observation flag, True when fully neighbored
        m_n: number of partially neighbored observations
        n_obs: total number of observations
        shape: grid dimensions the index was built for
    """

    order: IntArray
    position: IntArray
    fully: BoolArray
    m_n: int
    n_obs: int
    shape: tuple[int, int]

    @property
    def partial_obs(self) -> IntArray:
        """Observation indices of the partially neighbored group."""
        return self.order[: self.m_n]

    @property
    def fully_obs(self) -> IntArray:
        """Observation indices of the fully neighbored group."""
        return self.order[self.m_n :]

    @property
    def n_fully(self) -> int:
        """Number of fully neighbored observations."""
        return self.n_obs - self.m_n


def fully_neighbored_cells(mask: GridMask, stencil: Stencil) -> BoolArray:
    """Cells that are observed and whose whole stencil neighborhood is observed.

    Args:
        mask: observation pattern
        stencil: conditional specification coefficients

    Returns:
        boolean array of the grid shape
    """
    r = stencil.radius
    n1, n2 = mask.shape
    padded = np.pad(mask.observed, r, constant_values=False)
    full = mask.observed.copy()
    for h1, h2 in stencil.neighbor_lags():
        full &= padded[r + h1 : r + h1 + n1, r + h2 : r + h2 + n2]
    return full


def classify(mask: GridMask, stencil: Stencil) -> PartitionIndex:
    """Split observations into partially and fully neighbored groups.

    each group keeps row-major order, partially neighbored observations first.

    Args:
        mask: observation pattern
        stencil: conditional specification coefficients

    Returns:
        the partition index

    Raises:
        NoObservationsError: if the mask has no observed cell
    """
    n_obs = mask.n_obs
    if n_obs == 0:
        msg = "no observations"
        raise NoObservationsError(msg)
    fully = fully_neighbored_cells(mask, stencil)[mask.observed]
    order = np.concatenate([np.flatnonzero(~fully), np.flatnonzero(fully)]).astype(
        np.int64
    )
    position = np.empty(n_obs, dtype=np.int64)
    position[order] = np.arange(n_obs)
    for arr in (order, position, fully):
        arr.setflags(write=False)
    return PartitionIndex(
        order=order,
        position=position,
        fully=fully,
        m_n=int(n_obs - fully.sum()),
        n_obs=n_obs,
        shape=mask.shape,
    )


def block_view(index: PartitionIndex, v: npt.ArrayLike) -> tuple[FloatArray, FloatArray]:
    """Split a vector over observations into its (partial, fully) blocks.

    Args:
        index: partition index
        v: array whose first axis runs over observations

    Returns:
        (v1, v2) with v1 of length m_n and v2 of length n_obs - m_n
    """
    arr = np.asarray(v, dtype=float)
    if arr.shape[0] != index.n_obs:
        msg = f"vector length {arr.shape[0]} does not match {index.n_obs} observations"
        raise InputError(msg)
    return arr[index.partial_obs], arr[index.fully_obs]


def block_merge(index: PartitionIndex, v1: npt.ArrayLike, v2: npt.ArrayLike) -> FloatArray:
    """Inverse of block_view: reassemble a vector in observation order."""
    a1 = np.asarray(v1, dtype=float)
    a2 = np.asarray(v2, dtype=float)
    if a1.shape[0] != index.m_n or a2.shape[0] != index.n_fully:
        msg = (
            f"block lengths ({a1.shape[0]}, {a2.shape[0]}) do not match "
            f"({index.m_n}, {index.n_fully})"
        )
        raise InputError(msg)
    out = np.empty((index.n_obs, *a1.shape[1:]), dtype=float)
    out[index.partial_obs] = a1
    out[index.fully_obs] = a2
    return out


def observations(field: npt.ArrayLike) -> tuple[GridMask, FloatArray]:
    """Mask and observation vector (row-major) of a NaN-masked field.

    Args:
        field: 2-D array, NaN marks missing cells

    Returns:
        (mask, y)
    """
    values = np.asarray(field, dtype=float)
    if values.ndim != 2:
        msg = f"field must be 2-D, got shape {values.shape}"
        raise InputError(msg)
    if np.isinf(values).any():
        msg = "field contains infinite values"
        raise InputError(msg)
    mask = GridMask.from_field(values)
    return mask, values[mask.observed]
