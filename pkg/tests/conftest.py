"""Shared fixtures for gridmrf tests."""

from collections.abc import Callable, Iterable

import numpy as np
import pytest

from gridmrf.config import ComputeConfig

FieldFactory = Callable[..., np.ndarray]


@pytest.fixture
def rng() -> np.random.Generator:
    """Seeded generator so every test sees the same draws."""
    return np.random.default_rng(20240521)


@pytest.fixture
def config() -> ComputeConfig:
    """Single-threaded compute configuration."""
    return ComputeConfig(workers=1)


@pytest.fixture
def make_field() -> FieldFactory:
    """Factory for random fields with chosen missing cells."""

    def factory(
        shape: tuple[int, int],
        missing: Iterable[tuple[int, int]] = (),
        seed: int = 0,
        mean: float = 0.0,
    ) -> np.ndarray:
        values = mean + np.random.default_rng(seed).standard_normal(shape)
        for i, j in missing:
            values[i, j] = np.nan
        return values

    return factory
