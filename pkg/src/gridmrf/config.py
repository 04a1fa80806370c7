"""Runtime configuration for covariance, likelihood and prediction computations."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Any, Literal

from gridmrf.errors import InputError

THREADS_ENV = "GRIDMRF_THREADS"

NuggetPath = Literal["lean", "fullq"]


def default_workers() -> int:
    """Worker count from GRIDMRF_THREADS, falling back to the core count.

    Returns:
        positive worker count
    """
    raw = os.environ.get(THREADS_ENV)
    if raw:
        try:
            value = int(raw)
        except ValueError:
            msg = f"{THREADS_ENV} must be an integer, got '{raw}'"
            raise InputError(msg) from None
        if value >= 1:
            return value
    return os.cpu_count() or 1


@dataclass(frozen=True)
class ComputeConfig:
    """Configuration for the numerical core.

    Attributes:
        oversampling: torus oversampling factor J (None picks J from the model range)
        min_torus: torus floor per axis applied to grids smaller than 20 cells
        max_torus: torus cap per axis for the automatic oversampling rule
        workers: thread count for column solves and simulations
        max_partial: largest m_n the exact paths accept
        dense_guard: largest dense block (cells) for blocks and oracles
        column_chunk: columns solved together when assembling dense blocks
        exact_sd_limit: largest target count for exact kriging variances
        sd_sims: conditional simulations used for sd above exact_sd_limit
        nugget_path: exact nugget likelihood route, "lean" or "fullq"
    """

    oversampling: int | None = None
    min_torus: int = 64
    max_torus: int = 4096
    workers: int = 0
    max_partial: int = 20_000
    dense_guard: int = 4096
    column_chunk: int = 64
    exact_sd_limit: int = 2048
    sd_sims: int = 200
    nugget_path: NuggetPath = "lean"

    def __post_init__(self) -> None:
        """Validate ranges and resolve the worker count."""
        if self.oversampling is not None and self.oversampling < 1:
            msg = f"oversampling must be >= 1, got {self.oversampling}"
            raise InputError(msg)
        if self.column_chunk < 1:
            msg = "column_chunk must be >= 1"
            raise InputError(msg)
        if self.nugget_path not in ("lean", "fullq"):
            msg = f"nugget_path must be 'lean' or 'fullq', got '{self.nugget_path}'"
            raise InputError(msg)
        if self.workers <= 0:
            object.__setattr__(self, "workers", default_workers())

    def with_overrides(self, **overrides: Any) -> ComputeConfig:
        """Copy with the non-None overrides applied.

        Args:
            **overrides: field values, None entries are ignored

        Returns:
            updated configuration
        """
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})


def load_config_file(path: str | Path) -> dict[str, dict[str, Any]]:
    """Read a JSON configuration file.

    the file holds optional "compute" and "optimizer" objects whose keys are
    field names of ComputeConfig and OptimizerConfig.

    Args:
        path: JSON file path

    Returns:
        dict with "compute" and "optimizer" sections (possibly empty)
    """
    data = json.loads(Path(path).read_text())
    if not isinstance(data, dict):
        msg = f"config file {path} must hold a JSON object"
        raise InputError(msg)
    known = {f.name for f in fields(ComputeConfig)}
    compute = data.get("compute", {})
    unknown = set(compute) - known
    if unknown:
        msg = f"unknown compute settings in {path}: {sorted(unknown)}"
        raise InputError(msg)
    return {"compute": compute, "optimizer": data.get("optimizer", {})}
