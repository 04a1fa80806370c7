"""Grid files, covariance table exports and run records.

text grids carry a three-line header (`n1 <int>`, `n2 <int>`, `missing NaN`)
followed by n1 rows of n2 whitespace-separated values. binary grids are a flat
row-major little-endian float64 `<name>.bin` with a `<name>.json` sidecar.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from importlib import metadata
from pathlib import Path
from typing import Any

import numpy as np
import numpy.typing as npt

from gridmrf.errors import InputError
from gridmrf.lattice import FloatArray
from gridmrf.spectral import CovarianceTable

# datetime.UTC is 3.11+; timezone.utc is the same object
UTC = timezone.utc

BINARY_SUFFIX = ".bin"
MISSING_TOKEN = "NaN"
BINARY_DTYPE = "<f8"


def _sidecar(path: Path) -> Path:
    return path.with_suffix(".json")


def _ensure_parent(path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)


def write_grid(path: str | Path, values: npt.ArrayLike) -> Path:
    """Write a NaN-masked field, binary when the suffix is .bin.

    Args:
        path: output path
        values: 2-D array, NaN marks missing cells

    Returns:
        the path written
    """
    out = Path(path)
    grid = np.asarray(values, dtype=float)
    if grid.ndim != 2:  # noqa: PLR2004
        msg = f"grid must be 2-D, got shape {grid.shape}"
        raise InputError(msg)
    if np.isinf(grid).any():
        msg = "grid contains infinite values"
        raise InputError(msg)
    _ensure_parent(out)
    n1, n2 = grid.shape
    if out.suffix == BINARY_SUFFIX:
        grid.astype(BINARY_DTYPE).tofile(out)
        meta = {"n1": n1, "n2": n2, "dtype": "float64", "missing": MISSING_TOKEN}
        _sidecar(out).write_text(json.dumps(meta, indent=2))
        return out
    lines = [f"n1 {n1}", f"n2 {n2}", f"missing {MISSING_TOKEN}"]
    for row in grid:
        lines.append(" ".join(_format_value(v) for v in row))
    out.write_text("\n".join(lines) + "\n")
    return out


def _format_value(v: float) -> str:
    return MISSING_TOKEN if math.isnan(v) else f"{v:.17g}"


def read_grid(path: str | Path) -> FloatArray:
    """Read a grid file written by write_grid (or by hand).

    Args:
        path: .bin file (with .json sidecar) or text grid

    Returns:
        2-D array with NaN at missing cells

    Raises:
        InputError: on malformed headers, row/column mismatches or infinite values
    """
    src = Path(path)
    if not src.exists():
        msg = f"grid file not found: {src}"
        raise InputError(msg)
    if src.suffix == BINARY_SUFFIX:
        return _read_binary(src)
    return _read_text(src)


def _read_binary(src: Path) -> FloatArray:
    sidecar = _sidecar(src)
    if not sidecar.exists():
        msg = f"binary grid {src} has no sidecar {sidecar.name}"
        raise InputError(msg)
    meta = json.loads(sidecar.read_text())
    try:
        n1, n2 = int(meta["n1"]), int(meta["n2"])
    except (KeyError, TypeError, ValueError) as e:
        msg = f"sidecar {sidecar} needs integer n1 and n2"
        raise InputError(msg) from e
    flat = np.fromfile(src, dtype=BINARY_DTYPE)
    if flat.size != n1 * n2:
        msg = f"{src} holds {flat.size} values, sidecar says {n1}x{n2}"
        raise InputError(msg)
    grid = flat.astype(float).reshape(n1, n2)
    if np.isinf(grid).any():
        msg = f"{src} contains infinite values"
        raise InputError(msg)
    return grid


def _header_value(line: str, key: str, src: Path) -> str:
    parts = line.split()
    if len(parts) != 2 or parts[0] != key:  # noqa: PLR2004
        msg = f"{src}: expected header '{key} <value>', got '{line.strip()}'"
        raise InputError(msg)
    return parts[1]


def _read_text(src: Path) -> FloatArray:
    lines = [line for line in src.read_text().splitlines() if line.strip()]
    if len(lines) < 3:  # noqa: PLR2004
        msg = f"{src}: missing header"
        raise InputError(msg)
    raw_n1 = _header_value(lines[0], "n1", src)
    raw_n2 = _header_value(lines[1], "n2", src)
    try:
        n1, n2 = int(raw_n1), int(raw_n2)
    except ValueError as e:
        msg = f"{src}: grid dimensions must be integers"
        raise InputError(msg) from e
    missing = _header_value(lines[2], "missing", src)
    rows = lines[3:]
    if n1 < 1 or n2 < 1 or len(rows) != n1:
        msg = f"{src}: header says {n1} rows, found {len(rows)}"
        raise InputError(msg)
    grid = np.empty((n1, n2))
    for i, row in enumerate(rows):
        tokens = row.split()
        if len(tokens) != n2:
            msg = f"{src}: row {i + 1} has {len(tokens)} values, expected {n2}"
            raise InputError(msg)
        for j, token in enumerate(tokens):
            grid[i, j] = math.nan if token == missing else _parse_value(token, src, i, j)
    return grid


def _parse_value(token: str, src: Path, i: int, j: int) -> float:
    try:
        value = float(token)
    except ValueError as e:
        msg = f"{src}: cannot parse '{token}' at row {i + 1}, column {j + 1}"
        raise InputError(msg) from e
    if not math.isfinite(value) and not math.isnan(value):
        msg = f"{src}: infinite value at row {i + 1}, column {j + 1}"
        raise InputError(msg)
    return value


def write_covariance_table(path: str | Path, table: CovarianceTable) -> Path:
    """Write a covariance table as flat binary with a JSON sidecar.

    Args:
        path: output path; the suffix is forced to .bin

    Returns:
        the binary path written
    """
    out = Path(path).with_suffix(BINARY_SUFFIX)
    _ensure_parent(out)
    table.values.astype(BINARY_DTYPE).tofile(out)
    meta: dict[str, Any] = {
        "n1": table.shape[0],
        "n2": table.shape[1],
        "dtype": "float64",
        "grid": list(table.grid),
        "oversampling": table.oversampling,
        "variance": table.variance,
        "params": table.params.to_dict() if table.params is not None else None,
    }
    _sidecar(out).write_text(json.dumps(meta, indent=2))
    return out


def library_version() -> str:
    """Installed gridmrf version, or "unknown" when running from a checkout."""
    try:
        return metadata.version("gridmrf")
    except metadata.PackageNotFoundError:
        return "unknown"


@dataclass
class RunRecord:
    """JSON record of one command run.

    Attributes:
        command: command name
        params: model or command parameters
        results: command outputs (loglik breakdowns, fits, paths)
        timings: wall-clock seconds per phase
        seed: random seed, if any
        version: library version
        timestamp: UTC time of the run, ISO 8601
    """

    command: str
    params: dict[str, Any] = field(default_factory=dict)
    results: dict[str, Any] = field(default_factory=dict)
    timings: dict[str, float] = field(default_factory=dict)
    seed: int | None = None
    version: str = field(default_factory=library_version)
    timestamp: str = field(default_factory=lambda: datetime.now(UTC).isoformat())

    def to_dict(self) -> dict[str, Any]:
        """Convert to dictionary."""
        return {
            "command": self.command,
            "params": self.params,
            "results": self.results,
            "timings": self.timings,
            "seed": self.seed,
            "version": self.version,
            "timestamp": self.timestamp,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> RunRecord:
        """Build from a dictionary produced by to_dict."""
        return cls(**data)

    def to_json(self) -> str:
        """Serialize with two-space indentation."""
        return json.dumps(self.to_dict(), indent=2)

    def write(self, path: str | Path) -> Path:
        """Write the record as JSON."""
        out = Path(path)
        _ensure_parent(out)
        out.write_text(self.to_json() + "\n")
        return out

    @classmethod
    def read(cls, path: str | Path) -> RunRecord:
        """Read a record written by write."""
        return cls.from_dict(json.loads(Path(path).read_text()))


def write_csv(
    path: str | Path,
    rows: list[dict[str, Any]],
    fieldnames: list[str],
    meta: dict[str, Any] | None = None,
) -> Path:
    """Write rows as CSV, plus a JSON metadata sidecar when meta is given.

    Args:
        path: output CSV path
        rows: one dictionary per row
        fieldnames: column order
        meta: metadata for `<name>.json`

    Returns:
        the CSV path written
    """
    out = Path(path)
    _ensure_parent(out)
    with out.open("w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=fieldnames, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _csv_value(row.get(k)) for k in fieldnames})
    if meta is not None:
        _sidecar(out).write_text(json.dumps(meta, indent=2) + "\n")
    return out


def _csv_value(value: Any) -> Any:  # noqa: ANN401
    if isinstance(value, float):
        return f"{value:.17g}"
    return "" if value is None else value
