"""Measurement-matrix containers, complex to real stacking, and sweep I/O.

A sweep is a K x N matrix of complex phasor differences: one row per operating
frequency, one column per position along the sensor path.  Detectors consume
the real-stacked form, a 2K x N matrix with the real block above the
imaginary block.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import IO

import numpy as np

__all__ = [
    "SweepFormatError",
    "FrequencyGrid",
    "SweepPath",
    "ComplexSweep",
    "RealSweep",
    "stack_real",
    "unstack_real",
    "load_sweep",
    "save_sweep",
]


class SweepFormatError(ValueError):
    """Raised when a sweep file or array fails validation.

    ``row`` and ``column`` locate the offending entry when known (1-based
    file line for CSV, 0-based index for JSON/arrays).
    """

    def __init__(self, message, row=None, column=None):
        loc = []
        if row is not None:
            loc.append(f"row {row}")
        if column is not None:
            loc.append(f"column {column}")
        if loc:
            message = f"{message} ({', '.join(loc)})"
        super().__init__(message)
        self.row = row
        self.column = column


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class FrequencyGrid:
    """Strictly increasing operating angular frequencies (rad/s)."""

    omegas: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.omegas, dtype=float).ravel()
        if w.size < 2:
            raise ValueError("a frequency grid needs at least 2 frequencies")
        if not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise ValueError("frequencies must be finite and strictly positive")
        if np.any(np.diff(w) <= 0):
            raise ValueError("frequencies must be strictly increasing")
        object.__setattr__(self, "omegas", _frozen(w))

    @classmethod
    def logspaced(cls, omega_min, omega_max, k):
        return cls(np.geomspace(omega_min, omega_max, k))

    @property
    def k(self) -> int:
        return self.omegas.size

    @property
    def center(self) -> float:
        """Geometric mean of the grid."""
        return float(np.exp(np.mean(np.log(self.omegas))))

    def __eq__(self, other):
        return isinstance(other, FrequencyGrid) and np.array_equal(self.omegas, other.omegas)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class SweepPath:
    """Ordered 2-D sensor positions (easting, northing) in meters."""

    positions: np.ndarray
    timestamps: np.ndarray | None = None

    def __post_init__(self):
        p = np.asarray(self.positions, dtype=float)
        if p.ndim != 2 or p.shape[1] != 2:
            raise ValueError(f"positions must have shape (N, 2), got {p.shape}")
        if p.shape[0] < 1:
            raise ValueError("a sweep path needs at least one position")
        if not np.all(np.isfinite(p)):
            raise ValueError("positions must be finite")
        object.__setattr__(self, "positions", _frozen(p))
        if self.timestamps is not None:
            t = np.asarray(self.timestamps, dtype=float).ravel()
            if t.size != p.shape[0]:
                raise ValueError("timestamps length must match positions")
            object.__setattr__(self, "timestamps", _frozen(t))

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    def arc_length(self) -> np.ndarray:
        """Cumulative distance travelled at each position, starting at 0."""
        steps = np.linalg.norm(np.diff(self.positions, axis=0), axis=1)
        return np.concatenate([[0.0], np.cumsum(steps)])

    def __eq__(self, other):
        if not isinstance(other, SweepPath):
            return NotImplemented
        if not np.array_equal(self.positions, other.positions):
            return False
        if self.timestamps is None or other.timestamps is None:
            return self.timestamps is None and other.timestamps is None
        return np.array_equal(self.timestamps, other.timestamps)

    __hash__ = None


def _check_finite(data, what):
    bad = np.argwhere(~np.isfinite(data))
    if bad.size:
        r, c = (int(v) for v in bad[0])
        raise SweepFormatError(f"non-finite value in {what}", row=r, column=c)


@dataclass(frozen=True, eq=False)
class ComplexSweep:
    """K x N complex measurement matrix with its frequency grid and path."""

    grid: FrequencyGrid
    path: SweepPath
    data: np.ndarray
    sweep_id: str = field(default="", compare=False)

    def __post_init__(self):
        d = np.asarray(self.data, dtype=complex)
        if d.shape != (self.grid.k, self.path.n):
            raise SweepFormatError(
                f"data shape {d.shape} does not match K={self.grid.k}, N={self.path.n}"
            )
        _check_finite(d, "sweep data")
        object.__setattr__(self, "data", _frozen(d))

    @property
    def positions(self) -> np.ndarray:
        return self.path.positions

    def __eq__(self, other):
        if not isinstance(other, ComplexSweep):
            return NotImplemented
        return (
            self.grid == other.grid
            and self.path == other.path
            and np.array_equal(self.data, other.data)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class RealSweep:
    """2K x N real matrix: real parts in rows 0..K-1, imaginary parts below."""

    grid: FrequencyGrid
    path: SweepPath
    data: np.ndarray
    sweep_id: str = field(default="", compare=False)

    def __post_init__(self):
        d = np.asarray(self.data, dtype=float)
        if d.shape != (2 * self.grid.k, self.path.n):
            raise SweepFormatError(
                f"data shape {d.shape} does not match 2K={2 * self.grid.k}, N={self.path.n}"
            )
        _check_finite(d, "sweep data")
        object.__setattr__(self, "data", _frozen(d))

    @property
    def positions(self) -> np.ndarray:
        return self.path.positions

    def with_data(self, data) -> "RealSweep":
        return RealSweep(self.grid, self.path, data, sweep_id=self.sweep_id)

    def __eq__(self, other):
        if not isinstance(other, RealSweep):
            return NotImplemented
        return (
            self.grid == other.grid
            and self.path == other.path
            and np.array_equal(self.data, other.data)
        )

    __hash__ = None


def stack_real(sweep: ComplexSweep) -> RealSweep:
    data = np.vstack([sweep.data.real, sweep.data.imag])
    return RealSweep(sweep.grid, sweep.path, data, sweep_id=sweep.sweep_id)


def unstack_real(sweep: RealSweep) -> ComplexSweep:
    k = sweep.grid.k
    data = sweep.data[:k] + 1j * sweep.data[k:]
    return ComplexSweep(sweep.grid, sweep.path, data, sweep_id=sweep.sweep_id)


# ---------------------------------------------------------------------------
# Serialization

_OMEGA_TAG = "# omegas_rad_s:"


def _fmt(v: float) -> str:
    # repr gives the shortest string that round-trips to the same double
    return repr(float(v))


def _parse_float(text, row, column):
    try:
        v = float(text)
    except ValueError:
        raise SweepFormatError(f"cannot parse number {text!r}", row=row, column=column) from None
    if not math.isfinite(v):
        raise SweepFormatError(f"non-finite value {text!r}", row=row, column=column)
    return v


def _read_text(source) -> str:
    if isinstance(source, (bytes, bytearray)):
        return bytes(source).decode("utf-8")
    if isinstance(source, str):
        return source
    raw = source.read()
    return raw.decode("utf-8") if isinstance(raw, (bytes, bytearray)) else raw


def _load_csv(text: str) -> ComplexSweep:
    lines = text.splitlines()
    omegas = None
    header = None
    rows = []
    for lineno, line in enumerate(lines, start=1):
        stripped = line.strip()
        if not stripped:
            continue
        if stripped.startswith("#"):
            if stripped.startswith(_OMEGA_TAG):
                if omegas is not None:
                    raise SweepFormatError("duplicate omegas header", row=lineno)
                parts = stripped[len(_OMEGA_TAG):].split(",")
                omegas = [_parse_float(p.strip(), lineno, i + 1) for i, p in enumerate(parts)]
            continue
        if header is None:
            header = (lineno, [h.strip() for h in next(csv.reader([stripped]))])
            continue
        rows.append((lineno, next(csv.reader([stripped]))))

    if omegas is None:
        raise SweepFormatError(f"missing '{_OMEGA_TAG}' header block")
    if header is None:
        raise SweepFormatError("missing column header line")
    k = len(omegas)
    expected = ["easting", "northing"]
    for i in range(1, k + 1):
        expected += [f"re_{i}", f"im_{i}"]
    hline, names = header
    if names != expected:
        raise SweepFormatError(
            f"malformed header: expected {len(expected)} columns "
            f"'easting,northing,re_1,im_1,...,re_{k},im_{k}'",
            row=hline,
        )
    if not rows:
        raise SweepFormatError("sweep has no data rows (N must be >= 1)")

    width = 2 + 2 * k
    pos = np.empty((len(rows), 2))
    data = np.empty((k, len(rows)), dtype=complex)
    for j, (lineno, fields) in enumerate(rows):
        if len(fields) != width:
            raise SweepFormatError(
                f"row arity {len(fields)} != expected {width}", row=lineno
            )
        vals = [_parse_float(f, lineno, c + 1) for c, f in enumerate(fields)]
        pos[j] = vals[:2]
        data[:, j] = np.asarray(vals[2::2]) + 1j * np.asarray(vals[3::2])
    try:
        grid = FrequencyGrid(np.asarray(omegas))
    except ValueError as exc:
        raise SweepFormatError(f"invalid frequency grid: {exc}") from None
    return ComplexSweep(grid, SweepPath(pos), data)


def _load_json(text: str) -> ComplexSweep:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SweepFormatError(f"invalid JSON: {exc.msg}", row=exc.lineno, column=exc.colno) from None
    if not isinstance(obj, dict):
        raise SweepFormatError("top-level JSON value must be an object")
    for key in ("omegas_rad_s", "positions", "data"):
        if key not in obj:
            raise SweepFormatError(f"missing key {key!r}")
    omegas = obj["omegas_rad_s"]
    positions = obj["positions"]
    data = obj["data"]
    k = len(omegas)
    if len(positions) != len(data):
        raise SweepFormatError(
            f"positions ({len(positions)}) and data ({len(data)}) lengths differ"
        )
    if not data:
        raise SweepFormatError("sweep has no positions (N must be >= 1)")
    for i, w in enumerate(omegas):
        _parse_float(w, None, i)
    pos = np.empty((len(positions), 2))
    out = np.empty((k, len(data)), dtype=complex)
    for j, (p, col) in enumerate(zip(positions, data)):
        if len(p) != 2:
            raise SweepFormatError("position must be [easting, northing]", row=j)
        pos[j] = [_parse_float(v, j, c) for c, v in enumerate(p)]
        if len(col) != k:
            raise SweepFormatError(f"expected {k} [re, im] pairs, got {len(col)}", row=j)
        for i, pair in enumerate(col):
            if len(pair) != 2:
                raise SweepFormatError("expected [re, im] pair", row=j, column=i)
            out[i, j] = _parse_float(pair[0], j, i) + 1j * _parse_float(pair[1], j, i)
    try:
        grid = FrequencyGrid(np.asarray(omegas, dtype=float))
    except ValueError as exc:
        raise SweepFormatError(f"invalid frequency grid: {exc}") from None
    return ComplexSweep(grid, SweepPath(pos), out)


def load_sweep(source: IO | bytes | str, format: str = "csv") -> ComplexSweep:
    """Read a ComplexSweep from a text/byte stream, bytes, or str.

    Raises
    ------
    SweepFormatError
        On malformed headers, row arity mismatches, or non-finite numbers;
        the message names the offending row/column.
    """
    text = _read_text(source)
    if format == "csv":
        return _load_csv(text)
    if format == "json":
        return _load_json(text)
    raise ValueError(f"unknown sweep format {format!r}")


def save_sweep(sweep: ComplexSweep, format: str = "csv") -> bytes:
    """Serialize a sweep; ``load_sweep(save_sweep(x))`` reproduces x exactly."""
    k = sweep.grid.k
    if format == "csv":
        buf = io.StringIO()
        buf.write(_OMEGA_TAG + " " + ",".join(_fmt(w) for w in sweep.grid.omegas) + "\n")
        cols = ["easting", "northing"]
        for i in range(1, k + 1):
            cols += [f"re_{i}", f"im_{i}"]
        buf.write(",".join(cols) + "\n")
        for j in range(sweep.path.n):
            vals = [sweep.positions[j, 0], sweep.positions[j, 1]]
            for i in range(k):
                vals += [sweep.data[i, j].real, sweep.data[i, j].imag]
            buf.write(",".join(_fmt(v) for v in vals) + "\n")
        return buf.getvalue().encode("utf-8")
    if format == "json":
        obj = {
            "omegas_rad_s": [float(w) for w in sweep.grid.omegas],
            "positions": [[float(e), float(n)] for e, n in sweep.positions],
            "data": [
                [[float(v.real), float(v.imag)] for v in sweep.data[:, j]]
                for j in range(sweep.path.n)
            ],
        }
        return json.dumps(obj).encode("utf-8")
    raise ValueError(f"unknown sweep format {format!r}")
