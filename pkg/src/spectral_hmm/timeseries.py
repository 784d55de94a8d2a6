"""Time-series container, CSV ingestion and the periodogram."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EmptyInputError, FormatError, ParseError

SPACING_RTOL = 1e-6


@dataclass(frozen=True)
class TimeSeries:
    """Evenly sampled observations.

    ``t0`` is the integer sample offset of the first value; the harmonic basis
    is always evaluated at the absolute sample index ``t0 + i``.
    """

    values: np.ndarray
    sample_rate: float = 1.0
    t0: int = 0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).ravel()
        if values.size == 0:
            raise EmptyInputError("time series is empty")
        if not np.all(np.isfinite(values)):
            raise FormatError("time series contains non-finite values")
        rate = float(self.sample_rate)
        if not (np.isfinite(rate) and rate > 0):
            raise FormatError(f"sample_rate must be finite and positive, got {self.sample_rate!r}")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "sample_rate", rate)
        object.__setattr__(self, "t0", int(self.t0))

    def __len__(self):
        return self.values.size

    @property
    def times(self) -> np.ndarray:
        """Absolute integer sample indices."""
        return self.t0 + np.arange(self.values.size)

    @property
    def seconds(self) -> np.ndarray:
        return self.times / self.sample_rate


@dataclass(frozen=True)
class Spectrum:
    freqs: np.ndarray
    power: np.ndarray


def periodogram(values, total_len: int | None = None) -> Spectrum:
    """Squared DFT modulus on the grid ``h / total_len``.

    Returns ``I_h`` for ``h = 0, ..., floor(n / 2) - 1`` where ``n`` is the
    number of values. ``total_len`` defaults to ``n`` (the segment's own
    Fourier grid).
    """
    y = np.asarray(values, dtype=float).ravel()
    n = y.size
    if n == 0:
        raise EmptyInputError("periodogram of an empty segment")
    grid = n if total_len is None else int(total_len)
    if grid < n:
        raise ValueError(f"total_len ({grid}) must be >= number of values ({n})")
    nbins = n // 2
    dft = np.fft.fft(y, n=grid)[:nbins]
    power = dft.real**2 + dft.imag**2
    freqs = np.arange(nbins) / grid
    return Spectrum(freqs=freqs, power=power)


def _parse_float(cell: str, row: int, col: int) -> float:
    try:
        return float(cell)
    except ValueError:
        raise ParseError(f"row {row}: column {col} is not numeric: {cell!r}") from None


def load_series(path, sample_rate: float | None = None) -> TimeSeries:
    """Read a CSV with columns ``time,value`` or a single ``value`` column.

    A header row is optional. With a header, columns are located by name
    (``time``/``t`` and ``value``) and any other columns are ignored. Without
    a time column the sampling rate must be given explicitly.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise EmptyInputError(f"{path}: file is empty")

    first = [c.strip() for c in rows[0]]
    has_header = False
    try:
        [float(c) for c in first]
    except ValueError:
        has_header = True

    time_col = None
    if has_header:
        names = [c.lower() for c in first]
        if "value" in names:
            value_col = names.index("value")
            for key in ("time", "t"):
                if key in names:
                    time_col = names.index(key)
                    break
        elif len(names) == 1:
            value_col = 0
        elif len(names) == 2:
            time_col, value_col = 0, 1
        else:
            raise FormatError(f"{path}: cannot identify a 'value' column in header {first}")
        body = rows[1:]
        offset = 2
    else:
        if len(first) == 1:
            value_col = 0
        elif len(first) == 2:
            time_col, value_col = 0, 1
        else:
            raise FormatError(f"{path}: expected 1 or 2 columns without a header, got {len(first)}")
        body = rows
        offset = 1
    if not body:
        raise EmptyInputError(f"{path}: no data rows")

    ncols = max(value_col, time_col if time_col is not None else 0) + 1
    values = np.empty(len(body))
    times = np.empty(len(body)) if time_col is not None else None
    for i, row in enumerate(body):
        lineno = i + offset
        if len(row) < ncols:
            raise ParseError(f"row {lineno}: expected at least {ncols} columns, got {len(row)}")
        values[i] = _parse_float(row[value_col].strip(), lineno, value_col + 1)
        if times is not None:
            times[i] = _parse_float(row[time_col].strip(), lineno, time_col + 1)
    if not np.all(np.isfinite(values)):
        bad = int(np.flatnonzero(~np.isfinite(values))[0]) + offset
        raise ParseError(f"row {bad}: non-finite value")

    if times is None:
        if sample_rate is None:
            raise FormatError(f"{path}: no time column, a sample rate must be supplied")
        return TimeSeries(values, sample_rate=sample_rate)

    if times.size == 1:
        rate = 1.0 if sample_rate is None else float(sample_rate)
    else:
        steps = np.diff(times)
        dt = steps.mean()
        if dt <= 0 or np.any(np.abs(steps - dt) > SPACING_RTOL * abs(dt)):
            worst = int(np.argmax(np.abs(steps - dt))) + offset + 1
            raise FormatError(f"{path}: non-uniform time spacing (first offending row {worst})")
        rate = 1.0 / dt
        if sample_rate is not None and abs(rate - sample_rate) > SPACING_RTOL * sample_rate:
            raise FormatError(
                f"{path}: time column implies rate {rate:.17g} but {sample_rate} was given"
            )
    t0 = int(round(times[0] * rate))
    return TimeSeries(values, sample_rate=rate, t0=t0)


def fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_csv(path, header, columns):
    """Write equal-length columns; floats at 17 significant digits."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in zip(*columns):
            w.writerow([c if isinstance(c, (int, np.integer, str)) else fmt(c) for c in row])
