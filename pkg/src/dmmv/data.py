"""Dataset ingestion, chronological splitting, windowing, and synthetic
generators.

CSV contract: first column is a timestamp header, every remaining column is a
numeric variate. Splits are chronological and contiguous; windows never cross
a split boundary.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .codec import UnivariateWindow
from .errors import ConfigError, EmptySplit, NonNumericCell, ParseError

# default imaging period by sampling frequency; the paper-style presets are
# overridable from the CLI
PERIOD_PRESETS = {
    "hourly": 24,
    "15min": 96,
    "10min": 144,
    "weekly": 52,
}


@dataclass
class MultivariateSeries:
    values: np.ndarray  # [D, total_len]
    names: list
    timestamps: list | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError("values must be [variates, time]")

    @property
    def n_variates(self):
        return self.values.shape[0]

    @property
    def length(self):
        return self.values.shape[1]

    def slice_time(self, start, stop):
        ts = self.timestamps[start:stop] if self.timestamps is not None else None
        return MultivariateSeries(self.values[:, start:stop], list(self.names), ts)


def load_csv(path):
    """Read a timestamp + variates CSV into [D, total_len]."""
    rows = []
    timestamps = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        if len(header) < 2:
            raise ParseError(f"{path}: need a timestamp column plus at least one variate")
        names = header[1:]
        for r, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ParseError(f"{path}: row {r} has {len(row)} cells, expected {len(header)}")
            timestamps.append(row[0])
            parsed = []
            for c, cell in enumerate(row[1:], start=2):
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise NonNumericCell(
                        f"{path}: non-numeric cell at row {r}, column {c} "
                        f"({header[c - 1]!r}): {cell!r}"
                    ) from None
            rows.append(parsed)
    if not rows:
        raise ParseError(f"{path}: no data rows")
    values = np.asarray(rows, dtype=np.float64).T
    return MultivariateSeries(values, names, timestamps)


def save_csv(path, series):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date"] + list(series.names))
        for t in range(series.length):
            stamp = series.timestamps[t] if series.timestamps is not None else str(t)
            writer.writerow([stamp] + [repr(float(v)) for v in series.values[:, t]])


@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.7
    val: float = 0.1
    test: float = 0.2

    def __post_init__(self):
        total = self.train + self.val + self.test
        if abs(total - 1.0) > 1e-9:
            raise ConfigError(f"split ratios must sum to 1, got {total}")


def chronological_split(series, spec):
    """Contiguous train/val/test split at floor(ratio * total) boundaries."""
    n = series.length
    n_train = int(np.floor(spec.train * n))
    n_val = int(np.floor(spec.val * n))
    n_test = n - n_train - n_val
    if min(n_train, n_val, n_test) <= 0:
        raise EmptySplit(f"split of length {n} leaves an empty part "
                         f"({n_train}/{n_val}/{n_test})")
    return (series.slice_time(0, n_train),
            series.slice_time(n_train, n_train + n_val),
            series.slice_time(n_train + n_val, n))


@dataclass
class StandardizeStats:
    mean: np.ndarray  # [D]
    std: np.ndarray   # [D]

    def apply(self, series):
        scaled = (series.values - self.mean[:, None]) / self.std[:, None]
        return MultivariateSeries(scaled, list(series.names), series.timestamps)

    def invert(self, series):
        raw = series.values * self.std[:, None] + self.mean[:, None]
        return MultivariateSeries(raw, list(series.names), series.timestamps)


def standardize(train, *others):
    """Per-variate z-score with statistics fit on the training split only."""
    mean = train.values.mean(axis=1)
    std = train.values.std(axis=1)
    std = np.where(std > 0, std, 1.0)
    stats = StandardizeStats(mean, std)
    return tuple(stats.apply(s) for s in (train,) + others), stats


def window_count(length, lookback, horizon, stride=1):
    usable = length - lookback - horizon + 1
    if usable <= 0:
        return 0
    return (usable - 1) // stride + 1


def window_iter(series, lookback, horizon, stride=1):
    """Yield UnivariateWindow objects variate-by-variate, oldest start first."""
    n = series.length
    for d in range(series.n_variates):
        row = series.values[d]
        for start in range(0, n - lookback - horizon + 1, stride):
            yield UnivariateWindow(
                lookback=row[start:start + lookback],
                target=row[start + lookback:start + lookback + horizon],
                variate_id=d,
            )


def window_matrix(series, lookback, horizon, stride=1):
    """All windows pooled over variates as (X [N, lookback], Y [N, horizon]).

    Channel independence: every variate contributes windows to the same pool.
    """
    xs, ys = [], []
    n = series.length
    starts = range(0, n - lookback - horizon + 1, stride)
    for d in range(series.n_variates):
        row = series.values[d]
        for s in starts:
            xs.append(row[s:s + lookback])
            ys.append(row[s + lookback:s + lookback + horizon])
    if not xs:
        raise EmptySplit(
            f"series of length {n} yields no ({lookback}, {horizon}) windows"
        )
    return np.asarray(xs), np.asarray(ys)


# ---------------------------------------------------------------------------
# synthetic generators
# ---------------------------------------------------------------------------

def synth_decaying_sine(total_len, period=24, a_start=1.0, a_end=0.1):
    """x(t) = A(t) sin(2 pi t / period) with A linear from a_start to a_end."""
    t = np.arange(total_len, dtype=np.float64)
    if total_len > 1:
        amp = a_start + (a_end - a_start) * t / (total_len - 1)
    else:
        amp = np.full(total_len, a_start)
    x = amp * np.sin(2.0 * np.pi * t / period)
    return MultivariateSeries(x[None, :], ["decaying_sine"])


def synth_trend_sine(total_len, period=24, slope=0.005, amp=1.0, noise_std=0.1,
                     seed=0):
    """Linear ramp plus sine plus seeded Gaussian noise."""
    t = np.arange(total_len, dtype=np.float64)
    x = slope * t + amp * np.sin(2.0 * np.pi * t / period)
    if noise_std > 0:
        x = x + np.random.default_rng(seed).normal(0.0, noise_std, size=total_len)
    return MultivariateSeries(x[None, :], ["trend_sine"])
