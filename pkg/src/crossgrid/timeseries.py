"""Raw meter/weather ingestion, daily resampling, normalization, windowing.

Daily series are stored on a continuous calendar (one slot per day between
the first and last observed date) with NaN marking days that are absent or
were dropped for low coverage.  That makes "14 consecutive valid days"
checks plain array operations.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

SECONDS_PER_DAY = 86_400
EPOCH = dt.date(1970, 1, 1)

#: model input features, in window column order
FEATURE_ORDER = (
    "consumption",
    "air_temp",
    "solar",
    "wind",
    "air_temp_next",
    "solar_next",
    "wind_next",
)
#: normalization channels (next-week weather shares the current-week stats)
CHANNELS = ("consumption", "air_temp", "solar", "wind")
WEATHER_CHANNELS = ("air_temp", "solar", "wind")

#: the transfer study's default fitting and evaluation windows
DEFAULT_TRAIN_RANGE = (dt.date(2014, 4, 1), dt.date(2015, 5, 31))
DEFAULT_EVAL_RANGE = (dt.date(2014, 4, 22), dt.date(2014, 6, 1))

SEQUENCE_LENGTH = 7
WINDOW_SPAN = 2 * SEQUENCE_LENGTH  # current week + target week


class SeriesError(ValueError):
    """Malformed raw file or series misuse."""


@dataclass(frozen=True)
class RawSeries:
    """Sub-daily readings: strictly increasing unix timestamps plus values."""

    series_id: str
    timestamps: np.ndarray
    values: np.ndarray
    unit: str = ""
    rows_read: int = 0
    rows_dropped: int = 0

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=np.int64)
        vals = np.asarray(self.values, dtype=float)
        if ts.shape != vals.shape or ts.ndim != 1:
            raise SeriesError("timestamps and values must be aligned 1-d arrays")
        if ts.size and (np.diff(ts) <= 0).any():
            raise SeriesError("timestamps must be strictly increasing")
        if vals.size and not np.isfinite(vals).all():
            raise SeriesError("raw values must be finite")
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "values", vals)

    def __len__(self) -> int:
        return int(self.timestamps.size)


@dataclass(frozen=True)
class DailySeries:
    """One value per calendar day over a continuous span; NaN = missing."""

    series_id: str
    start: dt.date
    values: np.ndarray
    unit: str = ""

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))

    def __len__(self) -> int:
        return int(self.values.size)

    @property
    def end(self) -> dt.date:
        return self.start + dt.timedelta(days=len(self) - 1)

    @property
    def dates(self) -> list[dt.date]:
        return [self.start + dt.timedelta(days=i) for i in range(len(self))]

    @property
    def n_valid(self) -> int:
        return int(np.isfinite(self.values).sum())

    def slice(self, start: dt.date, end: dt.date) -> "DailySeries":
        """Restrict to [start, end] inclusive (may come back empty)."""
        if len(self) == 0 or end < self.start or start > self.end:
            return DailySeries(self.series_id, start, np.zeros(0), self.unit)
        lo = max(0, (start - self.start).days)
        hi = min(len(self), (end - self.start).days + 1)
        return DailySeries(
            self.series_id, self.start + dt.timedelta(days=lo), self.values[lo:hi], self.unit
        )

    def to_pairs(self) -> list[tuple[dt.date, float]]:
        return list(zip(self.dates, self.values))

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("date,value\n")
            for day, value in self.to_pairs():
                cell = "NA" if not np.isfinite(value) else repr(float(value))
                fh.write(f"{day.isoformat()},{cell}\n")

    @classmethod
    def read_csv(cls, path, series_id: str | None = None, unit: str = "") -> "DailySeries":
        days, vals = [], []
        with open(path, encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            for row in reader:
                if not row:
                    continue
                days.append(dt.date.fromisoformat(row[0]))
                vals.append(float("nan") if row[1] == "NA" else float(row[1]))
        if not days:
            raise SeriesError(f"{path}: no rows")
        sid = series_id if series_id is not None else Path(path).stem
        return from_pairs(sid, list(zip(days, vals)), unit=unit)


def from_pairs(series_id: str, pairs, unit: str = "") -> DailySeries:
    """Build a continuous-calendar DailySeries from (date, value) pairs."""
    if not pairs:
        raise SeriesError("cannot build a daily series from no data")
    pairs = sorted(pairs, key=lambda p: p[0])
    for (d1, _), (d2, _) in zip(pairs, pairs[1:]):
        if d1 == d2:
            raise SeriesError(f"duplicate date {d1} in daily series")
    start, end = pairs[0][0], pairs[-1][0]
    values = np.full((end - start).days + 1, np.nan)
    for day, value in pairs:
        values[(day - start).days] = value
    return DailySeries(series_id, start, values, unit)


def load_raw(
    path,
    ts_col: str = "unix_ts",
    value_col: str = "value",
    unit: str = "",
    delimiter: str = ",",
    series_id: str | None = None,
) -> RawSeries:
    """Read a delimited ``timestamp,value`` file; sort and keep the last duplicate."""
    path = Path(path)
    if not path.exists():
        raise SeriesError(f"raw series file not found: {path}")
    stamps: list[int] = []
    values: list[float] = []
    rows_read = 0
    with path.open(encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        header = next(reader, None)
        if header is None:
            raise SeriesError(f"{path}: empty file")
        header = [h.strip() for h in header]
        for col in (ts_col, value_col):
            if col not in header:
                raise SeriesError(f"{path}: missing column {col!r} (header: {header})")
        ti, vi = header.index(ts_col), header.index(value_col)
        for lineno, row in enumerate(reader, 2):
            if not row or all(not c.strip() for c in row):
                continue
            rows_read += 1
            try:
                stamps.append(int(float(row[ti])))
            except (ValueError, IndexError):
                raise SeriesError(f"{path}:{lineno}: unparseable timestamp {row[ti]!r}") from None
            try:
                values.append(float(row[vi]))
            except (ValueError, IndexError):
                raise SeriesError(f"{path}:{lineno}: unparseable value") from None
    if rows_read == 0:
        raise SeriesError(f"{path}: no data rows")

    order = np.argsort(np.asarray(stamps), kind="stable")
    ts = np.asarray(stamps, dtype=np.int64)[order]
    vals = np.asarray(values, dtype=float)[order]
    keep = np.ones(ts.size, dtype=bool)
    keep[:-1] = ts[:-1] != ts[1:]  # last occurrence wins
    dropped = int((~keep).sum())
    if dropped:
        log.info("%s: dropped %d duplicate timestamps", path, dropped)
    sid = series_id if series_id is not None else path.stem
    return RawSeries(sid, ts[keep], vals[keep], unit, rows_read=rows_read, rows_dropped=dropped)


def _resample_daily(s: RawSeries, how: str, coverage: float, expected_per_day) -> DailySeries:
    if len(s) == 0:
        raise SeriesError("cannot resample an empty series")
    if expected_per_day is None:
        if len(s) > 1:
            step = float(np.median(np.diff(s.timestamps)))
            expected_per_day = max(1, int(round(SECONDS_PER_DAY / max(step, 1.0))))
        else:
            expected_per_day = 1
    days = s.timestamps // SECONDS_PER_DAY  # UTC day boundaries
    first, last = int(days[0]), int(days[-1])
    out = np.full(last - first + 1, np.nan)
    idx = np.asarray(days - first, dtype=np.intp)
    counts = np.bincount(idx, minlength=out.size)
    sums = np.bincount(idx, weights=s.values, minlength=out.size)
    enough = counts >= coverage * expected_per_day
    if how == "sum":
        out[enough] = sums[enough]
    else:
        out[enough] = sums[enough] / counts[enough]
    start = EPOCH + dt.timedelta(days=first)
    return DailySeries(s.series_id, start, out, s.unit)


def resample_daily_sum(
    s: RawSeries, coverage: float = 0.9, expected_per_day: int | None = None
) -> DailySeries:
    """Daily totals; days with under ``coverage`` of expected readings go missing."""
    return _resample_daily(s, "sum", coverage, expected_per_day)


def resample_daily_mean(
    s: RawSeries, coverage: float = 0.9, expected_per_day: int | None = None
) -> DailySeries:
    """Daily means with the same coverage rule as :func:`resample_daily_sum`."""
    return _resample_daily(s, "mean", coverage, expected_per_day)


@dataclass(frozen=True)
class NormStats:
    """Per-channel (min, max) fitted on the training range only."""

    ranges: dict[str, tuple[float, float]]
    clip: bool = False

    def scale(self, channel: str, values):
        lo, hi = self.ranges[channel]
        values = np.asarray(values, dtype=float)
        if hi == lo:
            return np.zeros_like(values)
        out = (values - lo) / (hi - lo)
        return np.clip(out, 0.0, 1.0) if self.clip else out

    def unscale(self, channel: str, values):
        lo, hi = self.ranges[channel]
        values = np.asarray(values, dtype=float)
        if hi == lo:
            return np.full_like(values, lo)
        return values * (hi - lo) + lo

    def to_dict(self) -> dict:
        return {"ranges": {k: list(v) for k, v in self.ranges.items()}, "clip": self.clip}

    @classmethod
    def from_dict(cls, data: dict) -> "NormStats":
        return cls({k: (float(v[0]), float(v[1])) for k, v in data["ranges"].items()},
                   bool(data.get("clip", False)))


def fit_minmax(series_by_channel: dict[str, list[DailySeries]], clip: bool = False) -> NormStats:
    """Fit per-channel min/max over every finite value of the given series."""
    ranges = {}
    for channel, series_list in series_by_channel.items():
        pool = [s.values[np.isfinite(s.values)] for s in series_list if len(s)]
        pool = [p for p in pool if p.size]
        if not pool:
            raise SeriesError(f"no finite values to fit channel {channel!r}")
        allv = np.concatenate(pool)
        ranges[channel] = (float(allv.min()), float(allv.max()))
    return NormStats(ranges, clip=clip)


@dataclass(frozen=True)
class SequenceDataset:
    """Normalized (input, target) windows ready for the forecaster.

    inputs:  (n_windows, 7, 7) in FEATURE_ORDER column order
    targets: (n_windows, 7) next-week consumption
    """

    inputs: np.ndarray
    targets: np.ndarray
    stats: NormStats
    window_ids: tuple[str, ...] = ()
    start_dates: tuple[dt.date, ...] = ()
    notes: tuple[str, ...] = ()

    def __post_init__(self):
        x = np.asarray(self.inputs, dtype=float)
        y = np.asarray(self.targets, dtype=float)
        if x.ndim != 3 or x.shape[1:] != (SEQUENCE_LENGTH, len(FEATURE_ORDER)):
            raise SeriesError(f"inputs must be (n, 7, 7), got {x.shape}")
        if y.shape != (x.shape[0], SEQUENCE_LENGTH):
            raise SeriesError(f"targets must be (n, 7), got {y.shape}")
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "targets", y)

    def __len__(self) -> int:
        return int(self.inputs.shape[0])


def _aligned_values(energy: DailySeries, weather) -> tuple[dt.date, np.ndarray, int]:
    """Crop all four series to their common span; returns (start, (4, n) array)."""
    series = (energy, *weather)
    if any(len(s) == 0 for s in series):
        return energy.start, np.zeros((4, 0)), 0
    start = max(s.start for s in series)
    end = min(s.end for s in series)
    n = (end - start).days + 1
    if n <= 0:
        return start, np.zeros((4, 0)), 0
    rows = [s.slice(start, end).values for s in series]
    return start, np.vstack(rows), n


def build_windows(
    energy: DailySeries,
    weather: tuple[DailySeries, DailySeries, DailySeries],
    stats: NormStats,
    building_id: str | None = None,
) -> SequenceDataset:
    """Slide a 14-day window over the aligned series (stride one day).

    Input row t carries day i+t consumption and weather plus day i+7+t
    weather; target row t is day i+7+t consumption.  A window is kept only
    when all 14 days are valid in every channel.
    """
    if len(weather) != 3:
        raise SeriesError("expected three weather series (air_temp, solar, wind)")
    bid = building_id if building_id is not None else energy.series_id
    start, aligned, n = _aligned_values(energy, weather)

    if n < WINDOW_SPAN:
        note = f"{bid}: only {n} aligned days, need {WINDOW_SPAN}"
        return SequenceDataset(
            np.zeros((0, SEQUENCE_LENGTH, len(FEATURE_ORDER))),
            np.zeros((0, SEQUENCE_LENGTH)),
            stats,
            notes=(note,),
        )

    scaled = np.vstack([stats.scale(ch, aligned[k]) for k, ch in enumerate(CHANNELS)])
    valid = np.isfinite(aligned).all(axis=0)

    inputs, targets, starts = [], [], []
    T = SEQUENCE_LENGTH
    for i in range(n - WINDOW_SPAN + 1):
        if not valid[i : i + WINDOW_SPAN].all():
            continue
        cur = slice(i, i + T)
        nxt = slice(i + T, i + WINDOW_SPAN)
        window = np.column_stack(
            [
                scaled[0, cur],  # consumption
                scaled[1, cur], scaled[2, cur], scaled[3, cur],  # current-week weather
                scaled[1, nxt], scaled[2, nxt], scaled[3, nxt],  # next-week weather
            ]
        )
        inputs.append(window)
        targets.append(scaled[0, nxt])
        starts.append(start + dt.timedelta(days=i))

    if not inputs:
        return SequenceDataset(
            np.zeros((0, T, len(FEATURE_ORDER))),
            np.zeros((0, T)),
            stats,
            notes=(f"{bid}: no run of {WINDOW_SPAN} consecutive valid days",),
        )
    return SequenceDataset(
        np.stack(inputs),
        np.stack(targets),
        stats,
        window_ids=tuple(bid for _ in inputs),
        start_dates=tuple(starts),
    )


def concat_datasets(parts: list[SequenceDataset]) -> SequenceDataset:
    """Concatenate window datasets that share normalization statistics."""
    parts = [p for p in parts if len(p)]
    if not parts:
        raise SeriesError("no non-empty datasets to concatenate")
    stats = parts[0].stats
    for p in parts[1:]:
        if p.stats.ranges != stats.ranges:
            raise SeriesError("cannot concatenate datasets with different normalization stats")
    return SequenceDataset(
        np.concatenate([p.inputs for p in parts]),
        np.concatenate([p.targets for p in parts]),
        stats,
        window_ids=tuple(w for p in parts for w in p.window_ids),
        start_dates=tuple(d for p in parts for d in p.start_dates),
        notes=tuple(n for p in parts for n in p.notes),
    )


def concat_raw(parts: list[RawSeries]) -> RawSeries:
    """Re-join raw chunks (e.g. from a chunked export) into one series."""
    if not parts:
        raise SeriesError("no raw chunks to concatenate")
    ts = np.concatenate([p.timestamps for p in parts])
    vals = np.concatenate([p.values for p in parts])
    order = np.argsort(ts, kind="stable")
    ts, vals = ts[order], vals[order]
    keep = np.ones(ts.size, dtype=bool)
    keep[:-1] = ts[:-1] != ts[1:]
    return RawSeries(parts[0].series_id, ts[keep], vals[keep], parts[0].unit)
