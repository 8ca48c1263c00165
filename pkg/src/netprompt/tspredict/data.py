"""Milan-format ingestion, 4x4 grid aggregation, day-aligned splits."""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass
from datetime import date, datetime, timedelta, timezone
from pathlib import Path

import numpy as np
import pandas as pd

from netprompt import _kernels

logger = logging.getLogger(__name__)

MS_PER_HOUR = 3_600_000
HOURS_PER_DAY = 24


class IngestError(ValueError):
    pass


class SchemaError(ValueError):
    pass


class SplitError(ValueError):
    pass


@dataclass
class RawCells:
    """Hourly traffic per grid cell; row ``i`` is cell id ``i + 1``."""

    values: np.ndarray            # (grid_width**2, n_hours)
    start_hour: int               # epoch hours of column 0
    grid_width: int
    n_rows: int = 0
    n_malformed: int = 0
    present: np.ndarray | None = None

    @property
    def start(self) -> datetime:
        return datetime.fromtimestamp(self.start_hour * 3600, tz=timezone.utc)


@dataclass
class TrafficSeries:
    bs_id: int
    start: datetime               # UTC, on the hour
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if not np.all(np.isfinite(self.values)) or np.any(self.values < 0):
            raise ValueError("traffic values must be finite and non-negative")

    def __len__(self) -> int:
        return self.values.size

    def timestamps(self) -> list[datetime]:
        return [self.start + timedelta(hours=h) for h in range(self.values.size)]

    def days(self) -> np.ndarray:
        """``(n_days, 24)`` view; requires a midnight start and whole days."""
        if self.start.hour != 0 or self.values.size % HOURS_PER_DAY:
            raise SplitError("series is not day-aligned")
        return self.values.reshape(-1, HOURS_PER_DAY)

    def dates(self) -> list[date]:
        return [(self.start + timedelta(days=d)).date() for d in range(self.values.size // HOURS_PER_DAY)]


def _sniff_delimiter(first_line: str) -> str:
    if "\t" in first_line:
        return "\t"
    if "," in first_line:
        return ","
    return r"\s+"


def ingest_milan(path, grid_width: int = 100, max_malformed_frac: float = 0.01) -> RawCells:
    """Bin ``(cell_id, epoch_ms, traffic)`` rows into hourly per-cell sums.

    Extra columns are ignored and a non-numeric first line is treated as a
    header.  Malformed rows are counted; more than ``max_malformed_frac`` of
    them aborts the ingest.
    """
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
    if not first.strip():
        raise IngestError(f"{path} is empty")
    sep = _sniff_delimiter(first)
    df = pd.read_csv(path, sep=sep, header=None, usecols=[0, 1, 2], names=["cell", "ts", "value"],
                     dtype=str, keep_default_na=False, engine="python" if sep == r"\s+" else "c",
                     skip_blank_lines=True, index_col=False)
    if df.empty:
        raise IngestError(f"{path} has no rows")
    cell = pd.to_numeric(df["cell"], errors="coerce").to_numpy()
    ts = pd.to_numeric(df["ts"], errors="coerce").to_numpy()
    val = pd.to_numeric(df["value"], errors="coerce").to_numpy()
    if len(cell) > 1 and not np.isfinite(cell[0]):
        cell, ts, val = cell[1:], ts[1:], val[1:]
    ok = np.isfinite(cell) & np.isfinite(ts) & np.isfinite(val) & (val >= 0) & (cell == np.round(cell))
    n_rows = ok.size
    n_bad = int(n_rows - ok.sum())
    if n_rows == 0 or n_bad == n_rows:
        raise IngestError(f"{path} has no valid rows")
    if n_bad / n_rows > max_malformed_frac:
        raise IngestError(f"{n_bad} of {n_rows} rows malformed (> {max_malformed_frac:.0%})")
    if n_bad:
        logger.warning("skipped %d malformed rows of %d in %s", n_bad, n_rows, path)
    cell = cell[ok].astype(np.int64)
    n_cells = grid_width * grid_width
    if cell.min() < 1 or cell.max() > n_cells:
        raise SchemaError(f"cell ids must lie in 1..{n_cells}, found {cell.min()}..{cell.max()}")
    hour = np.floor_divide(ts[ok].astype(np.int64), MS_PER_HOUR)
    h0 = int(hour.min())
    n_hours = int(hour.max()) - h0 + 1
    values = _kernels.bin_hourly(cell - 1, hour - h0, val[ok], n_cells, n_hours)
    present = np.zeros(n_cells, dtype=bool)
    present[cell - 1] = True
    return RawCells(values, h0, grid_width, n_rows, n_bad, present)


def aggregate_grid(raw: RawCells | np.ndarray, block: int = 4, start: datetime | None = None) -> list[TrafficSeries]:
    """Sum ``block x block`` squares of cells into one series each.

    Cell ``(r, c)`` feeds aggregate ``(r // block, c // block)`` whose id is
    ``(r // block) * (width // block) + c // block``.
    """
    if isinstance(raw, RawCells):
        values, width, present = raw.values, raw.grid_width, raw.present
        start = raw.start
    else:
        values = np.asarray(raw, dtype=np.float64)
        if values.ndim == 3:
            values = values.reshape(values.shape[0] * values.shape[1], values.shape[2])
        width = int(round(math.sqrt(values.shape[0])))
        present = None
        start = start or datetime(2013, 11, 1, tzinfo=timezone.utc)
    if width * width != values.shape[0]:
        raise SchemaError("raw cells do not form a square grid")
    if width % block:
        raise SchemaError(f"block {block} does not divide grid width {width}")
    if present is not None and not present.all():
        warnings.warn(f"{int((~present).sum())} cells have no rows; filled with zeros", stacklevel=2)
    n_hours = values.shape[1]
    nb = width // block
    agg = values.reshape(nb, block, nb, block, n_hours).sum(axis=(1, 3))
    return [TrafficSeries(R * nb + C, start, agg[R, C]) for R in range(nb) for C in range(nb)]


@dataclass(frozen=True)
class SplitSpec:
    train_frac: float = 0.70
    val_frac: float = 0.10
    test_frac: float = 0.20
    min_days: int = 10

    def __post_init__(self):
        fr = (self.train_frac, self.val_frac, self.test_frac)
        if any(f < 0 for f in fr) or not math.isclose(sum(fr), 1.0, abs_tol=1e-9):
            raise SplitError("split fractions must be non-negative and sum to 1")

    def day_counts(self, n_days: int) -> tuple[int, int, int]:
        n_train = int(math.floor(self.train_frac * n_days + 1e-9))
        n_val = int(math.floor(self.val_frac * n_days + 1e-9))
        return n_train, n_val, n_days - n_train - n_val


def split_series(series: TrafficSeries, spec: SplitSpec = SplitSpec()):
    """Contiguous whole-day train/val/test split.

    A leading partial day (start not at midnight) and a trailing partial
    day are dropped.
    """
    offset = (HOURS_PER_DAY - series.start.hour) % HOURS_PER_DAY
    n_days = max(0, (len(series) - offset) // HOURS_PER_DAY)
    if n_days < spec.min_days:
        raise SplitError(f"series covers {n_days} whole days, need >= {spec.min_days}")
    n_train, n_val, n_test = spec.day_counts(n_days)
    day0 = series.start + timedelta(hours=offset)
    out = []
    first = 0
    for n in (n_train, n_val, n_test):
        lo = offset + first * HOURS_PER_DAY
        hi = lo + n * HOURS_PER_DAY
        out.append(TrafficSeries(series.bs_id, day0 + timedelta(days=first), series.values[lo:hi]))
        first += n
    return tuple(out)


@dataclass(frozen=True)
class MinMaxScaler:
    """Affine map of ``[lo, hi]`` onto ``[0, top]``."""

    lo: float
    hi: float
    top: float = 100.0

    @classmethod
    def fit(cls, values, top: float = 100.0) -> "MinMaxScaler":
        v = np.asarray(values, dtype=np.float64)
        return cls(float(v.min()), float(v.max()), top)

    @property
    def span(self) -> float:
        return self.hi - self.lo if self.hi > self.lo else 1.0

    def transform(self, values) -> np.ndarray:
        return (np.asarray(values, dtype=np.float64) - self.lo) / self.span * self.top

    def inverse(self, values) -> np.ndarray:
        return np.asarray(values, dtype=np.float64) / self.top * self.span + self.lo


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------

def synthetic_cells(n_days: int, grid_width: int = 100, seed: int = 0, noise: float = 0.1) -> np.ndarray:
    """``(grid_width**2, n_days*24)`` non-negative traffic with a daily cycle."""
    rng = np.random.default_rng(seed)
    t = np.arange(n_days * HOURS_PER_DAY)
    daily = 1.0 + 0.6 * np.sin(2 * np.pi * (t - 8) / 24.0) + 0.2 * np.sin(4 * np.pi * t / 24.0)
    weekly = 1.0 - 0.15 * ((t // 24) % 7 >= 5)
    level = rng.gamma(2.0, 1.0, size=(grid_width * grid_width, 1))
    base = level * (daily * weekly)[None, :]
    return np.maximum(base * (1.0 + noise * rng.standard_normal(base.shape)), 0.0)


def write_milan_file(path, cells: np.ndarray, start: datetime, sep: str = "\t",
                     cell_ids=None, rows_per_hour: int = 1) -> int:
    """Write cells as Milan-style rows; each hourly value is split over ``rows_per_hour`` rows."""
    cells = np.asarray(cells, dtype=np.float64)
    n_cells, n_hours = cells.shape
    ids = np.arange(1, n_cells + 1) if cell_ids is None else np.asarray(cell_ids)
    t0 = int(start.timestamp() * 1000)
    step = MS_PER_HOUR // rows_per_hour
    # Row order: cell, hour, sub-row; values written with round-trip precision.
    hours = np.arange(n_hours)
    ts = (t0 + hours[:, None] * MS_PER_HOUR + np.arange(rows_per_hour)[None, :] * step).ravel()
    frame = pd.DataFrame({
        "cell": np.repeat(ids, n_hours * rows_per_hour),
        "ts": np.tile(ts, n_cells),
        "value": np.repeat(cells / rows_per_hour, rows_per_hour, axis=1).ravel(),
    })
    frame.to_csv(path, sep=sep, header=False, index=False, float_format="%.17g", lineterminator="\n")
    n = len(frame)
    return n
