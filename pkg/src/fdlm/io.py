"""CSV ingestion of hourly readings and the CSV/JSON writers used by the CLI."""

from __future__ import annotations

import csv
import datetime as dt
import json
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import IngestError
from .kernel import Grid
from .statespace import FunctionalSeries

__all__ = [
    "IngestReport",
    "ingest",
    "parse_timestamp",
    "write_series_csv",
    "fmt_float",
    "write_csv",
    "read_draws_csv",
    "write_json",
    "DRAWS_HEADER",
]

DRAWS_HEADER = ("iter", "sigma2_v", "log_beta_v", "sigma2_w", "log_beta_w")


def fmt_float(x) -> str:
    """17 significant digits, enough for a lossless float64 round trip."""
    return format(float(x), ".17g")


def parse_timestamp(text: str) -> dt.datetime:
    s = text.strip()
    if s.endswith("Z"):
        s = s[:-1] + "+00:00"
    try:
        return dt.datetime.fromisoformat(s)
    except ValueError:
        raise IngestError(f"unparseable timestamp {text!r}") from None


@dataclass
class IngestReport:
    days: int
    rows_dropped: int
    total_rows: int
    grid: Grid
    first_timestamp: Optional[str]
    last_timestamp: Optional[str]
    incomplete_days: List[Tuple[str, int]] = field(default_factory=list)

    def to_dict(self):
        return {
            "days": self.days,
            "rows_dropped": self.rows_dropped,
            "total_rows": self.total_rows,
            "grid_size": len(self.grid),
            "first_timestamp": self.first_timestamp,
            "last_timestamp": self.last_timestamp,
            "incomplete_days": [{"date": d, "readings": n} for d, n in self.incomplete_days],
        }


def ingest(path, d: int = 24, log_transform: bool = False):
    """Reshape a ``timestamp,value`` CSV into one curve per calendar day.

    Readings are grouped by the calendar date of their timestamp and sorted in
    time. Days with exactly ``d`` distinct readings become curves on the
    uniform grid of size ``d``; every other day is dropped and listed in the
    report. Returns ``(FunctionalSeries, IngestReport)``.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"timestamp", "value"} <= set(reader.fieldnames):
            raise IngestError(f"{path}: expected columns 'timestamp,value', got {reader.fieldnames}")
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            ts = parse_timestamp(rec["timestamp"])
            try:
                value = float(rec["value"])
            except (TypeError, ValueError):
                raise IngestError(f"{path}:{lineno}: value {rec['value']!r} is not a number") from None
            if not math.isfinite(value):
                raise IngestError(f"{path}:{lineno}: value is not finite")
            if log_transform:
                if value <= 0:
                    raise IngestError(f"{path}:{lineno}: value {value} must be positive for the log transform")
                value = math.log(value)
            rows.append((ts, value))

    by_day: "OrderedDict[dt.date, list]" = OrderedDict()
    for ts, value in sorted(rows, key=lambda r: r[0]):
        by_day.setdefault(ts.date(), []).append((ts, value))

    curves, labels, incomplete = [], [], []
    for day, readings in by_day.items():
        distinct = len({ts for ts, _ in readings})
        if len(readings) == d and distinct == d:
            curves.append([v for _, v in readings])
            labels.append(day.isoformat())
        else:
            incomplete.append((day.isoformat(), len(readings)))

    grid = Grid.uniform(d)
    if not curves:
        raise IngestError(f"{path}: no complete day with {d} readings")
    dropped = sum(n for _, n in incomplete)
    stamps = sorted(ts for ts, _ in rows)
    report = IngestReport(
        days=len(curves),
        rows_dropped=dropped,
        total_rows=len(rows),
        grid=grid,
        first_timestamp=stamps[0].isoformat(),
        last_timestamp=stamps[-1].isoformat(),
        incomplete_days=incomplete,
    )
    return FunctionalSeries(grid, np.array(curves), tuple(labels)), report


def write_series_csv(path, series: FunctionalSeries, start: dt.date = dt.date(2000, 1, 1)):
    """Write curves in the ``timestamp,value`` schema accepted by :func:`ingest`.

    Curve t is placed on day ``start + t``; reading j at ``j / d`` of the day.
    """
    d = len(series.grid)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", "value"])
        for t, row in enumerate(series.curves):
            day = dt.datetime.combine(start + dt.timedelta(days=t), dt.time())
            for j, value in enumerate(row):
                stamp = day + dt.timedelta(microseconds=round(86_400_000_000 * j / d))
                w.writerow([stamp.isoformat(), fmt_float(value)])


def write_csv(path, header: Sequence[str], rows):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt_float(x) if isinstance(x, (float, np.floating)) else x for x in row])


def read_draws_csv(path):
    """Read a draws file; returns ``(iterations, draws)``."""
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader, ()))
        if header != DRAWS_HEADER:
            raise IngestError(f"{path}: expected header {','.join(DRAWS_HEADER)}")
        data = [[float(x) for x in row] for row in reader if row]
    arr = np.array(data, dtype=float).reshape(-1, len(DRAWS_HEADER))
    return arr[:, 0].astype(np.int64), arr[:, 1:]


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n")
