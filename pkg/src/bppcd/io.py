"""Reading ``time,value`` series files."""

from __future__ import annotations

import csv
import datetime as dt
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError


@dataclass(frozen=True)
class SeriesFile:
    """Parsed series, sorted by time. ``lines`` are 1-based source line numbers."""

    times: list
    values: np.ndarray
    lines: list

    def __len__(self):
        return len(self.times)


def _parse_time(text: str):
    text = text.strip()
    try:
        v = float(text)
    except ValueError:
        pass
    else:
        if not math.isfinite(v):
            raise ValueError("non-finite time")
        return v
    if "T" in text or " " in text:
        return dt.datetime.fromisoformat(text)
    return dt.date.fromisoformat(text)


def read_series(path) -> SeriesFile:
    """Parse a CSV with a ``time,value`` header; ``#`` lines are comments.

    Times are ISO-8601 dates/datetimes or day counts, not mixed. Rows may come
    in any order; duplicate times and unparsable or non-finite entries are
    rejected with their line numbers.
    """
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise InvalidInputError(f"cannot read {path}: {exc}") from exc
    with fh:
        numbered = [(i, line) for i, line in enumerate(fh, start=1)
                    if line.strip() and not line.lstrip().startswith("#")]
    if not numbered:
        raise InvalidInputError(f"{path}: no header line")
    reader = csv.reader([line for _, line in numbered])
    header = [h.strip().lower() for h in next(reader)]
    if "time" not in header or "value" not in header:
        raise InvalidInputError(f"{path}: header must contain 'time' and 'value' columns, got {header}")
    it, iv = header.index("time"), header.index("value")

    times, values, lines, bad = [], [], [], []
    for (lineno, _), row in zip(numbered[1:], reader):
        try:
            t = _parse_time(row[it])
            v = float(row[iv])
            if not math.isfinite(v):
                raise ValueError("non-finite value")
        except (IndexError, ValueError):
            bad.append(lineno)
            continue
        times.append(t)
        values.append(v)
        lines.append(lineno)
    if bad:
        raise InvalidInputError(f"{path}: unparsable or non-finite entries on lines {bad[:20]}")
    if not times:
        raise InvalidInputError(f"{path}: no data rows")
    kinds = {type(t) for t in times}
    if len(kinds) > 1:
        raise InvalidInputError(f"{path}: mixed time formats {sorted(k.__name__ for k in kinds)}")

    order = sorted(range(len(times)), key=lambda i: times[i])
    times = [times[i] for i in order]
    lines = [lines[i] for i in order]
    dups = sorted({lines[i] for i in range(1, len(times)) if times[i] == times[i - 1]}
                  | {lines[i - 1] for i in range(1, len(times)) if times[i] == times[i - 1]})
    if dups:
        raise InvalidInputError(f"{path}: duplicate times on lines {dups[:20]}")
    return SeriesFile(times, np.asarray(values, dtype=float)[order], lines)


def format_time(t):
    """JSON/CSV friendly rendering of a raw time."""
    if isinstance(t, (dt.date, dt.datetime)):
        return t.isoformat()
    return float(t)
