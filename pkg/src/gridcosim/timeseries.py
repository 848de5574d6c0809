"""Sampled input signals read from ``time_s,value`` CSV files."""

from __future__ import annotations

import bisect
import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .polynomial import PolynomialSegment

INTERPOLATIONS = ("hold", "linear")


class TimeSeriesError(ValueError):
    pass


@dataclass
class TimeSeries:
    """Ordered samples with hold or linear interpolation.

    Outside the sampled range the first/last value is held.
    """

    times: np.ndarray
    values: np.ndarray
    interpolation: str = "linear"
    name: str = ""
    _times_list: list = field(init=False, repr=False)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.times.ndim != 1 or self.times.shape != self.values.shape:
            raise TimeSeriesError("times and values must be 1-D and the same length")
        if self.times.size == 0:
            raise TimeSeriesError("empty time series")
        if np.any(np.diff(self.times) <= 0):
            bad = int(np.argmax(np.diff(self.times) <= 0)) + 1
            raise TimeSeriesError(
                f"{self.name or 'series'}: timestamps must be strictly increasing "
                f"(sample {bad}: {self.times[bad]!r} after {self.times[bad - 1]!r})"
            )
        if self.interpolation not in INTERPOLATIONS:
            raise TimeSeriesError(f"unknown interpolation {self.interpolation!r}")
        self._times_list = self.times.tolist()

    @classmethod
    def from_csv(cls, path, interpolation: str = "linear") -> "TimeSeries":
        path = Path(path)
        times, values = [], []
        with path.open(newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or [h.strip() for h in header] != ["time_s", "value"]:
                raise TimeSeriesError(f"{path}: expected header 'time_s,value', got {header}")
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                try:
                    times.append(float(row[0]))
                    values.append(float(row[1]))
                except (ValueError, IndexError) as exc:
                    raise TimeSeriesError(f"{path}:{lineno}: bad row {row!r}") from exc
        return cls(np.array(times), np.array(values), interpolation, name=path.stem)

    def to_csv(self, path) -> None:
        write_series_csv(path, self.times, self.values)

    def _index(self, t: float) -> int:
        # index of the last sample with time <= t, or -1 before the first
        return bisect.bisect_right(self._times_list, t) - 1

    def __call__(self, t: float) -> float:
        return self.segment_at(t)(t)

    def segment_at(self, t: float) -> PolynomialSegment:
        """The polynomial piece in force at ``t`` (order 0 or 1)."""
        i = self._index(t)
        if i < 0:
            return PolynomialSegment.constant(self.values[0], t)
        if i >= len(self.times) - 1 or self.interpolation == "hold":
            return PolynomialSegment.constant(self.values[i], self.times[i] if i >= 0 else t)
        t0, t1 = self.times[i], self.times[i + 1]
        v0, v1 = self.values[i], self.values[i + 1]
        return PolynomialSegment((v0, (v1 - v0) / (t1 - t0)), t0)

    def next_change(self, t: float) -> Optional[float]:
        """First breakpoint strictly after ``t`` (None past the last sample)."""
        i = bisect.bisect_right(self._times_list, t)
        if i >= len(self._times_list):
            return None
        return self._times_list[i]

    def breakpoints(self) -> Iterable[float]:
        return iter(self._times_list)


def format_time(seconds: float) -> str:
    return f"{seconds:.9f}"


def write_series_csv(path, times, values) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write("time_s,value\n")
        for t, v in zip(times, values):
            fh.write(f"{format_time(float(t))},{float(v)!r}\n")
