"""Time-indexed tables of ESD states and their CSV form."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

CSV_HEADER = ("t", "x1", "x2", "x3", "x4")


class CsvFormatError(ValueError):
    def __init__(self, message: str, row: int | None = None):
        super().__init__(message if row is None else f"row {row}: {message}")
        self.row = row


@dataclass(frozen=True, eq=False)
class SolutionTable:
    times: np.ndarray
    states: np.ndarray

    def __post_init__(self):
        times = np.array(self.times, dtype=np.float64).reshape(-1)
        states = np.array(self.states, dtype=np.float64)
        if states.ndim != 2 or states.shape != (times.size, 4):
            raise ValueError(f"states must have shape ({times.size}, 4), got {states.shape}")
        if times.size > 1 and not np.all(np.diff(times) > 0):
            raise ValueError("times must be strictly increasing")
        if not (np.all(np.isfinite(times)) and np.all(np.isfinite(states))):
            raise ValueError("solution table contains non-finite entries")
        times.flags.writeable = False
        states.flags.writeable = False
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", states)

    def __len__(self) -> int:
        return self.times.size

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(CSV_HEADER) + "\n")
        for t, row in zip(self.times, self.states):
            buf.write(",".join(f"{v:.17g}" for v in (t, *row)) + "\n")
        return buf.getvalue()

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv())

    @classmethod
    def from_csv(cls, text: str) -> "SolutionTable":
        reader = csv.reader(io.StringIO(text))
        try:
            header = next(reader)
        except StopIteration:
            raise CsvFormatError("empty file", 1) from None
        if tuple(h.strip() for h in header) != CSV_HEADER:
            raise CsvFormatError(f"expected header {','.join(CSV_HEADER)}", 1)
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 5:
                raise CsvFormatError(f"expected 5 fields, got {len(row)}", lineno)
            try:
                values = [float(v) for v in row]
            except ValueError:
                raise CsvFormatError(f"unparseable number in {row!r}", lineno) from None
            if not all(np.isfinite(values)):
                raise CsvFormatError("non-finite value", lineno)
            rows.append(values)
        if not rows:
            raise CsvFormatError("no data rows", 2)
        data = np.array(rows)
        for i in range(1, data.shape[0]):
            if not data[i, 0] > data[i - 1, 0]:
                raise CsvFormatError("times must be strictly increasing", i + 2)
        return cls(data[:, 0], data[:, 1:])

    @classmethod
    def read_csv(cls, path) -> "SolutionTable":
        return cls.from_csv(Path(path).read_text())
