"""Panels of count series and the CSV panel format.

A panel file has one row per individual: an id followed by the counts at
t = 1..T. Trailing empty cells mark a shorter (ragged) series. A header row is
allowed and detected when its count cells are not integers.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import as_count_series

__all__ = ["PanelData", "LagStats", "PanelFormatError", "read_panel_csv", "write_panel_csv"]


class PanelFormatError(ValueError):
    """A panel file could not be parsed into non-negative integer series."""


@dataclass(frozen=True)
class LagStats:
    """Per-series sufficient statistics for an INAR(s*) likelihood.

    ``head_values``/``head_counts``: histogram of the first ``s`` values per series.
    ``pairs``/``pair_counts``: histogram of (x_{t-s}, x_t) transition pairs.
    """

    lag: int
    head_values: np.ndarray   # (U,)
    head_counts: np.ndarray   # (n, U)
    pair_lag: np.ndarray      # (P,)
    pair_cur: np.ndarray      # (P,)
    pair_counts: np.ndarray   # (n, P)


@dataclass
class PanelData:
    series: list[np.ndarray]
    ids: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.series = [as_count_series(s) for s in self.series]
        if not self.series:
            raise ValueError("a panel needs at least one series")
        if not self.ids:
            self.ids = [str(i + 1) for i in range(len(self.series))]
        if len(self.ids) != len(self.series):
            raise ValueError("ids and series differ in length")
        self.ids = [str(i) for i in self.ids]
        self._lag_cache: dict[int, LagStats] = {}

    @classmethod
    def from_array(cls, arr, ids: Sequence[str] | None = None) -> "PanelData":
        arr = np.asarray(arr)
        return cls([row for row in arr], list(ids) if ids is not None else [])

    def __len__(self) -> int:
        return len(self.series)

    def __getitem__(self, idx) -> np.ndarray:
        return self.series[idx]

    @property
    def n(self) -> int:
        return len(self.series)

    @property
    def lengths(self) -> np.ndarray:
        return np.array([s.size for s in self.series], dtype=np.int64)

    @property
    def n_obs(self) -> int:
        return int(self.lengths.sum())

    @property
    def is_rectangular(self) -> bool:
        return len(set(self.lengths.tolist())) == 1

    def max_count(self) -> int:
        return int(max(s.max() for s in self.series))

    def means(self) -> np.ndarray:
        return np.array([s.mean() for s in self.series])

    def grand_mean(self) -> float:
        return float(np.concatenate(self.series).mean())

    def subset(self, idx: Iterable[int]) -> "PanelData":
        idx = list(idx)
        return PanelData([self.series[i] for i in idx], [self.ids[i] for i in idx])

    def complete_only(self) -> "PanelData":
        """Drop series shorter than the longest one."""
        full = self.lengths.max()
        return self.subset(i for i, s in enumerate(self.series) if s.size == full)

    def to_matrix(self, fill: float = np.nan) -> np.ndarray:
        out = np.full((self.n, int(self.lengths.max())), fill, dtype=float)
        for i, s in enumerate(self.series):
            out[i, : s.size] = s
        return out

    def lag_stats(self, lag: int) -> LagStats:
        if lag not in self._lag_cache:
            self._lag_cache[lag] = self._build_lag_stats(lag)
        return self._lag_cache[lag]

    def _build_lag_stats(self, s: int) -> LagStats:
        n = self.n
        width = self.max_count() + 1
        head_rows, head_codes, pair_rows, pair_codes = [], [], [], []
        for i, x in enumerate(self.series):
            head = x[:s]
            head_rows.append(np.full(head.size, i))
            head_codes.append(head)
            if x.size > s:
                pair_rows.append(np.full(x.size - s, i))
                pair_codes.append(x[:-s] * width + x[s:])
        head_values, head_counts = _histogram(head_rows, head_codes, n)
        codes, pair_counts = _histogram(pair_rows, pair_codes, n)
        return LagStats(s, head_values, head_counts, codes // width, codes % width, pair_counts)


def _histogram(rows: list, codes: list, n: int) -> tuple[np.ndarray, np.ndarray]:
    if not codes:
        return np.zeros(0, dtype=np.int64), np.zeros((n, 0))
    rows_a = np.concatenate(rows)
    codes_a = np.concatenate(codes)
    uniq, col = np.unique(codes_a, return_inverse=True)
    counts = np.zeros((n, uniq.size))
    np.add.at(counts, (rows_a, col), 1.0)
    return uniq, counts


def _parse_int(cell: str) -> int | None:
    try:
        value = float(cell)
    except ValueError:
        return None
    if not np.isfinite(value) or value != int(value):
        return None
    return int(value)


def read_panel_csv(source, complete_only: bool = False) -> PanelData:
    """Read a panel CSV from a path or a text stream."""
    if isinstance(source, (str, Path)):
        with open(source, newline="") as fh:
            text = fh.read()
    else:
        text = source.read()
    rows = [r for r in csv.reader(io.StringIO(text)) if any(c.strip() for c in r)]
    if not rows:
        raise PanelFormatError("panel file has no rows")
    first_cells = [c.strip() for c in rows[0][1:] if c.strip()]
    if first_cells and any(_parse_int(c) is None for c in first_cells):
        rows = rows[1:]
    if not rows:
        raise PanelFormatError("panel file has a header but no data rows")
    ids, series = [], []
    for lineno, row in enumerate(rows, start=1):
        cells = [c.strip() for c in row[1:]]
        while cells and cells[-1] == "":
            cells.pop()
        if not cells:
            raise PanelFormatError(f"row {lineno} ({row[0]!r}) has no counts")
        values = []
        for c in cells:
            v = _parse_int(c) if c else None
            if v is None or v < 0:
                raise PanelFormatError(f"row {lineno} ({row[0]!r}): {c!r} is not a non-negative integer")
            values.append(v)
        ids.append(row[0].strip())
        series.append(np.array(values, dtype=np.int64))
    panel = PanelData(series, ids)
    return panel.complete_only() if complete_only else panel


def write_panel_csv(panel: PanelData, dest, header: bool = True) -> None:
    width = int(panel.lengths.max())
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    if header:
        writer.writerow(["id"] + [f"t{t}" for t in range(1, width + 1)])
    for sid, x in zip(panel.ids, panel.series):
        writer.writerow([sid] + x.tolist() + [""] * (width - x.size))
    if isinstance(dest, (str, Path)):
        Path(dest).write_text(buf.getvalue())
    else:
        dest.write(buf.getvalue())
