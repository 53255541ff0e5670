"""Dataset ingestion, rank-based normalization, and window construction.

Columns are normalized with an empirical-CDF quantile map onto [0, 1]
(plotting positions (i - 0.5)/n, linear interpolation, invertible on the
fit range).  Windowed samples pair each target value with the trailing
``window`` steps of every input column.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np


class PipelineError(ValueError):
    """Schema violation, malformed file, or invalid transform input."""


class QuantileTransform:
    """Monotone map from a fitted sample to (approximately) uniform [0, 1].

    The i-th smallest fit value maps to (i - 0.5)/n; tied values share the
    average of their block's positions.  Between fit values the map is
    linear; outside the fit range it is clamped to the extreme positions.
    The inverse is the piecewise-linear inverse, clamped to the fit range.
    """

    def __init__(self, references: np.ndarray, positions: np.ndarray, n: int):
        self.references = references
        self.positions = positions
        self.n = n

    @classmethod
    def fit(cls, values) -> "QuantileTransform":
        values = np.asarray(values, dtype=float).ravel()
        if values.size == 0:
            raise PipelineError("cannot fit a quantile transform to an empty column")
        if values.size < 2:
            raise PipelineError("need at least 2 values to fit")
        if not np.all(np.isfinite(values)):
            raise PipelineError("non-finite values in fit data")
        ordered = np.sort(values)
        n = ordered.size
        pos = (np.arange(1, n + 1) - 0.5) / n
        refs, start = np.unique(ordered, return_index=True)
        # average plotting position over each tied block
        ends = np.append(start[1:], n)
        avg = np.array([pos[a:b].mean() for a, b in zip(start, ends)])
        return cls(refs, avg, n)

    @property
    def is_constant(self) -> bool:
        return self.references.size < 2

    def transform(self, v):
        v = np.asarray(v, dtype=float)
        if self.is_constant:
            return np.full_like(v, 0.5)
        return np.interp(v, self.references, self.positions)

    def inverse(self, u):
        u = np.asarray(u, dtype=float)
        if np.any((u < 0) | (u > 1)):
            raise PipelineError("inverse transform input must lie in [0, 1]")
        if self.is_constant:
            return np.full_like(u, self.references[0])
        return np.interp(u, self.positions, self.references)


def fit_transform(values) -> QuantileTransform:
    """Fit the empirical-CDF normalizer to one column of training values."""
    return QuantileTransform.fit(values)


def fit_transforms(table: dict[str, np.ndarray], names,
                   rows: slice | None = None) -> dict[str, QuantileTransform]:
    """Fit one transform per named column, restricted to ``rows``."""
    sl = rows if rows is not None else slice(None)
    return {name: QuantileTransform.fit(table[name][sl]) for name in names}


def apply_transforms(table: dict[str, np.ndarray],
                     transforms: dict[str, QuantileTransform]
                     ) -> dict[str, np.ndarray]:
    out = dict(table)
    for name, t in transforms.items():
        out[name] = t.transform(table[name])
    return out


@dataclass
class WindowedDataset:
    """Trailing-window inputs paired with same-time targets.

    ``windows[k]`` holds the normalized values of every input at times
    ``time_index[k] - window + 1 .. time_index[k]`` (rows follow
    ``input_names``); ``targets[k]`` is the normalized target at
    ``time_index[k]``.
    """

    windows: np.ndarray        # (n, n_inputs, window)
    targets: np.ndarray        # (n,)
    time_index: np.ndarray     # (n,)
    input_names: tuple[str, ...]
    target_name: str
    window: int
    transforms: dict[str, QuantileTransform] = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.targets.shape[0]

    def restrict(self, lo: int, hi: int) -> "WindowedDataset":
        """Samples whose target time lies in [lo, hi)."""
        mask = (self.time_index >= lo) & (self.time_index < hi)
        return WindowedDataset(self.windows[mask], self.targets[mask],
                               self.time_index[mask], self.input_names,
                               self.target_name, self.window, self.transforms)


def make_windows(table: dict[str, np.ndarray], input_names, target_name: str,
                 window: int,
                 transforms: dict[str, QuantileTransform] | None = None
                 ) -> WindowedDataset:
    """Build one sample per time step t in [window - 1, T - 1].

    When ``transforms`` is given every column is normalized first; the
    transforms are carried on the result so predictions can be mapped back.
    """
    input_names = tuple(input_names)
    for name in input_names + (target_name,):
        if name not in table:
            raise PipelineError(f"missing column {name!r}")
    t_len = len(table[target_name])
    if window < 1:
        raise PipelineError("window must be >= 1")
    if t_len < window:
        raise PipelineError(f"{t_len} rows is shorter than window {window}")
    norm = apply_transforms(table, transforms) if transforms else dict(table)
    stacked = np.stack([np.asarray(norm[name], dtype=float) for name in input_names])
    n = t_len - window + 1
    windows = np.empty((n, len(input_names), window))
    for k in range(window):
        windows[:, :, k] = stacked[:, k:k + n].T
    targets = np.asarray(norm[target_name], dtype=float)[window - 1:]
    time_index = np.arange(window - 1, t_len)
    return WindowedDataset(windows, targets, time_index, input_names,
                           target_name, window, transforms or {})


# ---------------------------------------------------------------------------
# CSV


def read_csv(path, required=None) -> dict[str, np.ndarray]:
    """Read a numeric CSV with a header into name -> float64 columns."""
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise PipelineError(f"{path}: file is empty") from None
            header = [h.strip() for h in header]
            rows = []
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != len(header):
                    raise PipelineError(
                        f"{path}:{lineno}: expected {len(header)} cells, "
                        f"got {len(row)}"
                    )
                try:
                    rows.append([float(cell) for cell in row])
                except ValueError:
                    bad = next(c for c in row if not _is_float(c))
                    col = header[row.index(bad)]
                    raise PipelineError(
                        f"{path}:{lineno}: non-numeric cell {bad!r} "
                        f"in column {col!r}"
                    ) from None
    except OSError as exc:
        raise PipelineError(f"cannot read {path}: {exc}") from exc
    if required is not None:
        missing = [name for name in required if name not in header]
        if missing:
            raise PipelineError(f"{path}: missing columns {missing}")
    data = np.array(rows, dtype=float) if rows else np.empty((0, len(header)))
    return {name: data[:, i].copy() for i, name in enumerate(header)}


def _is_float(cell: str) -> bool:
    try:
        float(cell)
        return True
    except ValueError:
        return False


def write_csv(table: dict[str, np.ndarray], path) -> None:
    """Write columns in dict order; %.17g keeps doubles lossless."""
    names = list(table)
    columns = [np.asarray(table[n], dtype=float) for n in names]
    n_rows = columns[0].shape[0] if columns else 0
    if any(c.shape[0] != n_rows for c in columns):
        raise PipelineError("ragged columns")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(names)
        for i in range(n_rows):
            writer.writerow(["%.17g" % c[i] for c in columns])
