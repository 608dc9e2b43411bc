"""Multi-run sensor data: CSV ingestion, z-scoring and window stacking.

A stacked window for end time ``t`` is the concatenation of the ``t_w`` columns
``t - t_w + 1 .. t`` of a run, oldest first, so entry ``j * N + n`` holds sensor
``n`` at offset ``j``. Every ``(N * t_w)``-square matrix in the package uses this
layout; the ``(i, i + lag)`` block of such a matrix connects timestamps ``lag``
apart.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

STD_FLOOR = 1e-8


class DataError(ValueError):
    """Base class for ingestion problems."""


class SchemaError(DataError):
    pass


class AlignmentError(DataError):
    pass


class ParseError(DataError):
    pass


class EmptyInputError(DataError):
    pass


class WindowSizeError(DataError):
    pass


@dataclass(frozen=True)
class RunDataset:
    """R aligned runs, each an ``(N, T)`` array."""

    runs: tuple[np.ndarray, ...]
    sensor_names: tuple[str, ...]
    run_ids: tuple[str, ...]

    def __post_init__(self):
        runs = tuple(np.array(r, dtype=float) for r in self.runs)
        if not runs:
            raise EmptyInputError("dataset has no runs")
        shape = runs[0].shape
        if len(shape) != 2:
            raise DataError(f"run matrices must be 2-D (sensors x timestamps), got {shape}")
        for rid, r in zip(self.run_ids, runs):
            if r.shape != shape:
                raise AlignmentError(
                    f"run {rid!r} has shape {r.shape}, expected {shape}"
                )
            if not np.all(np.isfinite(r)):
                raise DataError(f"run {rid!r} contains non-finite values")
        if len(self.sensor_names) != shape[0]:
            raise SchemaError(
                f"{len(self.sensor_names)} sensor names for {shape[0]} sensor rows"
            )
        if len(self.run_ids) != len(runs):
            raise SchemaError("run_ids and runs differ in length")
        for r in runs:
            r.setflags(write=False)
        object.__setattr__(self, "runs", runs)
        object.__setattr__(self, "sensor_names", tuple(self.sensor_names))
        object.__setattr__(self, "run_ids", tuple(str(r) for r in self.run_ids))

    @property
    def n_sensors(self) -> int:
        return self.runs[0].shape[0]

    @property
    def n_timestamps(self) -> int:
        return self.runs[0].shape[1]

    @property
    def n_runs(self) -> int:
        return len(self.runs)

    def as_array(self) -> np.ndarray:
        """Stack runs into an ``(R, N, T)`` array."""
        return np.stack(self.runs)

    def subset(self, indices: Sequence[int]) -> "RunDataset":
        return RunDataset(
            runs=tuple(self.runs[i] for i in indices),
            sensor_names=self.sensor_names,
            run_ids=tuple(self.run_ids[i] for i in indices),
        )

    def replace_runs(self, runs: Sequence[np.ndarray]) -> "RunDataset":
        return RunDataset(runs=tuple(runs), sensor_names=self.sensor_names, run_ids=self.run_ids)


@dataclass(frozen=True)
class StandardizationStats:
    mean: np.ndarray
    stddev: np.ndarray
    sensor_names: tuple[str, ...] = field(default=())

    def to_json_dict(self) -> dict:
        names = self.sensor_names or tuple(str(i) for i in range(len(self.mean)))
        return {
            name: {"mean": float(m), "stddev": float(s)}
            for name, m, s in zip(names, self.mean, self.stddev)
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "StandardizationStats":
        names = tuple(obj)
        mean = np.array([obj[n]["mean"] for n in names], dtype=float)
        std = np.array([obj[n]["stddev"] for n in names], dtype=float)
        return cls(mean=mean, stddev=np.maximum(std, STD_FLOOR), sensor_names=names)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=2))

    @classmethod
    def load(cls, path: str | Path) -> "StandardizationStats":
        return cls.from_json_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class StackedWindow:
    values: np.ndarray
    t: int  # 1-based end timestamp
    r: int  # run index


def _run_sort_key(run_id: str):
    # numeric ids sort numerically, everything else lexically after them
    try:
        return (0, float(run_id), run_id)
    except ValueError:
        return (1, 0.0, run_id)


def load_runs(source: str | Path, sensors: Sequence[str] | None = None) -> RunDataset:
    """Read long-format CSV(s) with header ``run,timestamp,<sensor...>``.

    ``source`` may be a single file or a directory of ``*.csv`` files which are
    concatenated. When ``sensors`` is given those columns are required (and
    selected, in that order); otherwise every column after ``timestamp`` is used.
    """
    source = Path(source)
    if not source.exists():
        raise FileNotFoundError(source)
    files = sorted(source.glob("*.csv")) if source.is_dir() else [source]
    if not files:
        raise EmptyInputError(f"no CSV files under {source}")

    rows: dict[str, dict[float, list[float]]] = {}
    header_sensors: list[str] | None = None
    for path in files:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = [h.strip() for h in next(reader)]
            except StopIteration:
                raise EmptyInputError(f"{path} is empty") from None
            for col in ("run", "timestamp"):
                if col not in header:
                    raise SchemaError(f"{path}: missing column {col!r}")
            wanted = list(sensors) if sensors is not None else [
                h for h in header if h not in ("run", "timestamp")
            ]
            for col in wanted:
                if col not in header:
                    raise SchemaError(f"{path}: missing column {col!r}")
            if header_sensors is None:
                header_sensors = wanted
            elif wanted != header_sensors:
                raise SchemaError(f"{path}: sensor columns differ from {files[0]}")
            i_run, i_ts = header.index("run"), header.index("timestamp")
            cols = [header.index(c) for c in wanted]
            for lineno, rec in enumerate(reader, start=2):
                if not rec or all(not c.strip() for c in rec):
                    continue
                if len(rec) != len(header):
                    raise ParseError(
                        f"{path}:{lineno}: expected {len(header)} fields, got {len(rec)}"
                    )
                run = rec[i_run].strip()
                ts = _parse_cell(rec[i_ts], path, lineno, "timestamp")
                vals = [_parse_cell(rec[c], path, lineno, header[c]) for c in cols]
                per_run = rows.setdefault(run, {})
                if ts in per_run:
                    raise ParseError(f"{path}:{lineno}: duplicate (run, timestamp) = ({run}, {ts:g})")
                per_run[ts] = vals

    if not rows:
        raise EmptyInputError(f"{source}: header only, no data rows")

    run_ids = sorted(rows, key=_run_sort_key)
    lengths = {rid: len(rows[rid]) for rid in run_ids}
    if len(set(lengths.values())) != 1:
        raise AlignmentError(f"runs have differing numbers of timestamps: {lengths}")
    runs = []
    for rid in run_ids:
        per_run = rows[rid]
        runs.append(np.array([per_run[ts] for ts in sorted(per_run)], dtype=float).T)
    return RunDataset(runs=tuple(runs), sensor_names=tuple(header_sensors), run_ids=tuple(run_ids))


def _parse_cell(cell: str, path, lineno: int, column: str) -> float:
    try:
        value = float(cell)
    except ValueError:
        raise ParseError(f"{path}:{lineno}: column {column!r}: cannot parse {cell!r}") from None
    if not math.isfinite(value):
        raise ParseError(f"{path}:{lineno}: column {column!r}: non-finite value {cell!r}")
    return value


def write_runs(data: RunDataset, path: str | Path) -> None:
    """Write ``data`` in the long CSV format read by :func:`load_runs`."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run", "timestamp", *data.sensor_names])
        for rid, run in zip(data.run_ids, data.runs):
            for t in range(run.shape[1]):
                w.writerow([rid, t + 1, *(repr(float(v)) for v in run[:, t])])


def standardize(
    data: RunDataset, stats: StandardizationStats | None = None
) -> tuple[RunDataset, StandardizationStats]:
    """Global per-sensor z-score, pooled over every run and timestamp."""
    if stats is None:
        pooled = np.concatenate(data.runs, axis=1)
        mean = pooled.mean(axis=1)
        std = np.maximum(pooled.std(axis=1), STD_FLOOR)
        stats = StandardizationStats(mean=mean, stddev=std, sensor_names=data.sensor_names)
    mu = stats.mean[:, None]
    sd = stats.stddev[:, None]
    return data.replace_runs([(r - mu) / sd for r in data.runs]), stats


def window_matrix(run: np.ndarray, t_w: int) -> np.ndarray:
    """All stacked windows of one ``(N, T)`` run as a ``(T - t_w + 1, N * t_w)`` array."""
    n, T = run.shape
    if not 1 <= t_w <= T:
        raise WindowSizeError(f"window size {t_w} outside 1..{T}")
    # row i holds columns i .. i + t_w - 1, flattened oldest-first
    view = np.lib.stride_tricks.sliding_window_view(run.T, t_w, axis=0)  # (T_w, N, t_w)
    return np.ascontiguousarray(view.transpose(0, 2, 1).reshape(T - t_w + 1, n * t_w))


def stack_windows(data: RunDataset, t_w: int) -> list[StackedWindow]:
    out = []
    for r, run in enumerate(data.runs):
        W = window_matrix(run, t_w)
        out.extend(StackedWindow(values=W[i], t=i + t_w, r=r) for i in range(W.shape[0]))
    return out


def stack_array(data: RunDataset, t_w: int) -> np.ndarray:
    """Windows of every run as an ``(R, T - t_w + 1, N * t_w)`` array."""
    return np.stack([window_matrix(run, t_w) for run in data.runs])


def unstack(windows: np.ndarray, n_sensors: int) -> np.ndarray:
    """Inverse of :func:`window_matrix`: rebuild the ``(N, T)`` run."""
    T_w, nt = windows.shape
    t_w = nt // n_sensors
    run = np.empty((n_sensors, T_w + t_w - 1))
    blocks = windows.reshape(T_w, t_w, n_sensors)
    run[:, :T_w] = blocks[:, 0, :].T
    run[:, T_w:] = blocks[-1, 1:, :].T
    return run
