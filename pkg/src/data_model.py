"""
Censored survival data: records, datasets and counting-process views.

A dataset holds observations (T_i, delta_i, x_i). The counting process
N_i(t) = I{T_i <= t, delta_i = 1} and at-risk process Y_i(u) = I{T_i >= u}
are derived on demand, never stored.
"""

import csv
import io
import json
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import IO, Iterable, Optional

import numpy as np


class DatasetError(ValueError):
    """Raised when survival data cannot be parsed or fails validation."""

    def __init__(self, message: str, row: Optional[int] = None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class SurvivalRecord:
    """One individual's follow-up time, event indicator and covariates."""
    time: float
    event: bool
    covariates: tuple[float, ...]

    def to_dict(self) -> dict:
        return {
            "time": self.time,
            "status": int(self.event),
            "x": list(self.covariates),
        }


@dataclass(frozen=True)
class EventGrid:
    """Strictly increasing distinct observed event times."""
    times: tuple[float, ...]

    def __len__(self) -> int:
        return len(self.times)

    def __iter__(self):
        return iter(self.times)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.times, dtype=float)


@dataclass(frozen=True)
class Dataset:
    """
    Validated collection of survival records sharing covariate dimension r.

    Covariates are used exactly as given; no intercept column is added.
    """
    records: tuple[SurvivalRecord, ...]

    def __post_init__(self):
        if len(self.records) == 0:
            raise DatasetError("dataset must contain at least one record")
        r = len(self.records[0].covariates)
        if r == 0:
            raise DatasetError("dataset must have at least one covariate")
        for row, rec in enumerate(self.records, start=1):
            if len(rec.covariates) != r:
                raise DatasetError(
                    f"expected {r} covariates, found {len(rec.covariates)}", row=row
                )
            if not math.isfinite(rec.time):
                raise DatasetError("time must be finite", row=row)
            if rec.time < 0:
                raise DatasetError(f"negative time {rec.time}", row=row)
            if not all(math.isfinite(v) for v in rec.covariates):
                raise DatasetError("covariates must be finite", row=row)

    @property
    def n(self) -> int:
        return len(self.records)

    @property
    def r(self) -> int:
        return len(self.records[0].covariates)

    @cached_property
    def times(self) -> np.ndarray:
        values = np.array([rec.time for rec in self.records], dtype=float)
        values.setflags(write=False)
        return values

    @cached_property
    def events(self) -> np.ndarray:
        values = np.array([rec.event for rec in self.records], dtype=bool)
        values.setflags(write=False)
        return values

    @cached_property
    def covariates(self) -> np.ndarray:
        values = np.array([rec.covariates for rec in self.records], dtype=float)
        values.setflags(write=False)
        return values

    @cached_property
    def time_order(self) -> np.ndarray:
        """
        Record positions sorted by time. Ties are broken by event status and
        then covariates, so the order depends only on record content.
        """
        keys = [self.covariates[:, j] for j in reversed(range(self.r))]
        order = np.lexsort(keys + [self.events, self.times])
        order.setflags(write=False)
        return order

    @classmethod
    def from_arrays(
        cls,
        times: Iterable[float],
        events: Iterable[bool],
        covariates: Iterable[Iterable[float]],
    ) -> "Dataset":
        records = tuple(
            SurvivalRecord(float(t), bool(e), tuple(float(v) for v in x))
            for t, e, x in zip(times, events, covariates, strict=True)
        )
        return cls(records)

    @property
    def max_event_time(self) -> float:
        """Largest observed event time, 0.0 when every record is censored."""
        observed = self.times[self.events]
        return float(observed.max()) if observed.size else 0.0

    def select_columns(self, positions: Iterable[int]) -> "Dataset":
        """Dataset restricted to the given 0-based covariate columns."""
        positions = list(positions)
        return Dataset(tuple(
            SurvivalRecord(rec.time, rec.event, tuple(rec.covariates[p] for p in positions))
            for rec in self.records
        ))

    def to_csv(self, comments: Iterable[str] = ()) -> str:
        """Serialize in the `time,status,x1,...,xr` format, comments first."""
        buffer = io.StringIO()
        for line in comments:
            buffer.write(f"# {line}\n")
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(["time", "status"] + [f"x{j}" for j in range(1, self.r + 1)])
        for rec in self.records:
            writer.writerow(
                [repr(rec.time), int(rec.event)] + [repr(v) for v in rec.covariates]
            )
        return buffer.getvalue()

    def to_json(self) -> str:
        return json.dumps([rec.to_dict() for rec in self.records])

    @classmethod
    def from_json(cls, text: str) -> "Dataset":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as e:
            raise DatasetError(f"invalid JSON: {e}") from e
        if not isinstance(raw, list):
            raise DatasetError("JSON dataset must be an array of records")
        records = []
        for row, item in enumerate(raw, start=1):
            try:
                status = int(item["status"])
                if status not in (0, 1):
                    raise DatasetError(f"status must be 0 or 1, got {status}", row=row)
                records.append(SurvivalRecord(
                    float(item["time"]),
                    bool(status),
                    tuple(float(v) for v in item["x"]),
                ))
            except (KeyError, TypeError, ValueError) as e:
                if isinstance(e, DatasetError):
                    raise
                raise DatasetError(f"malformed record: {e}", row=row) from e
        return cls(tuple(records))


def _read_text(source: bytes | str | IO) -> str:
    if isinstance(source, bytes):
        return source.decode("utf-8")
    if isinstance(source, str):
        return source
    content = source.read()
    return content.decode("utf-8") if isinstance(content, bytes) else content


def load_dataset(source: bytes | str | IO) -> Dataset:
    """
    Parse CSV text with header `time,status,x1,...,xr`.

    Lines starting with '#' (run manifests) and blank lines are skipped.
    Row numbers in errors count data rows from 1.

    Raises:
        DatasetError: On malformed rows, bad header, negative times or r = 0.
    """
    lines = [
        line for line in _read_text(source).splitlines()
        if line.strip() and not line.lstrip().startswith("#")
    ]
    if not lines:
        raise DatasetError("empty input: missing header")

    reader = csv.reader(lines)
    header = [h.strip() for h in next(reader)]
    if header[:2] != ["time", "status"]:
        raise DatasetError(f"header must start with 'time,status', got {','.join(header)}")
    r = len(header) - 2
    if r == 0:
        raise DatasetError("header declares no covariate columns")
    expected = [f"x{j}" for j in range(1, r + 1)]
    if header[2:] != expected:
        raise DatasetError(f"covariate columns must be named {','.join(expected)}")

    records = []
    for row, fields in enumerate(reader, start=1):
        if len(fields) != r + 2:
            raise DatasetError(f"expected {r + 2} fields, found {len(fields)}", row=row)
        try:
            values = [float(f) for f in fields]
        except ValueError as e:
            raise DatasetError(f"non-numeric field ({e})", row=row) from e
        status = values[1]
        if status not in (0.0, 1.0):
            raise DatasetError(f"status must be 0 or 1, got {fields[1].strip()}", row=row)
        if values[0] < 0:
            raise DatasetError(f"negative time {values[0]}", row=row)
        records.append(SurvivalRecord(values[0], status == 1.0, tuple(values[2:])))

    return Dataset(tuple(records))


def load_dataset_file(path: str | Path) -> Dataset:
    """Load a dataset from a CSV file, or a JSON file when the suffix is .json."""
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"data file not found: {path}")
    text = path.read_text()
    if path.suffix.lower() == ".json":
        return Dataset.from_json(text)
    return load_dataset(text)


def event_grid(d: Dataset, tau: Optional[float] = None) -> EventGrid:
    """
    Sorted distinct times 0 < u <= tau at which some record has an observed event.

    Tau defaults to the largest event time. An empty grid is legal.
    """
    if tau is None:
        tau = d.max_event_time
    elif tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    observed = d.times[d.events & (d.times > 0) & (d.times <= tau)]
    return EventGrid(tuple(float(u) for u in np.unique(observed)))


def at_risk(d: Dataset, u: float) -> np.ndarray:
    """Y_i(u) = I{T_i >= u}; censored individuals at u count as at risk."""
    if u < 0:
        raise ValueError(f"time must be nonnegative, got {u}")
    return d.times >= u
