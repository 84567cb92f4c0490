"""Parse, validate, and segment raw cycling logs.

Canonical cell CSV: header ``timestamp_s,voltage_v,current_a,temperature_c``,
decimal point ``.``, LF line endings. Sign convention: positive current is
charge, negative is discharge. Extra columns (e.g. logger-side SOC estimates)
are ignored at parse time; the canonical writer never emits them.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import IO, Iterator, NamedTuple, Sequence, Union

import numpy as np

from .errors import (
    EmptyFile,
    MalformedRow,
    NonMonotonicTimestamp,
    NonPositiveNominal,
    RangeViolation,
    SegmentOutOfRange,
)

CSV_HEADER = ("timestamp_s", "voltage_v", "current_a", "temperature_c")

VOLTAGE_RANGE_V = (0.0, 10.0)
TEMPERATURE_RANGE_C = (-40.0, 120.0)

DEFAULT_DEADBAND_A = 0.05

Source = Union[str, Path, bytes, IO[bytes], IO[str]]


class RawSample(NamedTuple):
    """One logged measurement row."""

    timestamp_s: float
    voltage_v: float
    current_a: float
    temperature_c: float


class SegmentKind(str, Enum):
    CHARGE = "charge"
    DISCHARGE = "discharge"
    REST = "rest"


@dataclass(eq=False)
class CellSeries:
    """Uniformly validated time series of measurable signals for one cell.

    Stored columnar (one float64 array per signal); ``len(series)`` is the
    sample count and ``series[i]`` yields a :class:`RawSample` view.
    """

    cell_id: str
    timestamp_s: np.ndarray
    voltage_v: np.ndarray
    current_a: np.ndarray
    temperature_c: np.ndarray
    nominal_capacity_ah: float

    def __post_init__(self):
        if self.nominal_capacity_ah <= 0:
            raise NonPositiveNominal(
                f"nominal_capacity_ah must be > 0, got {self.nominal_capacity_ah}"
            )
        n = len(self.timestamp_s)
        if n < 2:
            raise EmptyFile(f"cell {self.cell_id!r}: need at least 2 samples, got {n}")
        for name in ("timestamp_s", "voltage_v", "current_a", "temperature_c"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != (n,):
                raise SegmentOutOfRange(f"column {name} length {arr.shape} != {n}")
            setattr(self, name, arr)

    def __len__(self) -> int:
        return len(self.timestamp_s)

    def __getitem__(self, i: int) -> RawSample:
        return RawSample(
            float(self.timestamp_s[i]),
            float(self.voltage_v[i]),
            float(self.current_a[i]),
            float(self.temperature_c[i]),
        )

    def __iter__(self) -> Iterator[RawSample]:
        for i in range(len(self)):
            yield self[i]


@dataclass(frozen=True)
class CycleSegment:
    """Half-open sample range [start_idx, end_idx) of one charge/discharge/rest run."""

    kind: SegmentKind
    start_idx: int
    end_idx: int
    cell_id: str

    def __len__(self) -> int:
        return self.end_idx - self.start_idx


def _read_text(source: Source) -> str:
    if isinstance(source, (str, Path)):
        return Path(source).read_bytes().decode("utf-8")
    if isinstance(source, bytes):
        return source.decode("utf-8")
    data = source.read()
    if isinstance(data, bytes):
        return data.decode("utf-8")
    return data


def parse_cell_csv(
    source: Source,
    nominal_capacity_ah: float,
    cell_id: str = "cell",
) -> CellSeries:
    """Parse a canonical cell CSV into a validated CellSeries.

    The four canonical columns must be present by name; any extra columns are
    ignored so that logger-side derived quantities never leak into the model
    input path. Raises MalformedRow / NonMonotonicTimestamp / RangeViolation
    with the offending 1-based line number, or EmptyFile.
    """
    text = _read_text(source)
    if not text.strip():
        raise EmptyFile("no content")

    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise EmptyFile("no header row") from None
    header = [h.strip() for h in header]
    col_idx = {}
    for name in CSV_HEADER:
        if name not in header:
            raise MalformedRow(1, f"missing required column {name!r} in header {header}")
        col_idx[name] = header.index(name)

    cols = tuple(col_idx[c] for c in CSV_HEADER)
    width = len(header)

    parsed = _parse_rows_fast(text, cols, width)
    if parsed is None:
        parsed = _parse_rows_checked(reader, cols, width)
    ts, vs, cs, temps = parsed

    if ts.shape[0] < 2:
        raise EmptyFile(f"need at least 2 data rows, got {ts.shape[0]}")

    return CellSeries(
        cell_id=cell_id,
        timestamp_s=ts,
        voltage_v=vs,
        current_a=cs,
        temperature_c=temps,
        nominal_capacity_ah=float(nominal_capacity_ah),
    )


_Parsed = tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]


def _parse_rows_fast(text: str, cols: tuple[int, ...], width: int) -> "_Parsed | None":
    """Vectorized parse of the data rows of a canonical CSV.

    Returns None whenever anything about the text is unusual (quoting, ragged
    rows, unparsable fields, out-of-range values); the caller then re-parses
    row by row so that errors carry the exact offending line number.
    """
    nl = text.find("\n")
    body = text[nl + 1 :] if nl >= 0 else ""
    if not body.strip():
        return (np.empty(0),) * 4
    try:
        data = np.loadtxt(
            io.StringIO(body),
            dtype=np.float64,
            delimiter=",",
            comments=None,
            usecols=cols,
            ndmin=2,
        )
    except Exception:
        return None
    # loadtxt only checks that each row has a consistent field count; a comma
    # census confirms that count is the header's. Quoted commas skew the census
    # and ragged rows fail it, both of which correctly force the checked path.
    n_rows = 0
    for line in body.split("\n"):
        line = line.rstrip("\r")
        if not line:
            continue  # truly empty line: skipped by both parsers
        if not line.strip() or line.count(",") != width - 1:
            return None
        n_rows += 1
    if n_rows != data.shape[0]:
        return None
    t, v, i, temp = (np.ascontiguousarray(data[:, k]) for k in range(4))
    v_lo, v_hi = VOLTAGE_RANGE_V
    tc_lo, tc_hi = TEMPERATURE_RANGE_C
    ok = (
        not np.any(t < 0)
        and float(t[0]) > -np.inf
        and bool(np.all(np.diff(t) > 0))
        and bool(np.all((v_lo < v) & (v < v_hi)))
        and bool(np.all((tc_lo < temp) & (temp < tc_hi)))
        and bool(np.all(np.isfinite(i)))
    )
    if not ok:
        return None
    return t, v, i, temp


def _parse_rows_checked(
    reader: "Iterator[list[str]]", cols: tuple[int, ...], width: int
) -> _Parsed:
    """Row-by-row parse that reports the first problem with its line number."""
    t_col, v_col, i_col, temp_col = cols
    ts: list[float] = []
    vs: list[float] = []
    cs: list[float] = []
    temps: list[float] = []
    prev_t = -np.inf
    v_lo, v_hi = VOLTAGE_RANGE_V
    tc_lo, tc_hi = TEMPERATURE_RANGE_C

    for line_no, row in enumerate(reader, start=2):
        if not row:
            continue  # tolerate blank trailing lines
        if len(row) != width:
            raise MalformedRow(line_no, f"expected {width} fields, got {len(row)}")
        try:
            t = float(row[t_col])
            v = float(row[v_col])
            i = float(row[i_col])
            temp = float(row[temp_col])
        except ValueError as exc:
            raise MalformedRow(line_no, str(exc)) from None
        if t < 0:
            raise RangeViolation(line_no, f"timestamp_s {t} is negative")
        if not t > prev_t:
            raise NonMonotonicTimestamp(line_no)
        if not v_lo < v < v_hi:
            raise RangeViolation(line_no, f"voltage_v {v} outside ({v_lo}, {v_hi})")
        if not tc_lo < temp < tc_hi:
            raise RangeViolation(line_no, f"temperature_c {temp} outside ({tc_lo}, {tc_hi})")
        if not np.isfinite(i):
            raise RangeViolation(line_no, f"current_a {i} is not finite")
        prev_t = t
        ts.append(t)
        vs.append(v)
        cs.append(i)
        temps.append(temp)

    return np.array(ts), np.array(vs), np.array(cs), np.array(temps)


def write_cell_csv(series: CellSeries, sink: Union[str, Path, IO[str]]) -> None:
    """Write a CellSeries in the canonical CSV format.

    Floats are rendered with shortest round-trip repr, so parse -> write is
    byte-stable for files this writer produced.
    """
    lines = [",".join(CSV_HEADER)]
    cols = (series.timestamp_s, series.voltage_v, series.current_a, series.temperature_c)
    for k in range(len(series)):
        lines.append(",".join(repr(float(col[k])) for col in cols))
    text = "\n".join(lines) + "\n"
    if isinstance(sink, (str, Path)):
        Path(sink).write_text(text, encoding="utf-8", newline="\n")
    else:
        sink.write(text)


def segment_cycles(series: CellSeries, deadband_a: float = DEFAULT_DEADBAND_A) -> list[CycleSegment]:
    """Partition a series into maximal runs of charge / discharge / rest.

    A sample with |I| <= deadband_a is rest; otherwise the sign of the current
    decides. Adjacent samples of the same kind are merged; the returned
    segments are ordered, non-overlapping, and jointly cover [0, len(series)).
    """
    if deadband_a < 0:
        raise ValueError(f"deadband_a must be >= 0, got {deadband_a}")
    i = series.current_a
    codes = np.zeros(len(i), dtype=np.int8)
    codes[i > deadband_a] = 1
    codes[i < -deadband_a] = -1
    boundaries = np.flatnonzero(np.diff(codes)) + 1
    starts = np.concatenate(([0], boundaries))
    ends = np.concatenate((boundaries, [len(i)]))
    kind_of = {1: SegmentKind.CHARGE, -1: SegmentKind.DISCHARGE, 0: SegmentKind.REST}
    return [
        CycleSegment(kind_of[int(codes[s])], int(s), int(e), series.cell_id)
        for s, e in zip(starts, ends)
    ]


# ---- dataset manifest -------------------------------------------------------


@dataclass(frozen=True)
class ManifestEntry:
    cell_id: str
    path: Path
    nominal_capacity_ah: float


@dataclass
class Manifest:
    """List of cell CSVs making up one dataset."""

    entries: list[ManifestEntry] = field(default_factory=list)

    def cell_ids(self) -> list[str]:
        return [e.cell_id for e in self.entries]

    def load_series(self, cell_id: str) -> CellSeries:
        for e in self.entries:
            if e.cell_id == cell_id:
                return parse_cell_csv(e.path, e.nominal_capacity_ah, cell_id=cell_id)
        raise KeyError(cell_id)


def save_manifest(manifest: Manifest, path: Union[str, Path]) -> None:
    """Write a manifest whose stored paths survive relocation of its directory.

    Cell CSVs living under the manifest's directory are stored relative to it;
    anything else is stored absolute. load_manifest applies the inverse.
    """
    path = Path(path)
    base = path.parent.resolve()
    records = []
    for e in manifest.entries:
        p = Path(e.path).resolve()
        try:
            stored = str(p.relative_to(base))
        except ValueError:
            stored = str(p)
        records.append({
            "cell_id": e.cell_id,
            "path": stored,
            "nominal_capacity_ah": e.nominal_capacity_ah,
        })
    path.write_text(json.dumps({"cells": records}, indent=2) + "\n", encoding="utf-8")


def load_manifest(path: Union[str, Path]) -> Manifest:
    path = Path(path)
    doc = json.loads(path.read_text(encoding="utf-8"))
    entries = []
    for rec in doc["cells"]:
        p = Path(rec["path"])
        if not p.is_absolute():
            p = path.parent / p
        entries.append(
            ManifestEntry(
                cell_id=rec["cell_id"],
                path=p,
                nominal_capacity_ah=float(rec["nominal_capacity_ah"]),
            )
        )
    return Manifest(entries)


def iter_segment_samples(series: CellSeries, segment: CycleSegment) -> Sequence[RawSample]:
    """Materialize the samples of one segment (mostly for debugging)."""
    _check_segment(series, segment)
    return [series[k] for k in range(segment.start_idx, segment.end_idx)]


def _check_segment(series: CellSeries, segment: CycleSegment) -> None:
    if segment.cell_id != series.cell_id:
        raise SegmentOutOfRange(
            f"segment cell {segment.cell_id!r} != series cell {series.cell_id!r}"
        )
    if not (0 <= segment.start_idx < segment.end_idx <= len(series)):
        raise SegmentOutOfRange(
            f"segment [{segment.start_idx}, {segment.end_idx}) outside series of length {len(series)}"
        )
