"""Capacity, SOH, EOL, and remaining-throughput labels from segmented logs.

The life axis is cumulative discharge amp-hours (throughput), not cycle count:
equivalent-full-cycle indices mean little when usage is partial and irregular.
Capacity is measured by coulomb counting reference (full) discharges — segments
whose terminal voltage spans from above ``v_high`` down to below ``v_low``.
Partial segments contribute throughput but never capacity points.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Optional, Sequence, Union

import numpy as np

from .errors import (
    EmptyInput,
    NonPositiveNominal,
    NoReferenceDischarges,
    SegmentOutOfRange,
)
from .ingest import (
    DEFAULT_DEADBAND_A,
    CellSeries,
    CycleSegment,
    SegmentKind,
    _check_segment,
    segment_cycles,
)

log = logging.getLogger(__name__)

DEFAULT_EOL_THRESHOLD_PCT = 80.0  # manufacturer convention; 70.0 = PCoE convention


@dataclass(frozen=True)
class FullDischargeCriteria:
    """A discharge counts as a reference measurement when its first sample's
    voltage is at least v_high and its last sample's voltage is at most v_low."""

    v_high: float = 4.0
    v_low: float = 3.2


@dataclass(frozen=True)
class CapacityPoint:
    cumulative_discharge_ah: float
    capacity_ah: float

    def __post_init__(self):
        if self.capacity_ah <= 0:
            raise ValueError(f"capacity_ah must be > 0, got {self.capacity_ah}")
        if self.cumulative_discharge_ah < 0:
            raise ValueError(
                f"cumulative_discharge_ah must be >= 0, got {self.cumulative_discharge_ah}")


@dataclass(frozen=True)
class SohPoint:
    cumulative_discharge_ah: float
    soh_pct: float

    def __post_init__(self):
        if not 0.0 < self.soh_pct <= 120.0:
            raise ValueError(f"soh_pct must be in (0, 120], got {self.soh_pct}")


@dataclass(frozen=True)
class RulTarget:
    cumulative_discharge_ah: float
    remaining_ah: float


def coulomb_count(series: CellSeries, segment: CycleSegment) -> float:
    """Charge moved within a segment: trapezoid of |I| over time, in Ah.

    Deadband segmentation assigns the near-zero samples bracketing a segment
    to the neighboring rest, so the current ramps from and back to zero across
    the sampling gaps just outside the segment. Each such ramp carries half an
    interval of charge; integrating only between the segment's own samples
    would undercount every segment by up to one sample's worth.
    """
    _check_segment(series, segment)
    s, e = segment.start_idx, segment.end_idx
    t = series.timestamp_s
    i_abs = np.abs(series.current_a)
    ah = float(np.trapezoid(i_abs[s:e], t[s:e]))
    if s > 0:
        ah += float(i_abs[s]) * float(t[s] - t[s - 1]) / 2.0
    if e < len(t):
        ah += float(i_abs[e - 1]) * float(t[e] - t[e - 1]) / 2.0
    return ah / 3600.0


def estimate_capacity_points(
    series: CellSeries,
    segments: Sequence[CycleSegment],
    criteria: FullDischargeCriteria = FullDischargeCriteria(),
) -> list:
    """One CapacityPoint per reference discharge, positioned on the throughput axis.

    Throughput accumulates over discharge segments only. A reference
    discharge's point sits at the midpoint of the throughput it spans, so the
    measured capacity corresponds to the fade state where it was taken rather
    than to the segment's start. Returns an empty list when no segment
    qualifies; the caller decides whether that is an error.
    """
    points = []
    tau = 0.0
    for seg in segments:
        if seg.kind is not SegmentKind.DISCHARGE:
            continue
        ah = coulomb_count(series, seg)
        if _is_reference(series, seg, criteria):
            points.append(CapacityPoint(tau + ah / 2.0, ah))
        tau += ah
    return points


def _is_reference(series: CellSeries, seg: CycleSegment,
                  criteria: FullDischargeCriteria) -> bool:
    return bool(
        series.voltage_v[seg.start_idx] >= criteria.v_high
        and series.voltage_v[seg.end_idx - 1] <= criteria.v_low
    )


def compute_soh(points: Sequence[CapacityPoint], nominal_capacity_ah: float) -> list:
    """SOH in percent: 100 * capacity / nominal, order preserved."""
    if nominal_capacity_ah <= 0:
        raise NonPositiveNominal(f"nominal_capacity_ah must be > 0, got {nominal_capacity_ah}")
    return [
        SohPoint(p.cumulative_discharge_ah, 100.0 * p.capacity_ah / nominal_capacity_ah)
        for p in points
    ]


def detect_eol(soh: Sequence[SohPoint], threshold_pct: float) -> Optional[float]:
    """Throughput where SOH first reaches the threshold; None if it never does.

    Linear interpolation between the last point above the threshold and the
    first point at or below it; if even the first point is at or below, its
    throughput is returned as-is.
    """
    if not soh:
        raise EmptyInput("no SOH points")
    for k, p in enumerate(soh):
        if p.soh_pct <= threshold_pct:
            if k == 0:
                return p.cumulative_discharge_ah
            prev = soh[k - 1]
            frac = (prev.soh_pct - threshold_pct) / (prev.soh_pct - p.soh_pct)
            return prev.cumulative_discharge_ah + frac * (
                p.cumulative_discharge_ah - prev.cumulative_discharge_ah)
    return None


def compute_rul_targets(eol_throughput_ah: float, query_throughputs: Sequence[float]) -> list:
    """Remaining discharge throughput before EOL at each query position,
    clamped at zero past the crossing."""
    return [
        RulTarget(float(q), max(0.0, eol_throughput_ah - float(q)))
        for q in query_throughputs
    ]


def cycle_rul_for_reference(
    soh: Sequence[SohPoint], query_index: int, eol_throughput_ah: float
) -> int:
    """Remaining reference discharges until EOL, counted from one of them.

    Reporting shim only: counts SOH points after query_index whose throughput
    has not passed the EOL crossing.
    """
    if not soh:
        raise EmptyInput("no SOH points")
    if not 0 <= query_index < len(soh):
        raise SegmentOutOfRange(f"query_index {query_index} outside 0..{len(soh) - 1}")
    return sum(
        1
        for p in soh[query_index + 1:]
        if p.cumulative_discharge_ah <= eol_throughput_ah
    )


# ---- per-cell labeling --------------------------------------------------------


@dataclass(frozen=True)
class LabelRecord:
    """One row of labeled output: a position on the throughput axis with its
    remaining-Ah target and, when taken from a reference discharge, the SOH."""

    cell_id: str
    cumulative_discharge_ah: float
    soh_pct: Optional[float]
    remaining_ah: float


@dataclass
class LabeledCell:
    cell_id: str
    nominal_capacity_ah: float
    capacity_points: list
    soh_points: list
    eol_threshold_pct: float
    eol_throughput_ah: Optional[float]  # None: censored (never crossed threshold)
    records: list

    @property
    def censored(self) -> bool:
        return self.eol_throughput_ah is None


def label_cell(
    series: CellSeries,
    criteria: FullDischargeCriteria = FullDischargeCriteria(),
    threshold_pct: float = DEFAULT_EOL_THRESHOLD_PCT,
    deadband_a: float = DEFAULT_DEADBAND_A,
) -> LabeledCell:
    """Segment, measure capacity, and label one cell end to end.

    Emits one record per discharge segment: reference discharges carry
    (midpoint throughput, SOH); partial discharges carry (segment-end
    throughput, no SOH). Censored cells get no records and a logged warning.
    """
    segments = segment_cycles(series, deadband_a=deadband_a)
    points = estimate_capacity_points(series, segments, criteria)
    if not points:
        raise NoReferenceDischarges(
            f"cell {series.cell_id!r}: no discharge spans "
            f"{criteria.v_high} V down to {criteria.v_low} V")
    soh = compute_soh(points, series.nominal_capacity_ah)
    eol = detect_eol(soh, threshold_pct)

    records = []
    if eol is None:
        log.warning(
            "cell %s: SOH never reached %.1f%% (last %.2f%%); censored, no RUL records",
            series.cell_id, threshold_pct, soh[-1].soh_pct)
    else:
        tau = 0.0
        for seg in segments:
            if seg.kind is not SegmentKind.DISCHARGE:
                continue
            ah = coulomb_count(series, seg)
            mid = tau + ah / 2.0
            tau += ah
            if _is_reference(series, seg, criteria):
                pos = mid
                soh_pct = 100.0 * ah / series.nominal_capacity_ah
            else:
                pos, soh_pct = tau, None
            records.append(LabelRecord(
                series.cell_id, pos, soh_pct, max(0.0, eol - pos)))
    return LabeledCell(
        cell_id=series.cell_id,
        nominal_capacity_ah=series.nominal_capacity_ah,
        capacity_points=points,
        soh_points=soh,
        eol_threshold_pct=threshold_pct,
        eol_throughput_ah=eol,
        records=records,
    )


def write_labels_jsonl(cells: Sequence[LabeledCell], sink: Union[str, Path, IO[str]]) -> None:
    """One JSON object per record, in cell order; censored cells contribute none."""
    lines = []
    for cell in cells:
        for rec in cell.records:
            lines.append(json.dumps(
                {
                    "cell_id": rec.cell_id,
                    "cumulative_discharge_ah": rec.cumulative_discharge_ah,
                    "soh_pct": rec.soh_pct,
                    "remaining_ah": rec.remaining_ah,
                },
                sort_keys=True,
            ))
    text = "\n".join(lines) + ("\n" if lines else "")
    if isinstance(sink, (str, Path)):
        Path(sink).write_text(text, encoding="utf-8", newline="\n")
    else:
        sink.write(text)


def read_labels_jsonl(source: Union[str, Path, IO[str]]) -> list:
    text = Path(source).read_text(encoding="utf-8") if isinstance(
        source, (str, Path)) else source.read()
    records = []
    for line in text.splitlines():
        if not line.strip():
            continue
        doc = json.loads(line)
        records.append(LabelRecord(
            doc["cell_id"], doc["cumulative_discharge_ah"],
            doc["soh_pct"], doc["remaining_ah"]))
    return records
