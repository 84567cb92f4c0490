"""Uniform-rate frames, normalization, and moving-window tensors.

Model inputs are exactly the measurable channels (voltage, current,
temperature). Nothing derived from capacity — no SOC, no SOH — ever enters a
feature matrix; the remaining-Ah targets live on the labeling module's
throughput axis and are attached to windows by interpolation in throughput,
never computed from feature values.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import (
    ConstantChannel,
    EmptyInput,
    FrameTooShort,
    InvalidConfig,
    RateTooCoarse,
    ShapeMismatch,
    TooFewCells,
)
from .ingest import CellSeries

CHANNELS = ("voltage_v", "current_a", "temperature_c")

DEFAULT_RATE_S = 60.0
DEFAULT_WINDOW_LEN = 64
DEFAULT_STRIDE = 16


@dataclass(eq=False)
class FeatureFrame:
    """Uniformly resampled measurable channels plus the throughput axis."""

    cell_id: str
    timestamp_s: np.ndarray
    voltage_v: np.ndarray
    current_a: np.ndarray
    temperature_c: np.ndarray
    cumulative_discharge_ah: np.ndarray
    rate_s: float

    def __len__(self) -> int:
        return len(self.timestamp_s)

    def channel_matrix(self) -> np.ndarray:
        """Rows x (V, I, T)."""
        return np.stack([getattr(self, c) for c in CHANNELS], axis=1)


def resample_uniform(series: CellSeries, rate_s: float = DEFAULT_RATE_S) -> FeatureFrame:
    """Interpolate V/I/T onto a uniform grid and integrate discharge throughput.

    The grid starts at the first raw timestamp and steps by rate_s up to the
    last; throughput is the trapezoid of max(0, -I) on the resampled grid.
    """
    if rate_s <= 0:
        raise InvalidConfig(f"rate_s must be > 0, got {rate_s}")
    t_raw = series.timestamp_s
    n = int(np.floor((t_raw[-1] - t_raw[0]) / rate_s)) + 1
    if n < 2:
        raise RateTooCoarse(
            f"rate {rate_s}s over a {t_raw[-1] - t_raw[0]:.1f}s span leaves {n} row(s)")
    t = t_raw[0] + rate_s * np.arange(n)
    v = np.interp(t, t_raw, series.voltage_v)
    i = np.interp(t, t_raw, series.current_a)
    temp = np.interp(t, t_raw, series.temperature_c)
    dis = np.maximum(0.0, -i)
    steps = (dis[:-1] + dis[1:]) * (rate_s / 7200.0)
    tau = np.concatenate(([0.0], np.cumsum(steps)))
    return FeatureFrame(series.cell_id, t, v, i, temp, tau, float(rate_s))


# ---- normalization ------------------------------------------------------------


@dataclass
class NormStats:
    """Per-channel affine statistics fit on training cells only.

    target_scale_ah is the sidecar scalar used to normalize remaining-Ah
    targets (mean throughput-to-EOL of the training cells); None until a
    training set defines it.
    """

    mean: np.ndarray
    std: np.ndarray
    target_scale_ah: Optional[float] = None

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)
        if self.mean.shape != (len(CHANNELS),) or self.std.shape != (len(CHANNELS),):
            raise ShapeMismatch(f"stats must have shape ({len(CHANNELS)},)")
        if np.any(self.std <= 0):
            raise ConstantChannel(f"std must be > 0 per channel, got {self.std}")


def fit_normalizer(frames: Sequence[FeatureFrame]) -> NormStats:
    """Global per-channel mean/std over all rows of the given frames."""
    if not frames:
        raise EmptyInput("no frames")
    data = np.concatenate([f.channel_matrix() for f in frames], axis=0)
    mean = data.mean(axis=0)
    std = data.std(axis=0)
    dead = np.flatnonzero(std <= 1e-12)
    if dead.size:
        names = ", ".join(CHANNELS[k] for k in dead)
        raise ConstantChannel(f"constant channel(s): {names}")
    return NormStats(mean, std)


def normalize_frame(frame: FeatureFrame, stats: NormStats) -> FeatureFrame:
    out = replace(frame)
    for k, c in enumerate(CHANNELS):
        setattr(out, c, (getattr(frame, c) - stats.mean[k]) / stats.std[k])
    return out


def denormalize_frame(frame: FeatureFrame, stats: NormStats) -> FeatureFrame:
    out = replace(frame)
    for k, c in enumerate(CHANNELS):
        setattr(out, c, getattr(frame, c) * stats.std[k] + stats.mean[k])
    return out


def save_norm_stats(stats: NormStats, path: Union[str, Path]) -> None:
    doc = {
        "mean": {c: float(stats.mean[k]) for k, c in enumerate(CHANNELS)},
        "std": {c: float(stats.std[k]) for k, c in enumerate(CHANNELS)},
        "target_scale_ah": stats.target_scale_ah,
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_norm_stats(path: Union[str, Path]) -> NormStats:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return NormStats(
        mean=[doc["mean"][c] for c in CHANNELS],
        std=[doc["std"][c] for c in CHANNELS],
        target_scale_ah=doc.get("target_scale_ah"),
    )


# ---- windows -------------------------------------------------------------------


@dataclass(eq=False)
class WindowSet:
    """Fixed-length feature windows with one remaining-Ah target each.

    windows has shape (count, window_len, channels); provenance arrays give
    each window's source cell and first row index.
    """

    windows: np.ndarray
    targets: np.ndarray
    window_len: int
    stride: int
    cell_ids: np.ndarray
    row_start: np.ndarray

    def __post_init__(self):
        n = len(self.windows)
        if not (len(self.targets) == len(self.cell_ids) == len(self.row_start) == n):
            raise ShapeMismatch("windows/targets/provenance counts differ")

    def __len__(self) -> int:
        return len(self.windows)


def make_windows(frame: FeatureFrame, targets, window_len: int = DEFAULT_WINDOW_LEN,
                 stride: int = DEFAULT_STRIDE) -> WindowSet:
    """Strided moving windows over a frame, targets attached at each last row.

    The target is remaining_ah interpolated in throughput at the window's
    final row, so it derives only from the labeling axis, never from feature
    values.
    """
    if window_len < 1 or stride < 1:
        raise InvalidConfig(f"window_len and stride must be >= 1, got {window_len}, {stride}")
    rows = len(frame)
    if rows < window_len:
        raise FrameTooShort(f"{rows} rows < window_len {window_len}")
    if not targets:
        raise EmptyInput("no targets")
    data = frame.channel_matrix()
    wins = sliding_window_view(data, window_len, axis=0)[::stride]
    wins = np.ascontiguousarray(np.swapaxes(wins, 1, 2))
    count = wins.shape[0]
    last_rows = window_len - 1 + stride * np.arange(count)
    t_tau = np.array([t.cumulative_discharge_ah for t in targets])
    t_rem = np.array([t.remaining_ah for t in targets])
    out_targets = np.interp(frame.cumulative_discharge_ah[last_rows], t_tau, t_rem)
    return WindowSet(
        windows=wins,
        targets=out_targets,
        window_len=window_len,
        stride=stride,
        cell_ids=np.array([frame.cell_id] * count),
        row_start=last_rows - (window_len - 1),
    )


def concat_windows(sets: Sequence[WindowSet]) -> WindowSet:
    if not sets:
        raise EmptyInput("no window sets")
    w0 = sets[0]
    for s in sets[1:]:
        if s.window_len != w0.window_len or s.windows.shape[2] != w0.windows.shape[2]:
            raise ShapeMismatch("window shapes differ across sets")
    return WindowSet(
        windows=np.concatenate([s.windows for s in sets]),
        targets=np.concatenate([s.targets for s in sets]),
        window_len=w0.window_len,
        stride=w0.stride,
        cell_ids=np.concatenate([s.cell_ids for s in sets]),
        row_start=np.concatenate([s.row_start for s in sets]),
    )


def save_windows(ws: WindowSet, path: Union[str, Path]) -> None:
    """Length-prefixed JSON header, then windows and targets as little-endian f32."""
    header = {
        "format_version": 1,
        "W": int(ws.window_len),
        "stride": int(ws.stride),
        "channels": list(CHANNELS),
        "count": int(len(ws)),
        "dtype": "f32",
        "byte_order": "little-endian",
        "cell_ids": [str(c) for c in ws.cell_ids],
        "row_start": [int(r) for r in ws.row_start],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(len(blob).to_bytes(8, "little"))
        fh.write(blob)
        fh.write(np.ascontiguousarray(ws.windows, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(ws.targets, dtype="<f4").tobytes())


def load_windows(path: Union[str, Path]) -> WindowSet:
    raw = Path(path).read_bytes()
    hlen = int.from_bytes(raw[:8], "little")
    header = json.loads(raw[8:8 + hlen].decode("utf-8"))
    count, w = header["count"], header["W"]
    nch = len(header["channels"])
    offset = 8 + hlen
    wsize = count * w * nch * 4
    wins = np.frombuffer(raw[offset:offset + wsize], dtype="<f4").reshape(count, w, nch)
    targets = np.frombuffer(raw[offset + wsize:offset + wsize + count * 4], dtype="<f4")
    return WindowSet(
        windows=wins.astype(np.float64),
        targets=targets.astype(np.float64),
        window_len=w,
        stride=header["stride"],
        cell_ids=np.array(header["cell_ids"]),
        row_start=np.array(header["row_start"], dtype=np.int64),
    )


# ---- splits --------------------------------------------------------------------


@dataclass(frozen=True)
class SplitSpec:
    train: tuple
    val: tuple
    test: tuple


def split_by_cell(cell_ids: Sequence[str], ratios=(0.8, 0.1, 0.1), seed: int = 0) -> SplitSpec:
    """Shuffle cells deterministically into disjoint, non-empty partitions."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise InvalidConfig(f"ratios must sum to 1, got {ratios}")
    n = len(cell_ids)
    if n < 3:
        raise TooFewCells(f"need >= 3 cells for a 3-way split, got {n}")
    order = np.random.default_rng(seed).permutation(n)
    shuffled = [cell_ids[k] for k in order]
    n_train = max(1, min(n - 2, round(n * ratios[0])))
    n_val = max(1, min(n - n_train - 1, round(n * ratios[1])))
    return SplitSpec(
        train=tuple(shuffled[:n_train]),
        val=tuple(shuffled[n_train:n_train + n_val]),
        test=tuple(shuffled[n_train + n_val:]),
    )
