"""Two-stage remaining-throughput model: autoencoder, then LSTM regressor.

Stage one trains an autoencoder on per-timestep (V, I, T) vectors and freezes
it. Stage two unrolls an LSTM over each encoded window; the final hidden state
feeds a linear head that emits normalized remaining discharge-Ah. Targets are
attached on the throughput axis by the labeling module and never derived from
feature values, so the trained model consumes nothing but measurable channels.

Training is single-threaded, minibatched, and fully seeded: identical data,
config, and seed reproduce identical parameters bit for bit.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import (
    CorruptCheckpoint,
    DivergedLoss,
    EmptyInput,
    EmptyTrainingSet,
    FrameTooShort,
    InvalidConfig,
    NonMonotonicTimestamp,
    RateTooCoarse,
    ShapeMismatch,
    TooFewCells,
    VersionMismatch,
)
from .features import (
    CHANNELS,
    DEFAULT_RATE_S,
    DEFAULT_STRIDE,
    DEFAULT_WINDOW_LEN,
    FeatureFrame,
    NormStats,
    WindowSet,
    concat_windows,
    fit_normalizer,
    make_windows,
    resample_uniform,
)
from .ingest import Manifest
from .neural import (
    AutoencoderParams,
    DenseParams,
    LstmParams,
    adam_init,
    adam_step,
    autoencoder_backward,
    autoencoder_forward,
    autoencoder_init,
    dense_backward,
    dense_forward,
    dense_init,
    encode,
    lstm_backward,
    lstm_forward,
    lstm_init,
    mse_grad,
    mse_loss,
)

log = logging.getLogger(__name__)

BUNDLE_FORMAT_VERSION = "1"
_EVAL_CHUNK = 1024  # windows per forward chunk when predicting without gradients


# ---- configuration --------------------------------------------------------------


@dataclass
class TrainConfig:
    epochs: int = 60
    batch_size: int = 256
    lr: float = 1e-3
    # Per-epoch multiplicative learning-rate decay for the recurrent stage; 1.0
    # keeps the rate constant. A gentle decay settles the late-epoch wobble
    # that a rate chosen for fast early progress otherwise leaves behind.
    lr_decay: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    early_stop_patience: int = 10
    latent_dim: int = 2
    hidden_size: int = 16
    # Clip the global gradient norm before each optimizer step; recurrent nets
    # occasionally spike and an un-clipped step can undo many epochs of work.
    grad_clip_norm: float = 5.0
    # Stage-one schedule: the autoencoder sees per-timestep vectors, of which
    # a fleet provides millions; a capped subsample trains it just as well, and
    # per-vector batches can be much larger than per-window ones.
    ae_epochs: int = 25
    ae_max_vectors: int = 200_000
    ae_batch_size: int = 2048
    # Window geometry echoed from the features module so a checkpoint knows
    # how to rebuild its own inputs.
    window_len: int = DEFAULT_WINDOW_LEN
    stride: int = DEFAULT_STRIDE
    rate_s: float = DEFAULT_RATE_S
    val_fraction: float = 0.25

    def __post_init__(self):
        problems = []
        for name in ("epochs", "batch_size", "latent_dim", "hidden_size",
                     "ae_epochs", "ae_max_vectors", "ae_batch_size",
                     "window_len", "stride"):
            if getattr(self, name) < 1:
                problems.append(f"{name} must be >= 1")
        if self.lr <= 0 or self.eps <= 0 or self.rate_s <= 0:
            problems.append("lr, eps, and rate_s must be > 0")
        if self.grad_clip_norm <= 0:
            problems.append("grad_clip_norm must be > 0")
        if not 0.0 < self.lr_decay <= 1.0:
            problems.append("lr_decay must be in (0, 1]")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            problems.append("beta1 and beta2 must be in [0, 1)")
        if self.early_stop_patience < 0:
            problems.append("early_stop_patience must be >= 0")
        if not 0.0 < self.val_fraction < 1.0:
            problems.append("val_fraction must be in (0, 1)")
        if problems:
            raise InvalidConfig("; ".join(problems))


def save_train_config(config: TrainConfig, path: Union[str, Path]) -> None:
    Path(path).write_text(
        json.dumps(asdict(config), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_train_config(source: Union[str, Path, dict]) -> TrainConfig:
    doc = dict(source) if isinstance(source, dict) else json.loads(
        Path(source).read_text(encoding="utf-8"))
    try:
        return TrainConfig(**doc)
    except TypeError as exc:
        raise InvalidConfig(str(exc)) from None


# ---- model bundle ----------------------------------------------------------------


@dataclass
class ModelBundle:
    """Everything needed to turn raw windows into remaining-Ah estimates."""

    autoencoder: AutoencoderParams
    lstm: LstmParams
    head: DenseParams
    norm: NormStats
    config: TrainConfig
    format_version: str = BUNDLE_FORMAT_VERSION

    def __post_init__(self):
        if not self.format_version:
            raise VersionMismatch("bundle has no format version")
        if self.norm.mean.shape[0] != self.autoencoder.input_size:
            raise ShapeMismatch(
                f"normalizer has {self.norm.mean.shape[0]} channels, autoencoder "
                f"expects {self.autoencoder.input_size}")
        if self.norm.target_scale_ah is None or self.norm.target_scale_ah <= 0:
            raise InvalidConfig("bundle requires a positive target_scale_ah")


# ---- stage one: autoencoder -------------------------------------------------------


def train_autoencoder(windows, config: TrainConfig,
                      activation: str = "tanh") -> Tuple[AutoencoderParams, list]:
    """Fit the per-timestep compressor on normalized feature vectors.

    windows may be (n, W, C) stacks or plain (m, C) vectors; they are flattened
    to vectors either way. Returns the trained parameters and the per-epoch
    full-data loss history.
    """
    data = np.asarray(windows, dtype=np.float64)
    if data.ndim == 3:
        data = data.reshape(-1, data.shape[-1])
    if data.ndim != 2 or data.shape[0] == 0:
        raise EmptyTrainingSet(f"no training vectors (shape {np.shape(windows)})")
    rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(0,)))
    if data.shape[0] > config.ae_max_vectors:
        keep = rng.choice(data.shape[0], size=config.ae_max_vectors, replace=False)
        data = data[np.sort(keep)]

    model = autoencoder_init(rng, [data.shape[1], config.latent_dim], activation)
    arrays = model.arrays()
    state = adam_init(arrays, config.lr, config.beta1, config.beta2, config.eps)
    history = []
    for epoch in range(config.ae_epochs):
        for idx in _epoch_batches(rng, data.shape[0], config.ae_batch_size):
            batch = data[idx]
            current = model.with_arrays(arrays)
            grads = autoencoder_backward(current, batch, autoencoder_forward(current, batch))
            arrays, state = adam_step(state, arrays, _clip_grads(grads, config.grad_clip_norm))
        current = model.with_arrays(arrays)
        loss = mse_loss(autoencoder_forward(current, data).reconstruction, data)
        if not math.isfinite(loss):
            raise DivergedLoss(f"autoencoder loss {loss} at epoch {epoch}")
        history.append(loss)
        log.debug("autoencoder epoch %d loss %.6g", epoch, loss)
    return model.with_arrays(arrays), history


def _epoch_batches(rng: np.random.Generator, n: int, batch_size: int) -> Iterator[np.ndarray]:
    order = rng.permutation(n)
    for k in range(0, n, batch_size):
        yield order[k:k + batch_size]


def _clip_grads(grads: dict, max_norm: float) -> dict:
    """Scale the whole gradient dict so its global L2 norm is at most max_norm."""
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total <= max_norm:
        return grads
    factor = max_norm / total
    return {k: g * factor for k, g in grads.items()}


# ---- stage two: LSTM regressor ----------------------------------------------------


def train_rul(train: WindowSet, val: WindowSet, autoencoder: AutoencoderParams,
              norm: NormStats, config: TrainConfig) -> Tuple[ModelBundle, list]:
    """Train the recurrent regressor on raw windows with Ah targets.

    The autoencoder stays frozen. Early stopping watches validation RMSE (in
    Ah) with the configured patience and restores the best epoch's weights.
    Returns the bundle and a history of (epoch, train_loss, val_rmse_ah) rows.
    """
    if len(train) == 0:
        raise EmptyTrainingSet("no training windows")
    if len(val) == 0:
        raise EmptyTrainingSet("no validation windows")
    scale = norm.target_scale_ah
    if scale is None or scale <= 0:
        raise InvalidConfig("norm.target_scale_ah must be positive before training")

    x_train = (train.windows - norm.mean) / norm.std
    y_train = train.targets / scale
    x_val = (val.windows - norm.mean) / norm.std
    y_val = val.targets / scale

    rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(1,)))
    lstm = lstm_init(rng, autoencoder.latent_size, config.hidden_size)
    head = dense_init(rng, config.hidden_size, 1, "linear")
    arrays = {f"lstm.{k}": v for k, v in lstm.arrays().items()}
    arrays.update({f"head.{k}": v for k, v in head.arrays().items()})
    state = adam_init(arrays, config.lr, config.beta1, config.beta2, config.eps)

    n, w, _ = x_train.shape
    latent_train = encode(autoencoder, x_train.reshape(n * w, -1)).reshape(n, w, -1)
    nv, wv, _ = x_val.shape
    latent_val = encode(autoencoder, x_val.reshape(nv * wv, -1)).reshape(nv, wv, -1)

    def unpack(d):
        cur_lstm = lstm.with_arrays({k: d[f"lstm.{k}"] for k in lstm.arrays()})
        cur_head = head.with_arrays({k[5:]: v for k, v in d.items() if k.startswith("head.")})
        return cur_lstm, cur_head

    history = []
    best = {k: v.copy() for k, v in arrays.items()}
    best_rmse = math.inf
    bad_epochs = 0
    for epoch in range(config.epochs):
        if config.lr_decay != 1.0:
            state = replace(state, lr=config.lr * config.lr_decay ** epoch)
        loss_sum = 0.0
        for idx in _epoch_batches(rng, n, config.batch_size):
            cur_lstm, cur_head = unpack(arrays)
            seq = latent_train[idx]
            fwd = lstm_forward(cur_lstm, seq)
            pred = dense_forward(cur_head, fwd.final_h)[:, 0]
            loss_sum += mse_loss(pred, y_train[idx]) * idx.size
            head_grads, dh = dense_backward(
                cur_head, fwd.final_h, mse_grad(pred, y_train[idx])[:, None])
            upstream = np.zeros_like(fwd.hidden_seq)
            upstream[:, -1] = dh
            lstm_grads, _ = lstm_backward(cur_lstm, seq, fwd, upstream)
            grads = {f"lstm.{k}": v for k, v in lstm_grads.items()}
            grads.update({f"head.{k}": v for k, v in head_grads.items()})
            arrays, state = adam_step(state, arrays, _clip_grads(grads, config.grad_clip_norm))

        train_loss = loss_sum / n
        cur_lstm, cur_head = unpack(arrays)
        val_pred = _predict_latent(cur_lstm, cur_head, latent_val)
        val_rmse = float(np.sqrt(np.mean((val_pred - y_val) ** 2))) * scale
        if not (math.isfinite(train_loss) and math.isfinite(val_rmse)):
            raise DivergedLoss(
                f"epoch {epoch}: train loss {train_loss}, val rmse {val_rmse}")
        history.append((epoch, train_loss, val_rmse))
        log.info("epoch %d: train loss %.6g, val rmse %.4f Ah", epoch, train_loss, val_rmse)
        if val_rmse < best_rmse:
            best_rmse = val_rmse
            best = {k: v.copy() for k, v in arrays.items()}
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs > config.early_stop_patience:
                log.info("early stop at epoch %d (best val rmse %.4f Ah)", epoch, best_rmse)
                break

    final_lstm, final_head = unpack(best)
    bundle = ModelBundle(autoencoder, final_lstm, final_head, norm, config)
    return bundle, history


def _predict_latent(lstm: LstmParams, head: DenseParams, latent: np.ndarray) -> np.ndarray:
    """Normalized predictions for pre-encoded windows, chunked to bound memory."""
    out = np.empty(latent.shape[0])
    for k in range(0, latent.shape[0], _EVAL_CHUNK):
        final_h = lstm_forward(lstm, latent[k:k + _EVAL_CHUNK]).final_h
        out[k:k + _EVAL_CHUNK] = dense_forward(head, final_h)[:, 0]
    return out


def predict_windows(bundle: ModelBundle, windows) -> np.ndarray:
    """Remaining-Ah estimates for raw (unnormalized) windows of shape (n, W, C)."""
    wins = np.asarray(windows, dtype=np.float64)
    if wins.ndim != 3 or wins.shape[-1] != len(CHANNELS):
        raise ShapeMismatch(f"windows must be (n, W, {len(CHANNELS)}), got {wins.shape}")
    x = (wins - bundle.norm.mean) / bundle.norm.std
    n, w, c = x.shape
    latent = encode(bundle.autoencoder, x.reshape(n * w, c)).reshape(n, w, -1)
    return _predict_latent(bundle.lstm, bundle.head, latent) * bundle.norm.target_scale_ah


# ---- dataset assembly --------------------------------------------------------------


def group_records(records: Sequence) -> dict:
    """Label records bucketed per cell, sorted by throughput."""
    by_cell: dict = {}
    for rec in records:
        by_cell.setdefault(rec.cell_id, []).append(rec)
    for recs in by_cell.values():
        recs.sort(key=lambda r: r.cumulative_discharge_ah)
    return by_cell


def eol_from_records(records: Sequence) -> float:
    """Throughput-to-EOL implied by a cell's label records.

    Every record before the crossing satisfies position + remaining = EOL
    exactly; past it, remaining is clamped to zero and carries no information.
    """
    live = [r.cumulative_discharge_ah + r.remaining_ah for r in records if r.remaining_ah > 0]
    if live:
        return max(live)
    return max(r.cumulative_discharge_ah for r in records)


def windows_for_cells(manifest: Manifest, by_cell: dict, cell_ids: Sequence[str],
                      config: TrainConfig) -> Tuple[WindowSet, list]:
    """Resample each cell and window it with interpolated Ah targets.

    Returns the concatenated WindowSet and the per-cell frames (in order).
    Cells shorter than one window are skipped with a warning.
    """
    sets, frames = [], []
    for cell_id in cell_ids:
        try:
            frame = resample_uniform(manifest.load_series(cell_id), config.rate_s)
            ws = make_windows(frame, by_cell[cell_id], config.window_len, config.stride)
        except (FrameTooShort, RateTooCoarse, EmptyInput) as exc:
            log.warning("cell %s skipped: %s", cell_id, exc)
            continue
        sets.append(ws)
        frames.append(frame)
    if not sets:
        raise EmptyTrainingSet(f"no usable windows among cells {list(cell_ids)}")
    return concat_windows(sets), frames


def _train_val_cells(cell_ids: Sequence[str], val_fraction: float, seed: int):
    n = len(cell_ids)
    if n < 2:
        raise TooFewCells(f"need >= 2 labeled cells to hold out validation, got {n}")
    order = np.random.default_rng(
        np.random.SeedSequence(seed, spawn_key=(2,))).permutation(n)
    n_val = min(n - 1, max(1, round(n * val_fraction)))
    shuffled = [cell_ids[k] for k in order]
    return shuffled[n_val:], shuffled[:n_val]


@dataclass
class PipelineResult:
    bundle: ModelBundle
    ae_history: list
    history: list  # (epoch, train_loss, val_rmse_ah)
    train_cells: tuple
    val_cells: tuple


def fit_pipeline(manifest: Manifest, records: Sequence, config: TrainConfig) -> PipelineResult:
    """Both training stages end to end from a manifest and label records."""
    by_cell = group_records(records)
    cells = [c for c in manifest.cell_ids() if c in by_cell]
    if not cells:
        raise EmptyTrainingSet("no labeled cells in manifest")
    train_cells, val_cells = _train_val_cells(cells, config.val_fraction, config.seed)
    log.info("training on %d cell(s), validating on %d", len(train_cells), len(val_cells))

    train_ws, train_frames = windows_for_cells(manifest, by_cell, train_cells, config)
    val_ws, _ = windows_for_cells(manifest, by_cell, val_cells, config)

    norm = fit_normalizer(train_frames)
    norm.target_scale_ah = float(
        np.mean([eol_from_records(by_cell[c]) for c in train_cells]))

    x_train = (train_ws.windows - norm.mean) / norm.std
    autoencoder, ae_history = train_autoencoder(x_train, config)
    log.info("autoencoder trained: loss %.6g -> %.6g", ae_history[0], ae_history[-1])
    bundle, history = train_rul(train_ws, val_ws, autoencoder, norm, config)
    return PipelineResult(bundle, ae_history, history,
                          tuple(train_cells), tuple(val_cells))


def save_history_csv(history: Sequence, path: Union[str, Path]) -> None:
    lines = ["epoch,train_loss,val_rmse"]
    for epoch, train_loss, val_rmse in history:
        lines.append(f"{int(epoch)},{float(train_loss)!r},{float(val_rmse)!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


# ---- evaluation --------------------------------------------------------------------


@dataclass
class EvalReport:
    rmse_ah: float
    mae_ah: float
    max_abs_err_ah: float
    n_windows: int
    per_cell: dict  # cell_id -> {rmse_ah, mae_ah, max_abs_err_ah, n_windows}


def _error_stats(err: np.ndarray) -> dict:
    ae = np.abs(err)
    return {
        "rmse_ah": float(np.sqrt(np.mean(err * err))),
        "mae_ah": float(np.mean(ae)),
        "max_abs_err_ah": float(ae.max()),
        "n_windows": int(err.size),
    }


def evaluate(bundle: ModelBundle, windows: WindowSet) -> EvalReport:
    """Denormalized prediction errors against the window targets, in Ah."""
    if len(windows) == 0:
        raise EmptyInput("no windows to evaluate")
    err = predict_windows(bundle, windows.windows) - windows.targets
    per_cell = {}
    for cell_id in np.unique(windows.cell_ids):
        per_cell[str(cell_id)] = _error_stats(err[windows.cell_ids == cell_id])
    overall = _error_stats(err)
    return EvalReport(per_cell=per_cell, **overall)


def report_json(report: EvalReport) -> str:
    doc = {
        "rmse_ah": report.rmse_ah,
        "mae_ah": report.mae_ah,
        "max_abs_err_ah": report.max_abs_err_ah,
        "n_windows": report.n_windows,
        "per_cell": report.per_cell,
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def report_table(report: EvalReport) -> str:
    header = f"{'cell':<12}{'windows':>9}{'rmse_ah':>11}{'mae_ah':>11}{'max_ah':>11}"
    rows = [header]
    for cell_id in sorted(report.per_cell):
        s = report.per_cell[cell_id]
        rows.append(f"{cell_id:<12}{s['n_windows']:>9}{s['rmse_ah']:>11.4f}"
                    f"{s['mae_ah']:>11.4f}{s['max_abs_err_ah']:>11.4f}")
    rows.append(f"{'overall':<12}{report.n_windows:>9}{report.rmse_ah:>11.4f}"
                f"{report.mae_ah:>11.4f}{report.max_abs_err_ah:>11.4f}")
    return "\n".join(rows)


# ---- streaming prediction -----------------------------------------------------------


class OnlinePredictor:
    """Incremental twin of the batch path: push raw samples, get estimates.

    Resampling, normalization, and windowing replicate the batch arithmetic:
    the uniform grid anchors at the first timestamp, and an estimate is
    emitted whenever the grid reaches a row that ends a strided window — the
    first after exactly window_len rows. Consumes only time, V, I, T.
    """

    def __init__(self, bundle: ModelBundle):
        self.bundle = bundle
        cfg = bundle.config
        self._rate = float(cfg.rate_s)
        self._window = int(cfg.window_len)
        self._stride = int(cfg.stride)
        self._t0: Optional[float] = None
        self._t_prev: Optional[float] = None
        self._y_prev: Optional[np.ndarray] = None
        self._rows: list = []  # normalized grid rows, most recent window_len
        self._grid_count = 0
        self._samples = 0

    def push(self, timestamp_s: float, voltage_v: float, current_a: float,
             temperature_c: float) -> list:
        """Feed one raw sample; returns newly available (grid_time_s, remaining_ah)."""
        self._samples += 1
        t = float(timestamp_s)
        if self._t_prev is not None and t <= self._t_prev:
            raise NonMonotonicTimestamp(self._samples)
        y = np.array([voltage_v, current_a, temperature_c], dtype=np.float64)
        if self._t0 is None:
            self._t0 = t
        out = []
        # Same row count the batch resampler would produce for data up to t.
        reachable = int(np.floor((t - self._t0) / self._rate)) + 1
        while self._grid_count < reachable:
            g = self._t0 + self._rate * self._grid_count
            if self._t_prev is None or g >= t:
                row = y
            else:
                row = self._y_prev + (self._y_prev - y) / (self._t_prev - t) * (g - self._t_prev)
            self._append_row(row, g, out)
        self._t_prev, self._y_prev = t, y
        return out

    def _append_row(self, raw_row: np.ndarray, grid_time: float, out: list) -> None:
        norm = self.bundle.norm
        self._rows.append((raw_row - norm.mean) / norm.std)
        if len(self._rows) > self._window:
            del self._rows[0]
        self._grid_count += 1
        past = self._grid_count - self._window
        if past >= 0 and past % self._stride == 0:
            window = np.stack(self._rows)
            latent = encode(self.bundle.autoencoder, window)
            final_h = lstm_forward(self.bundle.lstm, latent).final_h
            est = float(dense_forward(self.bundle.head, final_h)[0]
                        * norm.target_scale_ah)
            out.append((grid_time, est))


def predict_online(bundle: ModelBundle, stream: Iterable) -> Iterator[Tuple[float, float]]:
    """Map a time-ordered (t, V, I, T) stream to (grid_time_s, remaining_ah)."""
    predictor = OnlinePredictor(bundle)
    for t, v, i, temp in stream:
        yield from predictor.push(t, v, i, temp)


# ---- checkpoint ---------------------------------------------------------------------


def _bundle_arrays(bundle: ModelBundle) -> dict:
    out = {f"ae.{k}": v for k, v in bundle.autoencoder.arrays().items()}
    out.update({f"lstm.{k}": v for k, v in bundle.lstm.arrays().items()})
    out.update({f"head.{k}": v for k, v in bundle.head.arrays().items()})
    return out


def save_bundle(bundle: ModelBundle, path: Union[str, Path]) -> None:
    """Single-file checkpoint: length-prefixed JSON header + checksummed floats."""
    arrays = _bundle_arrays(bundle)
    names = sorted(arrays)
    payload = b"".join(np.ascontiguousarray(arrays[k], dtype="<f8").tobytes()
                       for k in names)
    header = {
        "format_version": bundle.format_version,
        "dtype": "<f8",
        "arrays": [[k, list(arrays[k].shape)] for k in names],
        "autoencoder": {
            "activation": bundle.autoencoder.activation,
            "encoder": [layer.activation for layer in bundle.autoencoder.encoder],
            "decoder": [layer.activation for layer in bundle.autoencoder.decoder],
        },
        "head_activation": bundle.head.activation,
        "norm": {
            "mean": [float(x) for x in bundle.norm.mean],
            "std": [float(x) for x in bundle.norm.std],
            "target_scale_ah": bundle.norm.target_scale_ah,
        },
        "config": asdict(bundle.config),
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(len(blob).to_bytes(8, "little"))
        fh.write(blob)
        fh.write(payload)


def load_bundle(path: Union[str, Path]) -> ModelBundle:
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise CorruptCheckpoint("file shorter than its length prefix")
    hlen = int.from_bytes(raw[:8], "little")
    if len(raw) < 8 + hlen:
        raise CorruptCheckpoint("header truncated")
    try:
        header = json.loads(raw[8:8 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCheckpoint(f"unreadable header: {exc}") from None
    version = header.get("format_version")
    if version != BUNDLE_FORMAT_VERSION:
        raise VersionMismatch(
            f"checkpoint format {version!r}, this build reads {BUNDLE_FORMAT_VERSION!r}")
    payload = raw[8 + hlen:]
    expected = sum(int(np.prod(shape)) for _, shape in header["arrays"]) * 8
    if len(payload) != expected:
        raise CorruptCheckpoint(f"payload is {len(payload)} bytes, expected {expected}")
    if hashlib.sha256(payload).hexdigest() != header["payload_sha256"]:
        raise CorruptCheckpoint("payload checksum mismatch")

    arrays = {}
    offset = 0
    for name, shape in header["arrays"]:
        size = int(np.prod(shape)) * 8
        arrays[name] = np.frombuffer(payload[offset:offset + size],
                                     dtype="<f8").reshape(shape).copy()
        offset += size

    ae_meta = header["autoencoder"]
    encoder = [DenseParams(arrays[f"ae.enc{k}.w"], arrays[f"ae.enc{k}.b"], act)
               for k, act in enumerate(ae_meta["encoder"])]
    decoder = [DenseParams(arrays[f"ae.dec{k}.w"], arrays[f"ae.dec{k}.b"], act)
               for k, act in enumerate(ae_meta["decoder"])]
    autoencoder = AutoencoderParams(encoder, decoder, ae_meta["activation"])
    lstm_arrays = {k[5:]: v for k, v in arrays.items() if k.startswith("lstm.")}
    lstm = LstmParams(**lstm_arrays)
    head = DenseParams(arrays["head.w"], arrays["head.b"], header["head_activation"])
    norm = NormStats(header["norm"]["mean"], header["norm"]["std"],
                     header["norm"]["target_scale_ah"])
    config = load_train_config(header["config"])
    return ModelBundle(autoencoder, lstm, head, norm, config, format_version=version)
