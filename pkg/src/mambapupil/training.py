"""Segments, the per-segment RMSE loss, tracking metrics, and the training loop."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .augment import AugmentConfig, augment_sequence, segment_rng, temporal_shift
from .errors import ConfigError, DataError, NumericError
from .events import EventStream, LabelTrack, load_events, load_labels, nearest_label_index
from .model import MambaPupil, ModelConfig
from .representations import encode_bina_rep_sequence, encode_frame, encode_voxel

log = logging.getLogger(__name__)

METRIC_FIELDS = ("epoch", "train_loss", "val_loss", "p5", "p10", "p15", "p_error")


# ---------------------------------------------------------------------------
# segments, loss, metrics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SegmentSpec:
    seq_len: int = 45
    train_stride: int = 5

    def __post_init__(self) -> None:
        if self.seq_len < 1:
            raise ConfigError("segments.seq_len", "must be >= 1")
        if not 1 <= self.train_stride <= self.seq_len:
            raise ConfigError("segments.train_stride", "must satisfy 1 <= stride <= seq_len")

    @property
    def eval_stride(self) -> int:
        return self.seq_len


def make_segments(n_windows: int, spec: SegmentSpec, stride: int | None = None) -> list[tuple[int, int]]:
    """Half-open (start, end) index pairs at starts 0, s, 2s, ... with start + L <= n."""
    L = spec.seq_len
    s = spec.train_stride if stride is None else stride
    if n_windows < L:
        raise DataError(f"sequence of {n_windows} windows is shorter than seq_len={L}")
    return [(a, a + L) for a in range(0, n_windows - L + 1, s)]


def segment_loss(pred: np.ndarray, label: np.ndarray) -> float:
    """sqrt of the mean squared error over all 2L coordinates of one segment."""
    pred = np.asarray(pred, dtype=np.float64)
    label = np.asarray(label, dtype=np.float64)
    if pred.shape != label.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {label.shape}")
    return float(np.sqrt(np.mean((pred - label) ** 2)))


def batch_segment_loss(pred: ad.Tensor, label: np.ndarray) -> ad.Tensor:
    """Differentiable mean over the batch of per-segment losses; pred is (B, L, 2)."""
    d = pred - ad.Tensor(label, dtype=pred.dtype)
    return ad.sqrt((d * d).mean(axis=(1, 2))).mean()


@dataclass(frozen=True)
class TrackingMetrics:
    p5: float
    p10: float
    p15: float
    p_error: float
    n: int

    def as_dict(self) -> dict:
        return {"p5": self.p5, "p10": self.p10, "p15": self.p15, "p_error": self.p_error, "n": self.n}


def pixel_distances(pred: np.ndarray, label: np.ndarray, pixel_space: tuple[int, int]) -> np.ndarray:
    W, H = pixel_space
    d = (np.asarray(pred, dtype=np.float64) - np.asarray(label, dtype=np.float64)) * np.array([W, H], dtype=np.float64)
    return np.sqrt(d[:, 0] ** 2 + d[:, 1] ** 2)


def compute_metrics(pred: np.ndarray, label: np.ndarray, pixel_space: tuple[int, int] = (80, 60)) -> TrackingMetrics:
    """p_n = share of predictions within n pixels (inclusive); p_error = mean distance.

    Predictions are clamped to [0, 1] first; the model itself never clamps.
    """
    pred = np.asarray(pred).reshape(-1, 2)
    label = np.asarray(label).reshape(-1, 2)
    if len(pred) == 0 or pred.shape != label.shape:
        raise ValueError("need N >= 1 matching predictions and labels")
    d = pixel_distances(np.clip(pred, 0.0, 1.0), label, pixel_space)
    return TrackingMetrics(float(np.mean(d <= 5)), float(np.mean(d <= 10)), float(np.mean(d <= 15)),
                           float(np.mean(d)), int(len(d)))


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------

@dataclass
class RepresentationConfig:
    kind: str = "bina_rep"  # bina_rep | frame | voxel
    bits: int = 4
    n_bins: int = 5
    window_us: int = 50_000
    height: int = 60
    width: int = 80
    label_rate_hz: int = 20

    def __post_init__(self) -> None:
        if self.kind not in ("bina_rep", "frame", "voxel"):
            raise ConfigError("representation.kind", f"unknown representation {self.kind!r}")
        if self.bits < 1:
            raise ConfigError("representation.bits", "must be >= 1")
        if self.window_us <= 0:
            raise ConfigError("representation.window_us", "must be positive")

    @property
    def channels(self) -> int:
        return self.n_bins if self.kind == "voxel" else 2


def encode_windows(stream: EventStream, origin: int, n: int, rep: RepresentationConfig) -> np.ndarray:
    """(n, C, H, W) encodings of consecutive windows starting at ``origin``."""
    if rep.kind == "bina_rep":
        return encode_bina_rep_sequence(stream, origin, n, rep.window_us, rep.bits, rep.height, rep.width)
    out = []
    for k in range(n):
        w = stream.slice_time(origin + k * rep.window_us, origin + (k + 1) * rep.window_us)
        if rep.kind == "frame":
            out.append(encode_frame(w, rep.height, rep.width).grid)
        else:
            out.append(encode_voxel(w, rep.n_bins, rep.height, rep.width).grid)
    return np.stack(out) if out else np.zeros((0, rep.channels, rep.height, rep.width))


@dataclass
class Recording:
    name: str
    events: EventStream
    labels: LabelTrack


def load_recording(directory: str | Path) -> Recording:
    """A directory holding ``events.csv``, ``labels.csv`` and ``meta.json``."""
    directory = Path(directory)
    meta_path = directory / "meta.json"
    if not meta_path.exists():
        raise DataError(f"{directory}: missing meta.json")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    resolution = tuple(meta["resolution"])
    events = load_events(directory / "events.csv", resolution)
    labels = load_labels(directory / "labels.csv", resolution, int(meta.get("label_rate_hz", 100)))
    return Recording(directory.name, events, labels)


def load_recordings(data_dir: str | Path) -> list[Recording]:
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise DataError(f"{data_dir}: not a directory")
    if (data_dir / "meta.json").exists():
        return [load_recording(data_dir)]
    dirs = sorted(p for p in data_dir.iterdir() if (p / "meta.json").exists())
    if not dirs:
        raise DataError(f"{data_dir}: no recordings (directories with meta.json) found")
    return [load_recording(d) for d in dirs]


class EncodedSequence:
    """One recording encoded into fixed windows, with per-window labels."""

    def __init__(self, rec: Recording, rep: RepresentationConfig, dtype=np.float32) -> None:
        if rec.labels.rate_hz % rep.label_rate_hz:
            raise DataError(f"{rec.name}: output rate {rep.label_rate_hz} Hz does not divide "
                            f"label rate {rec.labels.rate_hz} Hz")
        self.rec = rec
        self.rep = rep
        self.dtype = dtype
        self.t_stop = int(rec.labels.t[-1]) if len(rec.labels) else 0
        self.n = self.t_stop // rep.window_us
        self.reps = encode_windows(rec.events, 0, self.n, rep).astype(dtype)
        self.t_end = (np.arange(self.n, dtype=np.int64) + 1) * rep.window_us
        idx = nearest_label_index(rec.labels, self.t_end) if self.n else np.zeros(0, dtype=np.int64)
        self.labels = np.stack([rec.labels.cx[idx], rec.labels.cy[idx]], axis=1) if self.n else np.zeros((0, 2))
        self.closed = rec.labels.closed[idx] if self.n else np.zeros(0, dtype=bool)

    def segment(self, start: int, end: int, shift_us: int = 0) -> tuple[np.ndarray, np.ndarray]:
        if shift_us == 0:
            return self.reps[start:end], self.labels[start:end]
        w = self.rep.window_us
        origin = start * w + shift_us
        # keep the shifted span inside the labelled extent
        origin = min(max(origin, 0), self.t_stop - (end - start) * w)
        x = encode_windows(self.rec.events, origin, end - start, self.rep).astype(self.dtype)
        idx = nearest_label_index(self.rec.labels, origin + (np.arange(end - start) + 1) * w)
        y = np.stack([self.rec.labels.cx[idx], self.rec.labels.cy[idx]], axis=1)
        return x, y


def split_train_val(items: Sequence) -> tuple[list, list]:
    """Sequence-level split: the last quarter (at least one) is held out."""
    items = list(items)
    if len(items) < 2:
        return items, items
    n_val = max(1, len(items) // 4)
    return items[:-n_val], items[-n_val:]


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    epochs: int = 1000
    batch_size: int = 32
    seed: int = 0
    precision: str = "float32"
    pixel_space: tuple[int, int] = (80, 60)
    skip_closed: bool = False

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ConfigError("train.epochs", "must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("train.batch_size", "must be >= 1")
        if self.precision not in ("float32", "float64"):
            raise ConfigError("train.precision", "must be float32 or float64")
        self.pixel_space = tuple(int(v) for v in self.pixel_space)


@dataclass
class TrainResult:
    model: MambaPupil
    history: list[dict]
    best_epoch: int
    best_state: dict[str, np.ndarray]


def predict_sequence(model: MambaPupil, seq: EncodedSequence, seq_len: int) -> np.ndarray:
    """Predictions for every window: non-overlapping segments plus a shorter tail."""
    out = []
    with ad.no_grad():
        for a in range(0, seq.n, seq_len):
            x = ad.Tensor(seq.reps[None, a:a + seq_len], dtype=model.dtype)
            out.append(model(x, training=False).data[0])
    return np.concatenate(out).astype(np.float64) if out else np.zeros((0, 2))


def evaluate(model: MambaPupil, seqs: Sequence[EncodedSequence], spec: SegmentSpec,
             pixel_space: tuple[int, int], skip_closed: bool = False) -> tuple[float, TrackingMetrics, list[np.ndarray]]:
    preds, losses = [], []
    all_p, all_y = [], []
    L = spec.seq_len
    for seq in seqs:
        p = predict_sequence(model, seq, L)
        preds.append(p)
        for a in range(0, seq.n, L):
            losses.append(segment_loss(p[a:a + L], seq.labels[a:a + L]))
        keep = ~seq.closed if skip_closed else np.ones(seq.n, dtype=bool)
        all_p.append(p[keep])
        all_y.append(seq.labels[keep])
    metrics = compute_metrics(np.concatenate(all_p), np.concatenate(all_y), pixel_space)
    return float(np.mean(losses)), metrics, preds


def train(model_cfg: ModelConfig, rep: RepresentationConfig, segments: SegmentSpec, augment: AugmentConfig,
          schedule: ad.LrSchedule, cfg: TrainConfig, train_recs: Sequence[Recording], val_recs: Sequence[Recording],
          on_epoch: Callable[[dict], None] | None = None) -> TrainResult:
    """Segment-batched training with augmentation, Adam and warm restarts.

    Deterministic for a fixed configuration: every random draw comes from
    generators derived from ``cfg.seed`` and ``augment.seed``.
    """
    if model_cfg.in_channels != rep.channels:
        raise ConfigError("model.in_channels",
                          f"{model_cfg.in_channels} channels but representation {rep.kind!r} gives {rep.channels}")
    if tuple(model_cfg.resolution) != (rep.height, rep.width):
        raise ConfigError("model.resolution", f"{model_cfg.resolution} != representation {(rep.height, rep.width)}")
    augment.check_frame(rep.height, rep.width)
    dtype = np.dtype(cfg.precision)
    train_seqs = [EncodedSequence(r, rep, dtype) for r in train_recs]
    val_seqs = [EncodedSequence(r, rep, dtype) for r in val_recs]
    index = [(i, a, b) for i, s in enumerate(train_seqs) for a, b in make_segments(s.n, segments)]
    if not index:
        raise DataError("no training segments")

    with ad.default_dtype(dtype):
        model = MambaPupil(model_cfg, seed=cfg.seed, dtype=dtype)
        params = model.parameters()
        opt = ad.AdamState(lr=schedule.eta_max)
        history: list[dict] = []
        best = (math.inf, -1, model.state_dict())
        for epoch in range(cfg.epochs):
            lr = ad.lr_at(schedule, epoch)
            order = np.random.default_rng([cfg.seed, epoch]).permutation(len(index))
            drop_rng = np.random.default_rng([cfg.seed, epoch, 1])
            losses = []
            for b0 in range(0, len(order), cfg.batch_size):
                xs, ys = [], []
                for j in order[b0:b0 + cfg.batch_size]:
                    i, a, b = index[j]
                    rng = segment_rng(augment.seed, epoch, int(j))
                    u = rng.random()
                    shift = temporal_shift(0, augment.max_tshift_us, rng)
                    x, y = train_seqs[i].segment(a, b, shift if u < augment.tshift_prob else 0)
                    x, y = augment_sequence(x, y, augment, rng)
                    xs.append(x)
                    ys.append(y)
                x = ad.Tensor(np.stack(xs), dtype=dtype)
                y = np.stack(ys)
                loss = batch_segment_loss(model(x, training=True, rng=drop_rng), y)
                if not np.isfinite(loss.item()):
                    raise NumericError(f"non-finite loss at epoch {epoch}, batch {b0 // cfg.batch_size}")
                model.zero_grad()
                ad.backward(loss, params)
                ad.adam_step(params, [p.grad for p in params], opt, lr)
                losses.append(loss.item())
            val_loss, metrics, _ = evaluate(model, val_seqs, segments, cfg.pixel_space, cfg.skip_closed)
            row = {"epoch": epoch, "train_loss": float(np.mean(losses)), "val_loss": val_loss,
                   "p5": metrics.p5, "p10": metrics.p10, "p15": metrics.p15, "p_error": metrics.p_error}
            history.append(row)
            if on_epoch is not None:
                on_epoch(row)
            log.info("epoch %d lr %.2e train %.4f val %.4f p10 %.3f err %.2f", epoch, lr, row["train_loss"],
                     val_loss, metrics.p10, metrics.p_error)
            if metrics.p_error < best[0]:
                best = (metrics.p_error, epoch, model.state_dict())
                best = (best[0], best[1], {k: v.copy() for k, v in best[2].items()})
    return TrainResult(model, history, best[1], best[2])


def format_metrics_csv(history: Sequence[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(METRIC_FIELDS)
    for row in history:
        writer.writerow([row["epoch"]] + [repr(float(row[k])) for k in METRIC_FIELDS[1:]])
    return buf.getvalue()
