"""Training-time transforms over (representation sequence, label sequence) pairs.

Sequences are ``(T, C, H, W)`` arrays and labels ``(T, 2)`` normalised
``(cx, cy)``. Every transform returns new arrays and leaves its inputs
untouched. Temporal shift acts on the window origin, before encoding, so it
lives with the dataset code; :func:`temporal_shift` only draws the offset.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


@dataclass
class AugmentConfig:
    flip_prob: float = 0.5
    shift_prob: float = 0.5
    tshift_prob: float = 0.5
    cutout_prob: float = 0.5
    vertical_flip_share: float = 0.5  # of fired flips, fraction mirrored top-bottom
    max_shift: tuple[int, int] = (8, 6)  # (dx, dy) pixels
    max_tshift_us: int = 25_000
    cutout_width: tuple[int, int] = (8, 40)
    cutout_height: tuple[int, int] = (6, 30)
    cutout_per_timestep: bool = False
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("flip_prob", "shift_prob", "tshift_prob", "cutout_prob", "vertical_flip_share"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"augment.{name}", f"{v} not in [0, 1]")
        self.max_shift = tuple(int(v) for v in self.max_shift)
        self.cutout_width = tuple(int(v) for v in self.cutout_width)
        self.cutout_height = tuple(int(v) for v in self.cutout_height)
        if min(self.max_shift) < 0 or self.max_tshift_us < 0:
            raise ConfigError("augment.max_shift", "shift bounds must be non-negative")
        for name in ("cutout_width", "cutout_height"):
            lo, hi = getattr(self, name)
            if not 0 <= lo <= hi:
                raise ConfigError(f"augment.{name}", f"need 0 <= min <= max, got ({lo}, {hi})")

    @classmethod
    def disabled(cls, **overrides) -> "AugmentConfig":
        base = dict(flip_prob=0.0, shift_prob=0.0, tshift_prob=0.0, cutout_prob=0.0)
        return cls(**{**base, **overrides})

    def check_frame(self, H: int, W: int) -> None:
        if self.cutout_width[1] > W or self.cutout_height[1] > H:
            raise ConfigError("augment.cutout_width", f"cutout bounds exceed the {W}x{H} frame")
        if self.max_shift[0] >= W or self.max_shift[1] >= H:
            raise ConfigError("augment.max_shift", f"shift bounds exceed the {W}x{H} frame")


def spatial_flip(seq: np.ndarray, labels: np.ndarray, axis: str) -> tuple[np.ndarray, np.ndarray]:
    """Mirror left-right (``horizontal``) or top-bottom (``vertical``)."""
    labels = np.array(labels, dtype=np.float64, copy=True)
    if axis == "horizontal":
        out = seq[..., ::-1]
        labels[:, 0] = 1.0 - labels[:, 0]
    elif axis == "vertical":
        out = seq[..., ::-1, :]
        labels[:, 1] = 1.0 - labels[:, 1]
    else:
        raise ValueError(f"unknown flip axis {axis!r}")
    return np.ascontiguousarray(out), labels


def spatial_shift(seq: np.ndarray, labels: np.ndarray, dx: int, dy: int) -> tuple[np.ndarray, np.ndarray]:
    """Translate by (dx, dy) pixels with zero fill; labels follow and are clamped to [0, 1]."""
    H, W = seq.shape[-2:]
    if abs(dx) >= W or abs(dy) >= H:
        raise ValueError(f"shift ({dx}, {dy}) exceeds the {W}x{H} frame")
    out = np.zeros_like(seq)
    out[..., max(dy, 0):H + min(dy, 0), max(dx, 0):W + min(dx, 0)] = \
        seq[..., max(-dy, 0):H - max(dy, 0), max(-dx, 0):W - max(dx, 0)]
    labels = np.array(labels, dtype=np.float64, copy=True)
    labels[:, 0] = np.clip(labels[:, 0] + dx / W, 0.0, 1.0)
    labels[:, 1] = np.clip(labels[:, 1] + dy / H, 0.0, 1.0)
    return out, labels


def temporal_shift(window_origin: int, max_tshift_us: int, rng: np.random.Generator) -> int:
    """Origin moved by an integer offset uniform in ``[-max, +max]`` microseconds."""
    if max_tshift_us < 0:
        raise ValueError("max_tshift_us must be >= 0")
    if max_tshift_us == 0:
        return int(window_origin)
    return int(window_origin) + int(rng.integers(-max_tshift_us, max_tshift_us + 1))


def event_cutout(seq: np.ndarray, rect: tuple[int, int, int, int]) -> np.ndarray:
    """Zero ``[x0, x0+w) x [y0, y0+h)`` in every channel and timestep."""
    x0, y0, w, h = (int(v) for v in rect)
    H, W = seq.shape[-2:]
    if w < 0 or h < 0 or x0 < 0 or y0 < 0 or x0 + w > W or y0 + h > H:
        raise ValueError(f"cutout rect {rect} outside the {W}x{H} frame")
    out = seq.copy()
    out[..., y0:y0 + h, x0:x0 + w] = 0
    return out


def sample_cutout(cfg: AugmentConfig, H: int, W: int, rng: np.random.Generator) -> tuple[int, int, int, int]:
    w = int(rng.integers(cfg.cutout_width[0], min(cfg.cutout_width[1], W) + 1))
    h = int(rng.integers(cfg.cutout_height[0], min(cfg.cutout_height[1], H) + 1))
    x0 = int(rng.integers(0, W - w + 1))
    y0 = int(rng.integers(0, H - h + 1))
    return x0, y0, w, h


def augment_sequence(seq: np.ndarray, labels: np.ndarray, cfg: AugmentConfig,
                     rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Apply flip, shift and cutout, each firing independently with its probability.

    Every draw is made regardless of whether a technique fires, so the
    random stream (and hence the other techniques' samples) does not depend
    on the configured probabilities.
    """
    H, W = seq.shape[-2:]
    u = rng.random(4)
    vertical = rng.random() < cfg.vertical_flip_share
    dx = int(rng.integers(-cfg.max_shift[0], cfg.max_shift[0] + 1))
    dy = int(rng.integers(-cfg.max_shift[1], cfg.max_shift[1] + 1))
    rects = [sample_cutout(cfg, H, W, rng) for _ in range(len(seq) if cfg.cutout_per_timestep else 1)]

    if u[0] < cfg.flip_prob:
        seq, labels = spatial_flip(seq, labels, "vertical" if vertical else "horizontal")
    if u[1] < cfg.shift_prob:
        seq, labels = spatial_shift(seq, labels, dx, dy)
    if u[2] < cfg.cutout_prob:
        if cfg.cutout_per_timestep:
            seq = np.stack([event_cutout(frame, r) for frame, r in zip(seq, rects)])
        else:
            seq = event_cutout(seq, rects[0])
    return seq, labels


def segment_rng(seed: int, epoch: int, index: int) -> np.random.Generator:
    """Independent generator per (epoch, segment) so parallel augmentation stays deterministic."""
    return np.random.default_rng([seed, epoch, index])
