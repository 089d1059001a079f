"""Synthetic event-camera eye simulator.

A flat background with a dark pupil disc (and optional iris ring) is
rendered in log intensity at a fixed internal frame rate. Each pixel keeps
the log intensity at which it last fired; whenever the current value moves
at least one contrast threshold ``C`` away from it, an event of the matching
polarity is emitted and the reference advances by ``p * C``. A large step
therefore yields several events, timestamped by linear interpolation inside
the frame interval.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .events import EventStream, LabelTrack, Resolution

KINDS = ("fixation", "saccade", "smooth_pursuit", "blink", "random")


@dataclass
class SceneModel:
    resolution: Resolution = (160, 120)
    background_log_intensity: float = 0.0
    pupil_radius: float = 10.0
    pupil_contrast: float = -1.0
    iris_radius: float | None = 22.0
    iris_contrast: float = -0.4
    threshold: float = 0.2
    noise_rate_hz: float = 0.0  # per pixel, Poisson

    def __post_init__(self) -> None:
        if self.threshold <= 0:
            raise ValueError("threshold must be positive")
        outer = max(self.pupil_radius, self.iris_radius or 0.0)
        if outer >= min(self.resolution) / 2:
            raise ValueError("pupil/iris radius must be below min(W, H) / 2")

    @property
    def outer_radius(self) -> float:
        return max(self.pupil_radius, self.iris_radius or 0.0)


@dataclass
class Trajectory:
    """One motion phase. Positions are sensor pixel coordinates."""

    kind: str
    duration_us: int
    start: tuple[float, float]
    end: tuple[float, float] | None = None
    params: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown trajectory kind {self.kind!r}")
        if self.duration_us <= 0:
            raise ValueError("duration must be positive")
        if self.end is None or self.kind in ("fixation", "blink"):
            self.end = self.start

    def position(self, tau: np.ndarray | float) -> np.ndarray:
        """Pupil centre at time ``tau`` (µs since the phase began), shape (..., 2)."""
        s = np.clip(np.asarray(tau, dtype=np.float64) / self.duration_us, 0.0, 1.0)
        a, b = np.asarray(self.start), np.asarray(self.end)
        if self.kind == "saccade":
            s = 10 * s**3 - 15 * s**4 + 6 * s**5  # minimum-jerk profile
        pos = a + (b - a) * s[..., None]
        if self.kind == "random":
            envelope = np.sin(np.pi * s)[..., None]
            for amp, freq, phase in self.params.get("components", ()):
                pos = pos + envelope * np.asarray(amp) * np.sin(2 * np.pi * freq * s + phase)[..., None]
        return pos

    def eyelid(self, tau: np.ndarray | float) -> np.ndarray:
        tau = np.asarray(tau, dtype=np.float64)
        if self.kind != "blink":
            return np.zeros_like(tau)
        close = self.params.get("close_us", self.duration_us * 0.3)
        reopen = self.params.get("open_us", self.duration_us * 0.4)
        hold_end = self.duration_us - reopen
        closing = np.clip(tau / close, 0.0, 1.0)
        opening = np.clip((self.duration_us - tau) / reopen, 0.0, 1.0)
        return np.where(tau <= hold_end, closing, np.minimum(closing, opening))


class _PixelGrid:
    def __init__(self, resolution: Resolution) -> None:
        w, h = resolution
        self.xc = (np.arange(w, dtype=np.float64) + 0.5)[None, :]
        self.yc = (np.arange(h, dtype=np.float64) + 0.5)[:, None]
        self.rows = np.arange(h)[:, None]


_GRIDS: dict[Resolution, _PixelGrid] = {}


def render_log_intensity(scene: SceneModel, pupil_center: Sequence[float], eyelid: float = 0.0) -> np.ndarray:
    """Log-intensity image (H, W) of the eye with the lid lowered by ``eyelid`` of the height."""
    w, h = scene.resolution
    grid = _GRIDS.get(scene.resolution)
    if grid is None:
        grid = _GRIDS[scene.resolution] = _PixelGrid(scene.resolution)
    cx, cy = float(pupil_center[0]), float(pupil_center[1])
    if not (0 <= cx <= w and 0 <= cy <= h):
        raise ValueError(f"pupil centre ({cx}, {cy}) outside the frame")
    d2 = (grid.xc - cx) ** 2 + (grid.yc - cy) ** 2
    bg = scene.background_log_intensity
    img = np.full((h, w), bg, dtype=np.float64)
    if scene.iris_radius is not None:
        img[d2 <= scene.iris_radius ** 2] = bg + scene.iris_contrast
    img[d2 <= scene.pupil_radius ** 2] = bg + scene.pupil_contrast
    if eyelid > 0:
        img[(grid.rows < eyelid * h).repeat(w, axis=1)] = bg
    return img


class EventEmitter:
    """Per-pixel threshold crossing detector with fire-and-rebase references."""

    def __init__(self, first_frame: np.ndarray, t0: int, threshold: float) -> None:
        self.reference = first_frame.astype(np.float64).copy()
        self.prev = self.reference.copy()
        self.t_prev = int(t0)
        self.threshold = float(threshold)

    def step(self, frame: np.ndarray, t: int) -> np.ndarray:
        """Advance to ``frame`` at time ``t``; return events as an (n, 4) int64 array."""
        C = self.threshold
        diff = frame - self.reference
        counts = np.floor(np.abs(diff) / C + 1e-9).astype(np.int64)
        ys, xs = np.nonzero(counts)
        out = np.zeros((0, 4), dtype=np.int64)
        if len(ys):
            n = counts[ys, xs]
            sign = np.sign(diff[ys, xs])
            ref = self.reference[ys, xs]
            prev = self.prev[ys, xs]
            cur = frame[ys, xs]
            rep = np.repeat(np.arange(len(ys)), n)
            k = np.arange(rep.size) - np.repeat(np.cumsum(n) - n, n) + 1
            level = ref[rep] + sign[rep] * k * C
            span = cur[rep] - prev[rep]
            with np.errstate(divide="ignore", invalid="ignore"):
                frac = np.where(span != 0, (level - prev[rep]) / span, 1.0)
            frac = np.clip(frac, 0.0, 1.0)
            te = self.t_prev + np.round(frac * (t - self.t_prev)).astype(np.int64)
            te = np.maximum(te, self.t_prev + 1) if t > self.t_prev else te
            out = np.stack([te, xs[rep], ys[rep], sign[rep].astype(np.int64)], axis=1)
            out = out[np.lexsort((out[:, 1], out[:, 2], out[:, 0]))]
            self.reference[ys, xs] = ref + sign * n * C
        self.prev = frame.astype(np.float64).copy()
        self.t_prev = int(t)
        return out


def emit_events(scene: SceneModel, frames: Iterable[tuple[int, np.ndarray]]) -> EventStream:
    """Run the threshold model over time-ordered ``(t_us, log_intensity)`` frames."""
    emitter = None
    chunks = []
    for t, img in frames:
        if emitter is None:
            emitter = EventEmitter(img, t, scene.threshold)
            continue
        if t < emitter.t_prev:
            raise ValueError("frames must be time-ordered")
        chunks.append(emitter.step(img, t))
    if not chunks:
        return EventStream.empty(scene.resolution)
    ev = np.concatenate(chunks)
    return EventStream(scene.resolution, ev[:, 0], ev[:, 1], ev[:, 2], ev[:, 3])


def _phase_lookup(trajectories: Sequence[Trajectory], t: np.ndarray):
    starts = np.cumsum([0] + [tr.duration_us for tr in trajectories])
    idx = np.clip(np.searchsorted(starts, t, side="right") - 1, 0, len(trajectories) - 1)
    pos = np.zeros((len(t), 2))
    lid = np.zeros(len(t))
    for i, tr in enumerate(trajectories):
        m = idx == i
        if np.any(m):
            tau = t[m] - starts[i]
            pos[m] = tr.position(tau)
            lid[m] = tr.eyelid(tau)
    return pos, lid, int(starts[-1])


def generate_dataset(trajectories: Sequence[Trajectory], scene: SceneModel, label_rate_hz: int = 100,
                     seed: int = 0, sim_rate_hz: int = 1000) -> tuple[EventStream, LabelTrack]:
    """Simulate events and ground-truth labels for back-to-back motion phases."""
    if not trajectories:
        raise ValueError("need at least one trajectory")
    total = sum(tr.duration_us for tr in trajectories)
    frame_dt = 1_000_000 // sim_rate_hz
    frame_t = np.arange(0, total + 1, frame_dt, dtype=np.int64)
    pos, lid, _ = _phase_lookup(trajectories, frame_t)

    emitter = EventEmitter(render_log_intensity(scene, pos[0], lid[0]), 0, scene.threshold)
    chunks = []
    for k in range(1, len(frame_t)):
        chunks.append(emitter.step(render_log_intensity(scene, pos[k], lid[k]), int(frame_t[k])))
    ev = np.concatenate(chunks) if chunks else np.zeros((0, 4), dtype=np.int64)

    rng = np.random.default_rng(seed)
    if scene.noise_rate_hz > 0:
        w, h = scene.resolution
        n_noise = rng.poisson(scene.noise_rate_hz * w * h * total / 1e6)
        noise = np.stack([rng.integers(0, total, n_noise), rng.integers(0, w, n_noise),
                          rng.integers(0, h, n_noise), rng.choice([-1, 1], n_noise)], axis=1)
        ev = np.concatenate([ev, noise])
        ev = ev[np.lexsort((ev[:, 1], ev[:, 2], ev[:, 0]))]

    period = 1_000_000 // label_rate_hz
    label_t = np.arange(0, total + 1, period, dtype=np.int64)
    lpos, llid, _ = _phase_lookup(trajectories, label_t)
    w, h = scene.resolution
    closed = llid * h > lpos[:, 1]
    labels = LabelTrack(label_rate_hz, label_t, np.clip(lpos[:, 0] / w, 0, 1),
                        np.clip(lpos[:, 1] / h, 0, 1), closed)
    stream = EventStream(scene.resolution, ev[:, 0], ev[:, 1], ev[:, 2], ev[:, 3])
    return stream, labels


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------

def _random_point(rng: np.random.Generator, scene: SceneModel) -> tuple[float, float]:
    w, h = scene.resolution
    m = scene.outer_radius + 2
    return float(rng.uniform(m, w - m)), float(rng.uniform(m, h - m))


def preset_trajectories(name: str, duration_s: float, scene: SceneModel,
                        rng: np.random.Generator) -> list[Trajectory]:
    """Motion scripts used by ``synth --preset``.

    ``mixed`` draws short fixations, saccades, smooth pursuits, random
    drifts and blinks, never placing two still phases (fixation, blink) back
    to back; the others repeat one kind.
    """
    total = int(round(duration_s * 1e6))
    w, h = scene.resolution
    pos = _random_point(rng, scene)
    if name == "fixation":
        return [Trajectory("fixation", total, pos)]
    if name == "blink":
        out, t = [], 0
        while t < total:
            d = min(int(rng.integers(400_000, 800_000)), total - t)
            out.append(Trajectory("fixation", d, pos))
            t += d
            if t < total:
                d = min(250_000, total - t)
                out.append(Trajectory("blink", d, pos, params={"close_us": d * 0.3, "open_us": d * 0.4}))
                t += d
        return out
    if name == "smooth_pursuit":
        m = scene.outer_radius + 2
        out, t, left = [], 0, True
        while t < total:
            d = min(1_500_000, total - t)
            a = (m, h / 2) if left else (w - m, h / 2)
            b = (w - m, h / 2) if left else (m, h / 2)
            out.append(Trajectory("smooth_pursuit", d, a, b))
            left = not left
            t += d
        return out
    if name not in ("mixed", "saccade", "random"):
        raise ValueError(f"unknown preset {name!r}")

    weights = {"mixed": [0.2, 0.25, 0.25, 0.1, 0.2], "saccade": [0.5, 0.5, 0, 0, 0],
               "random": [0, 0, 0, 0, 1.0]}[name]
    static = ("fixation", "blink")
    out, t = [], 0
    while t < total:
        w = np.array(weights)
        if out and out[-1].kind in static and w[[KINDS.index(k) for k in KINDS if k not in static]].sum() > 0:
            # bound the event-free stretches: a still eye is always followed by motion
            w[[KINDS.index(k) for k in static]] = 0
        kind = KINDS[int(rng.choice(len(KINDS), p=w / w.sum()))]
        if kind == "fixation":
            d = int(rng.integers(150_000, 450_000))
            tr = Trajectory("fixation", d, pos)
        elif kind == "saccade":
            d = int(rng.integers(30_000, 80_000))
            tr = Trajectory("saccade", d, pos, _random_point(rng, scene))
        elif kind == "smooth_pursuit":
            d = int(rng.integers(500_000, 1_500_000))
            tr = Trajectory("smooth_pursuit", d, pos, _random_point(rng, scene))
        elif kind == "blink":
            d = int(rng.integers(200_000, 350_000))
            tr = Trajectory("blink", d, pos, params={"close_us": d * 0.3, "open_us": d * 0.4})
        else:
            d = int(rng.integers(500_000, 1_500_000))
            end = _random_point(rng, scene)
            comps = [((float(rng.uniform(-4, 4)), float(rng.uniform(-3, 3))), float(rng.integers(1, 4)),
                      float(rng.uniform(0, 2 * math.pi))) for _ in range(2)]
            tr = Trajectory("random", d, pos, end, params={"components": comps})
        if tr.duration_us > total - t:
            # the closing phase is cut short; hold still rather than distort its profile
            tr = Trajectory("fixation", total - t, pos)
        out.append(tr)
        pos = tuple(float(v) for v in tr.position(tr.duration_us))
        t += tr.duration_us
    _clamp_inside(out, scene)
    return out


def _clamp_inside(trajectories: list[Trajectory], scene: SceneModel) -> None:
    w, h = scene.resolution
    r = scene.outer_radius
    for tr in trajectories:
        if tr.kind == "random":
            amp = sum(abs(a[0]) for a, _, _ in tr.params.get("components", ()))
            ampy = sum(abs(a[1]) for a, _, _ in tr.params.get("components", ()))
            for p in (tr.start, tr.end):
                if not (r + amp <= p[0] <= w - r - amp and r + ampy <= p[1] <= h - r - ampy):
                    tr.params["components"] = []
