"""Event data model, CSV ingestion, fixed-rate windowing and label alignment.

Events are held column-wise in numpy arrays (``t``, ``x``, ``y``, ``p``) so
that windowing and encoding stay vectorised; :class:`Event` is the row view.

File formats (UTF-8, no header):

* events: ``t,x,y,p`` with ``t`` in microseconds ascending and ``p`` in {1,-1}
* labels: ``t,cx,cy,closed`` with ``cx, cy`` in sensor pixel units and
  ``closed`` in {0,1}
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .errors import DataError, EventFormatError

Resolution = tuple[int, int]  # (width, height)


class Event(NamedTuple):
    t: int
    x: int
    y: int
    p: int


def _as_arrays(t, x, y, p) -> tuple[np.ndarray, ...]:
    return (
        np.ascontiguousarray(t, dtype=np.int64),
        np.ascontiguousarray(x, dtype=np.int32),
        np.ascontiguousarray(y, dtype=np.int32),
        np.ascontiguousarray(p, dtype=np.int8),
    )


@dataclass(frozen=True, eq=False)
class EventStream:
    """Time-ordered events from one sensor of size ``resolution = (W, H)``."""

    resolution: Resolution
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    p: np.ndarray

    def __post_init__(self) -> None:
        t, x, y, p = _as_arrays(self.t, self.x, self.y, self.p)
        if not (len(t) == len(x) == len(y) == len(p)):
            raise DataError("event columns have different lengths")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "p", p)
        validate_events(self.resolution, t, x, y, p)

    @classmethod
    def from_events(cls, resolution: Resolution, events: Sequence[Event | tuple]) -> "EventStream":
        if len(events) == 0:
            return cls.empty(resolution)
        arr = np.asarray(events, dtype=np.int64).reshape(-1, 4)
        return cls(resolution, arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3])

    @classmethod
    def empty(cls, resolution: Resolution) -> "EventStream":
        z = np.zeros(0, dtype=np.int64)
        return cls(resolution, z, z, z, z)

    def __len__(self) -> int:
        return len(self.t)

    def __iter__(self) -> Iterator[Event]:
        for row in zip(self.t.tolist(), self.x.tolist(), self.y.tolist(), self.p.tolist()):
            yield Event(*row)

    @property
    def events(self) -> list[Event]:
        return list(self)

    def slice_time(self, t0: int, t1: int) -> "Window":
        """Events with ``t0 <= t < t1`` as a :class:`Window` (array views)."""
        i0 = int(np.searchsorted(self.t, t0, side="left"))
        i1 = int(np.searchsorted(self.t, t1, side="left"))
        return Window(int(t0), int(t1), self.resolution,
                      self.t[i0:i1], self.x[i0:i1], self.y[i0:i1], self.p[i0:i1])


def validate_events(resolution: Resolution, t, x, y, p) -> None:
    width, height = resolution
    if len(t) == 0:
        return
    if np.any(t < 0):
        raise DataError("negative timestamp")
    if np.any(np.diff(t) < 0):
        i = int(np.argmax(np.diff(t) < 0)) + 1
        raise DataError(f"timestamps not sorted at event {i}")
    if np.any((x < 0) | (x >= width)):
        i = int(np.argmax((x < 0) | (x >= width)))
        raise DataError(f"event {i}: x={int(x[i])} out of range for width {width}")
    if np.any((y < 0) | (y >= height)):
        i = int(np.argmax((y < 0) | (y >= height)))
        raise DataError(f"event {i}: y={int(y[i])} out of range for height {height}")
    if np.any((p != 1) & (p != -1)):
        i = int(np.argmax((p != 1) & (p != -1)))
        raise DataError(f"event {i}: polarity {int(p[i])} not in {{-1, 1}}")


@dataclass(frozen=True, eq=False)
class Window:
    """Half-open time slice ``[t_start, t_end)`` of a stream."""

    t_start: int
    t_end: int
    resolution: Resolution
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    p: np.ndarray

    def __post_init__(self) -> None:
        if self.t_end <= self.t_start:
            raise ValueError("window must have t_end > t_start")

    @classmethod
    def from_events(cls, t_start: int, t_end: int, resolution: Resolution,
                    events: Sequence[Event | tuple]) -> "Window":
        stream = EventStream.from_events(resolution, sorted(events, key=lambda e: e[0]))
        w = stream.slice_time(t_start, t_end)
        if len(w) != len(events):
            raise ValueError("events outside the window span")
        return w

    def __len__(self) -> int:
        return len(self.t)

    @property
    def duration(self) -> int:
        return self.t_end - self.t_start

    @property
    def events(self) -> list[Event]:
        return [Event(*r) for r in zip(self.t.tolist(), self.x.tolist(),
                                       self.y.tolist(), self.p.tolist())]


@dataclass(frozen=True, eq=False)
class LabelTrack:
    """Pupil-centre samples, normalised to [0, 1] by the sensor resolution."""

    rate_hz: int
    t: np.ndarray
    cx: np.ndarray
    cy: np.ndarray
    closed: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        t = np.ascontiguousarray(self.t, dtype=np.int64)
        cx = np.ascontiguousarray(self.cx, dtype=np.float64)
        cy = np.ascontiguousarray(self.cy, dtype=np.float64)
        closed = (np.zeros(len(t), dtype=bool) if self.closed is None
                  else np.ascontiguousarray(self.closed, dtype=bool))
        if not (len(t) == len(cx) == len(cy) == len(closed)):
            raise DataError("label columns have different lengths")
        if np.any(np.diff(t) < 0):
            raise DataError("label timestamps not sorted")
        if np.any((cx < 0) | (cx > 1) | (cy < 0) | (cy > 1)):
            raise DataError("normalised label outside [0, 1]")
        for name, val in (("t", t), ("cx", cx), ("cy", cy), ("closed", closed)):
            object.__setattr__(self, name, val)

    def __len__(self) -> int:
        return len(self.t)


# ---------------------------------------------------------------------------
# file I/O
# ---------------------------------------------------------------------------

def _parse_rows(path: Path, ncols: int, kinds: tuple[type, ...]) -> list[tuple]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != ncols:
                raise EventFormatError(str(path), lineno,
                                       f"expected {ncols} fields, got {len(parts)}")
            try:
                rows.append(tuple(k(s) for k, s in zip(kinds, parts)))
            except ValueError as exc:
                raise EventFormatError(str(path), lineno, str(exc)) from None
    return rows


def load_events(path: str | Path, resolution: Resolution) -> EventStream:
    """Read a ``t,x,y,p`` CSV; reject unsorted or out-of-range records."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    rows = _parse_rows(path, 4, (int, int, int, int))
    if not rows:
        return EventStream.empty(resolution)
    arr = np.asarray(rows, dtype=np.int64)
    t, x, y, p = arr.T
    width, height = resolution
    # report the offending line rather than the array index
    bad = (x < 0) | (x >= width) | (y < 0) | (y >= height) | ((p != 1) & (p != -1)) | (t < 0)
    unsorted = np.concatenate([[False], np.diff(t) < 0])
    if np.any(bad | unsorted):
        i = int(np.argmax(bad | unsorted))
        lineno = _nonblank_lineno(path, i)
        if unsorted[i]:
            msg = f"timestamp {int(t[i])} earlier than previous event"
        elif not 0 <= x[i] < width:
            msg = f"x={int(x[i])} out of range for width {width}"
        elif not 0 <= y[i] < height:
            msg = f"y={int(y[i])} out of range for height {height}"
        elif t[i] < 0:
            msg = f"negative timestamp {int(t[i])}"
        else:
            msg = f"polarity {int(p[i])} not in {{-1, 1}}"
        raise EventFormatError(str(path), lineno, msg)
    return EventStream(resolution, t, x, y, p)


def _nonblank_lineno(path: Path, index: int) -> int:
    seen = -1
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.strip():
                seen += 1
                if seen == index:
                    return lineno
    return seen + 1


def save_events(path: str | Path, stream: EventStream) -> None:
    arr = np.stack([stream.t, stream.x.astype(np.int64), stream.y.astype(np.int64),
                    stream.p.astype(np.int64)], axis=1)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if len(arr):
            np.savetxt(fh, arr, fmt="%d", delimiter=",")


def load_labels(path: str | Path, resolution: Resolution, rate_hz: int = 100) -> LabelTrack:
    """Read a ``t,cx,cy,closed`` CSV and normalise coordinates to [0, 1]."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    rows = _parse_rows(path, 4, (int, float, float, int))
    width, height = resolution
    if not rows:
        return LabelTrack(rate_hz, [], [], [], [])
    arr = np.asarray(rows, dtype=np.float64)
    for i, (_, cx, cy, closed) in enumerate(rows):
        if not (0 <= cx <= width and 0 <= cy <= height):
            raise EventFormatError(str(path), _nonblank_lineno(path, i),
                                   f"label ({cx}, {cy}) outside {width}x{height}")
        if closed not in (0, 1):
            raise EventFormatError(str(path), _nonblank_lineno(path, i),
                                   f"closed flag {closed} not in {{0, 1}}")
    return LabelTrack(rate_hz, arr[:, 0].astype(np.int64), arr[:, 1] / width,
                      arr[:, 2] / height, arr[:, 3].astype(bool))


def save_labels(path: str | Path, track: LabelTrack, resolution: Resolution) -> None:
    width, height = resolution
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for t, cx, cy, c in zip(track.t.tolist(), track.cx.tolist(),
                                track.cy.tolist(), track.closed.tolist()):
            fh.write(f"{t},{cx * width:.6f},{cy * height:.6f},{int(c)}\n")


# ---------------------------------------------------------------------------
# windowing and alignment
# ---------------------------------------------------------------------------

def window_count(t_last: int, window_us: int, hop_us: int) -> int:
    """Fewest windows starting at 0 whose union covers ``[0, t_last]``."""
    return max(0, math.ceil((t_last + 1 - window_us) / hop_us)) + 1


def window_stream(stream: EventStream, window_us: int, hop_us: int, *,
                  origin: int = 0, t_stop: int | None = None) -> list[Window]:
    """Slice ``stream`` into windows ``[origin + k*hop, origin + k*hop + window)``.

    Without ``t_stop`` the windows cover every event at or after ``origin``.
    With ``t_stop`` only windows ending at or before it are returned, i.e.
    ``floor((t_stop - origin - window) / hop) + 1`` of them.
    """
    if window_us <= 0 or hop_us <= 0:
        raise ValueError("window_us and hop_us must be positive")
    if t_stop is not None:
        n = max(0, (t_stop - origin - window_us) // hop_us + 1)
    elif len(stream) == 0 or stream.t[-1] < origin:
        n = 0
    else:
        n = window_count(int(stream.t[-1]) - origin, window_us, hop_us)
    return [stream.slice_time(origin + k * hop_us, origin + k * hop_us + window_us)
            for k in range(n)]


def nearest_label_index(track: LabelTrack, times: np.ndarray) -> np.ndarray:
    """Index of the sample nearest each time; ties go to the earlier sample."""
    times = np.asarray(times, dtype=np.int64)
    if len(track) == 0:
        raise DataError("empty label track")
    period = 1_000_000 / track.rate_hz
    if np.any(times < track.t[0] - period / 2) or np.any(times > track.t[-1] + period / 2):
        raise DataError("window lies beyond the label track's extent")
    hi = np.searchsorted(track.t, times, side="left").clip(0, len(track) - 1)
    lo = (hi - 1).clip(0, None)
    take_lo = np.abs(times - track.t[lo]) <= np.abs(track.t[hi] - times)
    return np.where(take_lo, lo, hi)


def align_labels(track: LabelTrack, windows: Sequence[Window], out_rate_hz: int) -> list[tuple[float, float]]:
    """One (cx, cy) per window: the sample nearest the window's ``t_end``."""
    if out_rate_hz <= 0 or track.rate_hz % out_rate_hz:
        raise ValueError(f"output rate {out_rate_hz} Hz does not divide {track.rate_hz} Hz")
    if not windows:
        return []
    idx = nearest_label_index(track, np.array([w.t_end for w in windows]))
    return list(zip(track.cx[idx].tolist(), track.cy[idx].tolist()))
