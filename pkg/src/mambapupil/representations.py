"""Dense encodings of event windows: count frames, voxel grids and Bina-rep.

All encoders downscale sensor coordinates to the target ``H x W`` grid with
integer arithmetic (``x * W // sensor_width``), which is plain integer
division when the sensor size is an exact multiple (640x480 -> 80x60).
Channel 0 carries positive polarity, channel 1 negative.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .events import EventStream, Resolution, Window


@dataclass(frozen=True, eq=False)
class EventFrame:
    grid: np.ndarray  # (2, H, W) event counts


@dataclass(frozen=True, eq=False)
class VoxelGrid:
    n_bins: int
    grid: np.ndarray  # (n_bins, H, W)


@dataclass(frozen=True, eq=False)
class BinaRep:
    bits: int
    grid: np.ndarray  # (2, H, W), values k / (2**bits - 1)


def downscale(x: np.ndarray, y: np.ndarray, resolution: Resolution, H: int, W: int):
    sw, sh = resolution
    return (x.astype(np.int64) * W // sw, y.astype(np.int64) * H // sh)


def _channel(p: np.ndarray) -> np.ndarray:
    return (p < 0).astype(np.int64)


def encode_frame(window: Window, H: int, W: int) -> EventFrame:
    grid = np.zeros((2, H, W), dtype=np.float64)
    xs, ys = downscale(window.x, window.y, window.resolution, H, W)
    np.add.at(grid, (_channel(window.p), ys, xs), 1.0)
    return EventFrame(grid)


def encode_bina_rep(window: Window, bits: int, H: int, W: int) -> BinaRep:
    """N-bit temporal binarisation of one window.

    The window is cut into ``bits`` equal sub-intervals; sub-interval ``i``
    contributes bit ``2**i`` to every cell it touched, so the most recent
    sub-interval is the most significant bit.
    """
    if bits < 1:
        raise ValueError("bits must be >= 1")
    grid = _bina_codes(window.t - window.t_start, window.duration, window.x, window.y,
                       window.p, window.resolution, bits, H, W, n_windows=1)[0]
    return BinaRep(bits, grid / float(2 ** bits - 1))


def _bina_codes(dt, duration, x, y, p, resolution, bits, H, W, n_windows):
    """Integer Bina-rep codes for consecutive windows, shape (n, 2, H, W).

    ``dt`` is the event time relative to the first window's start.
    """
    dt = np.asarray(dt, dtype=np.int64)
    win = dt // duration
    sub = (dt - win * duration) * bits // duration
    xs, ys = downscale(x, y, resolution, H, W)
    hit = np.zeros((n_windows, 2, bits, H, W), dtype=bool)
    hit[win, _channel(p), sub, ys, xs] = True
    weights = (1 << np.arange(bits, dtype=np.int64))
    return np.tensordot(hit.astype(np.int64), weights, axes=([2], [0])).astype(np.float64)


def encode_bina_rep_sequence(stream: EventStream, origin: int, n_windows: int, window_us: int,
                             bits: int, H: int, W: int) -> np.ndarray:
    """Bina-rep for ``n_windows`` back-to-back windows starting at ``origin``.

    Equivalent to encoding each window of ``window_stream`` separately, but
    done in one vectorised pass. Returns ``(n_windows, 2, H, W)``.
    """
    if bits < 1:
        raise ValueError("bits must be >= 1")
    i0 = int(np.searchsorted(stream.t, origin, side="left"))
    i1 = int(np.searchsorted(stream.t, origin + n_windows * window_us, side="left"))
    codes = _bina_codes(stream.t[i0:i1] - origin, window_us, stream.x[i0:i1], stream.y[i0:i1],
                        stream.p[i0:i1], stream.resolution, bits, H, W, n_windows)
    return codes / float(2 ** bits - 1)


def encode_voxel(window: Window, n_bins: int, H: int, W: int) -> VoxelGrid:
    """Signed polarity mass split linearly between the two nearest bin centres.

    Bin ``i`` is centred at ``t_start + (i + 0.5) * duration / n_bins``;
    events before the first or after the last centre go wholly to that bin.
    """
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    grid = np.zeros((n_bins, H, W), dtype=np.float64)
    if len(window) == 0:
        return VoxelGrid(n_bins, grid)
    tau = (window.t - window.t_start) * (n_bins / window.duration) - 0.5
    tau = np.clip(tau, 0.0, n_bins - 1)
    lo = np.floor(tau).astype(np.int64)
    hi = np.minimum(lo + 1, n_bins - 1)
    frac = tau - lo
    pol = window.p.astype(np.float64)
    xs, ys = downscale(window.x, window.y, window.resolution, H, W)
    np.add.at(grid, (lo, ys, xs), pol * (1.0 - frac))
    np.add.at(grid, (hi, ys, xs), pol * frac)
    return VoxelGrid(n_bins, grid)


# ---------------------------------------------------------------------------
# golden-file dump: 16-byte header then little-endian f32 payload
# ---------------------------------------------------------------------------

_BREP_HEADER = struct.Struct("<4sBBHH6x")


def write_bina_rep(path: str | Path, rep: BinaRep) -> None:
    c, h, w = rep.grid.shape
    with open(path, "wb") as fh:
        fh.write(_BREP_HEADER.pack(b"BREP", rep.bits, c, h, w))
        fh.write(rep.grid.astype("<f4").tobytes())


def read_bina_rep(path: str | Path) -> BinaRep:
    raw = Path(path).read_bytes()
    magic, bits, c, h, w = _BREP_HEADER.unpack_from(raw)
    if magic != b"BREP":
        raise ValueError(f"{path}: bad magic {magic!r}")
    data = np.frombuffer(raw, dtype="<f4", offset=_BREP_HEADER.size)
    if data.size != c * h * w:
        raise ValueError(f"{path}: payload has {data.size} values, header says {c * h * w}")
    return BinaRep(bits, data.reshape(c, h, w).astype(np.float64))
