"""Neural-network layers as differentiable functions of :class:`Tensor` inputs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, _result, as_tensor, concat, matmul, mean, sqrt, unbroadcast

# bounds the im2col buffer (elements) built per chunk of frames
_CONV_CHUNK_ELEMS = 1 << 24


def _im2col(xp: np.ndarray, k: int, stride: int, Ho: int, Wo: int) -> np.ndarray:
    """(C, B, Hp, Wp) padded channel-first input -> (C*k*k, B*Ho*Wo) patch matrix."""
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :Ho, :Wo]
    C, B = xp.shape[:2]
    # the copy keeps Wo innermost, which is contiguous in the source
    return win.transpose(0, 4, 5, 1, 2, 3).reshape(C * k * k, B * Ho * Wo)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of (B, Cin, H, W) with (Cout, Cin, k, k) kernels."""
    B, Cin, H, W = x.shape
    Cout, Cw, k, k2 = weight.shape
    if Cw != Cin or k != k2:
        raise ValueError(f"conv2d: input {x.shape} incompatible with weight {weight.shape}")
    if (H + 2 * padding - k) % stride or (W + 2 * padding - k) % stride:
        raise ValueError("conv2d: output size is not integral for this stride/padding")
    Ho = (H + 2 * padding - k) // stride + 1
    Wo = (W + 2 * padding - k) // stride + 1
    xc = x.data.transpose(1, 0, 2, 3)
    xp = np.pad(xc, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else xc
    wmat = weight.data.reshape(Cout, -1)
    step = max(1, _CONV_CHUNK_ELEMS // (Ho * Wo * Cin * k * k))
    out = np.empty((Cout, B, Ho, Wo), dtype=x.dtype)
    for b0 in range(0, B, step):
        cols = _im2col(xp[:, b0:b0 + step], k, stride, Ho, Wo)
        out[:, b0:b0 + step] = (wmat @ cols).reshape(Cout, -1, Ho, Wo)
    if bias is not None:
        out += bias.data[:, None, None, None]

    def _bw(g):
        gc_all = g.transpose(1, 0, 2, 3)  # (Cout, B, Ho, Wo)
        if bias is not None and bias.requires_grad:
            bias._accum(gc_all.sum(axis=(1, 2, 3)))
        gw = np.zeros_like(wmat) if weight.requires_grad else None
        gxp = np.zeros_like(xp) if x.requires_grad else None
        for b0 in range(0, B, step):
            gc = np.ascontiguousarray(gc_all[:, b0:b0 + step]).reshape(Cout, -1)
            if gw is not None:
                gw += gc @ _im2col(xp[:, b0:b0 + step], k, stride, Ho, Wo).T
            if gxp is not None:
                gcols = (wmat.T @ gc).reshape(Cin, k, k, -1, Ho, Wo)
                dst = gxp[:, b0:b0 + step]
                for i in range(k):
                    for j in range(k):
                        dst[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += gcols[:, i, j]
        if gw is not None:
            weight._accum(gw.reshape(weight.shape))
        if gxp is not None:
            gx = gxp[:, :, padding:padding + H, padding:padding + W] if padding else gxp
            x._accum(np.ascontiguousarray(gx.transpose(1, 0, 2, 3)))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _result(np.ascontiguousarray(out.transpose(1, 0, 2, 3)), parents, _bw)


def maxpool2d(x: Tensor, size: int = 2) -> Tensor:
    """Non-overlapping ``size x size`` max pooling; trailing rows/cols are dropped.

    Ties send the gradient to the first maximum in row-major window order.
    """
    B, C, H, W = x.shape
    Ho, Wo = H // size, W // size
    if Ho == 0 or Wo == 0:
        raise ValueError(f"maxpool2d: input {H}x{W} smaller than pool {size}")
    v = x.data[:, :, :Ho * size, :Wo * size]
    out = v[:, :, ::size, ::size].copy()
    for i in range(size):
        for j in range(size):
            np.maximum(out, v[:, :, i::size, j::size], out=out)

    def _bw(g):
        gx = np.zeros_like(x.data)
        taken = np.zeros(out.shape, dtype=bool)
        for i in range(size):
            for j in range(size):
                hit = v[:, :, i::size, j::size] == out
                hit &= ~taken
                taken |= hit
                gx[:, :, i:Ho * size:size, j:Wo * size:size] = np.where(hit, g, 0)
        x._accum(gx)
    return _result(out, (x,), _bw)


def avgpool2d(x: Tensor, size: int = 2) -> Tensor:
    B, C, H, W = x.shape
    Ho, Wo = H // size, W // size
    out = x.data[:, :, :Ho * size, :Wo * size].reshape(B, C, Ho, size, Wo, size).mean(axis=(3, 5))

    def _bw(g):
        gx = np.zeros_like(x.data)
        gx[:, :, :Ho * size, :Wo * size] = np.repeat(np.repeat(g, size, axis=2), size, axis=3) / (size * size)
        x._accum(gx)
    return _result(out, (x,), _bw)


def global_avg_pool(x: Tensor) -> Tensor:
    """(B, C, H, W) -> (B, C)."""
    return mean(x, axis=(2, 3))


def spatial_softargmax(x: Tensor) -> Tensor:
    """(B, C, H, W) -> (B, 2C): per-channel expected (x, y) under a spatial softmax, coords in [-1, 1].

    The first C outputs are horizontal positions, the last C vertical.
    """
    B, C, H, W = x.shape
    flat = x.reshape(B, C, H * W)
    shifted = flat - flat.data.max(axis=-1, keepdims=True)  # constant shift, softmax is invariant to it
    e = shifted.exp()
    a = e / e.sum(axis=-1, keepdims=True)
    gy, gx = np.meshgrid(np.linspace(-1, 1, H, dtype=x.dtype), np.linspace(-1, 1, W, dtype=x.dtype),
                         indexing="ij")
    px = (a * gx.reshape(-1)).sum(axis=-1)
    py = (a * gy.reshape(-1)).sum(axis=-1)
    return concat([px, py], axis=-1)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` with ``weight`` of shape (out, in)."""
    y = matmul(x, _transpose2d(weight))
    return y + bias if bias is not None else y


def _transpose2d(w: Tensor) -> Tensor:
    return _result(w.data.T, (w,), lambda g: w._accum(g.T))


@dataclass
class RunningStats:
    mean: np.ndarray | None = None
    var: np.ndarray | None = None
    momentum: float = 0.1

    @classmethod
    def initialized(cls, channels: int, dtype=np.float64, momentum: float = 0.1) -> "RunningStats":
        return cls(np.zeros(channels, dtype=dtype), np.ones(channels, dtype=dtype), momentum)


def batchnorm2d(x: Tensor, gamma: Tensor, beta: Tensor, stats: RunningStats, training: bool,
                eps: float = 1e-5) -> Tensor:
    """Per-channel normalisation of (B, C, H, W).

    Training mode uses biased batch statistics and folds the unbiased
    variance into ``stats`` with the configured momentum.
    """
    B, C, H, W = x.shape
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ValueError(f"batchnorm2d: {C} channels but gamma {gamma.shape}, beta {beta.shape}")
    shape = (1, C, 1, 1)
    if training:
        n = B * H * W
        mu = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        m = stats.momentum
        unbiased = var * n / max(n - 1, 1)
        if stats.mean is None:
            stats.mean, stats.var = mu.copy(), unbiased.copy()
        else:
            stats.mean = (1 - m) * stats.mean + m * mu
            stats.var = (1 - m) * stats.var + m * unbiased
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (x.data - mu.reshape(shape)) * inv.reshape(shape)
        out = xhat * gamma.data.reshape(shape) + beta.data.reshape(shape)

        def _bw(g):
            if gamma.requires_grad:
                gamma._accum((g * xhat).sum(axis=(0, 2, 3)))
            if beta.requires_grad:
                beta._accum(g.sum(axis=(0, 2, 3)))
            if x.requires_grad:
                gxh = g * gamma.data.reshape(shape)
                gx = (gxh - gxh.mean(axis=(0, 2, 3), keepdims=True)
                      - xhat * (gxh * xhat).mean(axis=(0, 2, 3), keepdims=True)) * inv.reshape(shape)
                x._accum(gx)
    else:
        if stats.mean is None or stats.var is None:
            raise RuntimeError("batchnorm2d: running statistics are uninitialised; run a training step first")
        inv = 1.0 / np.sqrt(stats.var + eps)
        scale = (gamma.data * inv).reshape(shape)
        xhat = (x.data - stats.mean.reshape(shape)) * inv.reshape(shape)
        out = x.data * scale + (beta.data - gamma.data * stats.mean * inv).reshape(shape)

        def _bw(g):
            if gamma.requires_grad:
                gamma._accum((g * xhat).sum(axis=(0, 2, 3)))
            if beta.requires_grad:
                beta._accum(g.sum(axis=(0, 2, 3)))
            if x.requires_grad:
                x._accum(g * scale)
    return _result(out.astype(x.dtype, copy=False), (x, gamma, beta), _bw)


def rmsnorm(x: Tensor, gain: Tensor, eps: float = 1e-5) -> Tensor:
    """``x / sqrt(mean(x**2, last axis) + eps) * gain``."""
    ms = mean(x * x, axis=-1, keepdims=True)
    return x / sqrt(ms + eps) * gain


def spatial_dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator | None,
                    shared_axes: tuple[int, ...] | None = None) -> Tensor:
    """Inverted dropout that zeroes whole channels.

    The mask is shared along ``shared_axes``; by default these are the
    spatial axes of a (B, C, H, W) map. For a (B, T, F) sequence pass
    ``shared_axes=(1,)`` to drop a feature for every timestep at once.
    """
    if not training or rate == 0.0:
        return x
    if not 0.0 <= rate < 1.0:
        raise ValueError("dropout rate must be in [0, 1)")
    if rng is None:
        raise ValueError("spatial_dropout needs an rng in training mode")
    if shared_axes is None:
        shared_axes = tuple(range(2, x.ndim))
    mshape = tuple(1 if i in shared_axes else n for i, n in enumerate(x.shape))
    mask = (rng.random(mshape) >= rate).astype(x.dtype) / (1.0 - rate)
    return x * Tensor(mask, dtype=x.dtype)
