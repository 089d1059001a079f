"""The pupil-tracking network.

Per-frame convolutional encoder -> bidirectional GRU -> linear time-varying
state-space layer with residual -> linear head producing normalised
(cx, cy) for every timestep. Parameters live in a flat, ordered dict keyed
by hierarchical names so they map one-to-one onto checkpoint records.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError

VARIANTS = ("full", "uni_gru", "no_ssm", "uni_gru_no_ssm")
POOLINGS = ("gap", "gap_softargmax")


@dataclass
class ModelConfig:
    in_channels: int = 2
    conv_channels: tuple[int, int, int] = (32, 128, 512)
    conv_kernels: tuple[int, int, int] = (7, 5, 5)
    gru_hidden: int = 128
    ssm_state_dim: int = 16
    dropout: float = 0.25
    resolution: tuple[int, int] = (60, 80)  # (H, W)
    variant: str = "full"
    # "gap_softargmax" appends each channel's soft-argmax (x, y) to the averaged features
    pooling: str = "gap"

    def __post_init__(self) -> None:
        self.conv_channels = tuple(int(c) for c in self.conv_channels)
        self.conv_kernels = tuple(int(k) for k in self.conv_kernels)
        self.resolution = tuple(int(r) for r in self.resolution)
        if len(self.conv_channels) != 3 or len(self.conv_kernels) != 3:
            raise ConfigError("model.conv_channels", "exactly three conv blocks are required")
        if any(k % 2 == 0 or k < 1 for k in self.conv_kernels):
            raise ConfigError("model.conv_kernels", "kernel sizes must be odd")
        if self.gru_hidden < 1:
            raise ConfigError("model.gru_hidden", "must be >= 1")
        if self.ssm_state_dim < 1:
            raise ConfigError("model.ssm_state_dim", "must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("model.dropout", "must be in [0, 1)")
        if self.variant not in VARIANTS:
            raise ConfigError("model.variant", f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if self.pooling not in POOLINGS:
            raise ConfigError("model.pooling", f"unknown pooling {self.pooling!r}; choose from {POOLINGS}")
        h, w = self.resolution
        if h // 8 < 1 or w // 8 < 1:
            raise ConfigError("model.resolution", "input must survive three 2x2 poolings")

    @property
    def bidirectional(self) -> bool:
        return self.variant in ("full", "no_ssm")

    @property
    def use_ssm(self) -> bool:
        return self.variant in ("full", "uni_gru")

    @property
    def feature_dim(self) -> int:
        return self.conv_channels[2] * (3 if self.pooling == "gap_softargmax" else 1)

    @property
    def recurrent_dim(self) -> int:
        return self.gru_hidden * (2 if self.bidirectional else 1)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv_channels"] = list(self.conv_channels)
        d["conv_kernels"] = list(self.conv_kernels)
        d["resolution"] = list(self.resolution)
        return d


def count_parameters(cfg: ModelConfig) -> int:
    """Closed-form learnable-parameter count for ``cfg``."""
    total, cin = 0, cfg.in_channels
    for c, k in zip(cfg.conv_channels, cfg.conv_kernels):
        total += c * cin * k * k + c + 2 * c  # conv weight, bias, BN gamma/beta
        cin = c
    H, F = cfg.gru_hidden, cfg.feature_dim
    per_direction = 3 * (H * (H + F) + H)
    total += per_direction * (2 if cfg.bidirectional else 1)
    D, N = cfg.recurrent_dim, cfg.ssm_state_dim
    if cfg.use_ssm:
        total += D + (D * D + D) + 2 * N * D + D * N + D  # gain, delta, B, C, A, D
    total += 2 * D + 2
    return total


class MambaPupil:
    """Parameters, BatchNorm statistics and the forward pass of one network."""

    def __init__(self, cfg: ModelConfig, seed: int = 0, dtype=None) -> None:
        self.cfg = cfg
        self.dtype = np.dtype(dtype or ad.get_default_dtype())
        self.params: dict[str, Tensor] = {}
        self.stats: dict[str, ad.RunningStats] = {}
        self._init_params(np.random.default_rng(seed))

    # -- construction ----------------------------------------------------

    def _add(self, name: str, value: np.ndarray) -> None:
        self.params[name] = ad.parameter(value, name=name, dtype=self.dtype)

    def _init_params(self, rng: np.random.Generator) -> None:
        cfg = self.cfg
        cin = cfg.in_channels
        for i, (c, k) in enumerate(zip(cfg.conv_channels, cfg.conv_kernels)):
            bound = 1.0 / math.sqrt(cin * k * k)
            self._add(f"encoder.block{i}.conv.weight", rng.uniform(-bound, bound, (c, cin, k, k)))
            self._add(f"encoder.block{i}.conv.bias", rng.uniform(-bound, bound, c))
            self._add(f"encoder.block{i}.bn.weight", np.ones(c))
            self._add(f"encoder.block{i}.bn.bias", np.zeros(c))
            self.stats[f"encoder.block{i}.bn"] = ad.RunningStats.initialized(c, self.dtype)
            cin = c

        H, F = cfg.gru_hidden, cfg.feature_dim
        bound = 1.0 / math.sqrt(H)
        for direction in ("fwd", "bwd") if cfg.bidirectional else ("fwd",):
            for gate in ("z", "r", "h"):
                self._add(f"gru.{direction}.W_{gate}", rng.uniform(-bound, bound, (H, H + F)))
                self._add(f"gru.{direction}.b_{gate}", rng.uniform(-bound, bound, H))

        D, N = cfg.recurrent_dim, cfg.ssm_state_dim
        if cfg.use_ssm:
            bound = 1.0 / math.sqrt(D)
            self._add("ssm.norm.weight", np.ones(D))
            self._add("ssm.delta.weight", rng.uniform(-bound, bound, (D, D)))
            # softplus(bias) starts log-uniform in [1e-3, 1e-1]
            dt = np.exp(rng.uniform(math.log(1e-3), math.log(1e-1), D))
            self._add("ssm.delta.bias", dt + np.log(-np.expm1(-dt)))
            self._add("ssm.B.weight", rng.uniform(-bound, bound, (N, D)))
            self._add("ssm.C.weight", rng.uniform(-bound, bound, (N, D)))
            self._add("ssm.A_log", np.log(np.tile(np.arange(1, N + 1, dtype=np.float64), (D, 1))))
            self._add("ssm.D", np.ones(D))

        bound = 1.0 / math.sqrt(D)
        self._add("head.weight", rng.uniform(-bound, bound, (2, D)))
        self._add("head.bias", np.full(2, 0.5))

    # -- state -----------------------------------------------------------

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def num_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data for name, p in self.params.items()}
        for name, st in self.stats.items():
            state[f"{name}.running_mean"] = st.mean
            state[f"{name}.running_var"] = st.var
        return state

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        expected = set(self.state_dict())
        missing = expected - set(state)
        extra = set(state) - expected
        if missing or extra:
            raise ValueError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, p in self.params.items():
            if state[name].shape != p.shape:
                raise ValueError(f"{name}: shape {state[name].shape} != {p.shape}")
            p.data = np.array(state[name], dtype=self.dtype)
        for name, st in self.stats.items():
            st.mean = np.array(state[f"{name}.running_mean"], dtype=self.dtype)
            st.var = np.array(state[f"{name}.running_var"], dtype=self.dtype)

    # -- forward ---------------------------------------------------------

    def gru_params(self, direction: str) -> dict[str, Tensor]:
        prefix = f"gru.{direction}."
        return {k[len(prefix):]: v for k, v in self.params.items() if k.startswith(prefix)}

    def ssm_params(self) -> dict[str, Tensor]:
        return {k[4:]: v for k, v in self.params.items() if k.startswith("ssm.")}

    def features(self, x: Tensor, training: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        return extract_features(x, self.params, self.stats, self.cfg, training, rng)

    def __call__(self, x, training: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        return predict(self, x, training, rng)


def extract_features(x, params: Mapping[str, Tensor], stats: Mapping[str, ad.RunningStats], cfg: ModelConfig,
                     training: bool = False, rng: np.random.Generator | None = None) -> Tensor:
    """(B, T, C, H, W) representations -> (B, T, F) per-frame features."""
    x = ad.Tensor(x) if not isinstance(x, Tensor) else x
    if x.ndim != 5 or x.shape[2] != cfg.in_channels:
        raise ValueError(f"expected (B, T, {cfg.in_channels}, H, W) input, got {x.shape}")
    B, T = x.shape[:2]
    h = x.reshape(B * T, *x.shape[2:])
    for i, k in enumerate(cfg.conv_kernels):
        p = f"encoder.block{i}"
        h = ad.conv2d(h, params[f"{p}.conv.weight"], params[f"{p}.conv.bias"], stride=1, padding=k // 2)
        h = ad.batchnorm2d(h, params[f"{p}.bn.weight"], params[f"{p}.bn.bias"], stats[f"{p}.bn"], training)
        h = ad.maxpool2d(ad.relu(h), 2)
    f = ad.global_avg_pool(h)
    if cfg.pooling == "gap_softargmax":
        f = ad.concat([f, ad.spatial_softargmax(h)], axis=-1)
    f = f.reshape(B, T, cfg.feature_dim)
    return ad.spatial_dropout(f, cfg.dropout, training, rng, shared_axes=(1,))


def _gru_direction(x_seq: Tensor, p: Mapping[str, Tensor], reverse: bool) -> list[Tensor]:
    """Hidden states h_1..h_T of one GRU pass (in input time order)."""
    B, T, F = x_seq.shape
    H = p["W_z"].shape[0]
    # split each [h, x] weight into its recurrent and input halves
    proj = {}
    for gate in ("z", "r", "h"):
        W = p[f"W_{gate}"]
        proj[gate] = (W[:, :H].T, ad.linear(x_seq, W[:, H:], p[f"b_{gate}"]))
    xz, xr, xh = (ad.unstack(proj[g][1], axis=1) for g in ("z", "r", "h"))
    Uz, Ur, Uh = (proj[g][0] for g in ("z", "r", "h"))

    h = None
    out: list[Tensor | None] = [None] * T
    steps = range(T - 1, -1, -1) if reverse else range(T)
    for t in steps:
        if h is None:
            z = ad.sigmoid(xz[t])
            r = ad.sigmoid(xr[t])
            cand = ad.tanh(xh[t])
            h = z * cand
        else:
            z = ad.sigmoid(h @ Uz + xz[t])
            r = ad.sigmoid(h @ Ur + xr[t])
            cand = ad.tanh((r * h) @ Uh + xh[t])
            h = h + z * (cand - h)
        out[t] = h
    return out  # type: ignore[return-value]


def bigru_forward(x_seq: Tensor, fwd: Mapping[str, Tensor], bwd: Mapping[str, Tensor] | None = None) -> Tensor:
    """GRU over (B, T, F) in both directions; returns (B, T, 2H) or (B, T, H) if ``bwd`` is None.

    Gates follow z = σ(W_z[h, x]), r = σ(W_r[h, x]), h~ = tanh(W[r*h, x]),
    h_t = (1 - z) * h_prev + z * h~, with zero initial states at both ends.
    """
    forward = _gru_direction(x_seq, fwd, reverse=False)
    if bwd is None:
        return ad.stack(forward, axis=1)
    backward = _gru_direction(x_seq, bwd, reverse=True)
    return ad.stack([ad.concat([f, b], axis=-1) for f, b in zip(forward, backward)], axis=1)


def ssm_A(params: Mapping[str, Tensor]) -> Tensor:
    """Diagonal state matrix, kept strictly negative through its log-magnitude."""
    return -ad.exp(params["A_log"])


def ltv_ssm_forward(h_seq: Tensor, params: Mapping[str, Tensor], eps: float = 1e-5,
                    delta_override=None, return_states: bool = False):
    """Selective state-space layer with residual over (B, T, D).

    x' = RMSNorm(x); Δ = softplus(Linear(x')); B_t, C_t = Linear(x');
    s_t = exp(Δ A) * s_{t-1} + Δ B_t x'_t;  y_t = C_t s_t + D x'_t + x_t.
    ``delta_override`` replaces Δ with a fixed value (used to probe the
    recurrence in isolation). With ``return_states`` the (B, T, D, N) state
    sequence is returned alongside the output.
    """
    B, T, D = h_seq.shape
    xn = ad.rmsnorm(h_seq, params["norm.weight"], eps)
    if delta_override is None:
        delta = ad.softplus(ad.linear(xn, params["delta.weight"], params["delta.bias"]))
    else:
        delta = Tensor(np.broadcast_to(np.asarray(delta_override, dtype=h_seq.dtype), (B, T, D)).copy(),
                       dtype=h_seq.dtype)
    Bt = ad.linear(xn, params["B.weight"])  # (B, T, N)
    Ct = ad.linear(xn, params["C.weight"])
    N = Bt.shape[-1]
    A = ssm_A(params)  # (D, N)
    dA = ad.exp(delta.reshape(B, T, D, 1) * A)
    dBx = (delta * xn).reshape(B, T, D, 1) * Bt.reshape(B, T, 1, N)

    dA_t = ad.unstack(dA, axis=1)
    dBx_t = ad.unstack(dBx, axis=1)
    states = []
    s = None
    for t in range(T):
        s = dBx_t[t] if s is None else dA_t[t] * s + dBx_t[t]
        states.append(s)
    S = ad.stack(states, axis=1)  # (B, T, D, N)
    y = (S * Ct.reshape(B, T, 1, N)).sum(axis=-1) + xn * params["D"] + h_seq
    return (y, S) if return_states else y


def predict(model: MambaPupil, x, training: bool = False, rng: np.random.Generator | None = None) -> Tensor:
    """(B, T, C, H, W) -> (B, T, 2) normalised pupil centres."""
    cfg = model.cfg
    f = model.features(x, training, rng)
    h = bigru_forward(f, model.gru_params("fwd"), model.gru_params("bwd") if cfg.bidirectional else None)
    if cfg.use_ssm:
        h = ltv_ssm_forward(h, model.ssm_params())
    return ad.linear(h, model.params["head.weight"], model.params["head.bias"])


def build_variant(which: str, base: ModelConfig | None = None, seed: int = 0, dtype=None) -> MambaPupil:
    """Model for one of the recurrent-module ablations: full, uni_gru, no_ssm, uni_gru_no_ssm."""
    if which not in VARIANTS:
        raise ValueError(f"unknown variant {which!r}; choose from {VARIANTS}")
    cfg = ModelConfig(**{**(asdict(base) if base else {}), "variant": which})
    return MambaPupil(cfg, seed=seed, dtype=dtype)
