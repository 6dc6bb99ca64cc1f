"""LaverNet: selective recurrent propagation plus degradation-guided enhancement.

Per frame ``x_i`` (with ``r`` the internal downsampling factor)::

    f1   = LEM x lem_head (ConvIn(unshuffle(x_i, r)))
    fhat = SPM(f_{i-1}, carry)                 # zeros on the first frame
    f2   = ConvFuse(concat(f1, fhat))
    f_i  = LEM x lem_mid (f2)
    y_i  = shuffle(ConvOut(LEM x lem_tail (f_i)), r) + x_i

``f_i`` feeds the next frame's SPM; the SPM output becomes the new carry.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import asdict, dataclass, field, fields
from typing import Iterator, Mapping

import numpy as np

from . import functional as F
from .tensor import DimensionError, Tensor, no_grad

LEAKY_SLOPE = 0.1
NORM_EPS = 1e-6

VARIANTS = {
    "tiny": dict(channels=16, heads=2),
    "base": dict(channels=32, heads=4),
    "large": dict(channels=48, heads=4),
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    channels: int = 32
    heads: int = 4
    lem_head: int = 2
    lem_mid: int = 3
    lem_tail: int = 3
    downsample: int = 4
    in_channels: int = 3
    global_residual: bool = False
    use_spm: bool = True

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, int) and not isinstance(v, bool) and v < 1:
                raise ConfigError(f"{f.name} must be >= 1, got {v}")
        if self.channels % self.heads:
            raise ConfigError(f"channels={self.channels} not divisible by heads={self.heads}")
        if self.channels % 2:
            raise ConfigError(f"channels={self.channels} must be even (dense blocks use c/2)")
        if self.downsample not in (1, 2, 4):
            raise ConfigError(f"downsample must be 1, 2 or 4, got {self.downsample}")

    @classmethod
    def variant(cls, name: str, **overrides) -> "ModelConfig":
        try:
            base = VARIANTS[name]
        except KeyError:
            raise ConfigError(f"unknown variant {name!r}; expected one of {sorted(VARIANTS)}") from None
        return cls(**{**base, **overrides})

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


# -- parameter layout ---------------------------------------------------------

def _conv(prefix: str, cin: int, cout: int, k: int) -> list[tuple[str, tuple[int, ...]]]:
    return [(f"{prefix}.weight", (cout, cin, k, k)), (f"{prefix}.bias", (cout,))]


def _norm(prefix: str, c: int) -> list[tuple[str, tuple[int, ...]]]:
    return [(f"{prefix}.weight", (c,)), (f"{prefix}.bias", (c,))]


def _dense_layout(prefix: str, c: int) -> list:
    h = c // 2
    return (
        _conv(f"{prefix}.conv1", c, h, 3)
        + _conv(f"{prefix}.conv2", h, h, 3)
        + _conv(f"{prefix}.conv3", h, h, 3)
        + _conv(f"{prefix}.fuse", 3 * h, c, 1)
    )


def _lem_layout(prefix: str, c: int) -> list:
    out = _dense_layout(f"{prefix}.db0", c) + _dense_layout(f"{prefix}.db1", c)
    out += _norm(f"{prefix}.attn.norm", 2 * c)
    for proj in "qkvd":
        out += _conv(f"{prefix}.attn.{proj}", 2 * c, c, 1)
    out += _conv(f"{prefix}.ffn.conv1", c, c, 1) + _conv(f"{prefix}.ffn.conv2", c, c, 1)
    out += _norm(f"{prefix}.ffn.norm1", c) + _norm(f"{prefix}.ffn.norm2", c)
    return out


def parameter_layout(config: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Ordered (name, shape) list for every learned tensor."""
    c, r2 = config.channels, config.downsample ** 2
    cin = config.in_channels * r2
    layout = _conv("head.conv", cin, c, 3)
    for j in range(config.lem_head):
        layout += _lem_layout(f"head.lem{j}", c)
    if config.use_spm:
        layout += _conv("spm.conv1", c, c, 3) + _conv("spm.conv2", c, c, 3)
    layout += _conv("fuse.conv", 2 * c, c, 3)
    for j in range(config.lem_mid):
        layout += _lem_layout(f"mid.lem{j}", c)
    for j in range(config.lem_tail):
        layout += _lem_layout(f"tail.lem{j}", c)
    layout += _conv("out.conv", c, config.in_channels * r2, 3)
    return layout


class ParamStore(Mapping[str, Tensor]):
    """Ordered name -> Tensor collection tied to the config that generated it."""

    def __init__(self, config: ModelConfig, tensors: Mapping[str, Tensor]):
        self.config = config
        self.tensors: OrderedDict[str, Tensor] = OrderedDict(tensors)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def __len__(self) -> int:
        return len(self.tensors)

    def scope(self, prefix: str) -> "Scope":
        return Scope(self, prefix)

    def num_params(self) -> int:
        return int(sum(t.size for t in self.tensors.values()))

    @property
    def dtype(self) -> np.dtype:
        return next(iter(self.tensors.values())).dtype

    def astype(self, dtype) -> "ParamStore":
        return ParamStore(self.config, {k: Tensor(v.data.astype(dtype), requires_grad=v.requires_grad)
                                        for k, v in self.tensors.items()})

    def copy(self) -> "ParamStore":
        return ParamStore(self.config, {k: Tensor(v.data.copy(), requires_grad=v.requires_grad)
                                        for k, v in self.tensors.items()})

    def requires_grad_(self, flag: bool = True) -> "ParamStore":
        for t in self.tensors.values():
            t.requires_grad = flag
        return self

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None


class Scope(Mapping[str, Tensor]):
    """Read-only prefixed view into a ParamStore."""

    def __init__(self, store: ParamStore, prefix: str):
        self.store = store
        self.prefix = prefix

    def __getitem__(self, name: str) -> Tensor:
        return self.store.tensors[f"{self.prefix}.{name}"]

    def __iter__(self):
        p = self.prefix + "."
        return (k[len(p):] for k in self.store.tensors if k.startswith(p))

    def __len__(self) -> int:
        return sum(1 for _ in self)

    def scope(self, prefix: str) -> "Scope":
        return Scope(self.store, f"{self.prefix}.{prefix}")


def init_params(config: ModelConfig, seed: int = 0, dtype=np.float32) -> ParamStore:
    """Kaiming-uniform conv weights (leaky-ReLU gain), zero biases, unit norms."""
    rng = np.random.default_rng(seed)
    gain = math.sqrt(2.0 / (1.0 + LEAKY_SLOPE ** 2))
    tensors = OrderedDict()
    for name, shape in parameter_layout(config):
        if len(shape) == 4:
            fan_in = shape[1] * shape[2] * shape[3]
            bound = gain * math.sqrt(3.0 / fan_in)
            data = rng.uniform(-bound, bound, size=shape)
        elif ".norm" in name and name.endswith(".weight"):
            data = np.ones(shape)
        else:
            data = np.zeros(shape)
        tensors[name] = Tensor(data.astype(dtype), requires_grad=True)
    return ParamStore(config, tensors)


# -- building blocks ----------------------------------------------------------

def conv(x: Tensor, p: Mapping[str, Tensor]) -> Tensor:
    return F.conv2d(x, p["weight"], p["bias"])


def conv_block(x: Tensor, p: Mapping[str, Tensor]) -> Tensor:
    """conv3x3 -> LeakyReLU -> conv3x3 when ``p`` holds conv1/conv2, else one conv."""
    if "conv2.weight" in p:
        return conv(F.leaky_relu(conv(x, p.scope("conv1")), LEAKY_SLOPE), p.scope("conv2"))
    return conv(x, p.scope("conv"))


def dense_block(g: Tensor, p: Mapping[str, Tensor]) -> Tensor:
    c = g.shape[-3]
    if c % 2:
        raise ConfigError(f"dense block needs an even channel count, got {c}")
    g1 = F.leaky_relu(conv(g, p.scope("conv1")), LEAKY_SLOPE)
    g2 = F.leaky_relu(conv(g1, p.scope("conv2")), LEAKY_SLOPE)
    g3 = F.leaky_relu(conv(g2, p.scope("conv3")), LEAKY_SLOPE)
    return conv(F.concat_channels([g1, g2, g3]), p.scope("fuse"))


def _split_heads(x: Tensor, heads: int) -> Tensor:
    *lead, c, h, w = x.shape
    n = int(np.prod(lead, dtype=np.int64)) if lead else 1
    return x.reshape(n * heads, c // heads, h * w)


def degradation_attention(x: Tensor, p: Mapping[str, Tensor], heads: int) -> tuple[Tensor, Tensor]:
    """Channel attention with degradation cues ``d`` applied to query and key.

    Returns ``(h, probs)``; ``probs`` has shape ``(heads, c/heads, c/heads)``
    per image.
    """
    shape = x.shape
    c = p["q.weight"].shape[0]
    hw = shape[-1] * shape[-2]
    if hw * c >= 2 ** 31:
        raise DimensionError(f"feature map {shape[-2]}x{shape[-1]} too large for attention indexing")
    if c % heads:
        raise ConfigError(f"channels={c} not divisible by heads={heads}")
    normed = F.layer_norm_channels(x, p["norm.weight"], p["norm.bias"], NORM_EPS)
    q, k, v, d = (_split_heads(conv(normed, p.scope(name)), heads) for name in "qkvd")
    dt = F.transpose_last2(d)
    qd = F.matmul_batched(q, dt)
    kd = F.matmul_batched(k, dt)
    probs = F.softmax_lastdim(F.matmul_batched(qd, F.transpose_last2(kd)))
    h = F.matmul_batched(probs, v)
    return h.reshape(shape[:-3] + (c,) + shape[-2:]), probs


def lem_forward(g: Tensor, p: Mapping[str, Tensor], heads: int) -> Tensor:
    g1 = dense_block(g, p.scope("db0"))
    g2 = dense_block(g1, p.scope("db1"))
    h, _ = degradation_attention(F.concat_channels([g1, g2]), p.scope("attn"), heads)
    ffn = p.scope("ffn")
    a = F.layer_norm_channels(conv(h, ffn.scope("conv1")), ffn["norm1.weight"], ffn["norm1.bias"], NORM_EPS)
    b = F.layer_norm_channels(conv(h, ffn.scope("conv2")), ffn["norm2.weight"], ffn["norm2.bias"], NORM_EPS)
    return F.mul(a, b)


def _lems(x: Tensor, params: ParamStore, stage: str, count: int) -> Tensor:
    for j in range(count):
        x = lem_forward(x, params.scope(f"{stage}.lem{j}"), params.config.heads)
    return x


# -- selective propagation ----------------------------------------------------

@dataclass
class PropagationState:
    carry: Tensor

    @classmethod
    def zeros(cls, channels: int, height: int, width: int, dtype=np.float32, batch: int | None = None):
        shape = (channels, height, width) if batch is None else (batch, channels, height, width)
        return cls(Tensor(np.zeros(shape, dtype=dtype)))


@dataclass
class FrameFeatures:
    f1: Tensor
    f2: Tensor
    f: Tensor


def spm_weight(f_prev: Tensor, p: Mapping[str, Tensor]) -> Tensor:
    return F.sigmoid(conv_block(f_prev, p))


def blend(carry: Tensor, f_prev: Tensor, w: Tensor) -> Tensor:
    """Convex combination ``(1 - w) * carry + w * f_prev``."""
    if carry.shape != f_prev.shape or w.shape != f_prev.shape:
        raise DimensionError(f"blend shapes differ: {carry.shape}, {f_prev.shape}, {w.shape}")
    return F.add(F.mul(F.sub(1.0, w), carry), F.mul(w, f_prev))


def spm_propagate(f_prev: Tensor, state: PropagationState, p: Mapping[str, Tensor],
                  w: Tensor | None = None) -> tuple[Tensor, PropagationState]:
    """Blend the previous frame feature into the carry; ``w`` overrides the gate."""
    if f_prev.shape != state.carry.shape:
        raise DimensionError(f"f_prev {f_prev.shape} vs carry {state.carry.shape}")
    if w is None:
        w = spm_weight(f_prev, p)
    fhat = blend(state.carry, f_prev, w)
    return fhat, PropagationState(fhat)


# -- full network -------------------------------------------------------------

def _check_resolution(x: Tensor, config: ModelConfig) -> None:
    if x.ndim not in (3, 4) or x.shape[-3] != config.in_channels:
        raise DimensionError(f"expected {config.in_channels}xHxW frame, got {x.shape}")
    r = config.downsample
    h, w = x.shape[-2:]
    if h % r or w % r:
        raise DimensionError(f"resolution {h}x{w} not divisible by downsample factor {r}")


def initial_state(x: Tensor, config: ModelConfig) -> PropagationState:
    r = config.downsample
    shape = x.shape[:-3] + (config.channels, x.shape[-2] // r, x.shape[-1] // r)
    return PropagationState(Tensor(np.zeros(shape, dtype=x.dtype)))


def encode(x: Tensor, params: ParamStore) -> Tensor:
    """Shallow features ``f1``; independent of every other frame."""
    cfg = params.config
    f = conv_block(F.pixel_unshuffle(x, cfg.downsample), params.scope("head"))
    return _lems(f, params, "head", cfg.lem_head)


def propagate(f_prev: Tensor | None, state: PropagationState,
              params: ParamStore) -> tuple[Tensor, PropagationState]:
    if f_prev is None:
        return state.carry, state
    if not params.config.use_spm:
        return f_prev, PropagationState(f_prev)
    return spm_propagate(f_prev, state, params.scope("spm"))


def fuse_and_refine(f1: Tensor, fhat: Tensor, params: ParamStore) -> tuple[Tensor, Tensor]:
    f2 = conv_block(F.concat_channels([f1, fhat]), params.scope("fuse"))
    return f2, _lems(f2, params, "mid", params.config.lem_mid)


def decode(f: Tensor, x: Tensor, params: ParamStore) -> Tensor:
    cfg = params.config
    y = conv_block(_lems(f, params, "tail", cfg.lem_tail), params.scope("out"))
    y = F.pixel_shuffle(y, cfg.downsample)
    return F.add(y, x) if cfg.global_residual else y


def lavernet_step(x: Tensor, state: PropagationState | None, f_prev: Tensor | None,
                  params: ParamStore, features: dict | None = None):
    """Restore one frame. Returns ``(y, f, new_state)``; pass ``f`` back as ``f_prev``."""
    _check_resolution(x, params.config)
    if state is None:
        state = initial_state(x, params.config)
    f1 = encode(x, params)
    fhat, state = propagate(f_prev, state, params)
    f2, f = fuse_and_refine(f1, fhat, params)
    if features is not None:
        features["frame"] = FrameFeatures(f1, f2, f)
        features["fhat"] = fhat
    return decode(f, x, params), f, state


def lavernet_forward(video: Tensor, params: ParamStore) -> Tensor:
    """Run the recurrence over a ``T x 3 x H x W`` clip, one frame at a time."""
    if video.ndim != 4 or video.shape[0] < 1:
        raise DimensionError(f"expected non-empty T x C x H x W video, got {video.shape}")
    _check_resolution(video, params.config)
    state, f_prev, outs = None, None, []
    for i in range(video.shape[0]):
        y, f_prev, state = lavernet_step(video[i], state, f_prev, params)
        outs.append(y)
    return F.stack(outs)


def lavernet_forward_batched(video: Tensor, params: ParamStore) -> Tensor:
    """Same result as :func:`lavernet_forward`, batching the frame-independent stages.

    Encoding (head conv + head LEMs) and decoding (tail LEMs + output conv)
    do not touch the recurrence, so they run over all T frames at once;
    only fusion, mid LEMs and SPM are stepped serially.
    """
    if video.ndim != 4 or video.shape[0] < 1:
        raise DimensionError(f"expected non-empty T x C x H x W video, got {video.shape}")
    _check_resolution(video, params.config)
    f1_all = encode(video, params)
    state = initial_state(video[0], params.config)
    f_prev, feats = None, []
    for i in range(video.shape[0]):
        fhat, state = propagate(f_prev, state, params)
        _, f_prev = fuse_and_refine(f1_all[i], fhat, params)
        feats.append(f_prev)
    return decode(F.stack(feats), video, params)


def restore(video: np.ndarray, params: ParamStore) -> np.ndarray:
    """Inference helper on a numpy clip; no graph is recorded."""
    with no_grad():
        return lavernet_forward(Tensor(video.astype(params.dtype, copy=False)), params).data
