"""Transformer encoder-decoder for long-term action anticipation.

The encoder segments the observed frames; the decoder turns a fixed set of
learnable action queries into future (action, duration) predictions, all in
one pass. Ablation switches cover masked and autoregressive decoding, local
attention windows, start-end regression heads, positional-embedding
placement and a recent-past restriction on cross-attention.

All functions work on batches shaped (B, T, ...). Padded positions are
described by ``lengths`` and are masked out of every attention.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import asdict, dataclass, field, fields
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from . import tensor as T
from .tensor import MaskError, Tensor

ATTENTION_MODES = ("global", "local")
DECODING_MODES = ("parallel", "masked_parallel", "autoregressive")
HEAD_MODES = ("duration", "start_end")
POSEMBED_MODES = ("none", "sinusoidal_input", "learnable_input", "learnable_per_attention")


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    num_classes: int = 48
    num_queries: int = 8
    hidden_dim: int = 128
    input_dim: int = 2048
    num_heads: int = 8
    encoder_layers: int = 2
    decoder_layers: int = 1
    max_len: int = 2000
    encoder_attention: str = "global"
    encoder_window: int = 201
    decoder_attention: str = "global"
    decoder_window: int = 3
    decoding_mode: str = "parallel"
    head_mode: str = "duration"
    posembed_mode: str = "learnable_per_attention"
    ffn_expansion: int = 4
    cross_attend_ratio: float = 1.0
    dropout: float = 0.0
    ln_eps: float = 1e-5
    dtype: str = "float32"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("num_classes", "num_queries", "hidden_dim", "input_dim", "num_heads",
                     "max_len", "ffn_expansion"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.encoder_layers < 0 or self.decoder_layers < 1:
            raise ConfigError("need encoder_layers >= 0 and decoder_layers >= 1")
        if self.hidden_dim % self.num_heads:
            raise ConfigError(f"hidden_dim {self.hidden_dim} not divisible by num_heads {self.num_heads}")
        for name in ("encoder_window", "decoder_window"):
            w = getattr(self, name)
            if w < 1 or w % 2 == 0:
                raise ConfigError(f"{name} must be odd and >= 1, got {w}")
        if self.encoder_attention not in ATTENTION_MODES or self.decoder_attention not in ATTENTION_MODES:
            raise ConfigError("attention modes must be 'global' or 'local'")
        if self.decoding_mode not in DECODING_MODES:
            raise ConfigError(f"decoding_mode must be one of {DECODING_MODES}")
        if self.head_mode not in HEAD_MODES:
            raise ConfigError(f"head_mode must be one of {HEAD_MODES}")
        if self.posembed_mode not in POSEMBED_MODES:
            raise ConfigError(f"posembed_mode must be one of {POSEMBED_MODES}")
        if not 0.0 < self.cross_attend_ratio <= 1.0:
            raise ConfigError("cross_attend_ratio must lie in (0, 1]")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("dtype must be float32 or float64")

    @property
    def none_class(self) -> int:
        return self.num_classes

    @property
    def sos_token(self) -> int:
        return self.num_classes + 1

    @property
    def eos_token(self) -> int:
        return self.num_classes + 2

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


class ModelParams:
    """Named, ordered collection of learnable tensors plus their config."""

    def __init__(self, config: ModelConfig, tensors: "OrderedDict[str, Tensor]"):
        self.config = config
        self.tensors = tensors

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def items(self):
        return self.tensors.items()

    def parameters(self) -> List[Tensor]:
        return list(self.tensors.values())

    def zero_grad(self) -> None:
        for p in self.tensors.values():
            p.zero_grad()

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, OrderedDict(
            (k, Tensor(v.data.copy(), requires_grad=True, name=k)) for k, v in self.tensors.items()))


@dataclass
class ForwardOutput:
    """Model outputs for a batch. Probabilities are post-softmax."""

    seg_probs: Tensor                 # (B, T, K)
    action_probs: Tensor              # (B, M, K+1)
    durations: Tensor                 # (B, M) or (B, M, 2) for start_end heads
    attention_maps: List[np.ndarray]  # per decoder layer, (B, M, T), head-averaged
    lengths: np.ndarray
    emitted: Optional[List[List[int]]] = None

    @property
    def batch_size(self) -> int:
        return self.action_probs.shape[0]


# -- masks ---------------------------------------------------------------------

def _recent_count(ratio: float, n: int) -> int:
    return max(1, math.ceil(ratio * n - 1e-9))


def build_attention_mask(kind: str, tq: int, tk: int, *, window: Optional[int] = None,
                         ratio: Optional[float] = None) -> np.ndarray:
    """Boolean (tq, tk) mask, True where query i may attend to key j.

    kind is ``causal`` (j <= i), ``local`` (|i - j| <= (window - 1) / 2) or
    ``cross_recent`` (only the last ceil(ratio * tk) keys).
    """
    i = np.arange(tq)[:, None]
    j = np.arange(tk)[None, :]
    if kind == "causal":
        mask = j <= i
    elif kind == "local":
        if window is None or window < 1 or window % 2 == 0:
            raise ConfigError(f"local attention needs an odd window >= 1, got {window}")
        mask = np.abs(i - j) <= (window - 1) // 2
    elif kind == "cross_recent":
        if ratio is None or not 0.0 < ratio <= 1.0:
            raise ConfigError(f"cross_recent needs ratio in (0, 1], got {ratio}")
        mask = np.broadcast_to(j >= tk - _recent_count(ratio, tk), (tq, tk))
    else:
        raise ConfigError(f"unknown mask kind {kind!r}")
    mask = np.array(mask, dtype=bool)
    if not mask.any(axis=1).all():
        raise MaskError(f"{kind} mask leaves a query row with no keys")
    return mask


def _valid(lengths: np.ndarray, t: int) -> np.ndarray:
    return np.arange(t)[None, :] < lengths[:, None]


def encoder_self_mask(config: ModelConfig, lengths: np.ndarray, t: int) -> np.ndarray:
    valid = _valid(lengths, t)
    mask = np.repeat(valid[:, None, :], t, axis=1)
    if config.encoder_attention == "local":
        mask &= build_attention_mask("local", t, t, window=config.encoder_window)[None]
    # padded query rows see every valid key; their outputs are discarded
    pad_rows = ~valid
    mask[pad_rows] = np.broadcast_to(valid[:, None, :], mask.shape)[pad_rows]
    return mask


def decoder_self_mask(config: ModelConfig, m: int, causal: bool) -> np.ndarray:
    mask = np.ones((m, m), dtype=bool)
    if causal:
        mask &= build_attention_mask("causal", m, m)
    if config.decoder_attention == "local":
        mask &= build_attention_mask("local", m, m, window=config.decoder_window)
    return mask[None]


def cross_mask(config: ModelConfig, lengths: np.ndarray, m: int, t: int) -> np.ndarray:
    j = np.arange(t)[None, :]
    keep = np.stack([(j[0] < n) & (j[0] >= n - _recent_count(config.cross_attend_ratio, n))
                     for n in lengths])
    return np.repeat(keep[:, None, :], m, axis=1)


# -- parameters ----------------------------------------------------------------

def _attn_names(prefix: str) -> List[str]:
    return [f"{prefix}.{w}" for w in ("wq", "wk", "wv", "wo")]


def init_params(config: ModelConfig, seed: int = 0) -> ModelParams:
    """Scaled-uniform projections, zero biases, unit LN gains, N(0, 0.02) tables."""
    rng = np.random.default_rng(seed)
    dtype = np.dtype(config.dtype)
    d, k = config.hidden_dim, config.num_classes
    hidden = d * config.ffn_expansion
    out: "OrderedDict[str, Tensor]" = OrderedDict()

    def uniform(name, fan_in, shape):
        bound = 1.0 / math.sqrt(fan_in)
        out[name] = rng.uniform(-bound, bound, size=shape)

    def zeros(name, shape):
        out[name] = np.zeros(shape)

    def layer_norm(prefix):
        out[f"{prefix}.gain"] = np.ones(d)
        zeros(f"{prefix}.bias", d)

    def attention(prefix):
        for name in _attn_names(prefix):
            uniform(name, d, (d, d))

    def ffn(prefix):
        uniform(f"{prefix}.w1", d, (d, hidden))
        zeros(f"{prefix}.b1", hidden)
        uniform(f"{prefix}.w2", hidden, (hidden, d))
        zeros(f"{prefix}.b2", d)

    uniform("input.weight", config.input_dim, (config.input_dim, d))
    zeros("input.bias", d)
    out["pos"] = rng.normal(0.0, 0.02, size=(config.max_len, d))
    out["queries"] = rng.normal(0.0, 0.02, size=(config.num_queries, d))
    for layer in range(config.encoder_layers):
        attention(f"enc{layer}.attn")
        layer_norm(f"enc{layer}.ln1")
        ffn(f"enc{layer}.ffn")
        layer_norm(f"enc{layer}.ln2")
    for layer in range(config.decoder_layers):
        attention(f"dec{layer}.self")
        layer_norm(f"dec{layer}.ln1")
        attention(f"dec{layer}.cross")
        layer_norm(f"dec{layer}.ln2")
        ffn(f"dec{layer}.ffn")
        layer_norm(f"dec{layer}.ln3")
    uniform("seg_head.weight", d, (d, k))
    zeros("seg_head.bias", k)
    uniform("action_head.weight", d, (d, k + 1))
    zeros("action_head.bias", k + 1)
    width = 1 if config.head_mode == "duration" else 2
    uniform("duration_head.weight", d, (d, width))
    zeros("duration_head.bias", width)
    # K classes, NONE, SOS, EOS; only read by the autoregressive decoder
    out["label_embed"] = rng.normal(0.0, 1.0, size=(k + 3, d))

    return ModelParams(config, OrderedDict(
        (name, Tensor(arr.astype(dtype), requires_grad=True, name=name)) for name, arr in out.items()))


def sinusoidal_table(length: int, dim: int, dtype=np.float32) -> np.ndarray:
    pos = np.arange(length)[:, None]
    i = np.arange(dim)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / dim)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle)).astype(dtype)


# -- building blocks -------------------------------------------------------------

def multi_head_attention(x: Tensor, y: Tensor, params: ModelParams, prefix: str, num_heads: int,
                         mask: Optional[np.ndarray] = None) -> Tuple[Tensor, np.ndarray]:
    """Scaled dot-product attention of queries ``x`` over keys/values ``y``.

    x: (B, Tq, D), y: (B, Tk, D), mask: boolean, broadcastable to (B, Tq, Tk).
    Returns the (B, Tq, D) output and the head-averaged weights (B, Tq, Tk).
    """
    b, tq, d = x.shape
    tk = y.shape[1]
    dh = d // num_heads
    wq, wk, wv, wo = (params[n] for n in _attn_names(prefix))

    def heads(z, w, t):
        return T.transpose(T.reshape(T.matmul(z, w), (b, t, num_heads, dh)), (0, 2, 1, 3))

    # scaling the (Tq, D) input is cheaper than scaling the (h, Tq, Tk) scores
    q = heads(T.mul(x, 1.0 / math.sqrt(dh)), wq, tq)
    k, v = heads(y, wk, tk), heads(y, wv, tk)
    scores = T.matmul(q, T.swap_last(k))
    attn = T.softmax_lastdim(scores, None if mask is None else np.asarray(mask)[:, None])
    z = T.reshape(T.transpose(T.matmul(attn, v), (0, 2, 1, 3)), (b, tq, d))
    return T.matmul(z, wo), attn.data.mean(axis=1)


def _ffn(x: Tensor, params: ModelParams, prefix: str) -> Tensor:
    h = T.relu(T.linear(x, params[f"{prefix}.w1"], params[f"{prefix}.b1"]))
    return T.linear(h, params[f"{prefix}.w2"], params[f"{prefix}.b2"])


def _ln(x: Tensor, params: ModelParams, prefix: str, eps: float) -> Tensor:
    return T.layer_norm(x, params[f"{prefix}.gain"], params[f"{prefix}.bias"], eps)


def _as_batch(features, dtype) -> Tuple[Tensor, bool]:
    x = features if isinstance(features, Tensor) else Tensor(np.asarray(features, dtype=dtype))
    if x.ndim == 2:
        return T.reshape(x, (1,) + x.shape), True
    if x.ndim != 3:
        raise T.ShapeError(f"features must be (T, C) or (B, T, C), got {x.shape}")
    return x, False


def _lengths(lengths, b: int, t: int) -> np.ndarray:
    if lengths is None:
        return np.full(b, t, dtype=np.int64)
    lengths = np.asarray(lengths, dtype=np.int64)
    if lengths.shape != (b,) or (lengths < 1).any() or (lengths > t).any():
        raise T.ShapeError(f"lengths {lengths.tolist()} invalid for batch {b} x {t}")
    return lengths


def _positions(params: ModelParams, t: int) -> Optional[Tensor]:
    cfg = params.config
    if t > cfg.max_len:
        raise T.ShapeError(f"sequence length {t} exceeds positional table size {cfg.max_len}")
    if cfg.posembed_mode == "none":
        return None
    if cfg.posembed_mode == "sinusoidal_input":
        return Tensor(sinusoidal_table(t, cfg.hidden_dim, np.dtype(cfg.dtype)))
    return T.index(params["pos"], slice(0, t))


# -- encoder / decoder -----------------------------------------------------------

def embed_inputs(features, params: ModelParams) -> Tensor:
    """Input tokens ReLU(E W + b)."""
    cfg = params.config
    x, single = _as_batch(features, np.dtype(cfg.dtype))
    if x.shape[-1] != cfg.input_dim:
        raise T.ShapeError(f"feature dim {x.shape[-1]} != configured input_dim {cfg.input_dim}")
    out = T.relu(T.linear(x, params["input.weight"], params["input.bias"]))
    return T.reshape(out, out.shape[1:]) if single else out


def encoder_forward(features, params: ModelParams, lengths=None,
                    rng: Optional[np.random.Generator] = None) -> Tuple[Tensor, Tensor, np.ndarray]:
    """Returns (encoder output (B,T,D), segmentation probs (B,T,K), lengths)."""
    cfg = params.config
    x, _ = _as_batch(features, np.dtype(cfg.dtype))
    b, t, _c = x.shape
    lengths = _lengths(lengths, b, t)
    pos = _positions(params, t)
    x = embed_inputs(x, params)
    if pos is not None and cfg.posembed_mode != "learnable_per_attention":
        x = T.add(x, pos)
    mask = encoder_self_mask(cfg, lengths, t)
    for layer in range(cfg.encoder_layers):
        inp = T.add(x, pos) if cfg.posembed_mode == "learnable_per_attention" else x
        att, _ = multi_head_attention(inp, inp, params, f"enc{layer}.attn", cfg.num_heads, mask)
        x = _ln(T.add(T.dropout(att, cfg.dropout, rng), x), params, f"enc{layer}.ln1", cfg.ln_eps)
        ff = T.dropout(_ffn(x, params, f"enc{layer}.ffn"), cfg.dropout, rng)
        x = _ln(T.add(ff, x), params, f"enc{layer}.ln2", cfg.ln_eps)
    seg = T.softmax_lastdim(T.linear(x, params["seg_head.weight"], params["seg_head.bias"]))
    return x, seg, lengths


def _memory(encoder_out: Tensor, params: ModelParams) -> Tensor:
    cfg = params.config
    if cfg.posembed_mode == "learnable_per_attention":
        return T.add(encoder_out, _positions(params, encoder_out.shape[1]))
    return encoder_out


def _decoder_stack(q_in: Tensor, query_pos: Tensor, memory: Tensor, self_mask: np.ndarray,
                   x_mask: np.ndarray, params: ModelParams,
                   rng: Optional[np.random.Generator]) -> Tuple[Tensor, List[np.ndarray]]:
    cfg = params.config
    q = q_in
    maps = []
    for layer in range(cfg.decoder_layers):
        inp = T.add(q, query_pos)
        att, _ = multi_head_attention(inp, inp, params, f"dec{layer}.self", cfg.num_heads, self_mask)
        q = _ln(T.add(T.dropout(att, cfg.dropout, rng), q), params, f"dec{layer}.ln1", cfg.ln_eps)
        att, weights = multi_head_attention(T.add(q, query_pos), memory, params, f"dec{layer}.cross",
                                            cfg.num_heads, x_mask)
        maps.append(weights)
        q = _ln(T.add(T.dropout(att, cfg.dropout, rng), q), params, f"dec{layer}.ln2", cfg.ln_eps)
        ff = T.dropout(_ffn(q, params, f"dec{layer}.ffn"), cfg.dropout, rng)
        q = _ln(T.add(ff, q), params, f"dec{layer}.ln3", cfg.ln_eps)
    return q, maps


def _heads(q: Tensor, params: ModelParams) -> Tuple[Tensor, Tensor]:
    cfg = params.config
    probs = T.softmax_lastdim(T.linear(q, params["action_head.weight"], params["action_head.bias"]))
    raw = T.linear(q, params["duration_head.weight"], params["duration_head.bias"])
    if cfg.head_mode == "duration":
        return probs, T.reshape(raw, raw.shape[:-1])
    return probs, T.sigmoid(raw)


def decoder_forward(encoder_out: Tensor, seg_probs: Tensor, lengths: np.ndarray, params: ModelParams,
                    mode: Optional[str] = None, rng: Optional[np.random.Generator] = None) -> ForwardOutput:
    """Parallel decoding of all M query slots in one pass."""
    cfg = params.config
    mode = mode or cfg.decoding_mode
    if mode not in ("parallel", "masked_parallel"):
        raise ConfigError(f"decoder_forward handles parallel modes only, got {mode!r}")
    b, t, d = encoder_out.shape
    m = cfg.num_queries
    q0 = T.zeros((b, m, d), dtype=encoder_out.dtype)
    q, maps = _decoder_stack(q0, params["queries"], _memory(encoder_out, params),
                             decoder_self_mask(cfg, m, causal=mode == "masked_parallel"),
                             cross_mask(cfg, lengths, m, t), params, rng)
    probs, durations = _heads(q, params)
    return ForwardOutput(seg_probs, probs, durations, maps, lengths)


def teacher_forcing_tokens(target_classes: np.ndarray, config: ModelConfig) -> np.ndarray:
    """Decoder inputs for autoregressive training: SOS then the shifted targets.

    A NONE target is fed forward as the EOS token.
    """
    target_classes = np.atleast_2d(target_classes)
    shifted = np.where(target_classes[:, :-1] == config.none_class, config.eos_token, target_classes[:, :-1])
    sos = np.full((target_classes.shape[0], 1), config.sos_token, dtype=np.int64)
    return np.concatenate([sos, shifted.astype(np.int64)], axis=1)


def decode_tokens(encoder_out: Tensor, seg_probs: Tensor, lengths: np.ndarray, tokens: np.ndarray,
                  params: ModelParams, rng: Optional[np.random.Generator] = None) -> ForwardOutput:
    """Causally masked decoder over embedded label tokens (B, S), S <= M."""
    cfg = params.config
    tokens = np.atleast_2d(np.asarray(tokens, dtype=np.int64))
    b, s = tokens.shape
    if s > cfg.num_queries:
        raise T.ShapeError(f"token prefix {s} longer than query table {cfg.num_queries}")
    t = encoder_out.shape[1]
    q_in = T.index(params["label_embed"], tokens)
    query_pos = T.index(params["queries"], slice(0, s))
    q, maps = _decoder_stack(q_in, query_pos, _memory(encoder_out, params),
                             decoder_self_mask(cfg, s, causal=True), cross_mask(cfg, lengths, s, t),
                             params, rng)
    probs, durations = _heads(q, params)
    return ForwardOutput(seg_probs, probs, durations, maps, lengths)


def decode_autoregressive(encoder_out: Tensor, seg_probs: Tensor, lengths: np.ndarray,
                          params: ModelParams, max_steps: Optional[int] = None,
                          stop_at_eos: bool = True) -> ForwardOutput:
    """Greedy emission loop starting from SOS, recomputing the whole prefix each step.

    A NONE argmax acts as EOS and ends that sample's sequence. Slots after the
    end are filled with a one-hot NONE row and zero duration so the output has
    the same shape as parallel decoding. With ``stop_at_eos=False`` the loop
    always runs ``max_steps`` decoder passes (used for latency measurement).
    """
    cfg = params.config
    m = cfg.num_queries
    max_steps = m if max_steps is None else int(max_steps)
    if not 1 <= max_steps <= m:
        raise ValueError(f"max_steps must lie in [1, {m}], got {max_steps}")
    b = encoder_out.shape[0]
    k1 = cfg.num_classes + 1
    dtype = encoder_out.dtype
    probs = np.zeros((b, m, k1), dtype=dtype)
    probs[:, :, cfg.none_class] = 1.0
    dur_shape = (b, m) if cfg.head_mode == "duration" else (b, m, 2)
    durations = np.zeros(dur_shape, dtype=dtype)
    maps = [np.zeros((b, m, encoder_out.shape[1]), dtype=dtype) for _ in range(cfg.decoder_layers)]
    tokens = np.full((b, 1), cfg.sos_token, dtype=np.int64)
    done = np.zeros(b, dtype=bool)
    emitted: List[List[int]] = [[] for _ in range(b)]
    with T.no_grad():
        for step in range(max_steps):
            out = decode_tokens(encoder_out, seg_probs, lengths, tokens, params)
            last = out.action_probs.data[:, -1]
            label = last.argmax(axis=-1)
            live = ~done
            probs[live, step] = last[live]
            durations[live, step] = out.durations.data[live, -1]
            for layer, amap in enumerate(out.attention_maps):
                maps[layer][live, step] = amap[live, -1]
            for i in np.flatnonzero(live):
                if label[i] == cfg.none_class:
                    done[i] = True
                else:
                    emitted[i].append(int(label[i]))
            if stop_at_eos and done.all():
                break
            nxt = np.where(label == cfg.none_class, cfg.eos_token, label)
            tokens = np.concatenate([tokens, nxt[:, None]], axis=1)
    return ForwardOutput(seg_probs, Tensor(probs), Tensor(durations), maps, lengths, emitted)


def forward(params: ModelParams, features, lengths=None, *, mode: Optional[str] = None,
            target_classes: Optional[np.ndarray] = None,
            rng: Optional[np.random.Generator] = None) -> ForwardOutput:
    """Full anticipation forward pass.

    In autoregressive mode, ``target_classes`` (B, M) selects teacher forcing;
    without it the greedy emission loop runs (inference).
    """
    mode = mode or params.config.decoding_mode
    enc, seg, lengths = encoder_forward(features, params, lengths, rng)
    if mode != "autoregressive":
        return decoder_forward(enc, seg, lengths, params, mode, rng)
    if target_classes is not None:
        tokens = teacher_forcing_tokens(np.asarray(target_classes), params.config)
        return decode_tokens(enc, seg, lengths, tokens, params, rng)
    return decode_autoregressive(enc, seg, lengths, params)
