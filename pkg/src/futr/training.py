"""AdamW, warm-up + cosine learning-rate schedule, the training loop and checkpoints."""

from __future__ import annotations

import json
import math
import os
import struct
from collections import OrderedDict
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import tensor as T
from .data import SplitError, VideoSample, make_observation
from .model import ConfigError, ModelConfig, ModelParams, forward, init_params
from .objectives import LossConfig, StackedTargets, assign_targets_sequential, compute_losses
from .tensor import NumericError, Tensor

CHECKPOINT_MAGIC = b"FUTRCKPT"
CHECKPOINT_VERSION = 1


class TrainingDiverged(NumericError):
    def __init__(self, epoch: int, step: int, value: float):
        super().__init__(f"non-finite loss {value} at epoch {epoch}, step {step}")
        self.epoch, self.step = epoch, step


class CheckpointError(ValueError):
    pass


@dataclass
class ScheduleConfig:
    peak_lr: float = 1e-3
    warmup_epochs: float = 10
    total_epochs: int = 60
    min_lr: float = 0.0

    def __post_init__(self):
        if not 0 <= self.warmup_epochs <= self.total_epochs:
            raise ConfigError("need 0 <= warmup_epochs <= total_epochs")


@dataclass
class TrainConfig:
    batch_size: int = 16
    alphas: Tuple[float, ...] = (0.2, 0.3, 0.5)
    beta: float = 0.5
    stride: int = 3
    weight_decay: float = 0.01
    adam_betas: Tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    grad_clip: Optional[float] = None
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        if isinstance(self.loss, dict):
            self.loss = LossConfig(**self.loss)
        self.alphas = tuple(float(a) for a in self.alphas)
        self.adam_betas = tuple(float(b) for b in self.adam_betas)
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["alphas"] = list(self.alphas)
        d["adam_betas"] = list(self.adam_betas)
        return d


def lr_at(epoch: float, schedule: ScheduleConfig) -> float:
    """Linear ramp 0 -> peak over the warm-up, then cosine decay to min_lr."""
    s = schedule
    if epoch < s.warmup_epochs:
        return s.peak_lr * epoch / s.warmup_epochs
    span = s.total_epochs - s.warmup_epochs
    if span <= 0:
        return s.peak_lr
    progress = min(1.0, (epoch - s.warmup_epochs) / span)
    return s.min_lr + (s.peak_lr - s.min_lr) / 2 * (1 + math.cos(math.pi * progress))


# -- optimizer ------------------------------------------------------------------

@dataclass
class OptimizerState:
    m: Dict[str, np.ndarray]
    v: Dict[str, np.ndarray]
    step: int = 0
    lr: float = 1e-3
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.01

    @classmethod
    def for_params(cls, params, **kw) -> "OptimizerState":
        items = params.items() if hasattr(params, "items") else params
        items = list(items)
        return cls({k: np.zeros_like(p.data) for k, p in items},
                   {k: np.zeros_like(p.data) for k, p in items}, **kw)


def adamw_step(params, state: OptimizerState, grads: Optional[Dict[str, np.ndarray]] = None,
               lr: Optional[float] = None) -> None:
    """One in-place AdamW update: bias-corrected Adam step, then decoupled decay.

    ``params`` is a name -> Tensor mapping (or ModelParams); missing grads
    count as zero.
    """
    lr = state.lr if lr is None else lr
    b1, b2 = state.betas
    state.step += 1
    c1 = 1 - b1 ** state.step
    c2 = 1 - b2 ** state.step
    for name, p in params.items():
        g = grads.get(name) if grads is not None else p.grad
        if g is None:
            g = np.zeros_like(p.data)
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient for parameter {name!r}")
        m, v = state.m[name], state.v[name]
        if m.shape != p.data.shape:
            raise T.ShapeError(f"optimizer moments for {name!r} have shape {m.shape}, param {p.data.shape}")
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        update = (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data -= (lr * update).astype(p.data.dtype)
        p.data -= (lr * state.weight_decay * p.data).astype(p.data.dtype)


def clip_grad_norm(params: ModelParams, max_norm: float) -> float:
    grads = [p.grad for p in params.parameters() if p.grad is not None]
    norm = math.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads))
    if norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for g in grads:
            g *= scale
    return norm


# -- batching -------------------------------------------------------------------

@dataclass
class Example:
    features: np.ndarray
    seg_labels: np.ndarray
    targets: object  # TargetAssignment


def prepare_examples(corpus: Sequence[VideoSample], alphas: Sequence[float], beta: float, stride: int,
                     num_queries: int, none_class: int) -> List[Example]:
    """Every video at every observation ratio; degenerate splits are skipped."""
    out = []
    for sample in corpus:
        for alpha in alphas:
            try:
                obs = make_observation(sample, alpha, beta, stride)
            except SplitError:
                continue
            out.append(Example(obs.features, obs.seg_labels,
                               assign_targets_sequential(obs.target, num_queries, none_class)))
    return out


def collate(examples: Sequence[Example], dtype) -> Tuple[np.ndarray, np.ndarray, np.ndarray, StackedTargets]:
    lengths = np.array([len(e.features) for e in examples], dtype=np.int64)
    t = int(lengths.max())
    c = examples[0].features.shape[1]
    feats = np.zeros((len(examples), t, c), dtype=dtype)
    labels = np.full((len(examples), t), -1, dtype=np.int64)
    for i, e in enumerate(examples):
        feats[i, :len(e.features)] = e.features
        labels[i, :len(e.seg_labels)] = e.seg_labels
    return feats, lengths, labels, StackedTargets.stack([e.targets for e in examples])


# -- training loop ----------------------------------------------------------------

@dataclass
class TrainResult:
    params: ModelParams
    optimizer: OptimizerState
    log: List[dict]
    rng_state: dict
    epoch: int


def batch_loss(params: ModelParams, feats, lengths, labels, targets: StackedTargets, loss_cfg: LossConfig,
               rng: Optional[np.random.Generator] = None):
    cfg = params.config
    teacher = targets.classes if cfg.decoding_mode == "autoregressive" else None
    fwd = forward(params, feats, lengths, target_classes=teacher, rng=rng)
    return compute_losses(fwd, labels, targets, cfg.head_mode, loss_cfg)


def train(corpus: Sequence[VideoSample], model_cfg: ModelConfig, schedule: ScheduleConfig,
          train_cfg: TrainConfig, seed: int = 0, init_seed: Optional[int] = None,
          resume: Optional["Checkpoint"] = None,
          on_epoch_end: Optional[Callable[[TrainResult], None]] = None) -> TrainResult:
    """Minibatch AdamW training; deterministic given (corpus, seeds)."""
    examples = prepare_examples(corpus, train_cfg.alphas, train_cfg.beta, train_cfg.stride,
                                model_cfg.num_queries, model_cfg.none_class)
    if not examples:
        raise ValueError("training corpus yields no usable observation splits")
    dtype = np.dtype(model_cfg.dtype)
    rng = np.random.default_rng(seed)
    if resume is not None:
        params, opt, start = resume.params, resume.optimizer, resume.epoch
        if opt is None:
            raise CheckpointError("checkpoint has no optimizer state to resume from")
        rng.bit_generator.state = resume.rng_state
        log = list(resume.extra.get("log", []))
    else:
        params = init_params(model_cfg, seed if init_seed is None else init_seed)
        opt = OptimizerState.for_params(params, lr=schedule.peak_lr, betas=train_cfg.adam_betas,
                                        eps=train_cfg.adam_eps, weight_decay=train_cfg.weight_decay)
        start, log = 0, []

    n_batches = math.ceil(len(examples) / train_cfg.batch_size)
    result = TrainResult(params, opt, log, rng.bit_generator.state, start)
    for epoch in range(start, schedule.total_epochs):
        order = rng.permutation(len(examples))
        sums = {"seg": 0.0, "action": 0.0, "duration": 0.0, "total": 0.0}
        lr = 0.0
        for b in range(n_batches):
            idx = order[b * train_cfg.batch_size:(b + 1) * train_cfg.batch_size]
            feats, lengths, labels, targets = collate([examples[i] for i in idx], dtype)
            lr = lr_at(epoch + (b + 1) / n_batches, schedule)
            params.zero_grad()
            loss, br = batch_loss(params, feats, lengths, labels, targets, train_cfg.loss, rng)
            if not math.isfinite(br.total):
                raise TrainingDiverged(epoch + 1, b + 1, br.total)
            loss.backward()
            if train_cfg.grad_clip:
                clip_grad_norm(params, train_cfg.grad_clip)
            adamw_step(params, opt, lr=lr)
            for k in sums:
                sums[k] += getattr(br, k)
        record = {"epoch": epoch + 1, "lr": lr}
        record.update({k: v / n_batches for k, v in sums.items()})
        log.append(record)
        result = TrainResult(params, opt, log, rng.bit_generator.state, epoch + 1)
        if on_epoch_end is not None:
            on_epoch_end(result)
    params.zero_grad()
    return result


# -- checkpoints --------------------------------------------------------------------

@dataclass
class Checkpoint:
    config: ModelConfig
    params: ModelParams
    optimizer: Optional[OptimizerState] = None
    epoch: int = 0
    rng_state: Optional[dict] = None
    extra: dict = field(default_factory=dict)


def _pack_tensor(name: str, arr: np.ndarray, dtype: np.dtype) -> bytes:
    raw = name.encode("utf-8")
    arr = np.ascontiguousarray(arr, dtype=dtype.newbyteorder("<"))
    head = struct.pack("<I", len(raw)) + raw + struct.pack("<I", arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.tobytes()


def save_checkpoint(path, params: ModelParams, optimizer: Optional[OptimizerState] = None, epoch: int = 0,
                    rng_state: Optional[dict] = None, extra: Optional[dict] = None) -> None:
    """Binary checkpoint: magic, u32 version, u32-length config JSON, then tensors."""
    cfg = params.config
    dtype = np.dtype(cfg.dtype)
    header = {"model": cfg.to_dict(), "epoch": int(epoch), "rng_state": rng_state, "extra": extra or {},
              "param_names": list(params), "optimizer": None}
    tensors = [(f"param/{k}", p.data) for k, p in params.items()]
    if optimizer is not None:
        header["optimizer"] = {"step": optimizer.step, "lr": optimizer.lr, "betas": list(optimizer.betas),
                               "eps": optimizer.eps, "weight_decay": optimizer.weight_decay}
        tensors += [(f"adam_m/{k}", a) for k, a in optimizer.m.items()]
        tensors += [(f"adam_v/{k}", a) for k, a in optimizer.v.items()]
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(blob)), blob,
             struct.pack("<I", len(tensors))]
    parts += [_pack_tensor(name, arr, dtype) for name, arr in tensors]
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(b"".join(parts))
    os.replace(tmp, path)


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(raw):
            raise CheckpointError(f"{path}: truncated at offset {pos} (wanted {n} more bytes)")
        chunk = raw[pos:pos + n]
        pos += n
        return chunk

    if take(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, blob_len = struct.unpack("<II", take(8))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: checkpoint format version {version} is not supported "
                              f"(expected {CHECKPOINT_VERSION})")
    try:
        header = json.loads(take(blob_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt config block: {exc}") from exc
    cfg = ModelConfig.from_dict(header["model"])
    dtype = np.dtype(cfg.dtype).newbyteorder("<")
    (count,) = struct.unpack("<I", take(4))
    arrays: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{rank}I", take(4 * rank))
        n = int(np.prod(shape, dtype=np.int64))
        arrays[name] = np.frombuffer(take(n * dtype.itemsize), dtype=dtype).reshape(shape).astype(cfg.dtype)
    if pos != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - pos} trailing bytes")
    names = header["param_names"]
    missing = [k for k in names if f"param/{k}" not in arrays]
    if missing:
        raise CheckpointError(f"{path}: missing tensors {missing}")
    params = ModelParams(cfg, OrderedDict(
        (k, Tensor(arrays[f"param/{k}"], requires_grad=True, name=k)) for k in names))
    opt = None
    if header.get("optimizer"):
        o = header["optimizer"]
        opt = OptimizerState({k: arrays[f"adam_m/{k}"] for k in names}, {k: arrays[f"adam_v/{k}"] for k in names},
                             step=o["step"], lr=o["lr"], betas=tuple(o["betas"]), eps=o["eps"],
                             weight_decay=o["weight_decay"])
    return Checkpoint(cfg, params, opt, header["epoch"], header.get("rng_state"), header.get("extra") or {})


def save_training_state(path, result: TrainResult, extra: Optional[dict] = None) -> None:
    payload = dict(extra or {})
    payload["log"] = result.log
    save_checkpoint(path, result.params, result.optimizer, result.epoch, result.rng_state, payload)
