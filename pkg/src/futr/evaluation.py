"""Inference decoding, mean-over-classes accuracy, latency benchmarks, attention export."""

from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from threadpoolctl import threadpool_limits

from . import tensor as T
from .data import SegmentSequence, SplitError, VideoSample, frames_to_segments, make_observation, segments_to_frames
from .model import ForwardOutput, ModelParams, decode_autoregressive, decoder_forward, encoder_forward, forward
from .objectives import normalize_durations

DEFAULT_ALPHAS = (0.2, 0.3)
DEFAULT_BETAS = (0.1, 0.2, 0.3, 0.5)


def grid_key(alpha: float, beta: float) -> str:
    return f"alpha={alpha:g},beta={beta:g}"


# -- decoding -------------------------------------------------------------------

def _fill_gaps(labels: np.ndarray) -> np.ndarray:
    """Forward-fill -1 entries, back-filling a leading gap."""
    out = labels.copy()
    known = np.flatnonzero(out >= 0)
    idx = np.maximum.accumulate(np.where(out >= 0, np.arange(len(out)), -1))
    idx[idx < 0] = known[0]
    return out[idx]


def decode_slots(action_probs: np.ndarray, durations: np.ndarray, horizon: int,
                 head_mode: str = "duration") -> Tuple[np.ndarray, bool]:
    """Frame labels for one sample plus whether the empty-prediction fallback fired.

    Slots are read in order up to (not including) the first NONE argmax. If
    the very first slot is NONE, its most probable real class fills the
    whole horizon.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    none_class = action_probs.shape[-1] - 1
    labels = action_probs.argmax(axis=-1)
    stop = np.flatnonzero(labels == none_class)
    n = int(stop[0]) if stop.size else len(labels)
    if n == 0:
        return np.full(horizon, int(action_probs[0, :none_class].argmax()), dtype=np.int64), True
    if head_mode == "duration":
        fractions = normalize_durations(durations[:n], np.ones(n, dtype=bool))
        seq = SegmentSequence.from_runs(labels[:n], fractions)
        return segments_to_frames(seq, horizon), False
    # start/end windows: most confident covering window wins each frame
    centers = (np.arange(horizon) + 0.5) / horizon
    conf = action_probs[np.arange(n), labels[:n]]
    best = np.full(horizon, -np.inf)
    out = np.full(horizon, -1, dtype=np.int64)
    for i in range(n):
        s, e = durations[i]
        cover = (centers >= s) & (centers < e) & (conf[i] > best)
        out[cover] = labels[i]
        best[cover] = conf[i]
    if (out < 0).all():
        out[:] = labels[int(conf.argmax())]
    return _fill_gaps(out), False


def decode_prediction(fwd: ForwardOutput, horizon: int, index: int = 0, head_mode: str = "duration") -> np.ndarray:
    labels, _ = decode_slots(fwd.action_probs.data[index], fwd.durations.data[index], horizon, head_mode)
    return labels


# -- metric ---------------------------------------------------------------------

def _class_counts(preds: Sequence[np.ndarray], gts: Sequence[np.ndarray]) -> Dict[int, Tuple[int, int]]:
    """Pooled (correct, total) frame counts for every class present in ground truth."""
    correct: Dict[int, int] = {}
    total: Dict[int, int] = {}
    if len(preds) != len(gts):
        raise ValueError("need one prediction per ground-truth array")
    for p, g in zip(preds, gts):
        p, g = np.asarray(p), np.asarray(g)
        if p.shape != g.shape:
            raise ValueError(f"prediction length {p.shape} != ground truth {g.shape}")
        classes, counts = np.unique(g, return_counts=True)
        hits = np.bincount(g[p == g], minlength=int(g.max()) + 1) if g.size else np.zeros(0, int)
        for c, n in zip(classes.tolist(), counts.tolist()):
            total[c] = total.get(c, 0) + n
            correct[c] = correct.get(c, 0) + int(hits[c])
    return {c: (correct[c], total[c]) for c in sorted(total)}


def class_accuracies(preds: Sequence[np.ndarray], gts: Sequence[np.ndarray]) -> Dict[int, float]:
    return {c: k / n for c, (k, n) in _class_counts(preds, gts).items()}


def moc_accuracy(preds: Sequence[np.ndarray], gts: Sequence[np.ndarray]) -> float:
    """Mean over classes of per-class accuracy, evaluated in exact rationals.

    Exact arithmetic makes the result the correctly rounded value, independent
    of class order.
    """
    counts = _class_counts(preds, gts)
    if not counts:
        raise ValueError("no ground-truth frames")
    return float(sum(Fraction(k, n) for k, n in counts.values()) / len(counts))


# -- evaluation driver --------------------------------------------------------------

@dataclass
class EvalReport:
    moc: Dict[str, float] = field(default_factory=dict)
    fallback_rate: Dict[str, float] = field(default_factory=dict)
    predictions: Dict[str, Dict[str, dict]] = field(default_factory=dict)
    class_frequency: Dict[str, List[int]] = field(default_factory=dict)
    latency: Dict[str, dict] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"moc": self.moc, "fallback_rate": self.fallback_rate, "predictions": self.predictions,
                "class_frequency": self.class_frequency, "latency": self.latency}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def predict_batch(params: ModelParams, feats: Sequence[np.ndarray], horizons: Sequence[int]) -> List[Tuple[np.ndarray, bool]]:
    cfg = params.config
    dtype = np.dtype(cfg.dtype)
    lengths = np.array([len(f) for f in feats])
    padded = np.zeros((len(feats), int(lengths.max()), feats[0].shape[1]), dtype=dtype)
    for i, f in enumerate(feats):
        padded[i, :len(f)] = f
    with T.no_grad():
        fwd = forward(params, padded, lengths)
    probs, durs = fwd.action_probs.data, fwd.durations.data
    return [decode_slots(probs[i], durs[i], h, cfg.head_mode) for i, h in enumerate(horizons)]


def evaluate(params: ModelParams, samples: Sequence[VideoSample], alphas: Sequence[float] = DEFAULT_ALPHAS,
             betas: Sequence[float] = DEFAULT_BETAS, stride: int = 3, batch_size: int = 32,
             jobs: int = 1) -> EvalReport:
    """MoC over the (alpha, beta) grid. Deterministic regardless of ``jobs``."""
    report = EvalReport()
    k = params.config.num_classes
    for alpha in alphas:
        for beta in betas:
            key = grid_key(alpha, beta)
            obs = []
            for s in samples:
                try:
                    obs.append((s.video_id, make_observation(s, alpha, beta, stride)))
                except SplitError:
                    continue
            if not obs:
                continue
            chunks = [obs[i:i + batch_size] for i in range(0, len(obs), batch_size)]

            def run(chunk):
                return predict_batch(params, [o.features for _, o in chunk], [o.horizon for _, o in chunk])

            if jobs > 1:
                with ThreadPoolExecutor(max_workers=jobs) as pool:
                    results = [r for part in pool.map(run, chunks) for r in part]
            else:
                results = [r for chunk in chunks for r in run(chunk)]
            preds = [r[0] for r in results]
            gts = [o.future_labels for _, o in obs]
            report.moc[key] = moc_accuracy(preds, gts)
            report.fallback_rate[key] = float(np.mean([r[1] for r in results]))
            report.predictions[key] = {}
            for (vid, _), p in zip(obs, preds):
                seq = frames_to_segments(p)
                report.predictions[key][vid] = {"actions": list(seq.actions),
                                                "durations": [round(d, 9) for d in seq.durations]}
            freq = np.bincount(np.concatenate(gts), minlength=k)
            report.class_frequency[key] = freq.tolist()
    return report


def majority_baseline_moc(train: Sequence[VideoSample], test: Sequence[VideoSample], alpha: float, beta: float,
                          stride: int = 3) -> float:
    """MoC of always predicting the most frequent future-frame class seen in training."""
    counts: Dict[int, int] = {}
    for s in train:
        try:
            fut = make_observation(s, alpha, beta, stride).future_labels
        except SplitError:
            continue
        for c, n in zip(*np.unique(fut, return_counts=True)):
            counts[int(c)] = counts.get(int(c), 0) + int(n)
    majority = max(sorted(counts), key=lambda c: counts[c])
    gts = []
    for s in test:
        try:
            gts.append(make_observation(s, alpha, beta, stride).future_labels)
        except SplitError:
            continue
    return moc_accuracy([np.full_like(g, majority) for g in gts], gts)


# -- latency --------------------------------------------------------------------

def anticipate_once(params: ModelParams, features: np.ndarray, mode: str) -> ForwardOutput:
    """Encoder once plus one decode in ``mode``; autoregressive emits all M slots."""
    with T.no_grad():
        enc, seg, lengths = encoder_forward(features, params)
        if mode == "autoregressive":
            return decode_autoregressive(enc, seg, lengths, params, stop_at_eos=False)
        return decoder_forward(enc, seg, lengths, params, mode)


def benchmark_decoding(params: ModelParams, features: np.ndarray, modes: Sequence[str] = ("parallel",),
                       repeats: int = 100, warmup: int = 10) -> Dict[str, dict]:
    """Wall-clock per anticipation in milliseconds, single BLAS thread.

    The first ``warmup`` runs of each mode are discarded. Timed runs cycle
    through the modes so background load affects all of them alike.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    features = np.asarray(features, dtype=np.dtype(params.config.dtype))
    times: Dict[str, List[float]] = {m: [] for m in modes}
    with threadpool_limits(limits=1):
        for mode in modes:
            for _ in range(warmup):
                anticipate_once(params, features, mode)
        for _ in range(repeats):
            for mode in modes:
                start = time.perf_counter()
                anticipate_once(params, features, mode)
                times[mode].append((time.perf_counter() - start) * 1e3)
    stats = {}
    for mode in modes:
        t = np.asarray(times[mode])
        stats[mode] = {"mean_ms": float(t.mean()), "std_ms": float(t.std()),
                       "repeats": repeats, "warmup": warmup}
    return stats


# -- attention export -----------------------------------------------------------------

def export_attention(fwd: ForwardOutput, path, index: int = 0, layer: int = -1,
                     class_names: Optional[Sequence[str]] = None) -> Tuple[Path, Path]:
    """Cross-attention weights of one decoder layer as CSV (queries x observed tokens).

    A JSON sidecar next to the CSV records the shape and each query's
    predicted label.
    """
    path = Path(path)
    if not fwd.attention_maps:
        raise ValueError("forward output carries no attention maps")
    n = int(fwd.lengths[index])
    weights = np.asarray(fwd.attention_maps[layer][index][:, :n], dtype=np.float64)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["query"] + [f"t{j}" for j in range(n)])
        for i, row in enumerate(weights):
            writer.writerow([i] + [repr(float(w)) for w in row])
    labels = fwd.action_probs.data[index].argmax(axis=-1).tolist()
    none_class = fwd.action_probs.shape[-1] - 1
    named = [("NONE" if c == none_class else class_names[c] if class_names else str(c)) for c in labels]
    sidecar = path.with_suffix(".json")
    sidecar.write_text(json.dumps({"shape": list(weights.shape),
                                   "layer": layer if layer >= 0 else len(fwd.attention_maps) + layer,
                                   "predicted_class": labels, "predicted_label": named},
                                  indent=2) + "\n")
    return path, sidecar
