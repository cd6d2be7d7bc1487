"""Segment/frame codec, synthetic activity corpora and on-disk formats.

Frame labels inside a prediction horizon are 1-based in the codec: frame t
of a horizon of H frames belongs to segment i when

    H * sum(d[:i]) < t <= H * sum(d[:i+1])

Video frame arrays everywhere else are ordinary 0-based numpy arrays.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

FEATURE_MAGIC = b"FUTRF1"
_SNAP = 1e-9


class ParseError(ValueError):
    pass


class SplitError(ValueError):
    """The requested observation/prediction split is degenerate."""


@dataclass(frozen=True)
class SegmentSequence:
    actions: Tuple[int, ...]
    durations: Tuple[float, ...]

    def __post_init__(self):
        actions = tuple(int(a) for a in self.actions)
        durations = tuple(float(d) for d in self.durations)
        object.__setattr__(self, "actions", actions)
        object.__setattr__(self, "durations", durations)
        if not actions or len(actions) != len(durations):
            raise ValueError("segment sequence needs N >= 1 actions with one duration each")
        if any(d <= 0 for d in durations):
            raise ValueError(f"durations must be positive: {durations}")
        if abs(sum(durations) - 1.0) > 1e-6:
            raise ValueError(f"durations sum to {sum(durations)}, expected 1")
        if any(a == b for a, b in zip(actions, actions[1:])):
            raise ValueError(f"consecutive segments share an action: {actions}")

    def __len__(self) -> int:
        return len(self.actions)

    @classmethod
    def from_runs(cls, actions: Sequence[int], durations: Sequence[float]) -> "SegmentSequence":
        """Merge equal neighbours, drop empty runs and renormalise."""
        merged_a: List[int] = []
        merged_d: List[float] = []
        for a, d in zip(actions, durations):
            if d <= 0:
                continue
            if merged_a and merged_a[-1] == a:
                merged_d[-1] += d
            else:
                merged_a.append(int(a))
                merged_d.append(float(d))
        total = sum(merged_d)
        return cls(tuple(merged_a), tuple(d / total for d in merged_d))

    def truncated(self, m: int) -> "SegmentSequence":
        if len(self) <= m:
            return self
        return SegmentSequence.from_runs(self.actions[:m], self.durations[:m])


@dataclass
class VideoSample:
    features: np.ndarray      # (T, C)
    frame_labels: np.ndarray  # (T,)
    activity: str
    video_id: str = ""

    def __post_init__(self):
        self.frame_labels = np.asarray(self.frame_labels, dtype=np.int64)
        if self.features.ndim != 2 or len(self.features) != len(self.frame_labels):
            raise ValueError(f"{self.video_id}: features {self.features.shape} vs "
                             f"{len(self.frame_labels)} labels")

    @property
    def num_frames(self) -> int:
        return len(self.frame_labels)


@dataclass
class ObservationSplit:
    features: np.ndarray       # (T_O, C) stride-sampled observed features
    seg_labels: np.ndarray     # (T_O,) labels at the sampled rows
    future_labels: np.ndarray  # (horizon,) ground truth for the predicted frames
    target: SegmentSequence
    alpha: float
    beta: float
    stride: int

    @property
    def horizon(self) -> int:
        return len(self.future_labels)


# -- codec --------------------------------------------------------------------

def segment_ends(durations: Sequence[float], horizon: int) -> np.ndarray:
    """Last (1-based) frame index of every segment; the final end is ``horizon``.

    Cumulative boundaries within 1e-9 of an integer snap to it so that
    durations like k/H survive float summation.
    """
    cum = np.cumsum(np.asarray(durations, dtype=np.float64))
    ends = np.floor(horizon * cum + _SNAP).astype(np.int64)
    ends = np.clip(ends, 0, horizon)
    ends[-1] = horizon
    return np.maximum.accumulate(ends)


def segments_to_frames(seq: SegmentSequence, horizon: int) -> np.ndarray:
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    ends = segment_ends(seq.durations, horizon)
    counts = np.diff(np.concatenate([[0], ends]))
    return np.repeat(np.asarray(seq.actions, dtype=np.int64), counts)


def frames_to_segments(labels: Sequence[int]) -> SegmentSequence:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise ValueError("need at least one frame")
    change = np.flatnonzero(np.diff(labels)) + 1
    starts = np.concatenate([[0], change])
    lengths = np.diff(np.concatenate([starts, [labels.size]]))
    return SegmentSequence(tuple(labels[starts]), tuple(lengths / labels.size))


# -- observation split ----------------------------------------------------------

def observed_count(alpha: float, n_frames: int) -> int:
    return int(math.floor(alpha * n_frames + _SNAP))


def make_observation(sample: VideoSample, alpha: float, beta: float, stride: int) -> ObservationSplit:
    if not 0.0 < alpha < 1.0 or not 0.0 < beta <= 1.0 - alpha + _SNAP:
        raise SplitError(f"invalid ratios alpha={alpha}, beta={beta}")
    if stride < 1:
        raise SplitError("stride must be >= 1")
    n = sample.num_frames
    n_obs = observed_count(alpha, n)
    n_fut = observed_count(beta, n)
    t_obs = int(math.floor(alpha * n / stride + _SNAP))
    if t_obs < 1 or n_fut < 1 or n_obs + n_fut > n:
        raise SplitError(f"{sample.video_id}: degenerate split of {n} frames "
                         f"(alpha={alpha}, beta={beta}, stride={stride})")
    rows = np.arange(t_obs) * stride
    future = sample.frame_labels[n_obs:n_obs + n_fut]
    return ObservationSplit(
        features=sample.features[rows],
        seg_labels=sample.frame_labels[rows],
        future_labels=future,
        target=frames_to_segments(future),
        alpha=alpha, beta=beta, stride=stride,
    )


# -- synthetic corpus -----------------------------------------------------------

@dataclass
class ActivityGrammar:
    """An activity as an ordered list of slots, each a weighted choice of actions."""

    activity: str
    slots: List[List[Tuple[str, float]]]
    durations: Dict[str, Tuple[int, int]]
    noise_std: float = 0.1

    def __post_init__(self):
        if not self.slots:
            raise ValueError(f"grammar {self.activity!r} has no slots")
        self.slots = [[(str(a), float(p)) for a, p in slot] for slot in self.slots]
        for slot in self.slots:
            if not slot or abs(sum(p for _, p in slot) - 1.0) > 1e-6:
                raise ValueError(f"grammar {self.activity!r}: slot probabilities must sum to 1")
            for action, _ in slot:
                lo, hi = self.durations.get(action, (None, None))
                if lo is None:
                    raise ValueError(f"grammar {self.activity!r}: no duration for {action!r}")
                if not 1 <= lo <= hi:
                    raise ValueError(f"grammar {self.activity!r}: bad duration range for {action!r}")
        self.durations = {a: (int(lo), int(hi)) for a, (lo, hi) in self.durations.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "ActivityGrammar":
        slots = [[(alt[0], alt[1]) for alt in slot] for slot in d["slots"]]
        durations = {a: tuple(r) for a, r in d["durations"].items()}
        return cls(d["activity"], slots, durations, float(d.get("noise_std", 0.1)))

    def to_dict(self) -> dict:
        return {"activity": self.activity,
                "slots": [[[a, p] for a, p in slot] for slot in self.slots],
                "durations": {a: list(r) for a, r in self.durations.items()},
                "noise_std": self.noise_std}


def action_vocabulary(grammars: Sequence[ActivityGrammar]) -> List[str]:
    """Action names in order of first appearance across the grammars."""
    names: List[str] = []
    for g in grammars:
        for slot in g.slots:
            for a, _ in slot:
                if a not in names:
                    names.append(a)
    return names


def demo_grammars(num_activities: int = 3, num_slots: int = 4, probs: Sequence[float] = (1.0,),
                  durations: Tuple[int, int] = (18, 22), noise_std: float = 0.1) -> List[ActivityGrammar]:
    """Activities with disjoint vocabularies; each slot chooses among ``len(probs)`` actions.

    ``probs=(1.0,)`` gives deterministic grammars, ``(0.7, 0.3)`` a two-way
    stochastic choice per slot.
    """
    grammars = []
    for g in range(num_activities):
        slots = [[(f"a{g}_s{i}_{chr(ord('a') + j)}", float(p)) for j, p in enumerate(probs)]
                 for i in range(num_slots)]
        durs = {a: tuple(durations) for slot in slots for a, _ in slot}
        grammars.append(ActivityGrammar(f"activity{g}", slots, durs, noise_std))
    return grammars


def class_prototypes(num_classes: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    """Near-orthogonal rows with entries of roughly unit magnitude."""
    raw = rng.normal(size=(max(num_classes, dim), dim))
    if num_classes <= dim:
        q, _ = np.linalg.qr(raw[:dim].T)
        return q.T[:num_classes] * math.sqrt(dim)
    return raw[:num_classes]


def generate_corpus(grammars: Sequence[ActivityGrammar], count: int, feature_dim: int, seed: int,
                    length_range: Optional[Tuple[int, int]] = None) -> List[VideoSample]:
    """Sample ``count`` videos. Pure function of its arguments.

    Per video: pick a grammar uniformly, one action per slot, a frame count
    per action from its duration range. With ``length_range`` the run lengths
    are rescaled so the video length is drawn uniformly from that range.
    Features are the action's prototype plus Gaussian noise.
    """
    rng = np.random.default_rng(seed)
    vocab = action_vocabulary(grammars)
    ids = {a: i for i, a in enumerate(vocab)}
    protos = class_prototypes(len(vocab), feature_dim, rng)
    samples = []
    for n in range(count):
        g = grammars[int(rng.integers(len(grammars)))]
        actions, runs = [], []
        for slot in g.slots:
            probs = np.array([p for _, p in slot])
            a = slot[int(rng.choice(len(slot), p=probs / probs.sum()))][0]
            lo, hi = g.durations[a]
            actions.append(ids[a])
            runs.append(int(rng.integers(lo, hi + 1)))
        if length_range is not None:
            target = int(rng.integers(length_range[0], length_range[1] + 1))
            scaled = np.maximum(1, np.round(np.asarray(runs) * target / sum(runs))).astype(int)
            runs = scaled.tolist()
        labels = np.repeat(np.asarray(actions, dtype=np.int64), runs)
        noise = rng.normal(0.0, 1.0, size=(len(labels), feature_dim)) * g.noise_std
        feats = (protos[labels] + noise).astype(np.float32)
        samples.append(VideoSample(feats, labels, g.activity, f"vid{n:05d}"))
    return samples


# -- file formats ---------------------------------------------------------------

def load_mapping(path) -> Dict[str, int]:
    """Parse ``id name`` lines into name -> id."""
    mapping: Dict[str, int] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split(maxsplit=1)
        if len(parts) != 2 or not parts[0].lstrip("-").isdigit():
            raise ParseError(f"{path}:{lineno}: expected '<id> <name>', got {line!r}")
        mapping[parts[1].strip()] = int(parts[0])
    return mapping


def write_mapping(path, names: Sequence[str]) -> None:
    Path(path).write_text("".join(f"{i} {name}\n" for i, name in enumerate(names)))


def load_groundtruth(path, mapping: Dict[str, int]) -> np.ndarray:
    labels = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        name = line.strip()
        if not name:
            continue
        if name not in mapping:
            raise ParseError(f"{path}:{lineno}: label {name!r} not in mapping")
        labels.append(mapping[name])
    return np.asarray(labels, dtype=np.int64)


def write_groundtruth(path, labels: Sequence[int], names: Sequence[str]) -> None:
    Path(path).write_text("".join(f"{names[int(i)]}\n" for i in labels))


def load_features(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    head = len(FEATURE_MAGIC) + 8
    if len(raw) < head or raw[:len(FEATURE_MAGIC)] != FEATURE_MAGIC:
        raise ParseError(f"{path}: offset 0: missing {FEATURE_MAGIC.decode()} header")
    rows, cols = struct.unpack_from("<II", raw, len(FEATURE_MAGIC))
    payload = len(raw) - head
    if payload != rows * cols * 4:
        raise ParseError(f"{path}: offset {head}: header says {rows}x{cols} floats "
                         f"({rows * cols * 4} bytes) but payload has {payload} bytes")
    return np.frombuffer(raw, dtype="<f4", offset=head).reshape(rows, cols).astype(np.float32)


def write_features(path, features: np.ndarray) -> None:
    features = np.ascontiguousarray(features, dtype="<f4")
    rows, cols = features.shape
    Path(path).write_bytes(FEATURE_MAGIC + struct.pack("<II", rows, cols) + features.tobytes())


def save_corpus(out_dir, samples: Sequence[VideoSample], names: Sequence[str],
                test_fraction: float = 0.2, extra: Optional[dict] = None) -> dict:
    """Write features, ground truth, mapping and a JSON manifest under ``out_dir``."""
    out = Path(out_dir)
    (out / "features").mkdir(parents=True, exist_ok=True)
    (out / "groundTruth").mkdir(parents=True, exist_ok=True)
    write_mapping(out / "mapping.txt", names)
    n_test = int(round(len(samples) * test_fraction))
    videos = []
    for i, s in enumerate(samples):
        feat = f"features/{s.video_id}.bin"
        gt = f"groundTruth/{s.video_id}.txt"
        write_features(out / feat, s.features)
        write_groundtruth(out / gt, s.frame_labels, names)
        videos.append({"id": s.video_id, "activity": s.activity, "frames": s.num_frames,
                       "features": feat, "groundtruth": gt,
                       "split": "test" if i >= len(samples) - n_test else "train"})
    manifest = {"format": "futr-corpus", "version": 1, "mapping": "mapping.txt",
                "num_classes": len(names),
                "feature_dim": int(samples[0].features.shape[1]) if samples else 0,
                "activities": sorted({s.activity for s in samples}), "videos": videos}
    if extra:
        manifest.update(extra)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def load_corpus(data_dir, split: Optional[str] = None) -> Tuple[List[VideoSample], List[str]]:
    root = Path(data_dir)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"no manifest.json in {root}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{manifest_path}: {exc}") from exc
    mapping = load_mapping(root / manifest["mapping"])
    names = [name for name, _ in sorted(mapping.items(), key=lambda kv: kv[1])]
    samples = []
    for v in manifest["videos"]:
        if split is not None and v.get("split") != split:
            continue
        feats = load_features(root / v["features"])
        labels = load_groundtruth(root / v["groundtruth"], mapping)
        samples.append(VideoSample(feats, labels, v.get("activity", ""), v["id"]))
    return samples, names
