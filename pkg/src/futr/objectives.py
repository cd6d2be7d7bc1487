"""Training losses, target assignment and Hungarian set matching.

Slot index ``num_classes`` is the NONE class. Loss functions take batched
inputs (leading batch axis) or a single sample; batch losses are the mean of
per-sample sums.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import tensor as T
from .data import SegmentSequence
from .tensor import Tensor

DURATION_VARIANTS = ("L2", "L1", "smoothL1")
DURATION_GATES = ("predicted_non_none", "target_non_none")
DELTA_SOURCES = ("target", "predicted")
ASSIGNMENTS = ("sequential", "hungarian")


@dataclass
class LossConfig:
    use_seg: bool = True
    assignment: str = "sequential"
    duration_variant: str = "L2"
    duration_gate: str = "predicted_non_none"
    delta_source: str = "target"
    lambda_l1: float = 5.0
    lambda_tiou: float = 2.0
    smooth_l1_beta: float = 1.0

    def __post_init__(self):
        if self.assignment not in ASSIGNMENTS:
            raise ValueError(f"assignment must be one of {ASSIGNMENTS}")
        if self.duration_variant not in DURATION_VARIANTS:
            raise ValueError(f"duration_variant must be one of {DURATION_VARIANTS}")
        if self.duration_gate not in DURATION_GATES:
            raise ValueError(f"duration_gate must be one of {DURATION_GATES}")
        if self.delta_source not in DELTA_SOURCES:
            raise ValueError(f"delta_source must be one of {DELTA_SOURCES}")


@dataclass
class TargetAssignment:
    classes: np.ndarray    # (M,) class per query, none_class for NONE
    durations: np.ndarray  # (M,) fraction of the horizon, 0 for NONE
    windows: np.ndarray    # (M, 2) normalised start/end, 0 for NONE
    delta: int             # 1-based slot of the first NONE target, capped at M
    none_class: int

    @property
    def num_active(self) -> int:
        return int((self.classes != self.none_class).sum())


@dataclass
class LossBreakdown:
    seg: float
    action: float
    duration: float
    total: float
    match_cost: Optional[float] = None
    window_l1: Optional[float] = None
    window_tiou: Optional[float] = None

    def as_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if v is not None}


# -- assignment ---------------------------------------------------------------

def assign_targets_sequential(seq: SegmentSequence, num_queries: int, none_class: int) -> TargetAssignment:
    """Segment i goes to query i; overflow segments are dropped and the rest renormalised."""
    if num_queries < 1:
        raise ValueError("num_queries must be >= 1")
    seq = seq.truncated(num_queries)
    n = len(seq)
    classes = np.full(num_queries, none_class, dtype=np.int64)
    durations = np.zeros(num_queries)
    windows = np.zeros((num_queries, 2))
    classes[:n] = seq.actions
    durations[:n] = seq.durations
    ends = np.cumsum(seq.durations)
    windows[:n, 0] = ends - np.asarray(seq.durations)
    windows[:n, 1] = ends
    windows[n - 1, 1] = 1.0
    return TargetAssignment(classes, durations, windows, min(n + 1, num_queries), none_class)


@dataclass
class StackedTargets:
    classes: np.ndarray    # (B, M)
    durations: np.ndarray  # (B, M)
    windows: np.ndarray    # (B, M, 2)
    delta: np.ndarray      # (B,)
    none_class: int

    @classmethod
    def stack(cls, assignments: Sequence[TargetAssignment]) -> "StackedTargets":
        return cls(np.stack([a.classes for a in assignments]),
                   np.stack([a.durations for a in assignments]),
                   np.stack([a.windows for a in assignments]),
                   np.array([a.delta for a in assignments], dtype=np.int64),
                   assignments[0].none_class)


def _stacked(assignment) -> StackedTargets:
    if isinstance(assignment, StackedTargets):
        return assignment
    if isinstance(assignment, TargetAssignment):
        return StackedTargets.stack([assignment])
    return StackedTargets.stack(list(assignment))


def _batched(x: Tensor, ndim: int) -> Tensor:
    return T.reshape(x, (1,) + x.shape) if x.ndim == ndim - 1 else x


# -- losses -------------------------------------------------------------------

def segmentation_loss(seg_probs: Tensor, labels, lengths=None) -> Tensor:
    """Cross-entropy summed over observed frames; padded frames are skipped."""
    probs = _batched(seg_probs, 3)
    labels = np.atleast_2d(np.asarray(labels, dtype=np.int64))
    b, t, k = probs.shape
    if labels.shape != (b, t):
        raise T.ShapeError(f"segmentation labels {labels.shape} vs probs {probs.shape}")
    valid = np.ones((b, t), dtype=bool) if lengths is None else np.arange(t)[None] < np.asarray(lengths)[:, None]
    if ((labels < 0) | (labels >= k))[valid].any():
        raise ValueError(f"segmentation label out of range [0, {k})")
    bi, ti = np.nonzero(valid)
    picked = T.index(probs, (bi, ti, labels[bi, ti]))
    return T.mul(T.sum_(T.log(picked)), -1.0 / b)


def first_predicted_none(action_probs: np.ndarray, none_class: int) -> np.ndarray:
    """1-based slot of the first NONE argmax per sample, M when there is none."""
    is_none = action_probs.argmax(axis=-1) == none_class
    m = is_none.shape[-1]
    return np.where(is_none.any(axis=-1), is_none.argmax(axis=-1) + 1, m)


def anticipation_loss(action_probs: Tensor, assignment, delta_source: str = "target") -> Tensor:
    """Cross-entropy over query slots 1..delta (action prefix plus first NONE)."""
    probs = _batched(action_probs, 3)
    tg = _stacked(assignment)
    b, m, _ = probs.shape
    delta = tg.delta if delta_source == "target" else first_predicted_none(probs.data, tg.none_class)
    bi, si = np.nonzero(np.arange(m)[None] < delta[:, None])
    picked = T.index(probs, (bi, si, tg.classes[bi, si]))
    return T.mul(T.sum_(T.log(picked)), -1.0 / b)


def duration_gate(action_probs: np.ndarray, tg: StackedTargets, gate: str) -> np.ndarray:
    if gate == "predicted_non_none":
        return np.atleast_2d(action_probs.argmax(axis=-1) != tg.none_class)
    return tg.classes != tg.none_class


def elementwise_loss(diff: Tensor, variant: str, beta: float = 1.0) -> Tensor:
    if variant == "L2":
        return T.square(diff)
    if variant == "L1":
        return T.abs_(diff)
    if variant == "smoothL1":
        return T.smooth_l1(diff, beta)
    raise ValueError(f"unknown duration loss variant {variant!r}")


def duration_loss(durations: Tensor, assignment, action_probs, variant: str = "L2",
                  gate: str = "predicted_non_none", beta: float = 1.0) -> Tensor:
    """Regression of raw duration outputs onto target fractions over gated slots."""
    d_hat = _batched(durations, 2)
    tg = _stacked(assignment)
    probs = action_probs.data if isinstance(action_probs, Tensor) else np.asarray(action_probs)
    mask = duration_gate(probs, tg, gate).astype(d_hat.dtype)
    per = elementwise_loss(T.sub(d_hat, Tensor(tg.durations.astype(d_hat.dtype))), variant, beta)
    return T.mul(T.sum_(T.mul(per, Tensor(mask))), 1.0 / d_hat.shape[0])


def normalize_durations(raw, active, eps: float = 1e-6) -> np.ndarray:
    """Clamp active raw durations at ``eps`` and rescale them to sum to one."""
    raw = np.asarray(raw, dtype=np.float64)
    active = np.asarray(active, dtype=bool)
    if not active.any():
        raise ValueError("normalize_durations: no active slot")
    out = np.zeros_like(raw)
    clamped = np.maximum(raw[active], eps)
    out[active] = clamped / clamped.sum()
    return out


def window_terms(t, t_hat: Tensor, eps: float = 1e-12) -> Tuple[Tensor, Tensor]:
    """(L1 distance, temporal IoU) per window; inputs are (..., 2) start/end pairs.

    A predicted window with start > end is empty.
    """
    t = np.asarray(t.data if isinstance(t, Tensor) else t, dtype=t_hat.dtype)
    s, e = Tensor(t[..., 0]), Tensor(t[..., 1])
    s_hat = T.index(t_hat, (Ellipsis, 0))
    e_hat = T.index(t_hat, (Ellipsis, 1))
    l1 = T.add(T.abs_(T.sub(s, s_hat)), T.abs_(T.sub(e, e_hat)))
    inter = T.relu(T.sub(T.minimum(e, e_hat), T.maximum(s, s_hat)))
    pred_len = T.relu(T.sub(e_hat, s_hat))
    union = T.sub(T.add(T.sub(e, s), pred_len), inter)
    iou = T.div(inter, T.maximum(union, eps))
    return l1, iou


def window_loss(t, t_hat, lambda_l1: float = 5.0, lambda_tiou: float = 2.0) -> Tensor:
    """lambda_l1 * |t - t_hat|_1 - lambda_tiou * IoU(t, t_hat), per window."""
    t_hat = t_hat if isinstance(t_hat, Tensor) else Tensor(np.asarray(t_hat, dtype=np.float64))
    l1, iou = window_terms(t, t_hat)
    return T.sub(T.mul(l1, lambda_l1), T.mul(iou, lambda_tiou))


def _window_loss_np(t: np.ndarray, t_hat: np.ndarray, lambda_l1: float, lambda_tiou: float) -> np.ndarray:
    l1 = np.abs(t - t_hat).sum(axis=-1)
    inter = np.maximum(0.0, np.minimum(t[..., 1], t_hat[..., 1]) - np.maximum(t[..., 0], t_hat[..., 0]))
    union = (t[..., 1] - t[..., 0]) + np.maximum(0.0, t_hat[..., 1] - t_hat[..., 0]) - inter
    return lambda_l1 * l1 - lambda_tiou * inter / np.maximum(union, 1e-12)


# -- Hungarian matching -----------------------------------------------------------

def linear_sum_assignment(cost) -> np.ndarray:
    """Minimum-cost perfect matching on a square matrix (Kuhn-Munkres).

    Shortest augmenting path formulation with row/column potentials,
    O(n^3). Returns ``col`` with ``col[i]`` the column assigned to row i.
    """
    cost = np.asarray(cost, dtype=np.float64)
    n = cost.shape[0]
    if cost.shape != (n, n):
        raise ValueError(f"cost matrix must be square, got {cost.shape}")
    if not np.isfinite(cost).all():
        raise ValueError("cost matrix has non-finite entries")
    inf = np.inf
    # 1-based bookkeeping; index 0 is a virtual root
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    owner = np.zeros(n + 1, dtype=np.int64)  # owner[j] = row matched to column j
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        owner[0] = i
        j0 = 0
        minv = np.full(n + 1, inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = owner[j0]
            delta = inf
            j1 = 0
            for j in range(1, n + 1):
                if used[j]:
                    continue
                cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[owner[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if owner[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            owner[j0] = owner[j1]
            j0 = j1
    col = np.zeros(n, dtype=np.int64)
    for j in range(1, n + 1):
        col[owner[j] - 1] = j - 1
    return col


def _assignment_cost(cost: np.ndarray) -> float:
    return float(cost[np.arange(len(cost)), linear_sum_assignment(cost)].sum()) if len(cost) else 0.0


def hungarian_match(cost, tol: float = 1e-9) -> np.ndarray:
    """Optimal permutation; among optimal ones, the lexicographically smallest.

    Row i is fixed to the lowest column that still admits an optimal
    completion, re-solving the reduced problem for each candidate.
    """
    cost = np.asarray(cost, dtype=np.float64)
    n = len(cost)
    best = _assignment_cost(cost)
    scale = tol * max(1.0, float(np.abs(cost).max()) if n else 1.0) * max(n, 1)
    perm = np.zeros(n, dtype=np.int64)
    free = list(range(n))
    fixed = 0.0
    for i in range(n):
        for j in free:
            rest_cols = [c for c in free if c != j]
            rest = _assignment_cost(cost[np.ix_(range(i + 1, n), rest_cols)])
            if fixed + cost[i, j] + rest <= best + scale:
                perm[i] = j
                fixed += cost[i, j]
                free.remove(j)
                break
    return perm


def match_cost_matrix(tg: TargetAssignment, action_probs: np.ndarray, windows_hat: np.ndarray,
                      lambda_l1: float = 5.0, lambda_tiou: float = 2.0) -> np.ndarray:
    """cost[i, j]: target i matched to prediction j; zero for NONE targets."""
    active = tg.classes != tg.none_class
    m = len(tg.classes)
    cost = np.zeros((m, m))
    for i in np.flatnonzero(active):
        wl = _window_loss_np(np.broadcast_to(tg.windows[i], (m, 2)), windows_hat, lambda_l1, lambda_tiou)
        cost[i] = -action_probs[:, tg.classes[i]] + wl
    return cost


def hungarian_loss(action_probs: Tensor, windows_hat: Tensor, assignment, perms: np.ndarray,
                   lambda_l1: float = 5.0, lambda_tiou: float = 2.0) -> Tuple[Tensor, Tensor, Tensor]:
    """Returns (class CE over all M targets, window loss over non-NONE targets, total).

    ``perms`` (B, M) maps target i to prediction slot perms[b, i]; it is
    treated as a constant.
    """
    probs = _batched(action_probs, 3)
    wins = _batched(windows_hat, 3)
    tg = _stacked(assignment)
    perms = np.atleast_2d(perms)
    b, m, _ = probs.shape
    bi = np.repeat(np.arange(b), m)
    slots = perms.reshape(-1)
    picked = T.index(probs, (bi, slots, tg.classes.reshape(-1)))
    ce = T.mul(T.sum_(T.log(picked)), -1.0 / b)
    matched = T.reshape(T.index(wins, (bi, slots)), (b, m, 2))
    wl = window_loss(tg.windows, matched, lambda_l1, lambda_tiou)
    active = (tg.classes != tg.none_class).astype(probs.dtype)
    wsum = T.mul(T.sum_(T.mul(wl, Tensor(active))), 1.0 / b)
    return ce, wsum, T.add(ce, wsum)


def total_loss(seg: Optional[Tensor], action: Tensor, duration: Tensor) -> Tuple[Tensor, LossBreakdown]:
    """seg + action + duration as one addition chain; a disabled seg term counts as 0."""
    zero = Tensor(np.zeros((), dtype=action.dtype))
    seg = zero if seg is None else seg
    total = T.add(T.add(seg, action), duration)
    return total, LossBreakdown(seg.item(), action.item(), duration.item(), total.item())


def compute_losses(fwd, seg_labels: np.ndarray, targets: StackedTargets, head_mode: str,
                   cfg: LossConfig) -> Tuple[Tensor, LossBreakdown]:
    """Loss for one batch given model outputs, per the configured variant.

    duration head + sequential: seg + action + duration.
    start_end head + sequential: seg + action + window loss.
    start_end head + hungarian: seg + Hungarian loss.
    """
    seg = segmentation_loss(fwd.seg_probs, seg_labels, fwd.lengths) if cfg.use_seg else None
    if cfg.assignment == "hungarian":
        if head_mode != "start_end":
            raise ValueError("Hungarian assignment needs the start_end head")
        probs, wins = fwd.action_probs.data, fwd.durations.data
        perms, costs = [], []
        for i in range(probs.shape[0]):
            tg = TargetAssignment(targets.classes[i], targets.durations[i], targets.windows[i],
                                  int(targets.delta[i]), targets.none_class)
            cost = match_cost_matrix(tg, probs[i], wins[i], cfg.lambda_l1, cfg.lambda_tiou)
            perm = hungarian_match(cost)
            perms.append(perm)
            costs.append(cost[np.arange(len(perm)), perm].sum())
        ce, wsum, _ = hungarian_loss(fwd.action_probs, fwd.durations, targets, np.stack(perms),
                                     cfg.lambda_l1, cfg.lambda_tiou)
        total, br = total_loss(seg, ce, wsum)
        br.match_cost = float(np.mean(costs))
        return total, br
    action = anticipation_loss(fwd.action_probs, targets, cfg.delta_source)
    if head_mode == "duration":
        dur = duration_loss(fwd.durations, targets, fwd.action_probs, cfg.duration_variant,
                            cfg.duration_gate, cfg.smooth_l1_beta)
        return total_loss(seg, action, dur)
    active = targets.classes != targets.none_class
    l1, iou = window_terms(targets.windows, fwd.durations)
    b = active.shape[0]
    mask = Tensor(active.astype(fwd.durations.dtype))
    l1_sum = T.mul(T.sum_(T.mul(l1, mask)), 1.0 / b)
    iou_sum = T.mul(T.sum_(T.mul(iou, mask)), 1.0 / b)
    win = T.sub(T.mul(l1_sum, cfg.lambda_l1), T.mul(iou_sum, cfg.lambda_tiou))
    total, br = total_loss(seg, action, win)
    br.window_l1 = cfg.lambda_l1 * l1_sum.item()
    br.window_tiou = cfg.lambda_tiou * iou_sum.item()
    return total, br
