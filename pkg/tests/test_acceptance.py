"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line.

The lines are collected in ``conftest.ACCEPTANCE_LINES`` and printed in a
terminal summary section at the end of the pytest run.
"""

import itertools
import json
import time
from fractions import Fraction

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES

from futr import tensor as T
from futr.cli import main as cli_main
from futr.data import SegmentSequence, demo_grammars, frames_to_segments, generate_corpus, segments_to_frames
from futr.evaluation import benchmark_decoding, evaluate, grid_key, majority_baseline_moc, moc_accuracy
from futr.model import (ModelConfig, decode_autoregressive, decode_tokens, encoder_forward, forward, init_params,
                        teacher_forcing_tokens)
from futr.objectives import LossConfig, StackedTargets, assign_targets_sequential, compute_losses, hungarian_match
from futr.training import ScheduleConfig, TrainConfig, lr_at, train


def verdict(cid, title, ok, detail):
    line = f"[C{cid:>2}] {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


# -- 1. gradient integrity -------------------------------------------------------------------------

def test_c01_gradient_integrity():
    cfg = ModelConfig(num_classes=4, num_queries=3, hidden_dim=16, input_dim=5, num_heads=2,
                      encoder_layers=2, decoder_layers=1, max_len=16, dtype="float64")
    rng = np.random.default_rng(0)
    params = init_params(cfg, 0)
    feats = rng.normal(size=(2, 6, cfg.input_dim))
    lengths = np.array([6, 6])
    seg_labels = rng.integers(0, cfg.num_classes, size=(2, 6))
    seqs = [SegmentSequence((1, 3), (0.4, 0.6)), SegmentSequence((2, 0, 1), (0.2, 0.5, 0.3))]
    targets = StackedTargets.stack([assign_targets_sequential(s, cfg.num_queries, cfg.none_class) for s in seqs])
    loss_cfg = LossConfig()

    def loss():
        fwd = forward(params, feats, lengths)
        return compute_losses(fwd, seg_labels, targets, cfg.head_mode, loss_cfg)[0]

    start = time.perf_counter()
    err = T.grad_check(loss, params.parameters(), step=1e-5)
    elapsed = time.perf_counter() - start
    verdict(1, "gradient integrity", err < 1e-4 and elapsed < 60,
            f"max rel err {err:.2e} (< 1e-4) in {elapsed:.1f} s (< 60 s)")


# -- 2. causal-mask soundness --------------------------------------------------------------------------

def test_c02_causal_mask_soundness():
    base_cfg = dict(num_classes=4, num_queries=5, hidden_dim=16, input_dim=5, num_heads=2, max_len=16,
                    dtype="float64")
    rng = np.random.default_rng(2)
    m = base_cfg["num_queries"]
    feats = rng.normal(size=(1, 7, base_cfg["input_dim"]))

    def perturbed(params, i):
        q = params.copy()
        q["queries"].data[i + 1:] += rng.normal(size=q["queries"].data[i + 1:].shape)
        return q

    # masked parallel
    cfg = ModelConfig(**base_cfg, decoding_mode="masked_parallel")
    p = init_params(cfg, 1)
    base = forward(p, feats)
    masked_ok = 0
    for _ in range(100):
        i = int(rng.integers(0, m - 1))
        out = forward(perturbed(p, i), feats)
        masked_ok += (np.array_equal(out.action_probs.data[0, :i + 1], base.action_probs.data[0, :i + 1])
                      and np.array_equal(out.durations.data[0, :i + 1], base.durations.data[0, :i + 1]))

    # autoregressive: later query rows and later teacher tokens, then greedy decoding
    cfg = ModelConfig(**base_cfg, decoding_mode="autoregressive")
    p = init_params(cfg, 1)
    enc, seg, lengths = encoder_forward(feats, p)
    tokens = teacher_forcing_tokens(np.array([[2, 0, 3, 1, cfg.none_class]]), cfg)
    tf_base = decode_tokens(enc, seg, lengths, tokens, p)
    greedy_base = decode_autoregressive(enc, seg, lengths, p, stop_at_eos=False)
    ar_ok = 0
    for _ in range(100):
        i = int(rng.integers(0, m - 1))
        q = perturbed(p, i)
        t2 = tokens.copy()
        t2[0, i + 1:] = rng.integers(0, cfg.num_classes + 3, size=m - i - 1)
        tf = decode_tokens(enc, seg, lengths, t2, q)
        greedy = decode_autoregressive(enc, seg, lengths, q, stop_at_eos=False)
        ar_ok += (np.array_equal(tf.action_probs.data[0, :i + 1], tf_base.action_probs.data[0, :i + 1])
                  and np.array_equal(tf.durations.data[0, :i + 1], tf_base.durations.data[0, :i + 1])
                  and np.array_equal(greedy.action_probs.data[0, :i + 1],
                                     greedy_base.action_probs.data[0, :i + 1]))

    # parallel (no mask): some perturbation must reach an earlier slot
    cfg = ModelConfig(**base_cfg, decoding_mode="parallel")
    p = init_params(cfg, 1)
    base = forward(p, feats)
    witnesses = 0
    for _ in range(100):
        i = int(rng.integers(0, m - 1))
        out = forward(perturbed(p, i), feats)
        witnesses += not np.array_equal(out.action_probs.data[0, i], base.action_probs.data[0, i])

    ok = masked_ok == 100 and ar_ok == 100 and witnesses >= 1
    verdict(2, "causal-mask soundness", ok,
            f"FUTR-M {masked_ok}/100 bit-identical, FUTR-A {ar_ok}/100 bit-identical, "
            f"FUTR {witnesses}/100 perturbations reach slot i")


# -- 3. latency ordering --------------------------------------------------------------------------------

def test_c03_latency_ordering():
    cfg = ModelConfig(num_queries=8, hidden_dim=128)
    params = init_params(cfg, 0)
    feats = np.random.default_rng(3).normal(size=(150, cfg.input_dim))
    stats = benchmark_decoding(params, feats, ("parallel", "autoregressive"), repeats=100, warmup=10)
    par, ar = stats["parallel"]["mean_ms"], stats["autoregressive"]["mean_ms"]
    verdict(3, "latency ordering", 2 * par <= ar,
            f"parallel {par:.2f} ms, autoregressive {ar:.2f} ms, ratio {ar / par:.2f}x (>= 2x)")


# -- 4. learning on a deterministic grammar --------------------------------------------------------------

def test_c04_deterministic_grammar_learning():
    start = time.perf_counter()
    grammars = demo_grammars(3, 4, (1.0,), (18, 22), noise_std=0.1)
    corpus = generate_corpus(grammars, 200, 32, seed=0)
    train_set, test_set = corpus[:160], corpus[160:]
    cfg = ModelConfig(num_classes=12, num_queries=8, hidden_dim=128, input_dim=32, num_heads=8, max_len=256)
    result = train(train_set, cfg, ScheduleConfig(), TrainConfig(), seed=0)
    moc = evaluate(result.params, test_set, alphas=(0.3,), betas=(0.5,)).moc[grid_key(0.3, 0.5)]
    baseline = majority_baseline_moc(train_set, test_set, 0.3, 0.5)
    elapsed = time.perf_counter() - start
    ok = moc >= 0.90 and moc >= baseline + 0.30 and elapsed < 600
    verdict(4, "deterministic-grammar learning", ok,
            f"MoC {moc:.4f} (>= 0.90), majority baseline {baseline:.4f} (+0.30 -> {baseline + 0.30:.4f}), "
            f"{elapsed:.0f} s (< 600 s)")


# -- 5 and 11. ablation orderings on a stochastic corpus ----------------------------------------------------

ABLATION_VARIANTS = {
    "FUTR": ({}, True),
    "FUTR-M": ({"decoding_mode": "masked_parallel"}, True),
    "FUTR-A": ({"decoding_mode": "autoregressive"}, True),
    "FUTR without seg loss": ({}, False),
}


@pytest.fixture(scope="module")
def ablation_runs():
    """MoC (mean over the default evaluation grid) per variant and seed."""
    grammars = demo_grammars(3, 4, (0.7, 0.3), (12, 24), noise_std=0.1)
    results = {name: [] for name in ABLATION_VARIANTS}
    for seed in range(5):
        corpus = generate_corpus(grammars, 560, 32, seed=seed)
        train_set, test_set = corpus[:160], corpus[160:]
        for name, (overrides, use_seg) in ABLATION_VARIANTS.items():
            cfg = ModelConfig(num_classes=24, num_queries=8, hidden_dim=64, input_dim=32, num_heads=4,
                              max_len=256, **overrides)
            res = train(train_set, cfg, ScheduleConfig(total_epochs=30),
                        TrainConfig(loss=LossConfig(use_seg=use_seg)), seed=seed)
            report = evaluate(res.params, test_set)
            results[name].append(float(np.mean(list(report.moc.values()))))
    print("seed  " + "  ".join(f"{n:>22s}" for n in results))
    for seed in range(5):
        print(f"{seed:4d}  " + "  ".join(f"{results[n][seed]:22.4f}" for n in results))
    return results


def test_c05_decoding_ablation_ordering(ablation_runs):
    futr, futr_m, futr_a = (np.array(ablation_runs[k]) for k in ("FUTR", "FUTR-M", "FUTR-A"))
    wins_m = int((futr >= futr_m).sum())
    ok = futr.mean() >= futr_a.mean() and wins_m >= 3
    verdict(5, "decoding ablation ordering", ok,
            f"mean MoC FUTR {futr.mean():.4f} vs FUTR-A {futr_a.mean():.4f}; "
            f"FUTR >= FUTR-M in {wins_m}/5 seeds (FUTR-M mean {futr_m.mean():.4f})")


def test_c11_segmentation_loss_ablation(ablation_runs):
    with_seg = np.array(ablation_runs["FUTR"])
    without = np.array(ablation_runs["FUTR without seg loss"])
    wins = int((with_seg >= without).sum())
    ok = len(with_seg) == len(without) == 5 and with_seg.mean() >= without.mean() and wins >= 3
    per_seed = ", ".join(f"{a:.3f}/{b:.3f}" for a, b in zip(with_seg, without))
    verdict(11, "segmentation-loss ablation", ok,
            f"mean MoC with {with_seg.mean():.4f} vs without {without.mean():.4f}, with >= without in "
            f"{wins}/5 seeds (with/without per seed: {per_seed})")


# -- 6. Hungarian oracle ---------------------------------------------------------------------------------------

def test_c06_hungarian_oracle():
    rng = np.random.default_rng(6)
    mismatches, total = 0, 0
    for m in range(2, 8):
        perms = np.array(list(itertools.permutations(range(m))))
        rows = np.arange(m)
        for _ in range(1000):
            cost = rng.random((m, m))
            sums = cost[rows, perms].sum(axis=1)
            best = perms[int(sums.argmin())]
            got = hungarian_match(cost)
            total += 1
            mismatches += not (np.array_equal(got, best) and cost[rows, got].sum() == sums.min())
    verdict(6, "Hungarian oracle", mismatches == 0, f"{mismatches} mismatches in {total} matrices (M = 2..7)")


# -- 7. codec roundtrip ------------------------------------------------------------------------------------------

def test_c07_codec_roundtrip():
    rng = np.random.default_rng(7)
    failures = 0
    for _ in range(10_000):
        horizon = int(rng.integers(1, 200))
        n = int(rng.integers(1, min(horizon, 8) + 1))
        # every segment gets at least one frame
        cuts = np.sort(rng.choice(np.arange(1, horizon), size=n - 1, replace=False)) if n > 1 else np.array([], int)
        counts = np.diff(np.concatenate([[0], cuts, [horizon]]))
        actions = [int(rng.integers(0, 20))]
        while len(actions) < n:
            a = int(rng.integers(0, 20))
            if a != actions[-1]:
                actions.append(a)
        seq = SegmentSequence(tuple(actions), tuple(counts / horizon))
        frames = segments_to_frames(seq, horizon)
        expected = np.repeat(actions, counts)
        once = len(frames) == horizon and np.array_equal(frames, expected)
        failures += not (once and frames_to_segments(frames) == seq)
    verdict(7, "codec roundtrip", failures == 0, f"{failures} failures in 10000 (sequence, horizon) pairs")


# -- 8. MoC oracle ------------------------------------------------------------------------------------------------

def test_c08_moc_oracle():
    rng = np.random.default_rng(8)
    mismatches = 0
    for _ in range(1000):
        k = int(rng.integers(1, 10))
        gts = [rng.integers(0, k, size=int(rng.integers(1, 30))) for _ in range(int(rng.integers(1, 5)))]
        preds = [np.where(rng.random(len(g)) < 0.5, g, rng.integers(0, k + 1, size=len(g))) for g in gts]
        hits, totals = {}, {}
        for p, g in zip(preds, gts):
            for a, b in zip(p.tolist(), g.tolist()):
                totals[b] = totals.get(b, 0) + 1
                hits[b] = hits.get(b, 0) + (a == b)
        oracle = float(sum(Fraction(hits[c], totals[c]) for c in totals) / len(totals))
        mismatches += moc_accuracy(preds, gts) != oracle
    verdict(8, "MoC oracle", mismatches == 0, f"{mismatches} mismatches in 1000 trials (exact equality)")


# -- 9. schedule -----------------------------------------------------------------------------------------------------

def test_c09_schedule():
    s = ScheduleConfig()
    values = {"lr_at(0)": lr_at(0, s), "lr_at(10)": lr_at(10, s), "lr_at(60)": lr_at(60, s)}
    gap = abs(lr_at(10 - 1e-9, s) - lr_at(10 + 1e-9, s))
    ok = values["lr_at(0)"] == 0.0 and values["lr_at(10)"] == 1e-3 and values["lr_at(60)"] == s.min_lr \
        and gap < 1e-10
    verdict(9, "schedule", ok, ", ".join(f"{k} = {v:g}" for k, v in values.items())
            + f", jump at warm-up end {gap:.1e}")


# -- 10. determinism -------------------------------------------------------------------------------------------------

def test_c10_determinism(tmp_path):
    (tmp_path / "grammar.json").write_text(json.dumps([g.to_dict() for g in demo_grammars(2, 3, (0.7, 0.3))]))
    (tmp_path / "run.json").write_text(json.dumps({
        "model": {"hidden_dim": 32, "num_heads": 4, "max_len": 256},
        "schedule": {"total_epochs": 4, "warmup_epochs": 1}}))
    outputs = []
    for run in ("a", "b"):
        d = tmp_path / run
        assert cli_main(["gen", "--grammars", str(tmp_path / "grammar.json"), "--count", "24", "--seed", "3",
                         "--feature-dim", "16", "--out", str(d / "data")]) == 0
        assert cli_main(["train", "--config", str(tmp_path / "run.json"), "--data", str(d / "data"),
                         "--out", str(d / "train"), "--seed", "3", "--quiet"]) == 0
        assert cli_main(["eval", "--ckpt", str(d / "train" / "final.ckpt"), "--data", str(d / "data"),
                         "--out", str(d / "eval")]) == 0
        outputs.append(((d / "train" / "final.ckpt").read_bytes(),
                        (d / "eval" / "eval_report.json").read_bytes()))
    same_ckpt = outputs[0][0] == outputs[1][0]
    same_report = outputs[0][1] == outputs[1][1]
    verdict(10, "determinism", same_ckpt and same_report,
            f"checkpoints byte-identical: {same_ckpt}, eval reports byte-identical: {same_report}")
