import json
import struct

import numpy as np
import pytest

from futr.data import (ActivityGrammar, ParseError, SegmentSequence, SplitError, VideoSample, action_vocabulary,
                       demo_grammars, frames_to_segments, generate_corpus, load_corpus, load_features,
                       load_groundtruth, load_mapping, make_observation, save_corpus, segments_to_frames,
                       write_features)


def interval_oracle(durations, horizon):
    """Frame t (1-based) gets segment i when H*c_{i-1} < t <= H*c_i, evaluated with exact fractions."""
    from fractions import Fraction
    cum = [Fraction(0)]
    for d in durations:
        cum.append(cum[-1] + Fraction(d))
    out = []
    for t in range(1, horizon + 1):
        i = next(i for i in range(len(durations)) if horizon * cum[i] < t <= horizon * cum[i + 1])
        out.append(i)
    return out


# -- SegmentSequence ------------------------------------------------------------------------

def test_segment_sequence_invariants():
    with pytest.raises(ValueError):
        SegmentSequence((0, 1), (0.5, 0.6))
    with pytest.raises(ValueError):
        SegmentSequence((0, 0), (0.5, 0.5))
    with pytest.raises(ValueError):
        SegmentSequence((), ())
    with pytest.raises(ValueError):
        SegmentSequence((0, 1), (1.0, 0.0))
    merged = SegmentSequence.from_runs([1, 1, 2, 3], [1, 1, 0, 2])
    assert merged.actions == (1, 3) and merged.durations == (0.5, 0.5)


# -- codec --------------------------------------------------------------------------------

def test_segments_to_frames_examples():
    seq = SegmentSequence((0, 1), (0.3, 0.7))
    assert segments_to_frames(seq, 10).tolist() == [0] * 3 + [1] * 7
    assert segments_to_frames(SegmentSequence((4,), (1.0,)), 6).tolist() == [4] * 6
    assert segments_to_frames(SegmentSequence((0, 1), (0.5, 0.5)), 7).tolist() == [0] * 3 + [1] * 4
    with pytest.raises(ValueError):
        segments_to_frames(seq, 0)


def test_segments_to_frames_matches_exact_oracle(rng):
    from fractions import Fraction
    for _ in range(500):
        n = int(rng.integers(1, 6))
        horizon = int(rng.integers(1, 40))
        # rational durations with small denominators hit boundaries exactly
        w = rng.integers(1, 8, size=n)
        durs = [Fraction(int(x), int(w.sum())) for x in w]
        actions = list(range(n))
        seq = SegmentSequence(tuple(actions), tuple(float(d) for d in durs))
        got = segments_to_frames(seq, horizon)
        assert got.tolist() == interval_oracle(durs, horizon)


def test_frames_to_segments_examples():
    seq = frames_to_segments([5, 5, 7])
    assert seq.actions == (5, 7)
    np.testing.assert_allclose(seq.durations, [2 / 3, 1 / 3])
    assert frames_to_segments([2, 2, 2]) == SegmentSequence((2,), (1.0,))
    with pytest.raises(ValueError):
        frames_to_segments([])


def test_roundtrip_arbitrary_durations(rng):
    for _ in range(500):
        horizon = int(rng.integers(5, 60))
        n = int(rng.integers(1, 5))
        d = rng.dirichlet(np.ones(n))
        if (d * horizon < 1).any():
            continue
        actions = tuple(int(a) for a in rng.permutation(10)[:n])
        seq = SegmentSequence(actions, tuple(d / d.sum()))
        frames = segments_to_frames(seq, horizon)
        assert len(frames) == horizon
        back = frames_to_segments(frames)
        assert back.actions == seq.actions
        assert np.abs(np.array(back.durations) - np.array(seq.durations)).max() <= 1.0 / horizon + 1e-12


# -- observation splits ------------------------------------------------------------------------

def sample(labels, c=2):
    labels = np.asarray(labels)
    feats = np.arange(len(labels) * c, dtype=np.float32).reshape(len(labels), c)
    return VideoSample(feats, labels, "act", "v")


def test_make_observation_examples():
    obs = make_observation(sample([0] * 10), 0.5, 0.5, 1)
    assert len(obs.features) == 5

    s = sample([0] * 5 + [1] * 15)          # alpha*T = 10
    obs = make_observation(s, 0.5, 0.25, 3)
    assert obs.features.shape[0] == 3
    np.testing.assert_array_equal(obs.features, s.features[[0, 3, 6]])
    assert obs.seg_labels.tolist() == [0, 0, 1]


def test_future_crossing_boundary():
    s = sample([0] * 6 + [1] * 2 + [2] * 12)  # T = 20
    obs = make_observation(s, 0.3, 0.5, 1)      # future = frames 7..16 (1-based)
    assert obs.future_labels.tolist() == [1, 1] + [2] * 8
    assert obs.target.actions == (1, 2)
    np.testing.assert_allclose(obs.target.durations, [0.2, 0.8])


def test_degenerate_split_raises():
    with pytest.raises(SplitError):
        make_observation(sample([0] * 4), 0.2, 0.5, 3)
    with pytest.raises(SplitError):
        make_observation(sample([0] * 10), 0.6, 0.5, 1)
    with pytest.raises(SplitError):
        make_observation(sample([0] * 10), 0.5, 0.5, 0)


# -- corpus generation ---------------------------------------------------------------------------

def test_grammar_validation():
    with pytest.raises(ValueError):
        ActivityGrammar("a", [[("x", 0.5)]], {"x": (1, 2)})
    with pytest.raises(ValueError):
        ActivityGrammar("a", [[("x", 1.0)]], {"x": (3, 2)})
    with pytest.raises(ValueError):
        ActivityGrammar("a", [[("x", 1.0)]], {})
    with pytest.raises(ValueError):
        ActivityGrammar("a", [], {})
    g = demo_grammars(1, 2, (0.7, 0.3))[0]
    assert ActivityGrammar.from_dict(json.loads(json.dumps(g.to_dict()))) == g


def test_corpus_is_pure_function_of_seed():
    g = demo_grammars(2, 3, (0.6, 0.4))
    a = generate_corpus(g, 12, 8, seed=5)
    b = generate_corpus(g, 12, 8, seed=5)
    for x, y in zip(a, b):
        assert x.features.tobytes() == y.features.tobytes()
        assert x.frame_labels.tobytes() == y.frame_labels.tobytes()
    c = generate_corpus(g, 12, 8, seed=6)
    assert any(x.frame_labels.tobytes() != y.frame_labels.tobytes() for x, y in zip(a, c))


def test_zero_noise_features_are_prototypes():
    g = demo_grammars(1, 3, noise_std=0.0)
    for s in generate_corpus(g, 4, 8, seed=0):
        for label in np.unique(s.frame_labels):
            rows = s.features[s.frame_labels == label]
            assert (rows == rows[0]).all()


def test_corpus_labels_and_durations():
    g = demo_grammars(2, 3, (1.0,), (4, 6))
    names = action_vocabulary(g)
    for s in generate_corpus(g, 20, 4, seed=1):
        seq = frames_to_segments(s.frame_labels)
        assert len(seq) == 3
        runs = np.round(np.array(seq.durations) * s.num_frames).astype(int)
        assert ((runs >= 4) & (runs <= 6)).all()
        assert {names[a].split("_")[0] for a in seq.actions} == {s.activity.replace("activity", "a")}


def test_length_range_rescales():
    g = demo_grammars(1, 3, (1.0,), (4, 6))
    for s in generate_corpus(g, 20, 4, seed=1, length_range=(90, 110)):
        assert 85 <= s.num_frames <= 115


def test_label_marginals_match_slot_probabilities():
    g = demo_grammars(1, 3, (0.7, 0.3), (1, 1))
    corpus = generate_corpus(g, 10_000, 1, seed=11)
    names = action_vocabulary(g)
    labels = np.stack([s.frame_labels for s in corpus])  # one frame per slot
    for slot in range(3):
        first = names.index(g[0].slots[slot][0][0])
        frac = float((labels[:, slot] == first).mean())
        assert abs(frac - 0.7) < 0.02


# -- file formats -------------------------------------------------------------------------------

def test_groundtruth_and_mapping(tmp_path):
    (tmp_path / "mapping.txt").write_text("0 take\n1 pour\n")
    (tmp_path / "gt.txt").write_text("take\ntake\npour\n")
    mapping = load_mapping(tmp_path / "mapping.txt")
    assert load_groundtruth(tmp_path / "gt.txt", mapping).tolist() == [0, 0, 1]
    (tmp_path / "bad.txt").write_text("take\nstir\n")
    with pytest.raises(ParseError, match=r"'stir'.*|:2:"):
        load_groundtruth(tmp_path / "bad.txt", mapping)
    (tmp_path / "badmap.txt").write_text("zero take\n")
    with pytest.raises(ParseError, match=":1:"):
        load_mapping(tmp_path / "badmap.txt")


def test_feature_format_bit_exact(tmp_path, rng):
    x = rng.normal(size=(3, 4)).astype(np.float32)
    write_features(tmp_path / "f.bin", x)
    raw = (tmp_path / "f.bin").read_bytes()
    assert raw[:6] == b"FUTRF1"
    assert struct.unpack("<II", raw[6:14]) == (3, 4)
    assert raw[14:] == x.astype("<f4").tobytes()
    assert np.array_equal(load_features(tmp_path / "f.bin"), x)


def test_feature_format_errors(tmp_path):
    (tmp_path / "short.bin").write_bytes(b"FUTRF1" + struct.pack("<II", 2, 2) + b"\0" * 12)
    with pytest.raises(ParseError, match="offset"):
        load_features(tmp_path / "short.bin")
    (tmp_path / "magic.bin").write_bytes(b"NOPE00" + struct.pack("<II", 0, 0))
    with pytest.raises(ParseError):
        load_features(tmp_path / "magic.bin")


def test_corpus_save_load_roundtrip(tmp_path):
    g = demo_grammars(2, 3)
    corpus = generate_corpus(g, 10, 6, seed=2)
    manifest = save_corpus(tmp_path, corpus, action_vocabulary(g), test_fraction=0.2)
    assert [v["split"] for v in manifest["videos"]].count("test") == 2
    train, names = load_corpus(tmp_path, "train")
    test, _ = load_corpus(tmp_path, "test")
    assert len(train) == 8 and len(test) == 2 and names == action_vocabulary(g)
    for a, b in zip(train + test, corpus):
        assert np.array_equal(a.features, b.features)
        assert np.array_equal(a.frame_labels, b.frame_labels)
