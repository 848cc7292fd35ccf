import numpy as np
import pytest

from svkit.synth import SyntheticWorldSpec, make_trials, synth_world


def test_deterministic_per_seed():
    spec = SyntheticWorldSpec(n_speakers=20, dim=5, n_trials=200, seed=4)
    a, b = synth_world(spec), synth_world(spec)
    assert a[0].vectors.tobytes() == b[0].vectors.tobytes()
    assert a[1].vectors.tobytes() == b[1].vectors.tobytes()
    assert a[2] == b[2]
    c = synth_world(SyntheticWorldSpec(n_speakers=20, dim=5, n_trials=200, seed=5))
    assert c[0].vectors.tobytes() != a[0].vectors.tobytes()


def test_zero_within_variance():
    train, _, _ = synth_world(SyntheticWorldSpec(n_speakers=10, utts_per_speaker=4, dim=3, W_scale=0.0, n_trials=20))
    names, classes = train.speaker_index()
    for c in range(len(names)):
        rows = train.vectors[classes == c]
        assert np.all(rows == rows[0])


def test_speaker_variance_matches_scale():
    D, n = 10, 10
    train, _, _ = synth_world(SyntheticWorldSpec(n_speakers=500, utts_per_speaker=n, dim=D, B_scale=2.0,
                                                 W_scale=0.5, n_trials=100, seed=1))
    names, classes = train.speaker_index()
    means = np.stack([train.vectors[classes == c].mean(0) for c in range(len(names))])
    # speaker means carry B + W/n of variance
    cov = np.cov(means.T, bias=True) - 0.5 / n * np.eye(D)
    assert abs(np.trace(cov) / D - 2.0) < 0.10 * 2.0
    off = cov[~np.eye(D, dtype=bool)]
    assert np.abs(off).mean() < 0.10 * 2.0


def test_trials_balanced_and_unique():
    _, evl, (keys, labels) = synth_world(SyntheticWorldSpec(n_speakers=50, dim=3, n_trials=1001, seed=2))
    assert len(keys) == len(set(keys)) == 1001
    assert sum(labels.values()) == 500
    spk = dict(zip(evl.utterance_ids, evl.speaker_labels))
    for e, t in keys:
        assert e != t
        assert labels[(e, t)] == (spk[e] == spk[t])


def test_train_and_eval_speakers_disjoint():
    train, evl, _ = synth_world(SyntheticWorldSpec(n_speakers=5, dim=2, n_trials=10, n_eval_speakers=3))
    assert not set(train.speaker_labels) & set(evl.speaker_labels)
    assert len(set(evl.speaker_labels)) == 3


def test_spec_validation():
    for kw in [dict(n_speakers=0), dict(dim=0), dict(B_scale=-1.0), dict(n_eval_speakers=1)]:
        with pytest.raises(ValueError):
            SyntheticWorldSpec(**kw)


def test_too_many_trials_requested():
    with pytest.raises(ValueError):
        synth_world(SyntheticWorldSpec(n_speakers=2, utts_per_speaker=2, dim=2, n_trials=100))
    train, _, _ = synth_world(SyntheticWorldSpec(n_speakers=3, utts_per_speaker=2, dim=2, n_trials=4))
    with pytest.raises(ValueError):
        make_trials(np.random.default_rng(0), train, 14)
