import struct

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from svkit import io
from svkit.backend import BackendTransform, EmbeddingSet, PldaModel
from svkit.frontend import FeatureMatrix
from svkit.ivector import BaumWelchStats, TotalVariabilityModel
from svkit.mixtures import GaussianMixture


# -- embedding archives ----------------------------------------------------------


def test_empty_archive(tmp_path):
    p = tmp_path / "e.vvec"
    io.write_embeddings(p, [], np.zeros((0, 5)))
    assert p.read_bytes() == struct.pack("<4sIII", b"VVEC", 1, 0, 5)
    ids, V = io.read_embeddings(p)
    assert ids == [] and V.shape == (0, 5)


def test_three_embeddings_bit_exact(tmp_path, rng):
    p = tmp_path / "e.vvec"
    V = rng.normal(size=(3, 7)).astype(np.float32)
    io.write_embeddings(p, ["a", "b", "ü"], V)
    ids, W = io.read_embeddings(p)
    assert ids == ["a", "b", "ü"]
    assert W.dtype == np.float32
    assert W.tobytes() == V.astype("<f4").tobytes()
    # rewriting reproduces the file byte for byte
    q = tmp_path / "f.vvec"
    io.write_embeddings(q, ids, W)
    assert q.read_bytes() == p.read_bytes()


@settings(max_examples=50, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(
    n=st.integers(0, 6),
    dim=st.integers(1, 5),
    seed=st.integers(0, 1000),
)
def test_archive_round_trip_property(tmp_path, n, dim, seed):
    V = np.random.default_rng(seed).normal(size=(n, dim)).astype(np.float32) * 1e3
    p = tmp_path / f"r{n}_{dim}_{seed}.vvec"
    io.write_embeddings(p, [f"id{i}" for i in range(n)], V)
    ids, W = io.read_embeddings(p)
    assert ids == [f"id{i}" for i in range(n)]
    assert W.tobytes() == V.tobytes()


def test_archive_layout(tmp_path):
    p = tmp_path / "e.vvec"
    io.write_embeddings(p, ["xy"], np.array([[1.0, -2.0]]))
    assert p.read_bytes() == (struct.pack("<4sIII", b"VVEC", 1, 1, 2) + struct.pack("<I", 2) + b"xy"
                              + struct.pack("<ff", 1.0, -2.0))


def test_archive_errors(tmp_path):
    p = tmp_path / "e.vvec"
    io.write_embeddings(p, ["a", "b"], np.ones((2, 3)))
    good = p.read_bytes()
    cases = {
        b"XXXX" + good[4:]: "magic",
        good[:4] + struct.pack("<I", 2) + good[8:]: "version",
        good[:-1]: "truncated",
        good + b"\x00": "trailing",
        good[:8]: "truncated header",
    }
    for data, what in cases.items():
        p.write_bytes(data)
        with pytest.raises(io.FormatError, match="offset"):
            io.read_embeddings(p)
    with pytest.raises(ValueError):
        io.write_embeddings(p, ["a", "a"], np.ones((2, 3)))
    with pytest.raises(ValueError):
        io.write_embeddings(p, ["a"], np.ones((2, 3)))


def test_embedding_set_with_speakers(tmp_path, rng):
    emb = EmbeddingSet(rng.normal(size=(4, 3)), ["s1", "s1", "s2", "s2"], ["u1", "u2", "u3", "u4"])
    p = tmp_path / "set.vvec"
    io.write_embedding_set(p, emb)
    back = io.read_embedding_set(p)
    assert back.speaker_labels == emb.speaker_labels
    assert back.utterance_ids == emb.utterance_ids
    np.testing.assert_array_equal(back.vectors, emb.vectors.astype(np.float32))
    (tmp_path / "set.vvec.utt2spk").write_text("u1 s1\n")
    with pytest.raises(io.FormatError):
        io.read_embedding_set(p)


# -- text formats ------------------------------------------------------------------


def test_score_line():
    assert io.parse_score_line("spk1 utt7 -3.25") == (("spk1", "utt7"), -3.25)
    for bad in ["a b", "a b c", "a b nan", "a b 1 2"]:
        with pytest.raises(io.FormatError):
            io.parse_score_line(bad)


def test_scores_round_trip(tmp_path, rng):
    scores = {(f"e{i}", f"t{j}"): float(rng.normal() * 10.0 ** rng.integers(-5, 5)) for i in range(3) for j in range(4)}
    p = tmp_path / "s.txt"
    io.write_scores(p, scores)
    assert io.read_scores(p) == scores
    p.write_text("a b 1\n\n  a   b    2  \n")
    with pytest.raises(io.FormatError, match=":3"):
        io.read_scores(p)


def test_trials_round_trip(tmp_path):
    keys = [("e1", "t1"), ("e1", "t2"), ("e2", "t1")]
    labels = {keys[0]: True, keys[1]: False, keys[2]: True}
    p = tmp_path / "trials"
    io.write_trials(p, keys, labels)
    assert io.read_trials(p) == (keys, labels)
    io.write_trials(p, keys)
    assert io.read_trials(p) == (keys, {})


@pytest.mark.parametrize("text", [
    "a b target\na b nontarget\n",
    "a b maybe\n",
    "a b target\nc d\n",
    "a\n",
])
def test_trials_errors(tmp_path, text):
    p = tmp_path / "trials"
    p.write_text(text)
    with pytest.raises(io.FormatError):
        io.read_trials(p)


def test_text_whitespace_normalized(tmp_path):
    p = tmp_path / "s.txt"
    p.write_text("  a\tb   1.5\n\n")
    assert io.read_scores(p) == {("a", "b"): 1.5}


# -- config --------------------------------------------------------------------------


def test_config_include_and_override(tmp_path):
    (tmp_path / "sub").mkdir()
    (tmp_path / "sub" / "base.cfg").write_text("a = 1\nb = two words  # comment\n")
    (tmp_path / "main.cfg").write_text("# top\ninclude sub/base.cfg\na = 3\n\nc=x=y\n")
    assert io.read_config(tmp_path / "main.cfg") == {"a": "3", "b": "two words", "c": "x=y"}


def test_config_errors(tmp_path):
    (tmp_path / "a.cfg").write_text("include b.cfg\n")
    (tmp_path / "b.cfg").write_text("include a.cfg\n")
    with pytest.raises(io.FormatError, match="cycle"):
        io.read_config(tmp_path / "a.cfg")
    (tmp_path / "c.cfg").write_text("ok = 1\nnot a pair\n")
    with pytest.raises(io.FormatError, match=":2"):
        io.read_config(tmp_path / "c.cfg")


def test_config_same_include_twice_is_not_a_cycle(tmp_path):
    (tmp_path / "x.cfg").write_text("k = v\n")
    (tmp_path / "m.cfg").write_text("include x.cfg\ninclude x.cfg\n")
    assert io.read_config(tmp_path / "m.cfg") == {"k": "v"}


# -- model files ----------------------------------------------------------------------


def _same(a, b):
    return np.asarray(a).tobytes() == np.asarray(b).tobytes()


@pytest.mark.parametrize("kind", ["diag", "full"])
def test_gmm_and_tv_round_trip(tmp_path, rng, kind):
    covs = rng.uniform(0.5, 1, (3, 2)) if kind == "diag" else np.stack([np.eye(2)] * 3)
    g = GaussianMixture(rng.dirichlet(np.ones(3)), rng.normal(size=(3, 2)), covs, kind)
    io.save_gmm(tmp_path / "g.npz", g)
    h = io.load_gmm(tmp_path / "g.npz")
    assert h.cov_kind == kind
    assert all(_same(getattr(g, f), getattr(h, f)) for f in ("weights", "means", "covariances"))
    tv = TotalVariabilityModel(rng.normal(size=(6, 2)), g)
    io.save_tv(tmp_path / "t.npz", tv)
    assert _same(io.load_tv(tmp_path / "t.npz").T, tv.T)
    with pytest.raises(io.FormatError):
        io.load_gmm(tmp_path / "t.npz")


def test_backend_round_trip(tmp_path, rng):
    t = BackendTransform(rng.normal(size=4), rng.normal(size=(2, 4)), 1.4142135623730951)
    m = PldaModel(rng.normal(size=2), np.eye(2) * 0.3, np.eye(2))
    io.save_backend(tmp_path / "b.npz", t, m)
    t2, m2 = io.load_backend(tmp_path / "b.npz")
    assert t2.target_norm == t.target_norm
    assert _same(t2.lda, t.lda) and _same(m2.B, m.B) and _same(m2.W, m.W) and _same(m2.mu, m.mu)


def test_features_and_stats_round_trip(tmp_path, rng):
    feats = {"u1": FeatureMatrix(rng.normal(size=(5, 3))), "u/2": FeatureMatrix(rng.normal(size=(2, 3)), 0.02)}
    io.save_features(tmp_path / "f.npz", feats)
    back = io.load_features(tmp_path / "f.npz")
    assert set(back) == set(feats)
    for k in feats:
        assert _same(back[k].frames, feats[k].frames)
        assert back[k].frame_shift == feats[k].frame_shift
    stats = [BaumWelchStats(rng.random(3), rng.normal(size=(3, 2)), f"u{i}") for i in range(3)]
    io.save_stats(tmp_path / "s.npz", stats)
    got = io.load_stats(tmp_path / "s.npz")
    assert [s.utterance_id for s in got] == ["u0", "u1", "u2"]
    assert all(_same(a.first_order, b.first_order) and _same(a.zero_order, b.zero_order) for a, b in zip(stats, got))
