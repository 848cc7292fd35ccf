import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from svkit.fusion import FusionWeights, fuse, simplex_grid, tune_weights
from svkit.metrics import dcf, eer


def random_system(rng, keys, labels, separation):
    return {k: float(rng.normal(separation if labels[k] else 0.0, 1.0)) for k in keys}


def dev_setup(seed, n=400):
    rng = np.random.default_rng(seed)
    keys = [(f"e{i % 20}", f"t{i}") for i in range(n)]
    labels = {k: bool(rng.random() < 0.25) for k in keys}
    labels[keys[0]], labels[keys[1]] = True, False
    return rng, keys, labels


# -- weights ------------------------------------------------------------------------


def test_weights_normalize():
    w = FusionWeights((2.0, 1.0, 1.0))
    assert w.weights == (0.5, 0.25, 0.25)
    assert FusionWeights.equal(4).weights == (0.25,) * 4
    for bad in [(), (-1.0, 2.0), (0.0, 0.0), (np.nan,)]:
        with pytest.raises(ValueError):
            FusionWeights(bad)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0.0, 1e6), min_size=1, max_size=8).filter(lambda v: sum(v) > 0))
def test_weights_sum_to_one(ws):
    assert sum(FusionWeights(tuple(ws)).weights) == pytest.approx(1.0, abs=1e-12)


# -- fuse ---------------------------------------------------------------------------


def test_fuse_identity_and_convexity(rng):
    s = {("e", f"t{i}"): float(v) for i, v in enumerate(rng.normal(size=20))}
    assert fuse([s], FusionWeights((1.0,))) == s
    out = fuse([s, s, s], FusionWeights.equal(3))
    for k in s:
        assert out[k] == pytest.approx(s[k], abs=1e-12)


def test_fuse_matches_loop(rng):
    keys = [("e", f"t{i}") for i in range(50)]
    systems = [{k: float(rng.normal()) for k in keys} for _ in range(3)]
    out = fuse(systems, FusionWeights((0.5, 0.3, 0.2)))
    for k in keys:
        ref = 0.5 * systems[0][k] + 0.3 * systems[1][k] + 0.2 * systems[2][k]
        assert abs(out[k] - ref) <= 1e-12


def test_fuse_is_linear(rng):
    keys = [("e", f"t{i}") for i in range(30)]
    a, b = ({k: float(rng.normal()) for k in keys} for _ in range(2))
    w = FusionWeights((0.7, 0.3))
    base = fuse([a, b], w)
    scaled = fuse([{k: 3.0 * v for k, v in a.items()}, {k: 3.0 * v for k, v in b.items()}], w)
    for k in keys:
        assert scaled[k] == pytest.approx(3.0 * base[k], rel=1e-12)


def test_fuse_errors():
    a = {("e", "t1"): 1.0, ("e", "t2"): 2.0}
    b = {("e", "t1"): 1.0, ("e", "t3"): 2.0}
    with pytest.raises(KeyError, match="t2"):
        fuse([a, b], FusionWeights.equal(2))
    with pytest.raises(ValueError):
        fuse([a], FusionWeights.equal(2))
    with pytest.raises(ValueError):
        fuse([], FusionWeights.equal(1))


# -- grid ---------------------------------------------------------------------------


def test_simplex_grid():
    g = simplex_grid(2, 0.05)
    assert len(g) == 22  # 21 grid points plus the uniform one
    np.testing.assert_allclose(g.sum(1), 1.0, atol=1e-12)
    g3 = simplex_grid(3, 0.05)
    assert len(g3) == 231 + 1
    assert np.all(g3 >= 0)
    assert np.any(np.all(np.isclose(g3, 1 / 3), axis=1))
    with pytest.raises(ValueError):
        simplex_grid(2, 0.3)


# -- tuning -------------------------------------------------------------------------


def test_single_system_tunes_to_one():
    _, keys, labels = dev_setup(0)
    s = {k: float(labels[k]) for k in keys}
    assert tune_weights([s], labels).weights == (1.0,)


def test_identical_systems_tie_to_uniform():
    rng, keys, labels = dev_setup(1)
    s = random_system(rng, keys, labels, 2.0)
    assert tune_weights([s, s], labels).weights == (0.5, 0.5)
    assert tune_weights([s, s, s], labels, grid_step=0.1).weights == pytest.approx((1 / 3,) * 3)


@pytest.mark.parametrize("seed", range(25))
@pytest.mark.parametrize("criterion", ["mindcf", "eer"])
def test_tuned_never_worse_than_equal(seed, criterion):
    rng, keys, labels = dev_setup(seed)
    systems = [random_system(rng, keys, labels, rng.uniform(0, 3)) for _ in range(2)]
    w = tune_weights(systems, labels, criterion=criterion)
    if criterion == "mindcf":
        tuned = dcf(fuse(systems, w), labels)
        equal = dcf(fuse(systems, FusionWeights.equal(2)), labels)
    else:
        tuned = eer(fuse(systems, w), labels)
        equal = eer(fuse(systems, FusionWeights.equal(2)), labels)
    assert tuned <= equal + 1e-12


def test_informative_system_gets_weight():
    rng, keys, labels = dev_setup(5, n=2000)
    good = random_system(rng, keys, labels, 4.0)
    noise = random_system(rng, keys, labels, 0.0)
    w = tune_weights([good, noise], labels)
    assert w.weights[0] > w.weights[1]


def test_tuning_errors():
    keys = [("e", "t1"), ("e", "t2")]
    s = {k: 0.0 for k in keys}
    with pytest.raises(ValueError):
        tune_weights([s, s], {k: True for k in keys})
    with pytest.raises(ValueError):
        tune_weights([s, s], {keys[0]: True, keys[1]: False}, criterion="auc")
