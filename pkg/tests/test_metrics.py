import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from svkit.metrics import (
    MetricReport,
    avg_rprec,
    bayes_threshold,
    cllr,
    cllr_from_arrays,
    dcf,
    dcf_from_arrays,
    eer,
    eer_from_arrays,
    evaluate,
    split_scores,
)


def random_set(seed, n=1000, n_models=50, quantize=False):
    rng = np.random.default_rng(seed)
    scores, labels = {}, {}
    for i in range(n):
        e = f"m{rng.integers(n_models):03d}"
        t = f"t{i:05d}"
        lab = bool(rng.random() < 0.3)
        s = rng.normal(2.0 if lab else -1.0, 1.5)
        if quantize:
            s = round(s * 2) / 2  # plenty of ties
        scores[(e, t)] = float(s)
        labels[(e, t)] = lab
    return scores, labels


def arrays(scores, labels):
    tar = [scores[k] for k in scores if labels[k]]
    non = [scores[k] for k in scores if not labels[k]]
    return tar, non


# -- brute-force equivalence --------------------------------------------------------


@pytest.mark.parametrize("seed", range(100))
def test_all_metrics_match_brute_force(seed):
    scores, labels = random_set(seed, quantize=seed % 3 == 0)
    tar, non = arrays(scores, labels)
    rep = evaluate(scores, labels)
    assert abs(rep.eer - oracles.eer(tar, non)) <= 1e-12
    assert abs(rep.min_dcf - oracles.min_dcf(tar, non)) <= 1e-12
    assert abs(rep.act_dcf - oracles.act_dcf(tar, non)) <= 1e-12
    assert abs(rep.cllr - oracles.cllr(tar, non)) <= 1e-12
    assert abs(rep.avg_rprec - oracles.avg_rprec(scores, labels)) <= 1e-12
    assert rep.min_dcf <= rep.act_dcf
    assert (rep.n_target, rep.n_nontarget) == (len(tar), len(non))


@settings(max_examples=100, deadline=None)
@given(
    tar=st.lists(st.integers(-20, 20).map(lambda v: v / 4), min_size=1, max_size=30),
    non=st.lists(st.integers(-20, 20).map(lambda v: v / 4), min_size=1, max_size=30),
    p_target=st.floats(0.001, 0.999),
    c_miss=st.floats(0.1, 10),
    c_fa=st.floats(0.1, 10),
)
def test_dcf_properties(tar, non, p_target, c_miss, c_fa):
    mn = dcf_from_arrays(tar, non, p_target, c_miss, c_fa, "min")
    act = dcf_from_arrays(tar, non, p_target, c_miss, c_fa, "actual")
    assert mn == pytest.approx(oracles.min_dcf(tar, non, p_target, c_miss, c_fa), abs=1e-12)
    assert act == pytest.approx(oracles.act_dcf(tar, non, p_target, c_miss, c_fa), abs=1e-12)
    assert 0 <= mn <= act + 1e-15
    assert mn <= 1.0 + 1e-12
    e = eer_from_arrays(tar, non)
    assert 0 <= e <= 1
    assert e == pytest.approx(oracles.eer(tar, non), abs=1e-12)


# -- EER ----------------------------------------------------------------------------


def test_eer_hand_cases():
    assert eer_from_arrays([2, 0], [3, 1]) == 0.5
    assert eer_from_arrays([5, 6, 7], [1, 2, 3]) == 0.0
    assert eer_from_arrays([1, 2, 3], [5, 6, 7]) == 1.0


@pytest.mark.parametrize("seed", range(20))
def test_label_swap_mirrors_eer(seed):
    rng = np.random.default_rng(seed)
    tar = rng.normal(1, 1, 300)
    non = rng.normal(0, 1, 700)
    e = eer_from_arrays(tar, non)
    swapped = eer_from_arrays(non, tar)
    assert swapped == pytest.approx(1 - e, abs=1e-12)
    assert swapped == pytest.approx(oracles.eer(list(non), list(tar)), abs=1e-12)


def test_single_class_rejected():
    with pytest.raises(ValueError):
        eer({("a", "b"): 1.0}, {("a", "b"): True})
    with pytest.raises(ValueError):
        dcf({("a", "b"): 1.0}, {("a", "b"): False})


def test_missing_label():
    with pytest.raises(KeyError):
        split_scores({("a", "b"): 1.0}, {})


# -- DCF ----------------------------------------------------------------------------


def test_dcf_hand_cases():
    assert dcf_from_arrays([3, 4], [0, 1]) == 0.0
    assert dcf_from_arrays([1, 1, 1], [1, 1]) == 1.0
    assert bayes_threshold() == pytest.approx(math.log(99))
    with pytest.raises(ValueError):
        dcf_from_arrays([1], [0], p_target=1.0)
    with pytest.raises(ValueError):
        dcf_from_arrays([1], [0], c_miss=0.0)
    with pytest.raises(ValueError):
        dcf_from_arrays([1], [0], mode="best")


def test_act_dcf_custom_threshold():
    tar, non = [0.0, 1.0, 2.0], [-1.0, 0.5]
    got = dcf_from_arrays(tar, non, mode="actual", threshold=0.5)
    assert got == pytest.approx(oracles.act_dcf(tar, non, threshold=0.5), abs=1e-15)


@pytest.mark.parametrize("seed", range(10))
def test_monotone_transform_invariance(seed):
    scores, labels = random_set(seed, n=500)
    warped = {k: math.exp(v / 2) - 1 for k, v in scores.items()}
    a, b = evaluate(scores, labels), evaluate(warped, labels)
    assert b.eer == pytest.approx(a.eer, abs=1e-12)
    assert b.min_dcf == pytest.approx(a.min_dcf, abs=1e-12)
    assert b.avg_rprec == pytest.approx(a.avg_rprec, abs=1e-12)
    # calibration-sensitive measures move
    assert b.cllr != pytest.approx(a.cllr, abs=1e-6)
    shifted = {k: v + 5.0 for k, v in scores.items()}
    assert evaluate(shifted, labels).act_dcf != pytest.approx(a.act_dcf, abs=1e-6)


def test_trial_order_invariance():
    scores, labels = random_set(3, n=300)
    rev = dict(reversed(list(scores.items())))
    assert evaluate(rev, labels).row() == evaluate(scores, labels).row()


# -- Cllr ---------------------------------------------------------------------------


def test_cllr_uninformative_is_one_bit():
    assert cllr_from_arrays(np.zeros(7), np.zeros(3)) == 1.0
    assert cllr({("a", "x"): 0.0, ("a", "y"): 0.0}, {("a", "x"): True, ("a", "y"): False}) == 1.0


def test_cllr_perfect_separation():
    assert cllr_from_arrays([700.0] * 5, [-700.0] * 5) == pytest.approx(0.0, abs=1e-12)


def test_calibrated_llrs():
    rng = np.random.default_rng(0)
    # two Gaussians with means +-1 and unit variance give LLR = 2x
    tar = 2 * rng.normal(1, 1, 20_000)
    non = 2 * rng.normal(-1, 1, 20_000)
    assert cllr_from_arrays(tar, non) < 1
    gap = dcf_from_arrays(tar, non, mode="actual") - dcf_from_arrays(tar, non)
    assert 0 <= gap < 0.05


# -- avgRPrec -----------------------------------------------------------------------


def test_avg_rprec_hand_cases():
    scores = {("m", "a"): 4.0, ("m", "b"): 3.0, ("m", "c"): 2.0, ("m", "d"): 1.0}
    labels = {("m", "a"): True, ("m", "b"): False, ("m", "c"): True, ("m", "d"): False}
    assert avg_rprec(scores, labels) == 0.5
    perfect = {k: (1.0 if labels[k] else 0.0) for k in labels}
    assert avg_rprec(perfect, labels) == 1.0


def test_avg_rprec_ties_by_test_id():
    scores = {("m", "b"): 1.0, ("m", "a"): 1.0}
    assert avg_rprec(scores, {("m", "a"): True, ("m", "b"): False}) == 1.0
    assert avg_rprec(scores, {("m", "a"): False, ("m", "b"): True}) == 0.0


def test_avg_rprec_skips_models_without_targets():
    scores = {("m", "a"): 1.0, ("n", "a"): 2.0}
    assert avg_rprec(scores, {("m", "a"): True, ("n", "a"): False}) == 1.0
    with pytest.raises(ValueError):
        avg_rprec({("n", "a"): 1.0}, {("n", "a"): False})


# -- report -------------------------------------------------------------------------


def test_report_formatting():
    rep = MetricReport(0.0246, 0.2693, 0.2700, 0.9, 0.5, 10, 90)
    text = rep.format("System 1")
    assert text.splitlines()[0] == "System\tEER\tMin DCF\tAct DCF\tavgRPrec\tCllr"
    assert text.splitlines()[1].startswith("System 1\t0.0246\t0.2693")
    assert rep.as_dict()["n_target"] == 10
