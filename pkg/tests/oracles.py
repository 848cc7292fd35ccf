"""Slow, loop-based reference implementations used as independent oracles."""

import math


def frame_count(n, win, hop):
    count, start = 0, 0
    while start + win <= n:
        count += 1
        start += hop
    return count


def naive_convolve(x, h):
    out = [0.0] * (len(x) + len(h) - 1)
    for i, xi in enumerate(x):
        for j, hj in enumerate(h):
            out[i + j] += xi * hj
    return out


def _rates(tar, non, theta):
    p_miss = sum(1 for s in tar if s < theta) / len(tar)
    p_fa = sum(1 for s in non if s >= theta) / len(non)
    return p_miss, p_fa


def _sweep(tar, non):
    thresholds = sorted(set(tar) | set(non)) + [math.inf]
    return [_rates(tar, non, th) for th in thresholds]


def eer(tar, non):
    pts = _sweep(tar, non)
    prev = None
    for pm, pf in pts:
        if pm - pf >= 0:
            if pm == pf or prev is None:
                return pm
            pm0, pf0 = prev
            d0, d1 = pm0 - pf0, pm - pf
            a = -d0 / (d1 - d0)
            return pm0 + a * (pm - pm0)
        prev = (pm, pf)
    raise AssertionError("no crossing")


def min_dcf(tar, non, p_target=0.01, c_miss=1.0, c_fa=1.0):
    norm = min(c_miss * p_target, c_fa * (1 - p_target))
    best = math.inf
    for pm, pf in _sweep(tar, non):
        best = min(best, c_miss * p_target * pm + c_fa * (1 - p_target) * pf)
    return best / norm


def act_dcf(tar, non, p_target=0.01, c_miss=1.0, c_fa=1.0, threshold=None):
    if threshold is None:
        threshold = math.log(c_fa * (1 - p_target) / (c_miss * p_target))
    pm, pf = _rates(tar, non, threshold)
    norm = min(c_miss * p_target, c_fa * (1 - p_target))
    return (c_miss * p_target * pm + c_fa * (1 - p_target) * pf) / norm


def _softplus(x):
    # log(1 + e^x) without overflow
    return x + math.log1p(math.exp(-x)) if x > 0 else math.log1p(math.exp(x))


def cllr(tar, non):
    a = sum(_softplus(-s) for s in tar) / len(tar)
    b = sum(_softplus(s) for s in non) / len(non)
    return (a + b) / (2 * math.log(2))


def avg_rprec(scores, labels):
    models = sorted({e for e, _ in scores})
    vals = []
    for m in models:
        trials = [(t, scores[(e, t)], labels[(e, t)]) for (e, t) in scores if e == m]
        R = sum(1 for _, _, lab in trials if lab)
        if R == 0:
            continue
        ranked = sorted(trials, key=lambda x: (-x[1], x[0]))
        vals.append(sum(1 for _, _, lab in ranked[:R] if lab) / R)
    return sum(vals) / len(vals)
