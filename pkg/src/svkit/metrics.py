"""Detection metrics: EER, minimum/actual DCF, Cllr and average R-precision.

Score sets and labels are dicts keyed by ``(enroll_id, test_id)``; labels
are booleans (``True`` = target). A trial is accepted when its score is
``>=`` the threshold.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import asdict, dataclass
from typing import Mapping

import numpy as np

LOG2_E = 1.0 / np.log(2.0)


@dataclass
class MetricReport:
    eer: float
    min_dcf: float
    act_dcf: float
    avg_rprec: float
    cllr: float
    n_target: int
    n_nontarget: int

    COLUMNS = ("EER", "Min DCF", "Act DCF", "avgRPrec", "Cllr")

    def row(self) -> tuple:
        return (self.eer, self.min_dcf, self.act_dcf, self.avg_rprec, self.cllr)

    def as_dict(self) -> dict:
        return asdict(self)

    def format(self, name: str = "system") -> str:
        head = "System\t" + "\t".join(self.COLUMNS)
        body = name + "\t" + "\t".join(f"{v:.4f}" for v in self.row())
        return f"{head}\n{body}\n"


def split_scores(scores: Mapping, labels: Mapping) -> tuple[np.ndarray, np.ndarray]:
    """Target and nontarget score arrays for the labelled trials in ``scores``."""
    missing = [k for k in scores if k not in labels]
    if missing:
        raise KeyError(f"no label for trial {missing[0]!r}")
    keys = sorted(scores)
    tar = np.array([scores[k] for k in keys if labels[k]], dtype=np.float64)
    non = np.array([scores[k] for k in keys if not labels[k]], dtype=np.float64)
    return tar, non


def _need_both(tar, non):
    if tar.size == 0 or non.size == 0:
        raise ValueError("need at least one target and one nontarget trial")


def operating_points(tar: np.ndarray, non: np.ndarray):
    """Miss and false-alarm rates at every distinct score and at +inf.

    Thresholds are ascending, so P_miss rises and P_fa falls along the array.
    """
    _need_both(tar, non)
    thresholds = np.append(np.unique(np.concatenate([tar, non])), np.inf)
    p_miss = np.searchsorted(np.sort(tar), thresholds, side="left") / tar.size
    p_fa = 1.0 - np.searchsorted(np.sort(non), thresholds, side="left") / non.size
    return thresholds, p_miss, p_fa


def eer_from_arrays(tar, non) -> float:
    _, pm, pf = operating_points(np.asarray(tar, float), np.asarray(non, float))
    d = pm - pf
    i = int(np.argmax(d >= 0))
    if d[i] == 0 or i == 0:
        return float(pm[i])
    # linear interpolation between the two points straddling P_miss = P_fa
    alpha = -d[i - 1] / (d[i] - d[i - 1])
    return float(pm[i - 1] + alpha * (pm[i] - pm[i - 1]))


def _check_costs(p_target, c_miss, c_fa):
    if not 0 < p_target < 1:
        raise ValueError("p_target must be in (0, 1)")
    if c_miss <= 0 or c_fa <= 0:
        raise ValueError("costs must be positive")


def bayes_threshold(p_target: float = 0.01, c_miss: float = 1.0, c_fa: float = 1.0) -> float:
    return float(np.log(c_fa * (1.0 - p_target) / (c_miss * p_target)))


def dcf_from_arrays(tar, non, p_target=0.01, c_miss=1.0, c_fa=1.0, mode="min", threshold=None) -> float:
    _check_costs(p_target, c_miss, c_fa)
    tar = np.asarray(tar, float)
    non = np.asarray(non, float)
    _need_both(tar, non)
    norm = min(c_miss * p_target, c_fa * (1.0 - p_target))
    if mode == "min":
        _, pm, pf = operating_points(tar, non)
    elif mode == "actual":
        th = bayes_threshold(p_target, c_miss, c_fa) if threshold is None else threshold
        pm = np.mean(tar < th)
        pf = np.mean(non >= th)
    else:
        raise ValueError(f"mode must be 'min' or 'actual', got {mode!r}")
    cost = c_miss * p_target * pm + c_fa * (1.0 - p_target) * pf
    return float(np.min(cost) / norm)


def cllr_from_arrays(tar, non) -> float:
    tar = np.asarray(tar, float)
    non = np.asarray(non, float)
    _need_both(tar, non)
    # log2(1 + e^-s) evaluated as logaddexp2(0, -s*log2(e)); exact at s = 0
    c_tar = np.logaddexp2(0.0, -tar * LOG2_E).mean()
    c_non = np.logaddexp2(0.0, non * LOG2_E).mean()
    return float(0.5 * (c_tar + c_non))


def eer(scores: Mapping, labels: Mapping) -> float:
    """Equal error rate with linear interpolation between operating points."""
    return eer_from_arrays(*split_scores(scores, labels))


def dcf(scores: Mapping, labels: Mapping, p_target=0.01, c_miss=1.0, c_fa=1.0, mode="min", threshold=None) -> float:
    """Normalized detection cost.

    ``mode='min'`` minimizes over all thresholds; ``mode='actual'`` uses
    ``threshold`` (default: the Bayes threshold for LLR scores).
    """
    tar, non = split_scores(scores, labels)
    return dcf_from_arrays(tar, non, p_target, c_miss, c_fa, mode, threshold)


def cllr(scores: Mapping, labels: Mapping) -> float:
    """Log-likelihood-ratio cost in bits (scores are natural-log LRs)."""
    return cllr_from_arrays(*split_scores(scores, labels))


def avg_rprec(scores: Mapping, labels: Mapping) -> float:
    """Mean R-precision over enrollment models that have targets.

    For a model with R targets, the R-precision is the fraction of targets
    among its R highest-scoring trials. Equal scores are ordered by test id.
    """
    per_model = defaultdict(list)
    for (e, t), s in scores.items():
        if (e, t) not in labels:
            raise KeyError(f"no label for trial {(e, t)!r}")
        per_model[e].append((-s, t, bool(labels[(e, t)])))
    precisions = []
    for e in sorted(per_model):
        trials = per_model[e]
        R = sum(lab for _, _, lab in trials)
        if R == 0:
            continue
        trials.sort(key=lambda x: (x[0], x[1]))
        precisions.append(sum(lab for _, _, lab in trials[:R]) / R)
    if not precisions:
        raise ValueError("no enrollment model has a target trial")
    return float(np.mean(precisions))


def evaluate(scores: Mapping, labels: Mapping, p_target=0.01, c_miss=1.0, c_fa=1.0, threshold=None) -> MetricReport:
    """All Table-2 style measures for one score set."""
    tar, non = split_scores(scores, labels)
    return MetricReport(
        eer=eer_from_arrays(tar, non),
        min_dcf=dcf_from_arrays(tar, non, p_target, c_miss, c_fa, "min"),
        act_dcf=dcf_from_arrays(tar, non, p_target, c_miss, c_fa, "actual", threshold),
        avg_rprec=avg_rprec(scores, labels),
        cllr=cllr_from_arrays(tar, non),
        n_target=int(tar.size),
        n_nontarget=int(non.size),
    )
