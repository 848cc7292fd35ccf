"""Linear score fusion with equal or grid-tuned weights."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import metrics


@dataclass(frozen=True)
class FusionWeights:
    weights: tuple

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64).ravel()
        if w.size < 1:
            raise ValueError("need at least one weight")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("fusion weights must be finite and non-negative")
        if w.sum() <= 0:
            raise ValueError("fusion weights must not all be zero")
        object.__setattr__(self, "weights", tuple(float(x) for x in w / w.sum()))

    @classmethod
    def equal(cls, n: int) -> "FusionWeights":
        return cls((1.0,) * n)

    def __len__(self):
        return len(self.weights)


def _common_keys(systems: Sequence[Mapping]) -> list:
    if not systems:
        raise ValueError("no systems to fuse")
    ref = systems[0]
    for i, s in enumerate(systems[1:], 1):
        if s.keys() != ref.keys():
            extra = sorted(set(s) ^ set(ref))
            raise KeyError(f"system {i} trial keys differ from system 0, first divergent key {extra[0]!r}")
    return sorted(ref)


def score_matrix(systems: Sequence[Mapping]) -> tuple[list, np.ndarray]:
    """Sorted trial keys and an ``(n_trials, n_systems)`` score matrix."""
    keys = _common_keys(systems)
    return keys, np.array([[s[k] for s in systems] for k in keys], dtype=np.float64).reshape(len(keys), len(systems))


def fuse(systems: Sequence[Mapping], w: FusionWeights) -> dict:
    """Weighted sum of several score sets over an identical trial list."""
    if len(systems) != len(w):
        raise ValueError(f"{len(systems)} systems but {len(w)} weights")
    keys, M = score_matrix(systems)
    fused = M @ np.asarray(w.weights)
    return {k: float(v) for k, v in zip(keys, fused)}


def simplex_grid(n: int, step: float) -> np.ndarray:
    """All weight vectors with entries in multiples of ``step`` summing to one,
    plus the uniform vector."""
    if not 0 < step <= 1:
        raise ValueError("grid step must be in (0, 1]")
    m = int(round(1.0 / step))
    if abs(m * step - 1.0) > 1e-9:
        raise ValueError("grid step must divide 1")
    pts = []
    # stars and bars: choose n-1 cut points among m + n - 1 slots
    for cuts in itertools.combinations(range(m + n - 1), n - 1):
        parts = np.diff(np.concatenate([[-1], cuts, [m + n - 1]])) - 1
        pts.append(parts / m)
    pts.append(np.full(n, 1.0 / n))
    return np.array(pts)


def criterion_value(fused_tar, fused_non, criterion: str, p_target, c_miss, c_fa) -> float:
    if criterion == "mindcf":
        return metrics.dcf_from_arrays(fused_tar, fused_non, p_target, c_miss, c_fa, "min")
    if criterion == "eer":
        return metrics.eer_from_arrays(fused_tar, fused_non)
    raise ValueError(f"unknown criterion {criterion!r}")


def tune_weights(
    systems: Sequence[Mapping],
    labels: Mapping,
    grid_step: float = 0.05,
    criterion: str = "mindcf",
    p_target: float = 0.01,
    c_miss: float = 1.0,
    c_fa: float = 1.0,
) -> FusionWeights:
    """Exhaustive simplex-grid search minimizing a dev-set criterion.

    Ties go to the weight vector closest to uniform, then to the
    lexicographically smallest one. The uniform vector is always evaluated.
    """
    criterion = criterion.lower()
    keys, M = score_matrix(systems)
    lab = np.array([bool(labels[k]) for k in keys])
    if lab.all() or not lab.any():
        raise ValueError("dev trials need both target and nontarget labels")
    n = M.shape[1]
    if n == 1:
        return FusionWeights((1.0,))
    grid = simplex_grid(n, grid_step)
    uniform = np.full(n, 1.0 / n)
    best_key, best_w = None, None
    for w in grid:
        fused = M @ w
        val = criterion_value(fused[lab], fused[~lab], criterion, p_target, c_miss, c_fa)
        # round away last-ulp noise so that numerically tied points compare equal
        key = (round(val, 12), round(float(np.sum((w - uniform) ** 2)), 12), tuple(w))
        if best_key is None or key < best_key:
            best_key, best_w = key, w
    return FusionWeights(tuple(best_w))
