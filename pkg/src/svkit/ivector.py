"""Baum-Welch statistics, total-variability training and i-vector extraction.

The model is the usual front-end factor analysis: the centered first-order
statistics of an utterance satisfy ``F~_c ~ N_c T_c w`` with ``w ~ N(0, I)``.
Everything is computed in the space whitened by each UBM covariance, so
diagonal and full-covariance UBMs share one code path.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular

from .frontend import FeatureMatrix
from .mixtures import GaussianMixture, gmm_posteriors


@dataclass
class BaumWelchStats:
    zero_order: np.ndarray    # (K,)
    first_order: np.ndarray   # (K, D), raw (uncentered) sums
    utterance_id: str = ""

    @property
    def n_frames(self) -> float:
        return float(self.zero_order.sum())


@dataclass
class TotalVariabilityModel:
    T: np.ndarray             # (K*D, R)
    ubm: GaussianMixture
    objective_history: list = field(default_factory=list, repr=False, compare=False)

    @property
    def rank(self) -> int:
        return self.T.shape[1]

    def blocks(self) -> np.ndarray:
        """T as ``(K, D, R)``."""
        return self.T.reshape(self.ubm.n_components, self.ubm.dim, self.rank)


@dataclass
class IVector:
    w: np.ndarray
    utterance_id: str = ""


def accumulate_stats(feat, ubm: GaussianMixture, utterance_id: str = "") -> BaumWelchStats:
    """Zero- and first-order statistics of ``feat`` against the UBM."""
    X = feat.frames if isinstance(feat, FeatureMatrix) else np.atleast_2d(np.asarray(feat, dtype=np.float64))
    if X.shape[1] != ubm.dim:
        raise ValueError(f"feature dim {X.shape[1]} != UBM dim {ubm.dim}")
    if X.shape[0] == 0:
        return BaumWelchStats(np.zeros(ubm.n_components), np.zeros((ubm.n_components, ubm.dim)), utterance_id)
    gamma = gmm_posteriors(ubm, X)
    return BaumWelchStats(gamma.sum(0), gamma.T @ X, utterance_id)


class _Whitener:
    """Per-component Cholesky factors of the (fixed) UBM covariances."""

    def __init__(self, ubm: GaussianMixture):
        self.ubm = ubm
        self.chol = np.linalg.cholesky(ubm.full_covariances())  # (K, D, D)

    def centered(self, stats: BaumWelchStats) -> np.ndarray:
        return stats.first_order - stats.zero_order[:, None] * self.ubm.means

    def whiten(self, M: np.ndarray) -> np.ndarray:
        """Apply ``L_c^{-1}`` per component to a ``(K, D, ...)`` array."""
        return np.stack([solve_triangular(L, m, lower=True) for L, m in zip(self.chol, M)])

    def color(self, M: np.ndarray) -> np.ndarray:
        return np.einsum("kde,ke...->kd...", self.chol, M)


def _posterior(Tw: np.ndarray, n: np.ndarray, fw: np.ndarray):
    """Posterior precision, mean and covariance of ``w``.

    ``Tw`` is the whitened ``(K, D, R)`` loading, ``fw`` the whitened centered
    first-order stats ``(K, D)``.
    """
    R = Tw.shape[2]
    TtT = np.einsum("kdr,kds->krs", Tw, Tw)
    L = np.eye(R) + np.einsum("k,krs->rs", n, TtT)
    b = np.einsum("kdr,kd->r", Tw, fw)
    cf = cho_factor(L, lower=True)
    mean = cho_solve(cf, b)
    cov = cho_solve(cf, np.eye(R))
    logdet = 2.0 * np.log(np.diag(cf[0])).sum()
    return L, mean, cov, b, logdet


def posterior_precision(stats: BaumWelchStats, model: TotalVariabilityModel) -> np.ndarray:
    wh = _Whitener(model.ubm)
    Tw = wh.whiten(model.blocks())
    return _posterior(Tw, stats.zero_order, wh.whiten(wh.centered(stats)))[0]


def extract_ivector(stats: BaumWelchStats, model: TotalVariabilityModel) -> IVector:
    """Posterior mean ``w = L^{-1} T' Sigma^{-1} F~``."""
    return extract_ivectors([stats], model)[0]


def extract_ivectors(stats: Sequence[BaumWelchStats], model: TotalVariabilityModel) -> list[IVector]:
    wh = _Whitener(model.ubm)
    Tw = wh.whiten(model.blocks())
    out = []
    for s in stats:
        if s.first_order.shape != (model.ubm.n_components, model.ubm.dim):
            raise ValueError(f"{s.utterance_id}: stats shape does not match the model")
        _, mean, _, _, _ = _posterior(Tw, s.zero_order, wh.whiten(wh.centered(s)))
        out.append(IVector(mean, s.utterance_id))
    return out


def tv_objective(stats: Sequence[BaumWelchStats], model: TotalVariabilityModel) -> float:
    """T-dependent part of the marginal log-likelihood of the statistics.

    ``sum_s 0.5 * b_s' L_s^{-1} b_s - 0.5 * log|L_s|``; EM never decreases it.
    """
    wh = _Whitener(model.ubm)
    Tw = wh.whiten(model.blocks())
    total = 0.0
    for s in stats:
        _, mean, _, b, logdet = _posterior(Tw, s.zero_order, wh.whiten(wh.centered(s)))
        total += 0.5 * b @ mean - 0.5 * logdet
    return float(total)


def init_total_variability(ubm: GaussianMixture, R: int, seed: int = 0) -> np.ndarray:
    """Seeded Gaussian ``(K*D, R)`` loading scaled by 0.1 x mean UBM std."""
    rng = np.random.default_rng(seed)
    scale = 0.1 * float(np.sqrt(ubm.variances()).mean())
    return scale * rng.standard_normal((ubm.n_components * ubm.dim, R))


def train_total_variability(
    stats: Sequence[BaumWelchStats],
    ubm: GaussianMixture,
    R: int,
    iters: int = 5,
    seed: int = 0,
    T_init: np.ndarray | None = None,
) -> TotalVariabilityModel:
    """EM estimation of the total-variability matrix.

    UBM means and covariances stay fixed. Components with no occupancy over
    the whole training set keep their initial loading.
    ``objective_history[i]`` is :func:`tv_objective` after ``i`` updates.
    """
    K, D = ubm.n_components, ubm.dim
    if not 1 <= R <= K * D:
        raise ValueError(f"rank R={R} must be in [1, K*D={K * D}]")
    if not stats:
        raise ValueError("no training statistics")
    wh = _Whitener(ubm)
    n_all = np.stack([s.zero_order for s in stats])                    # (S, K)
    f_all = np.stack([wh.whiten(wh.centered(s)) for s in stats])        # (S, K, D)
    T0 = init_total_variability(ubm, R, seed) if T_init is None else np.asarray(T_init, dtype=np.float64)
    if T0.shape != (K * D, R):
        raise ValueError(f"T_init must be {(K * D, R)}")
    Tw = wh.whiten(T0.reshape(K, D, R))
    history = []
    for it in range(iters + 1):
        C = np.zeros((K, D, R))
        A = np.zeros((K, R, R))
        obj = 0.0
        for n, fw in zip(n_all, f_all):
            _, mean, cov, b, logdet = _posterior(Tw, n, fw)
            obj += 0.5 * b @ mean - 0.5 * logdet
            C += np.einsum("kd,r->kdr", fw, mean)
            A += np.einsum("k,rs->krs", n, cov + np.outer(mean, mean))
        history.append(float(obj))
        if it == iters:
            break
        occupied = n_all.sum(0) > 0
        for k in np.flatnonzero(occupied):
            Tw[k] = np.linalg.solve(A[k], C[k].T).T
    T = wh.color(Tw).reshape(K * D, R)
    return TotalVariabilityModel(T, ubm, history)


def principal_angles(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Principal angles (radians, ascending) between the column spans."""
    qa, _ = np.linalg.qr(A)
    qb, _ = np.linalg.qr(B)
    s = np.clip(np.linalg.svd(qa.T @ qb, compute_uv=False), -1.0, 1.0)
    return np.sort(np.arccos(s))
