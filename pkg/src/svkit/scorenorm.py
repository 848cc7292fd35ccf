"""Cohort score normalization: z-norm, s-norm and unsupervised clustering
score normalization (UCSN).

UCSN estimates the impostor distribution from the *most competitive*
impostors only: the cohort scores are clustered with 1-D k-means, low-mean
clusters are dropped, a GMM is fitted to what remains, and the component
with the largest mean supplies the normalization mean and deviation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .backend import EmbeddingSet, PldaModel, plda_score_matrix
from .mixtures import gmm_em, kmeans

SIGMA_FLOOR = 1e-8


@dataclass
class NormParams:
    mu_star: float
    sigma_star: float
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.sigma_star > 0:
            raise ValueError("sigma_star must be positive")


def cohort_scores(model: PldaModel, target, cohort) -> np.ndarray:
    """PLDA scores of one processed embedding against every cohort member."""
    C = cohort.vectors if isinstance(cohort, EmbeddingSet) else np.atleast_2d(np.asarray(cohort, dtype=np.float64))
    if C.shape[0] == 0:
        raise ValueError("cohort is empty")
    return plda_score_matrix(model, np.asarray(target, dtype=np.float64), C)[0]


def zscore_params(scores) -> NormParams:
    """Cohort mean and population standard deviation."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    if s.size < 2:
        raise ValueError("z-norm needs at least two cohort scores")
    mu = float(s.mean())
    sigma = max(float(np.sqrt(((s - mu) ** 2).mean())), SIGMA_FLOOR)
    return NormParams(mu, sigma, {"method": "z", "count": int(s.size)})


def ucsn_params(pooled, K: int = 4, keep_fraction: float = 0.3, M: int = 2, seed: int = 0) -> NormParams:
    """Unsupervised clustering score normalization parameters.

    Args:
        pooled: cohort scores for one model (or a global pool).
        K: number of k-means clusters.
        keep_fraction: clusters are retained from the highest mean downwards
            until at least this fraction of the scores is kept.
        M: GMM components fitted to the retained scores.
        seed: seeds k-means and the GMM initialization.
    """
    s = np.asarray(pooled, dtype=np.float64).ravel()
    if s.size < max(K, M, 10):
        raise ValueError(f"need at least {max(K, M, 10)} scores, got {s.size}")
    if not 0 < keep_fraction <= 1:
        raise ValueError("keep_fraction must be in (0, 1]")
    prov = {"method": "ucsn", "K": K, "keep_fraction": keep_fraction, "M": M, "seed": seed, "count": int(s.size)}

    km = kmeans(s, K, seed=seed)
    counts = np.bincount(km.assignment, minlength=K)
    cluster_means = km.centroids[:, 0]
    order = [int(k) for k in np.argsort(-cluster_means, kind="stable")]
    kept, n_kept = [], 0
    for k in order:
        if kept and n_kept >= keep_fraction * s.size:
            break
        kept.append(k)
        n_kept += int(counts[k])
    retained = s[np.isin(km.assignment, kept)]
    prov.update(
        cluster_means=[float(m) for m in cluster_means],
        cluster_counts=[int(c) for c in counts],
        retained_clusters=kept,
        retained_count=int(retained.size),
    )

    if np.ptp(retained) == 0:
        prov["degenerate"] = True
        return NormParams(float(retained[0]), SIGMA_FLOOR, prov)
    if retained.size < max(M, 2) or (M > 1 and np.unique(retained).size < M):
        z = zscore_params(retained) if retained.size >= 2 else NormParams(float(retained[0]), SIGMA_FLOOR)
        prov["fallback"] = "zscore"
        return NormParams(z.mu_star, z.sigma_star, prov)

    gmm = gmm_em(retained, M, cov_kind="diag", seed=seed)
    means = gmm.means[:, 0]
    top = int(np.argmax(means))
    prov.update(
        gmm_weights=[float(w) for w in gmm.weights],
        gmm_means=[float(m) for m in means],
        gmm_stds=[float(v) for v in np.sqrt(gmm.covariances[:, 0])],
        component=top,
    )
    sigma = max(float(np.sqrt(gmm.covariances[top, 0])), SIGMA_FLOOR)
    return NormParams(float(means[top]), sigma, prov)


def estimate_params(scores, method: str = "z", **kwargs) -> NormParams:
    if method == "z":
        return zscore_params(scores)
    if method == "ucsn":
        return ucsn_params(scores, **kwargs)
    raise ValueError(f"unknown normalization method {method!r}")


def apply_norm(
    scores: Mapping,
    params_by_enroll: Mapping,
    symmetric: bool = False,
    params_by_test: Mapping | None = None,
) -> dict:
    """Normalize a score set.

    Every score is normalized with its enrollment model's parameters. With
    ``symmetric`` the result is the mean of the enrollment-side and test-side
    normalized scores.
    """
    if symmetric and params_by_test is None:
        raise ValueError("symmetric normalization needs test-side parameters")
    out = {}
    for (e, t), s in scores.items():
        if e not in params_by_enroll:
            raise KeyError(f"no normalization parameters for enrollment model {e!r}")
        pe = params_by_enroll[e]
        z = (s - pe.mu_star) / pe.sigma_star
        if symmetric:
            if t not in params_by_test:
                raise KeyError(f"no normalization parameters for test segment {t!r}")
            pt = params_by_test[t]
            z = 0.5 * (z + (s - pt.mu_star) / pt.sigma_star)
        out[(e, t)] = float(z)
    return out


def normalize_scores(
    scores: Mapping,
    model: PldaModel,
    enroll: Mapping,
    test: Mapping,
    cohort,
    method: str = "ucsn",
    side: str = "enroll",
    pool_scope: str = "model",
    **kwargs,
) -> tuple[dict, dict]:
    """Estimate cohort parameters and normalize ``scores``.

    Args:
        enroll, test: id -> processed embedding.
        cohort: processed cohort embeddings.
        method: ``'z'`` or ``'ucsn'``.
        side: ``'enroll'``, ``'test'`` or ``'both'`` (s-norm form).
        pool_scope: ``'model'`` pools cohort scores per model; ``'global'``
            estimates a single parameter set from all models' cohort scores.
        kwargs: forwarded to :func:`ucsn_params`.

    Returns:
        Normalized scores and a provenance dict keyed by side and id.
    """
    C = cohort.vectors if isinstance(cohort, EmbeddingSet) else np.atleast_2d(cohort)

    def side_params(ids, vecs):
        ids = sorted(ids)
        mat = plda_score_matrix(model, np.stack([np.atleast_2d(vecs[i]).mean(0) for i in ids]), C)
        if pool_scope == "global":
            p = estimate_params(mat.ravel(), method, **kwargs)
            return {i: p for i in ids}
        if pool_scope != "model":
            raise ValueError(f"unknown pool scope {pool_scope!r}")
        return {i: estimate_params(row, method, **kwargs) for i, row in zip(ids, mat)}

    e_ids = {e for e, _ in scores}
    t_ids = {t for _, t in scores}
    prov = {}
    if side == "enroll":
        pe = side_params(e_ids, enroll)
        out = apply_norm(scores, pe)
        prov["enroll"] = pe
    elif side == "test":
        pt = side_params(t_ids, test)
        swapped = apply_norm({(t, e): s for (e, t), s in scores.items()}, pt)
        out = {(e, t): s for (t, e), s in swapped.items()}
        prov["test"] = pt
    elif side == "both":
        pe, pt = side_params(e_ids, enroll), side_params(t_ids, test)
        out = apply_norm(scores, pe, symmetric=True, params_by_test=pt)
        prov.update(enroll=pe, test=pt)
    else:
        raise ValueError(f"unknown normalization side {side!r}")
    report = {
        s: {i: {"mu_star": p.mu_star, "sigma_star": p.sigma_star, **p.provenance} for i, p in d.items()}
        for s, d in prov.items()
    }
    return out, report
