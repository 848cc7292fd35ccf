"""Embedding post-processing and two-covariance PLDA.

Pipeline: subtract the training mean, project with LDA, length-normalize,
then score trials with the PLDA log-likelihood ratio.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import eigh

from .mixtures import EIG_FLOOR, floor_covariance

LOG_2PI = np.log(2.0 * np.pi)
LDA_REG = 1e-6


@dataclass
class EmbeddingSet:
    vectors: np.ndarray
    speaker_labels: list
    utterance_ids: list
    durations: np.ndarray | None = None

    def __post_init__(self):
        self.vectors = np.atleast_2d(np.asarray(self.vectors, dtype=np.float64))
        self.speaker_labels = [str(s) for s in self.speaker_labels]
        self.utterance_ids = [str(u) for u in self.utterance_ids]
        n = self.vectors.shape[0]
        if len(self.speaker_labels) != n or len(self.utterance_ids) != n:
            raise ValueError("labels/ids must have one entry per vector")
        if not np.all(np.isfinite(self.vectors)):
            raise ValueError("embeddings must be finite")
        if any(not s for s in self.speaker_labels):
            raise ValueError("speaker labels must be non-empty")
        if self.durations is not None:
            self.durations = np.asarray(self.durations, dtype=np.float64)

    def __len__(self):
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def subset(self, idx) -> "EmbeddingSet":
        idx = np.asarray(idx)
        if idx.dtype == bool:
            idx = np.flatnonzero(idx)
        return EmbeddingSet(
            self.vectors[idx],
            [self.speaker_labels[i] for i in idx],
            [self.utterance_ids[i] for i in idx],
            None if self.durations is None else self.durations[idx],
        )

    def with_vectors(self, vectors) -> "EmbeddingSet":
        return EmbeddingSet(vectors, self.speaker_labels, self.utterance_ids, self.durations)

    def by_id(self) -> dict:
        return {u: v for u, v in zip(self.utterance_ids, self.vectors)}

    def speaker_index(self):
        """Speaker names (sorted) and the integer class of every vector."""
        names, codes = np.unique(np.asarray(self.speaker_labels), return_inverse=True)
        return list(names), codes


def select_longest(embeddings: EmbeddingSet, max_count: int = 200_000) -> EmbeddingSet:
    """Keep the ``max_count`` recordings with the longest duration.

    Ties are resolved by original order; without duration metadata the set is
    returned unchanged if it is small enough.
    """
    if len(embeddings) <= max_count:
        return embeddings
    if embeddings.durations is None:
        raise ValueError("duration metadata required to select the longest recordings")
    order = np.argsort(-embeddings.durations, kind="stable")[:max_count]
    return embeddings.subset(np.sort(order))


# ----------------------------------------------------------------------------
# Centering / LDA / length normalization


@dataclass
class BackendTransform:
    global_mean: np.ndarray
    lda: np.ndarray
    target_norm: float

    @property
    def out_dim(self) -> int:
        return self.lda.shape[0]


def scatter_matrices(X: np.ndarray, classes: np.ndarray):
    """Within- and between-class scatter, both normalized by N."""
    N, D = X.shape
    mean = X.mean(0)
    Sw = np.zeros((D, D))
    Sb = np.zeros((D, D))
    for c in np.unique(classes):
        Xc = X[classes == c]
        mc = Xc.mean(0)
        d = Xc - mc
        Sw += d.T @ d
        Sb += len(Xc) * np.outer(mc - mean, mc - mean)
    return Sw / N, Sb / N


def regularize_within(Sw: np.ndarray) -> np.ndarray:
    D = Sw.shape[0]
    return Sw + LDA_REG * np.trace(Sw) / D * np.eye(D)


def lda_projection(Sb: np.ndarray, Sw: np.ndarray, dim: int) -> np.ndarray:
    """Top-``dim`` generalized eigenvectors of ``Sb u = l Sw u`` as rows.

    Solved by whitening ``Sw`` and diagonalizing the whitened ``Sb``, so the
    projected within-class scatter is the identity.
    """
    vals, vecs = np.linalg.eigh(0.5 * (Sw + Sw.T))
    if vals.min() <= 0:
        raise ValueError("within-class scatter is not positive definite")
    P = (vecs / np.sqrt(vals)).T
    bvals, bvecs = np.linalg.eigh(P @ Sb @ P.T)
    order = np.argsort(bvals)[::-1][:dim]
    return bvecs[:, order].T @ P


def fit_transform(train: EmbeddingSet, lda_dim: int | None = None, target_norm: float | None = None) -> BackendTransform:
    """Estimate centering, LDA and the length-norm target.

    ``lda_dim`` defaults to ``min(200, n_speakers - 1, D)``; the length-norm
    target defaults to ``sqrt(lda_dim)``.
    """
    names, classes = train.speaker_index()
    S = len(names)
    if S < 2:
        raise ValueError("LDA needs at least two speakers")
    D = train.dim
    if lda_dim is None:
        lda_dim = min(200, S - 1, D)
    if not 1 <= lda_dim <= min(D, S - 1):
        raise ValueError(f"lda_dim={lda_dim} must be in [1, min(D={D}, n_speakers-1={S - 1})]")
    X = train.vectors
    Sw, Sb = scatter_matrices(X, classes)
    lda = lda_projection(Sb, regularize_within(Sw), lda_dim)
    norm = float(np.sqrt(lda_dim)) if target_norm is None else float(target_norm)
    return BackendTransform(X.mean(0), lda, norm)


def apply_transform(t: BackendTransform, x) -> np.ndarray:
    """Center, project and length-normalize one vector or a row matrix."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != t.global_mean.shape[0]:
        raise ValueError(f"embedding dim {x.shape[-1]} != transform dim {t.global_mean.shape[0]}")
    y = (x - t.global_mean) @ t.lda.T
    norms = np.linalg.norm(y, axis=-1, keepdims=True)
    if np.any(norms == 0):
        raise ValueError("embedding projects to the zero vector; cannot length-normalize")
    return t.target_norm * y / norms


def transform_set(t: BackendTransform, emb: EmbeddingSet) -> EmbeddingSet:
    return emb.with_vectors(apply_transform(t, emb.vectors))


# ----------------------------------------------------------------------------
# PLDA


@dataclass
class PldaModel:
    """Two-covariance PLDA: ``x = mu + y + e``, ``y ~ N(0, B)``, ``e ~ N(0, W)``."""

    mu: np.ndarray
    B: np.ndarray
    W: np.ndarray
    loglik_history: list = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.B = np.asarray(self.B, dtype=np.float64)
        self.W = np.asarray(self.W, dtype=np.float64)
        self._diag = None

    @property
    def dim(self) -> int:
        return self.mu.shape[0]

    def diagonalize(self):
        """``V`` and ``psi`` with ``V'WV = I`` and ``V'BV = diag(psi)``."""
        if self._diag is None:
            vals, vecs = np.linalg.eigh(0.5 * (self.W + self.W.T))
            P = vecs / np.sqrt(vals)
            psi, U = np.linalg.eigh(P.T @ (0.5 * (self.B + self.B.T)) @ P)
            self._diag = (P @ U, np.maximum(psi, 0.0))
        return self._diag


def _group(X, classes, S):
    counts = np.bincount(classes, minlength=S).astype(np.float64)
    sums = np.zeros((S, X.shape[1]))
    np.add.at(sums, classes, X)
    return counts, sums


def plda_loglik(model: PldaModel, X: np.ndarray, classes: np.ndarray) -> float:
    """Marginal log-likelihood of the data with speakers integrated out."""
    V, psi = model.diagonalize()
    D = model.dim
    S = int(classes.max()) + 1
    Z = (X - model.mu) @ V
    counts, sums = _group(Z, classes, S)
    # log|W| = -2 log|V| since V'WV = I
    logdet_W = -2.0 * np.linalg.slogdet(V)[1]
    total = 0.0
    for n, s in zip(counts, sums):
        if n == 0:
            continue
        zbar = s / n
        total += -0.5 * (n * D * LOG_2PI + n * logdet_W + np.log1p(n * psi).sum()
                         + (n * zbar ** 2 / (1.0 + n * psi)).sum())
    # within-speaker scatter around each speaker mean
    scatter = (Z ** 2).sum() - ((sums ** 2).sum(1) / np.maximum(counts, 1)).sum()
    return float(total - 0.5 * scatter)


def plda_em_step(model: PldaModel, X: np.ndarray, classes: np.ndarray, floor: float = 0.0) -> PldaModel:
    """One EM update of ``B`` and ``W`` (``mu`` fixed)."""
    V, psi = model.diagonalize()
    S = int(classes.max()) + 1
    N = X.shape[0]
    Z = (X - model.mu) @ V
    counts, sums = _group(Z, classes, S)
    post_var = psi / (1.0 + counts[:, None] * psi)                 # (S, D)
    post_mean = sums * post_var                                    # (S, D): P^-1 W^-1 sum
    Vinv = np.linalg.inv(V)
    # statistics in the diagonalized space, mapped back with V^-T . V^-1
    Bd = (post_mean.T @ post_mean + np.diag(post_var.sum(0))) / S
    resid = Z - post_mean[classes]
    Wd = (resid.T @ resid + np.diag((counts[:, None] * post_var).sum(0))) / N
    B = Vinv.T @ Bd @ Vinv
    W = Vinv.T @ Wd @ Vinv
    B = 0.5 * (B + B.T)
    W = floor_covariance(W, floor) if floor > 0 else 0.5 * (W + W.T)
    return PldaModel(model.mu, B, W)


def plda_train(train: EmbeddingSet, iters: int = 10, seed: int = 0, init: PldaModel | None = None) -> PldaModel:
    """Two-covariance PLDA by EM.

    Starts from the between/within scatter of the training set unless
    ``init`` is given; ``seed`` only affects the tiny random jitter used when
    the scatter initialization is degenerate. ``loglik_history[i]`` is the
    marginal log-likelihood after ``i`` updates.

    With only singleton speakers B and W are not separately identifiable;
    training then only pins down their sum.
    """
    names, classes = train.speaker_index()
    S = len(names)
    N, D = train.vectors.shape
    if S < 2:
        raise ValueError("PLDA needs at least two speakers")
    if N < S + 2 and N != S:
        raise ValueError("PLDA needs at least two utterances beyond the speaker count")
    X = train.vectors
    mu = X.mean(0)
    total = np.cov(X.T, bias=True).reshape(D, D)
    floor = EIG_FLOOR * np.trace(total) / D
    if init is None:
        Sw, Sb = scatter_matrices(X, classes)
        W = floor_covariance(Sw, floor)
        if np.trace(Sw) <= floor * D:
            # every speaker is a singleton: split the total covariance evenly
            rng = np.random.default_rng(seed)
            W = floor_covariance(0.5 * total + floor * np.diag(rng.random(D)), floor)
            Sb = 0.5 * total
        model = PldaModel(mu, Sb, W)
    else:
        model = PldaModel(mu, init.B, init.W)
    history = [plda_loglik(model, X, classes)]
    for _ in range(iters):
        model = plda_em_step(model, X, classes, floor)
        history.append(plda_loglik(model, X, classes))
    model.loglik_history = history
    return model


def _score_terms(psi):
    a = 0.5 * (1.0 / (1.0 + psi) - (1.0 + psi) / (1.0 + 2.0 * psi))
    c = psi / (1.0 + 2.0 * psi)
    k = (np.log1p(psi) - 0.5 * np.log1p(2.0 * psi)).sum()
    return a, c, k


def plda_score_matrix(model: PldaModel, enroll, test) -> np.ndarray:
    """LLR for every (enroll row, test row) pair."""
    V, psi = model.diagonalize()
    E = (np.atleast_2d(enroll) - model.mu) @ V
    T = (np.atleast_2d(test) - model.mu) @ V
    a, c, k = _score_terms(psi)
    return k + ((E ** 2) @ a)[:, None] + ((T ** 2) @ a)[None, :] + (E * c) @ T.T


def plda_score(model: PldaModel, enroll, test) -> float:
    """Same-speaker vs different-speaker log-likelihood ratio for one pair."""
    e = np.asarray(enroll, dtype=np.float64)
    t = np.asarray(test, dtype=np.float64)
    if e.shape != (model.dim,) or t.shape != (model.dim,):
        raise ValueError("embedding dimensions do not match the PLDA model")
    return float(plda_score_matrix(model, e, t)[0, 0])


def score_trials(
    model: PldaModel,
    enroll: dict,
    test: dict,
    trials: Sequence[tuple],
) -> dict:
    """Score ``(enroll_id, test_id)`` pairs.

    ``enroll`` maps an id to a processed vector or to a ``(n, D)`` matrix of
    sessions, which are averaged.
    """
    e_ids = sorted({e for e, _ in trials})
    t_ids = sorted({t for _, t in trials})
    for i in e_ids:
        if i not in enroll:
            raise KeyError(f"no enrollment embedding for {i!r}")
    for i in t_ids:
        if i not in test:
            raise KeyError(f"no test embedding for {i!r}")
    E = np.stack([np.atleast_2d(enroll[i]).mean(0) for i in e_ids])
    T = np.stack([np.asarray(test[i], dtype=np.float64) for i in t_ids])
    M = plda_score_matrix(model, E, T)
    e_pos = {e: n for n, e in enumerate(e_ids)}
    t_pos = {t: n for n, t in enumerate(t_ids)}
    return {(e, t): float(M[e_pos[e], t_pos[t]]) for e, t in trials}
