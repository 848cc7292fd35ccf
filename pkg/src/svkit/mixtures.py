"""K-means and EM-trained Gaussian mixtures (diagonal or full covariance)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

LOG_2PI = np.log(2.0 * np.pi)
DIAG_FLOOR = 1e-4     # times per-dimension data variance
EIG_FLOOR = 1e-6      # times trace / D of the data covariance
MIN_COUNT = 1e-10
ABS_FLOOR = 1e-10     # for constant data


@dataclass
class KmeansResult:
    centroids: np.ndarray
    assignment: np.ndarray
    distortion: float
    history: list = field(default_factory=list, repr=False)


@dataclass
class GaussianMixture:
    """Mixture of Gaussians.

    ``covariances`` is ``(K, D)`` for ``cov_kind='diag'`` and ``(K, D, D)``
    for ``'full'``.
    """

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    cov_kind: str = "diag"
    loglik_history: list = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        self.covariances = np.asarray(self.covariances, dtype=np.float64)
        if self.cov_kind not in ("diag", "full"):
            raise ValueError(f"cov_kind must be 'diag' or 'full', got {self.cov_kind!r}")
        K, D = self.means.shape
        want = (K, D) if self.cov_kind == "diag" else (K, D, D)
        if self.covariances.shape != want:
            raise ValueError(f"covariances shape {self.covariances.shape}, expected {want}")
        if self.weights.shape != (K,):
            raise ValueError("weights must have one entry per component")

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def full_covariances(self) -> np.ndarray:
        if self.cov_kind == "full":
            return self.covariances
        return np.stack([np.diag(c) for c in self.covariances])

    def variances(self) -> np.ndarray:
        """Per-component diagonal variances, ``(K, D)``."""
        if self.cov_kind == "diag":
            return self.covariances
        return np.diagonal(self.covariances, axis1=1, axis2=2).copy()


def _as_2d(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x[:, None] if x.ndim == 1 else x


# ----------------------------------------------------------------------------
# K-means


def _sq_dists(points, centroids):
    d = (points ** 2).sum(1)[:, None] - 2.0 * points @ centroids.T + (centroids ** 2).sum(1)[None, :]
    return np.maximum(d, 0.0)


def kmeans_plusplus(points: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    N = points.shape[0]
    chosen = [int(rng.integers(N))]
    closest = ((points - points[chosen[0]]) ** 2).sum(1)
    for _ in range(1, K):
        total = closest.sum()
        if total > 0:
            idx = int(rng.choice(N, p=closest / total))
        else:
            # all remaining points coincide with a centroid
            rest = np.setdiff1d(np.arange(N), chosen)
            idx = int(rng.choice(rest))
        chosen.append(idx)
        closest = np.minimum(closest, ((points - points[idx]) ** 2).sum(1))
    return points[chosen].copy()


def kmeans(points, K: int, seed: int = 0, max_iter: int = 100, tol: float = 1e-8) -> KmeansResult:
    """Lloyd's algorithm with k-means++ seeding.

    Empty clusters are re-seeded at the point farthest from its centroid.
    ``history`` holds the distortion after each assignment step and is
    non-increasing.
    """
    X = _as_2d(points)
    N = X.shape[0]
    if K < 1:
        raise ValueError("K must be >= 1")
    if K > N:
        raise ValueError(f"K={K} exceeds number of points N={N}")
    rng = np.random.default_rng(seed)
    C = kmeans_plusplus(X, K, rng)
    history = []
    for _ in range(max_iter):
        d = _sq_dists(X, C)
        assign = d.argmin(1)
        point_d = d[np.arange(N), assign]
        counts = np.bincount(assign, minlength=K)
        for k in np.flatnonzero(counts == 0):
            # steal the worst-fit point from a cluster that can spare one
            movable = np.where(counts[assign] > 1, point_d, -1.0)
            far = int(movable.argmax())
            counts[assign[far]] -= 1
            counts[k] += 1
            C[k] = X[far]
            assign[far] = k
            point_d[far] = 0.0
        history.append(float(point_d.sum()))
        counts = np.bincount(assign, minlength=K).astype(np.float64)
        newC = np.zeros_like(C)
        np.add.at(newC, assign, X)
        newC /= counts[:, None]
        shift = np.sqrt(((newC - C) ** 2).sum(1)).max()
        C = newC
        if shift < tol:
            break
    d = _sq_dists(X, C)
    assign = d.argmin(1)
    distortion = float(((X - C[assign]) ** 2).sum())
    return KmeansResult(C, assign, distortion, history)


# ----------------------------------------------------------------------------
# Densities and posteriors


def log_component_densities(gmm: GaussianMixture, data) -> np.ndarray:
    """``log N(x_n; mu_k, Sigma_k)`` as an ``(N, K)`` matrix."""
    X = _as_2d(data)
    if X.shape[1] != gmm.dim:
        raise ValueError(f"data dim {X.shape[1]} != model dim {gmm.dim}")
    N, D = X.shape
    out = np.empty((N, gmm.n_components))
    if gmm.cov_kind == "diag":
        for k in range(gmm.n_components):
            var = gmm.covariances[k]
            maha = ((X - gmm.means[k]) ** 2) @ (1.0 / var)
            out[:, k] = -0.5 * (D * LOG_2PI + np.log(var).sum() + maha)
        return out
    for k in range(gmm.n_components):
        L = np.linalg.cholesky(gmm.covariances[k])
        z = solve_triangular(L, (X - gmm.means[k]).T, lower=True)
        logdet = 2.0 * np.log(np.diag(L)).sum()
        out[:, k] = -0.5 * (D * LOG_2PI + logdet + (z ** 2).sum(0))
    return out


def _row_logsumexp(lp):
    # scipy's logsumexp carries enough dispatch overhead to dominate small EM fits
    m = lp.max(axis=1, keepdims=True)
    m[~np.isfinite(m)] = 0.0
    return m + np.log(np.exp(lp - m).sum(axis=1, keepdims=True))


def _weighted_log_densities(gmm, data):
    with np.errstate(divide="ignore"):
        return log_component_densities(gmm, data) + np.log(gmm.weights)


def gmm_posteriors(gmm: GaussianMixture, data) -> np.ndarray:
    """Component responsibilities, ``(N, K)``, each row summing to one."""
    lp = _weighted_log_densities(gmm, data)
    return np.exp(lp - _row_logsumexp(lp))


def gmm_loglik(gmm: GaussianMixture, data) -> float:
    """Total log-likelihood ``sum_n log sum_k w_k N(x_n; mu_k, Sigma_k)``."""
    return float(_row_logsumexp(_weighted_log_densities(gmm, data)).sum())


# ----------------------------------------------------------------------------
# EM


def _floors(X: np.ndarray, cov_kind: str):
    if cov_kind == "diag":
        return np.maximum(DIAG_FLOOR * X.var(axis=0), ABS_FLOOR)
    total = np.atleast_2d(np.cov(X.T, bias=True))
    return max(EIG_FLOOR * np.trace(total) / X.shape[1], ABS_FLOOR)


def floor_covariance(cov: np.ndarray, floor) -> np.ndarray:
    """Clip diagonal variances or full-covariance eigenvalues from below."""
    if cov.ndim == 1:
        return np.maximum(cov, floor)
    cov = 0.5 * (cov + cov.T)
    vals, vecs = np.linalg.eigh(cov)
    if vals.min() >= floor:
        return cov
    out = (vecs * np.maximum(vals, floor)) @ vecs.T
    return 0.5 * (out + out.T)


def _accumulate(X, resp, cov_kind, chunk_size):
    """Soft counts, means and centered second moments.

    Two passes over the data, each reduced over chunks in a fixed order.
    """
    N, D = X.shape
    K = resp.shape[1]
    n = np.zeros(K)
    f = np.zeros((K, D))
    for lo in range(0, N, chunk_size):
        r = resp[lo:lo + chunk_size]
        n += r.sum(0)
        f += r.T @ X[lo:lo + chunk_size]
    n = np.maximum(n, MIN_COUNT)
    means = f / n[:, None]
    s = np.zeros((K, D)) if cov_kind == "diag" else np.zeros((K, D, D))
    for lo in range(0, N, chunk_size):
        x, r = X[lo:lo + chunk_size], resp[lo:lo + chunk_size]
        if cov_kind == "diag":
            for k in range(K):
                s[k] += r[:, k] @ (x - means[k]) ** 2
        else:
            for k in range(K):
                c = x - means[k]
                s[k] += (c * r[:, k:k + 1]).T @ c
    return n, means, s


def _m_step(X, resp, cov_kind, floor, chunk_size):
    n, means, s = _accumulate(X, resp, cov_kind, chunk_size)
    weights = n / n.sum()
    if cov_kind == "diag":
        covs = np.maximum(s / n[:, None], floor)
    else:
        covs = np.stack([floor_covariance(c, floor) for c in s / n[:, None, None]])
    return GaussianMixture(weights, means, covs, cov_kind)


def _resp_from_hard(assignment, K):
    resp = np.zeros((assignment.size, K))
    resp[np.arange(assignment.size), assignment] = 1.0
    return resp


def gmm_em(
    data,
    K: int,
    cov_kind: str = "diag",
    init: KmeansResult | GaussianMixture | None = None,
    max_iter: int = 100,
    tol: float = 1e-6,
    seed: int = 0,
    chunk_size: int = 65536,
) -> GaussianMixture:
    """Maximum-likelihood mixture fit by EM.

    Args:
        data: ``(N, D)`` samples (1-D input is treated as ``D = 1``).
        K: number of components.
        cov_kind: ``'diag'`` or ``'full'``.
        init: starting k-means partition or mixture; k-means++/Lloyd with
            ``seed`` is used when omitted.
        max_iter: maximum EM iterations.
        tol: stop when the relative log-likelihood gain falls below this.
        chunk_size: rows per accumulation chunk; results are reproducible
            for a fixed chunk size.

    Returns:
        The fitted mixture. ``loglik_history[i]`` is the data log-likelihood
        after ``i`` EM updates of the initial model.
    """
    X = _as_2d(data)
    N, D = X.shape
    if cov_kind not in ("diag", "full"):
        raise ValueError(f"cov_kind must be 'diag' or 'full', got {cov_kind!r}")
    if N < K:
        raise ValueError(f"need at least K={K} points, got {N}")
    if cov_kind == "full" and N <= D:
        raise ValueError(f"full covariance needs N > D (N={N}, D={D})")
    floor = _floors(X, cov_kind)
    if init is None:
        init = kmeans(X, K, seed=seed)
    if isinstance(init, KmeansResult):
        model = _m_step(X, _resp_from_hard(init.assignment, K), cov_kind, floor, chunk_size)
    else:
        if init.n_components != K or init.dim != D:
            raise ValueError("initial mixture does not match K / data dimension")
        model = init if init.cov_kind == cov_kind else GaussianMixture(
            init.weights, init.means,
            init.full_covariances() if cov_kind == "full" else init.variances(), cov_kind)
    history = []
    for it in range(max_iter + 1):
        lp = _weighted_log_densities(model, X)
        norm = _row_logsumexp(lp)
        ll = float(norm.sum())
        history.append(ll)
        if it == max_iter:
            break
        if it > 0 and tol > 0 and (ll - history[-2]) <= tol * abs(history[-2]):
            break
        model = _m_step(X, np.exp(lp - norm), cov_kind, floor, chunk_size)
    model.loglik_history = history
    return model
