"""Frame-to-segment pooling operators with analytic gradients.

Modes:
    stats           mean and standard deviation over frames
    high_order      mean, std, skewness and kurtosis
    learned         single-head attentive statistics, e_t = v' tanh(W h_t + b)
    split           hidden dims split in halves; the first half scores the
                    frames, the second half is pooled
    parameter_free  score e_t is the mean of h_t over hidden dims
    gated           g_t = sigmoid(G h_t + c), pooled on h_t * g_t, with
                    scores e_t = u' g_t

Only forward/backward kernels live here; the surrounding networks are not
modelled.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, softmax

EPS = 1e-6
MODES = ("stats", "high_order", "learned", "split", "parameter_free", "gated")
ATTENTION_MODES = ("learned", "split", "parameter_free", "gated")

# (layer, context, output size) of the reference x-vector network
XVECTOR_LAYERS = (
    ("frame1", "[t-2,t+2]", 512),
    ("frame2", "{t-2,t,t+2}", 512),
    ("frame3", "{t-3,t,t+3}", 512),
    ("frame4", "{t}", 512),
    ("frame5", "{t}", 1500),
    ("pooling", "[1,T]", 3000),
    ("segment6", "-", 512),
    ("segment7", "-", 512),
)


@dataclass
class AttentionParams:
    W: np.ndarray | None = None        # (Da, D) or (Da, D/2) for split
    b: np.ndarray | None = None        # (Da,)
    v: np.ndarray | None = None        # (Da,)
    gate_W: np.ndarray | None = None   # (D, D)
    gate_b: np.ndarray | None = None   # (D,)
    gate_u: np.ndarray | None = None   # (D,)

    @classmethod
    def random(cls, D: int, Da: int = 8, mode: str = "learned", seed: int = 0, scale: float = 0.5):
        rng = np.random.default_rng(seed)
        d_in = D // 2 if mode == "split" else D
        return cls(
            W=scale * rng.standard_normal((Da, d_in)),
            b=scale * rng.standard_normal(Da),
            v=scale * rng.standard_normal(Da),
            gate_W=scale * rng.standard_normal((D, D)),
            gate_b=scale * rng.standard_normal(D),
            gate_u=scale * rng.standard_normal(D),
        )


def _check_frames(H, min_t=1):
    H = np.asarray(H, dtype=np.float64)
    if H.ndim != 2 or H.shape[0] < min_t or H.shape[1] < 1:
        raise ValueError(f"expected a T x D frame matrix with T >= {min_t}, got shape {H.shape}")
    return H


def _need(params, *names):
    if params is None or any(getattr(params, n) is None for n in names):
        raise ValueError(f"attention parameters {names} are required for this mode")


# ----------------------------------------------------------------------------
# Weighted statistics shared by all modes


def weighted_stats(X: np.ndarray, w: np.ndarray, eps: float = EPS):
    mu = w @ X
    var = w @ (X - mu) ** 2
    return mu, np.sqrt(var + eps)


def _weighted_stats_backward(X, w, mu, sigma, g_mu, g_sigma):
    """Gradients of (mu, sigma) w.r.t. the pooled values and the weights."""
    centered = X - mu
    dX = w[:, None] * (g_mu + g_sigma * centered / sigma)
    # valid on the simplex; per-dimension constants are dropped since the
    # softmax Jacobian annihilates them
    dw = X @ g_mu + (centered ** 2 / (2.0 * sigma)) @ g_sigma
    return dX, dw


def softmax_backward(w: np.ndarray, dw: np.ndarray) -> np.ndarray:
    return w * (dw - w @ dw)


def stats_pool(H, eps: float = EPS) -> np.ndarray:
    """Mean and standard deviation over frames, concatenated (length 2D)."""
    H = _check_frames(H)
    mu = H.mean(0)
    sigma = np.sqrt(((H - mu) ** 2).mean(0) + eps)
    return np.concatenate([mu, sigma])


def high_order_pool(H, eps: float = EPS) -> np.ndarray:
    """Mean, std, skewness and kurtosis per dimension (length 4D).

    Kurtosis is the plain standardized fourth moment (about 3 for Gaussian
    data), not the excess kurtosis.
    """
    H = _check_frames(H, min_t=2)
    mu = H.mean(0)
    c = H - mu
    sigma = np.sqrt((c ** 2).mean(0) + eps)
    z = c / sigma
    return np.concatenate([mu, sigma, (z ** 3).mean(0), (z ** 4).mean(0)])


def attention_scores(H, mode: str, params: AttentionParams | None = None) -> np.ndarray:
    """Unnormalized per-frame scores ``e_t``."""
    H = _check_frames(H)
    if mode == "learned":
        _need(params, "W", "b", "v")
        return np.tanh(H @ params.W.T + params.b) @ params.v
    if mode == "split":
        _need(params, "W", "b", "v")
        A, _ = _split(H)
        return np.tanh(A @ params.W.T + params.b) @ params.v
    if mode == "parameter_free":
        return H.mean(1)
    if mode == "gated":
        _need(params, "gate_W", "gate_b", "gate_u")
        return expit(H @ params.gate_W.T + params.gate_b) @ params.gate_u
    raise ValueError(f"unknown attention mode {mode!r}")


def attention_weights(scores) -> np.ndarray:
    return softmax(np.asarray(scores, dtype=np.float64))


def _split(H):
    D = H.shape[1]
    if D % 2:
        raise ValueError(f"split attention needs an even dimension, got D={D}")
    return H[:, :D // 2], H[:, D // 2:]


def _pooled_values(H, mode, params):
    if mode == "split":
        return _split(H)[1]
    if mode == "gated":
        _need(params, "gate_W", "gate_b", "gate_u")
        return H * expit(H @ params.gate_W.T + params.gate_b)
    return H


def attention_pool(H, mode: str = "learned", params: AttentionParams | None = None, eps: float = EPS) -> np.ndarray:
    """Attention-weighted mean and standard deviation (length 2D', where D'
    is D/2 for ``split`` and D otherwise)."""
    H = _check_frames(H)
    if mode not in ATTENTION_MODES:
        raise ValueError(f"unknown attention mode {mode!r}")
    w = attention_weights(attention_scores(H, mode, params))
    mu, sigma = weighted_stats(_pooled_values(H, mode, params), w, eps)
    return np.concatenate([mu, sigma])


def pool(H, mode: str, params: AttentionParams | None = None) -> np.ndarray:
    if mode == "stats":
        return stats_pool(H)
    if mode == "high_order":
        return high_order_pool(H)
    return attention_pool(H, mode, params)


def output_dim(D: int, mode: str) -> int:
    if mode == "high_order":
        return 4 * D
    if mode == "split":
        return D
    return 2 * D


# ----------------------------------------------------------------------------
# Backward


def _stats_backward(H, up, eps):
    T, D = H.shape
    w = np.full(T, 1.0 / T)
    mu, sigma = weighted_stats(H, w, eps)
    dH, _ = _weighted_stats_backward(H, w, mu, sigma, up[:D], up[D:])
    return dH


def _high_order_backward(H, up, eps):
    T, D = H.shape
    g_mu, g_sig, g_skew, g_kurt = up[:D], up[D:2 * D], up[2 * D:3 * D], up[3 * D:]
    mu = H.mean(0)
    c = H - mu
    var = (c ** 2).mean(0)
    sigma = np.sqrt(var + eps)
    m3 = (c ** 3).mean(0)
    m4 = (c ** 4).mean(0)
    d_sigma = c / (T * sigma)
    d_m3 = 3.0 * (c ** 2 - var) / T
    d_m4 = 4.0 * (c ** 3 - m3) / T
    d_skew = d_m3 / sigma ** 3 - 3.0 * m3 / sigma ** 4 * d_sigma
    d_kurt = d_m4 / sigma ** 4 - 4.0 * m4 / sigma ** 5 * d_sigma
    return g_mu / T + g_sig * d_sigma + g_skew * d_skew + g_kurt * d_kurt


def _tanh_scorer_backward(X, params, de):
    a = X @ params.W.T + params.b
    z = np.tanh(a)
    da = np.outer(de, params.v) * (1.0 - z ** 2)
    return da @ params.W, {"W": da.T @ X, "b": da.sum(0), "v": z.T @ de}


def pool_backward(H, mode: str, params: AttentionParams | None, upstream) -> dict:
    """Gradients of ``pool(H, mode, params)`` contracted with ``upstream``.

    Returns:
        dict with key ``'H'`` and, for parameterized modes, one key per
        parameter used (``W``, ``b``, ``v`` or ``gate_W``, ``gate_b``,
        ``gate_u``).
    """
    H = _check_frames(H, 2 if mode == "high_order" else 1)
    up = np.asarray(upstream, dtype=np.float64)
    T, D = H.shape
    if up.shape != (output_dim(D, mode),):
        raise ValueError(f"upstream shape {up.shape} does not match pooled output ({output_dim(D, mode)},)")
    if mode == "stats":
        return {"H": _stats_backward(H, up, EPS)}
    if mode == "high_order":
        return {"H": _high_order_backward(H, up, EPS)}
    if mode not in ATTENTION_MODES:
        raise ValueError(f"unknown pooling mode {mode!r}")

    X = _pooled_values(H, mode, params)
    Dp = X.shape[1]
    w = attention_weights(attention_scores(H, mode, params))
    mu, sigma = weighted_stats(X, w, EPS)
    dX, dw = _weighted_stats_backward(X, w, mu, sigma, up[:Dp], up[Dp:])
    de = softmax_backward(w, dw)

    if mode == "parameter_free":
        return {"H": dX + de[:, None] / D}
    if mode == "learned":
        dH_score, grads = _tanh_scorer_backward(H, params, de)
        return {"H": dX + dH_score, **grads}
    if mode == "split":
        A, _ = _split(H)
        dA, grads = _tanh_scorer_backward(A, params, de)
        return {"H": np.concatenate([dA, dX], axis=1), **grads}

    # gated
    g = expit(H @ params.gate_W.T + params.gate_b)
    dg = np.outer(de, params.gate_u) + dX * H
    da = dg * g * (1.0 - g)
    return {
        "H": dX * g + da @ params.gate_W,
        "gate_W": da.T @ H,
        "gate_b": da.sum(0),
        "gate_u": g.T @ de,
    }


def combine_multitask_loss(ce: float, mse: float, w_ce: float = 0.7, w_mse: float = 0.3) -> float:
    """Weighted sum of the classification and reconstruction losses."""
    if w_ce < 0 or w_mse < 0:
        raise ValueError("loss weights must be non-negative")
    return w_ce * ce + w_mse * mse
