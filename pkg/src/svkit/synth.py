"""Synthetic speaker worlds drawn from a known two-covariance model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backend import EmbeddingSet


@dataclass(frozen=True)
class SyntheticWorldSpec:
    n_speakers: int = 200
    utts_per_speaker: int = 10
    dim: int = 50
    B_scale: float = 1.0
    W_scale: float = 0.5
    seed: int = 0
    n_eval_speakers: int | None = None   # defaults to n_speakers
    n_trials: int = 10_000               # half target, half nontarget

    def __post_init__(self):
        for name in ("n_speakers", "utts_per_speaker", "dim", "n_trials"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.B_scale < 0 or self.W_scale < 0:
            raise ValueError("variance scales must be non-negative")
        if self.n_eval_speakers is not None and self.n_eval_speakers < 2:
            raise ValueError("need at least two evaluation speakers")


def draw_speakers(rng, n_speakers, utts, dim, B_scale, W_scale, prefix):
    y = rng.standard_normal((n_speakers, dim)) * np.sqrt(B_scale)
    e = rng.standard_normal((n_speakers, utts, dim)) * np.sqrt(W_scale)
    X = (y[:, None, :] + e).reshape(-1, dim)
    spk = [f"{prefix}spk{i:04d}" for i in range(n_speakers) for _ in range(utts)]
    utt = [f"{prefix}spk{i:04d}-utt{j:03d}" for i in range(n_speakers) for j in range(utts)]
    return EmbeddingSet(X, spk, utt), y


def make_trials(rng, emb: EmbeddingSet, n_trials: int):
    """Balanced, duplicate-free target/nontarget utterance pairs."""
    names, classes = emb.speaker_index()
    n = len(emb)
    n_tar = n_trials // 2
    n_non = n_trials - n_tar
    by_spk = [np.flatnonzero(classes == c) for c in range(len(names))]
    tar_pairs = [(a, b) for idx in by_spk for a in idx for b in idx if a != b]
    if len(tar_pairs) < n_tar:
        raise ValueError(f"world has only {len(tar_pairs)} target pairs, {n_tar} requested")
    chosen = rng.choice(len(tar_pairs), size=n_tar, replace=False)
    pairs = {tar_pairs[i]: True for i in sorted(chosen)}
    max_non = n * n - sum(len(i) ** 2 for i in by_spk)
    if max_non < n_non:
        raise ValueError(f"world has only {max_non} nontarget pairs, {n_non} requested")
    while sum(not v for v in pairs.values()) < n_non:
        a, b = (int(v) for v in rng.integers(n, size=2))
        if classes[a] != classes[b] and (a, b) not in pairs:
            pairs[(a, b)] = False
    ids = emb.utterance_ids
    keys = [(ids[a], ids[b]) for a, b in pairs]
    labels = {(ids[a], ids[b]): lab for (a, b), lab in pairs.items()}
    return keys, labels


def synth_world(spec: SyntheticWorldSpec):
    """Draw a training set, an evaluation set and labelled eval trials.

    Speaker offsets are ``N(0, B_scale I)`` and utterance noise
    ``N(0, W_scale I)``; training and evaluation speakers are disjoint.

    Returns:
        ``(train, eval, (trial_keys, labels))``.
    """
    rng = np.random.default_rng(spec.seed)
    train, _ = draw_speakers(rng, spec.n_speakers, spec.utts_per_speaker, spec.dim,
                             spec.B_scale, spec.W_scale, "tr")
    n_eval = spec.n_eval_speakers or spec.n_speakers
    evl, _ = draw_speakers(rng, n_eval, spec.utts_per_speaker, spec.dim, spec.B_scale, spec.W_scale, "ev")
    return train, evl, make_trials(rng, evl, spec.n_trials)
