"""Waveform ingestion, MFCC extraction, deltas, sliding CMN, energy VAD and
data augmentation (reverberation, music and interval noise)."""

from __future__ import annotations

import wave
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.fft import dct, rfft
from scipy.signal import fftconvolve


class ParameterError(ValueError):
    """Raised for invalid front-end configuration values."""


@dataclass(frozen=True)
class AudioSignal:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError("audio must be mono (1-D samples)")
        if int(self.sample_rate) <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(samples)):
            raise ValueError("audio samples must be finite")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


@dataclass(frozen=True)
class FeatureMatrix:
    frames: np.ndarray
    frame_shift: float = 0.01
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 2 or frames.shape[1] == 0:
            raise ValueError(f"features must be a T x D matrix with D > 0, got {frames.shape}")
        if not np.all(np.isfinite(frames)):
            raise ValueError("feature entries must be finite")
        object.__setattr__(self, "frames", frames)

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]

    def select(self, mask) -> "FeatureMatrix":
        """Return the frames where ``mask`` is true (e.g. a VAD decision)."""
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (self.num_frames,):
            raise ValueError("mask length does not match number of frames")
        return FeatureMatrix(self.frames[mask], self.frame_shift, dict(self.meta))


# ----------------------------------------------------------------------------
# I/O


def read_wav(path) -> AudioSignal:
    """Read a 16-bit PCM mono RIFF/WAVE file, scaled to [-1, 1)."""
    try:
        with wave.open(str(path), "rb") as fh:
            channels = fh.getnchannels()
            width = fh.getsampwidth()
            rate = fh.getframerate()
            raw = fh.readframes(fh.getnframes())
    except wave.Error as exc:
        raise ValueError(f"{path}: not a PCM RIFF/WAVE file ({exc})") from exc
    if channels != 1:
        raise ValueError(f"{path}: expected mono audio, got {channels} channels")
    if width != 2:
        raise ValueError(f"{path}: expected 16-bit PCM, got {8 * width}-bit samples")
    pcm = np.frombuffer(raw, dtype="<i2")
    return AudioSignal(pcm.astype(np.float64) / 32768.0, rate)


def write_wav(path, signal: AudioSignal) -> None:
    pcm = np.clip(np.round(signal.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(signal.sample_rate)
        fh.writeframes(pcm.tobytes())


# ----------------------------------------------------------------------------
# Framing and MFCC


def frame_geometry(sample_rate: int, win_s: float, hop_s: float) -> tuple[int, int]:
    """Window and hop lengths in samples."""
    if win_s <= 0 or hop_s <= 0:
        raise ParameterError("window and hop must be positive")
    if win_s < hop_s:
        raise ParameterError("window must not be shorter than hop")
    win = int(round(win_s * sample_rate))
    hop = int(round(hop_s * sample_rate))
    if win < 1 or hop < 1:
        raise ParameterError("window/hop shorter than one sample")
    return win, hop


def num_frames(n_samples: int, win: int, hop: int) -> int:
    if n_samples < win:
        return 0
    return (n_samples - win) // hop + 1


def frame_signal(signal: AudioSignal, win_s: float = 0.025, hop_s: float = 0.010) -> np.ndarray:
    """Slice a signal into overlapping frames.

    Frame ``t`` covers samples ``[t*hop, t*hop + win)``; trailing samples that
    do not fill a whole window are dropped.

    Returns:
        ``(T, win)`` array (a copy, safe to modify).
    """
    win, hop = frame_geometry(signal.sample_rate, win_s, hop_s)
    T = num_frames(len(signal), win, hop)
    if T == 0:
        return np.zeros((0, win))
    view = np.lib.stride_tricks.sliding_window_view(signal.samples, win)[::hop]
    return np.array(view[:T])


def hz_to_mel(f):
    return 1127.0 * np.log1p(np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * np.expm1(np.asarray(m, dtype=np.float64) / 1127.0)


def mel_center_frequencies(n_mels: int, fmin: float, fmax: float) -> np.ndarray:
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    return edges[1:-1]


def mel_filterbank(n_mels: int, n_fft: int, sample_rate: int, fmin: float, fmax: float) -> np.ndarray:
    """Triangular mel filters evaluated on the rfft bin grid.

    Returns:
        ``(n_mels, n_fft // 2 + 1)`` weight matrix. Triangles are built in the
        mel domain with apexes at equally spaced mel frequencies.
    """
    if not 0 <= fmin < fmax <= sample_rate / 2:
        raise ParameterError(f"need 0 <= fmin < fmax <= Nyquist ({sample_rate / 2} Hz)")
    mel_edges = np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2)
    bin_mel = hz_to_mel(np.arange(n_fft // 2 + 1) * sample_rate / n_fft)
    left, center, right = mel_edges[:-2, None], mel_edges[1:-1, None], mel_edges[2:, None]
    rising = (bin_mel - left) / (center - left)
    falling = (right - bin_mel) / (right - center)
    return np.maximum(0.0, np.minimum(rising, falling))


def _next_pow2(n: int) -> int:
    return 1 << max(0, int(n - 1).bit_length())


def _window(kind: str, n: int) -> np.ndarray:
    if kind == "hamming":
        return np.hamming(n)
    if kind == "hann":
        return np.hanning(n)
    if kind == "povey":
        return np.hanning(n) ** 0.85
    if kind == "rectangular":
        return np.ones(n)
    raise ParameterError(f"unknown window type {kind!r}")


def power_spectrum(frames: np.ndarray, n_fft: int) -> np.ndarray:
    return np.abs(rfft(frames, n=n_fft, axis=1)) ** 2


def mel_energies(
    signal: AudioSignal,
    n_mels: int = 30,
    fmin: float = 20.0,
    fmax: float = 7600.0,
    win_s: float = 0.025,
    hop_s: float = 0.010,
    preemph: float = 0.97,
    window: str = "hamming",
) -> np.ndarray:
    """Linear (not log) mel filterbank energies, shape ``(T, n_mels)``."""
    frames = frame_signal(signal, win_s, hop_s)
    win = frames.shape[1]
    n_fft = _next_pow2(win)
    fbank = mel_filterbank(n_mels, n_fft, signal.sample_rate, fmin, fmax)
    if frames.shape[0] == 0:
        return np.zeros((0, n_mels))
    if preemph:
        frames = np.concatenate([frames[:, :1] * (1.0 - preemph), frames[:, 1:] - preemph * frames[:, :-1]], axis=1)
    frames = frames * _window(window, win)
    return power_spectrum(frames, n_fft) @ fbank.T


def mfcc(
    signal: AudioSignal,
    n_mels: int = 30,
    fmin: float = 20.0,
    fmax: float = 7600.0,
    n_ceps: int = 30,
    include_c0: bool = True,
    win_s: float = 0.025,
    hop_s: float = 0.010,
    preemph: float = 0.97,
    window: str = "hamming",
    log_floor: float = 1e-10,
) -> FeatureMatrix:
    """Compute MFCCs.

    Pipeline: per-frame pre-emphasis, window, power spectrum (FFT size is the
    next power of two of the window), mel filterbank, floored log, DCT-II
    (orthonormal). With ``include_c0`` the first coefficient is kept,
    otherwise coefficients ``1..n_ceps`` are returned.
    """
    if fmax > signal.sample_rate / 2:
        raise ParameterError(f"fmax {fmax} exceeds Nyquist {signal.sample_rate / 2}")
    first = 0 if include_c0 else 1
    if n_ceps < 1 or n_ceps + first > n_mels:
        raise ParameterError("n_ceps must be in [1, n_mels] (n_mels - 1 without c0)")
    energies = mel_energies(signal, n_mels, fmin, fmax, win_s, hop_s, preemph, window)
    logmel = np.log(np.maximum(energies, log_floor))
    ceps = dct(logmel, type=2, axis=1, norm="ortho")[:, first:first + n_ceps]
    meta = {"kind": "mfcc", "n_mels": n_mels, "include_c0": include_c0, "delta_order": 0}
    return FeatureMatrix(ceps.reshape(-1, n_ceps), hop_s, meta)


# ----------------------------------------------------------------------------
# Post-processing


def _delta(x: np.ndarray, context: int) -> np.ndarray:
    T = x.shape[0]
    padded = np.concatenate([np.repeat(x[:1], context, axis=0), x, np.repeat(x[-1:], context, axis=0)])
    num = np.zeros_like(x)
    for n in range(1, context + 1):
        num += n * (padded[context + n:context + n + T] - padded[context - n:context - n + T])
    return num / (2.0 * sum(n * n for n in range(1, context + 1)))


def add_deltas(feat: FeatureMatrix, order: int = 2, context: int = 2) -> FeatureMatrix:
    """Append regression deltas (and delta-deltas for ``order=2``).

    Edges are handled by replicating the first/last frame.
    """
    if order not in (1, 2):
        raise ParameterError("delta order must be 1 or 2")
    if context < 1:
        raise ParameterError("delta context must be >= 1")
    if feat.num_frames < 1:
        raise ParameterError("need at least one frame")
    blocks = [feat.frames]
    for _ in range(order):
        blocks.append(_delta(blocks[-1], context))
    meta = dict(feat.meta, delta_order=order)
    return FeatureMatrix(np.concatenate(blocks, axis=1), feat.frame_shift, meta)


def sliding_window_bounds(T: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    """Start/stop indices of the centered, edge-truncated window per frame."""
    t = np.arange(T)
    start = np.clip(t - width // 2, 0, T)
    stop = np.clip(t - width // 2 + width, 0, T)
    return start, stop


def sliding_cmn(feat: FeatureMatrix, window_s: float = 3.0) -> FeatureMatrix:
    """Subtract a per-dimension sliding-window mean from every frame."""
    if window_s <= 0:
        raise ParameterError("CMN window must be positive")
    width = max(1, int(round(window_s / feat.frame_shift)))
    T = feat.num_frames
    if T == 0:
        return feat
    start, stop = sliding_window_bounds(T, width)
    csum = np.concatenate([np.zeros((1, feat.dim)), np.cumsum(feat.frames, axis=0)])
    means = (csum[stop] - csum[start]) / (stop - start)[:, None]
    return FeatureMatrix(feat.frames - means, feat.frame_shift, dict(feat.meta))


def energy_vad(feat: FeatureMatrix, threshold_offset: float = -1.3, energy_dim: int = 0) -> np.ndarray:
    """Keep frames whose log-energy exceeds the utterance mean plus an offset.

    ``energy_dim`` selects the column holding log-energy (c0 for MFCCs).
    """
    if feat.num_frames == 0:
        return np.zeros(0, dtype=bool)
    energy = feat.frames[:, energy_dim]
    return energy > energy.mean() + threshold_offset


# ----------------------------------------------------------------------------
# Augmentation


def reverberate(signal: AudioSignal, rir: AudioSignal) -> AudioSignal:
    """Convolve with a room impulse response, keeping the original length.

    Output is rescaled to unit peak only if it would otherwise clip.
    """
    if signal.sample_rate != rir.sample_rate:
        raise ValueError(f"sample-rate mismatch: signal {signal.sample_rate} Hz, rir {rir.sample_rate} Hz")
    h = rir.samples
    nz = np.flatnonzero(h)
    n = len(signal)
    if nz.size == 0 or n == 0:
        return AudioSignal(np.zeros(n), signal.sample_rate)
    # leading zeros are a pure delay, trailing zeros never reach the output
    delay, h = int(nz[0]), h[nz[0]:nz[-1] + 1]
    x = signal.samples[:max(0, n - delay)]
    if h.size <= 64 or x.size <= 64:
        y = np.convolve(x, h)[:x.size]
    else:
        y = fftconvolve(x, h)[:x.size]
    out = np.concatenate([np.zeros(n - x.size), y])
    peak = np.max(np.abs(out))
    if peak > 1.0:
        out = out / peak
    return AudioSignal(out, signal.sample_rate)


def fit_length(noise: np.ndarray, n: int) -> np.ndarray:
    """Trim or tile ``noise`` to exactly ``n`` samples."""
    if noise.size == 0:
        raise ValueError("noise signal is empty")
    reps = -(-n // noise.size)
    return np.tile(noise, reps)[:n]


def power(x: np.ndarray) -> float:
    return float(np.mean(np.square(x))) if x.size else 0.0


def snr_gain(speech: np.ndarray, noise: np.ndarray, snr_db: float) -> float:
    """Scale factor for ``noise`` giving ``snr_db`` against ``speech``."""
    ps, pn = power(speech), power(noise)
    if ps <= 0:
        raise ValueError("speech has zero power")
    if pn <= 0:
        raise ValueError("noise has zero power")
    return float(np.sqrt(ps / (pn * 10.0 ** (snr_db / 10.0))))


def measure_snr(speech: np.ndarray, noise: np.ndarray) -> float:
    return 10.0 * np.log10(power(speech) / power(noise))


def mix_at_snr(speech: AudioSignal, noise: AudioSignal, snr_db: float) -> AudioSignal:
    """Add ``noise`` (tiled/trimmed to length) at the requested full-utterance SNR."""
    if speech.sample_rate != noise.sample_rate:
        raise ValueError("sample-rate mismatch between speech and noise")
    n = fit_length(noise.samples, len(speech))
    g = snr_gain(speech.samples, n, snr_db)
    return AudioSignal(speech.samples + g * n, speech.sample_rate)


def interval_onsets(n_samples: int, sample_rate: int, interval_s: float) -> np.ndarray:
    step = int(round(interval_s * sample_rate))
    if step < 1:
        raise ParameterError("noise interval must be at least one sample")
    return np.arange(0, n_samples, step)


def add_interval_noise(
    speech: AudioSignal,
    noise_pool: Sequence[AudioSignal],
    snr_db,
    interval_s: float = 1.0,
    seed: int = 0,
) -> AudioSignal:
    """Add a random noise snippet at every interval boundary.

    Each snippet is cut to the interval (or to the noise length, whichever is
    shorter) and scaled against the speech it overlaps. ``snr_db`` is a float
    or a ``(lo, hi)`` range drawn uniformly per onset. Silent snippets and
    silent speech segments are skipped.
    """
    if not noise_pool:
        raise ValueError("noise pool is empty")
    if interval_s <= 0:
        raise ParameterError("interval must be positive")
    rng = np.random.default_rng(seed)
    out = speech.samples.copy()
    step = int(round(interval_s * speech.sample_rate))
    for onset in interval_onsets(len(speech), speech.sample_rate, interval_s):
        noise = noise_pool[int(rng.integers(len(noise_pool)))]
        snr = float(rng.uniform(*snr_db)) if np.ndim(snr_db) else float(snr_db)
        length = min(step, noise.samples.size, len(speech) - onset)
        seg = speech.samples[onset:onset + length]
        snippet = noise.samples[:length]
        if power(snippet) == 0.0 or power(seg) == 0.0:
            continue
        out[onset:onset + length] += snr_gain(seg, snippet, snr) * snippet
    return AudioSignal(out, speech.sample_rate)


def augment(
    signal: AudioSignal,
    mode: str,
    pool: Sequence[AudioSignal],
    snr_range: tuple[float, float] | None = None,
    seed: int = 0,
) -> AudioSignal:
    """Apply one augmentation recipe.

    ``reverb`` convolves with a random RIR from ``pool`` (no additive noise);
    ``music`` mixes one random track over the whole utterance (5-15 dB by
    default); ``noise`` adds snippets at one-second intervals (0-15 dB).
    """
    if not pool:
        raise ValueError(f"{mode}: empty source pool")
    rng = np.random.default_rng(seed)
    if mode == "reverb":
        return reverberate(signal, pool[int(rng.integers(len(pool)))])
    if mode == "music":
        lo, hi = snr_range or (5.0, 15.0)
        track = pool[int(rng.integers(len(pool)))]
        return mix_at_snr(signal, track, float(rng.uniform(lo, hi)))
    if mode == "noise":
        lo, hi = snr_range or (0.0, 15.0)
        return add_interval_noise(signal, pool, (lo, hi), 1.0, seed=int(rng.integers(2**31)))
    raise ParameterError(f"unknown augmentation mode {mode!r}")


def extract_features(
    signal: AudioSignal,
    n_mels: int = 30,
    n_ceps: int = 30,
    fmin: float = 20.0,
    fmax: float = 7600.0,
    include_c0: bool = True,
    delta_order: int = 0,
    cmn_window_s: float | None = 3.0,
    vad_offset: float | None = -1.3,
) -> FeatureMatrix:
    """MFCC -> optional deltas -> sliding CMN -> energy VAD.

    VAD is decided on the raw c0 column before mean normalization.
    """
    if vad_offset is not None and not include_c0:
        raise ParameterError("energy VAD needs the c0 column; set include_c0 or disable VAD")
    feat = mfcc(signal, n_mels=n_mels, fmin=fmin, fmax=fmax, n_ceps=n_ceps, include_c0=include_c0)
    keep = energy_vad(feat, vad_offset) if vad_offset is not None else None
    if delta_order and feat.num_frames:
        feat = add_deltas(feat, delta_order)
    if cmn_window_s:
        feat = sliding_cmn(feat, cmn_window_s)
    if keep is not None:
        feat = feat.select(keep)
    return feat
