"""File formats.

Embedding archive (binary, little-endian)::

    magic   4 bytes  b"VVEC"
    version uint32   1
    count   uint32
    dim     uint32
    count records of:
        id_len uint32, id utf-8 bytes, dim x float32

Score files hold ``enroll test score`` lines, trial lists ``enroll test
[target|nontarget]`` lines. Variable-shape objects (feature matrices,
Baum-Welch statistics, trained models) are stored as ``.npz`` files tagged
with a ``__kind__`` entry.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .backend import BackendTransform, EmbeddingSet, PldaModel
from .frontend import FeatureMatrix
from .ivector import BaumWelchStats, TotalVariabilityModel
from .mixtures import GaussianMixture

MAGIC = b"VVEC"
VERSION = 1
_HEADER = struct.Struct("<4sIII")
_LEN = struct.Struct("<I")


class FormatError(ValueError):
    """Malformed input file; the message names the line or byte offset."""


# ----------------------------------------------------------------------------
# Embedding archives


def write_embeddings(path, ids: Iterable[str], vectors) -> None:
    ids = [str(i) for i in ids]
    V = np.asarray(vectors, dtype="<f4")
    if V.size == 0:
        V = V.reshape(len(ids), V.shape[-1] if V.ndim == 2 else 0)
    if V.ndim != 2 or V.shape[0] != len(ids):
        raise ValueError("vectors must be an (n_ids, dim) matrix")
    if len(set(ids)) != len(ids):
        raise ValueError("embedding ids must be unique")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, len(ids), V.shape[1]))
        for i, v in zip(ids, V):
            raw = i.encode("utf-8")
            fh.write(_LEN.pack(len(raw)))
            fh.write(raw)
            fh.write(v.tobytes())


def read_embeddings(path) -> tuple[list, np.ndarray]:
    """Return ``(ids, vectors)`` with ``vectors`` as float32 ``(count, dim)``."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise FormatError(f"{path}: truncated header (offset 0)")
    magic, version, count, dim = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r} at offset 0")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version} at offset 4")
    off = _HEADER.size
    ids, rows = [], []
    for n in range(count):
        if off + _LEN.size > len(data):
            raise FormatError(f"{path}: truncated record {n} at offset {off}")
        (k,) = _LEN.unpack_from(data, off)
        off += _LEN.size
        end = off + k + 4 * dim
        if end > len(data):
            raise FormatError(f"{path}: truncated record {n} at offset {off}")
        try:
            ids.append(data[off:off + k].decode("utf-8"))
        except UnicodeDecodeError as exc:
            raise FormatError(f"{path}: invalid id in record {n} at offset {off}") from exc
        rows.append(np.frombuffer(data, dtype="<f4", count=dim, offset=off + k))
        off = end
    if off != len(data):
        raise FormatError(f"{path}: {len(data) - off} trailing bytes at offset {off}")
    if len(set(ids)) != len(ids):
        raise FormatError(f"{path}: duplicate ids")
    vectors = np.array(rows, dtype="<f4").reshape(count, dim)
    return ids, vectors


def write_embedding_set(path, emb: EmbeddingSet, spk2utt_path=None) -> None:
    """Write vectors; speaker labels go to a sidecar ``utt spk`` list."""
    write_embeddings(path, emb.utterance_ids, emb.vectors)
    side = Path(spk2utt_path) if spk2utt_path else Path(str(path) + ".utt2spk")
    lines = [f"{u} {s}" for u, s in zip(emb.utterance_ids, emb.speaker_labels)]
    side.write_text("\n".join(lines) + ("\n" if lines else ""))


def read_embedding_set(path, utt2spk_path=None) -> EmbeddingSet:
    ids, V = read_embeddings(path)
    side = Path(utt2spk_path) if utt2spk_path else Path(str(path) + ".utt2spk")
    if side.exists():
        spk = dict(_read_pairs(side))
        missing = [i for i in ids if i not in spk]
        if missing:
            raise FormatError(f"{side}: no speaker for {missing[0]!r}")
        labels = [spk[i] for i in ids]
    else:
        labels = list(ids)
    return EmbeddingSet(V.astype(np.float64), labels, ids)


def _read_pairs(path):
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        parts = line.split()
        if not parts:
            continue
        if len(parts) != 2:
            raise FormatError(f"{path}:{n}: expected two fields, got {len(parts)}")
        yield parts[0], parts[1]


# ----------------------------------------------------------------------------
# Text formats


def parse_score_line(line: str, where: str = "<string>"):
    parts = line.split()
    if len(parts) != 3:
        raise FormatError(f"{where}: expected 'enroll test score', got {line!r}")
    try:
        value = float(parts[2])
    except ValueError:
        raise FormatError(f"{where}: bad score {parts[2]!r}") from None
    if not np.isfinite(value):
        raise FormatError(f"{where}: non-finite score")
    return (parts[0], parts[1]), value


def read_scores(path) -> dict:
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        key, value = parse_score_line(line, f"{path}:{n}")
        if key in out:
            raise FormatError(f"{path}:{n}: duplicate trial {key}")
        out[key] = value
    return out


def write_scores(path, scores: Mapping) -> None:
    with open(path, "w") as fh:
        for (e, t), s in scores.items():
            fh.write(f"{e} {t} {float(s)!r}\n")


def read_trials(path) -> tuple[list, dict]:
    """Return the ordered trial keys and a label map (empty if unlabelled)."""
    keys, labels, seen = [], {}, set()
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        parts = line.split()
        if not parts:
            continue
        if len(parts) not in (2, 3):
            raise FormatError(f"{path}:{n}: expected 'enroll test [target|nontarget]'")
        key = (parts[0], parts[1])
        if key in seen:
            raise FormatError(f"{path}:{n}: duplicate trial {key}")
        seen.add(key)
        if len(parts) == 3:
            if parts[2] not in ("target", "nontarget"):
                raise FormatError(f"{path}:{n}: label must be target or nontarget, got {parts[2]!r}")
            labels[key] = parts[2] == "target"
        keys.append(key)
    if labels and len(labels) != len(keys):
        raise FormatError(f"{path}: some trials are unlabelled")
    return keys, labels


def write_trials(path, keys, labels: Mapping | None = None) -> None:
    with open(path, "w") as fh:
        for e, t in keys:
            if labels:
                fh.write(f"{e} {t} {'target' if labels[(e, t)] else 'nontarget'}\n")
            else:
                fh.write(f"{e} {t}\n")


# ----------------------------------------------------------------------------
# Config


def read_config(path, _seen=None) -> dict:
    """Flat ``key = value`` config with ``#`` comments and ``include <file>``.

    Included files are resolved relative to the including file; later keys
    override earlier ones.
    """
    path = Path(path).resolve()
    seen = set() if _seen is None else _seen
    if path in seen:
        raise FormatError(f"{path}: include cycle")
    seen.add(path)
    out = {}
    for n, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("include "):
            out.update(read_config(path.parent / line[8:].strip(), seen))
            continue
        if "=" not in line:
            raise FormatError(f"{path}:{n}: expected 'key = value'")
        key, value = (x.strip() for x in line.split("=", 1))
        if not key:
            raise FormatError(f"{path}:{n}: empty key")
        out[key] = value
    seen.discard(path)
    return out


# ----------------------------------------------------------------------------
# npz-backed objects


def _save(path, kind, **arrays):
    with open(path, "wb") as fh:
        np.savez(fh, __kind__=np.array(kind), **arrays)


def _load(path, kind):
    with np.load(path, allow_pickle=False) as z:
        got = str(z["__kind__"]) if "__kind__" in z else None
        if got != kind:
            raise FormatError(f"{path}: expected a {kind} file, found {got}")
        return {k: z[k] for k in z.files if k != "__kind__"}


def save_gmm(path, gmm: GaussianMixture) -> None:
    _save(path, "gmm", weights=gmm.weights, means=gmm.means, covariances=gmm.covariances,
          cov_kind=np.array(gmm.cov_kind))


def load_gmm(path) -> GaussianMixture:
    z = _load(path, "gmm")
    return GaussianMixture(z["weights"], z["means"], z["covariances"], str(z["cov_kind"]))


def save_tv(path, model: TotalVariabilityModel) -> None:
    u = model.ubm
    _save(path, "tv", T=model.T, weights=u.weights, means=u.means, covariances=u.covariances,
          cov_kind=np.array(u.cov_kind))


def load_tv(path) -> TotalVariabilityModel:
    z = _load(path, "tv")
    ubm = GaussianMixture(z["weights"], z["means"], z["covariances"], str(z["cov_kind"]))
    return TotalVariabilityModel(z["T"], ubm)


def save_backend(path, transform: BackendTransform, plda: PldaModel) -> None:
    _save(path, "backend", global_mean=transform.global_mean, lda=transform.lda,
          target_norm=np.array(transform.target_norm), mu=plda.mu, B=plda.B, W=plda.W)


def load_backend(path) -> tuple[BackendTransform, PldaModel]:
    z = _load(path, "backend")
    t = BackendTransform(z["global_mean"], z["lda"], float(z["target_norm"]))
    return t, PldaModel(z["mu"], z["B"], z["W"])


def save_features(path, feats: Mapping[str, FeatureMatrix]) -> None:
    arrays = {}
    for uid, f in feats.items():
        arrays[f"feat/{uid}"] = f.frames
        arrays[f"shift/{uid}"] = np.array(f.frame_shift)
    _save(path, "features", **arrays)


def load_features(path) -> dict:
    z = _load(path, "features")
    return {k[5:]: FeatureMatrix(v, float(z[f"shift/{k[5:]}"])) for k, v in z.items() if k.startswith("feat/")}


def save_stats(path, stats: Iterable[BaumWelchStats]) -> None:
    arrays = {}
    for s in stats:
        arrays[f"n/{s.utterance_id}"] = s.zero_order
        arrays[f"f/{s.utterance_id}"] = s.first_order
    _save(path, "stats", **arrays)


def load_stats(path) -> list:
    z = _load(path, "stats")
    return [BaumWelchStats(z[k], z["f/" + k[2:]], k[2:]) for k in sorted(z) if k.startswith("n/")]
