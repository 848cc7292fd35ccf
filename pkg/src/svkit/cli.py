"""Command-line entry point: ``svkit <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .backend import apply_transform, fit_transform, plda_train, score_trials, transform_set
from .frontend import augment, extract_features, read_wav, write_wav
from .fusion import FusionWeights, fuse, tune_weights
from .ivector import accumulate_stats, extract_ivectors, train_total_variability
from .metrics import evaluate
from .mixtures import gmm_em
from .pipeline import PipelineError, run_experiment
from .pooling import AttentionParams, pool
from .scorenorm import normalize_scores
from .synth import SyntheticWorldSpec, synth_world


class CommandError(RuntimeError):
    pass


def _read_list(path):
    """``id path`` lines, or bare paths (id = file stem)."""
    out = []
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        out.append((parts[0], parts[1]) if len(parts) == 2 else (Path(parts[0]).stem, parts[0]))
    return out


def cmd_extract(a):
    cfg = io.read_config(a.config) if a.config else {}
    kw = dict(
        n_mels=int(cfg.get("n_mels", 30)),
        n_ceps=int(cfg.get("n_ceps", 30)),
        fmin=float(cfg.get("fmin", 20)),
        fmax=float(cfg.get("fmax", 7600)),
        delta_order=int(cfg.get("delta_order", 0)),
        cmn_window_s=float(cfg.get("cmn_window", 3.0)) or None,
        vad_offset=None if cfg.get("vad", "true") == "false" else float(cfg.get("vad_offset", -1.3)),
    )
    feats = {uid: extract_features(read_wav(p), **kw) for uid, p in _read_list(a.wav_list)}
    io.save_features(a.out, feats)


def cmd_augment(a):
    pool_sigs = [read_wav(p) for _, p in _read_list(a.pool)]
    snr = (a.snr_lo, a.snr_hi) if a.snr_lo is not None and a.snr_hi is not None else None
    out_dir = Path(a.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for n, (uid, p) in enumerate(_read_list(a.wav_list)):
        sig = augment(read_wav(p), a.mode, pool_sigs, snr, seed=a.seed + n)
        write_wav(out_dir / f"{uid}-{a.mode}.wav", sig)


def cmd_train_ubm(a):
    feats = io.load_features(a.feats)
    X = np.concatenate([f.frames for f in feats.values()])
    gmm = gmm_em(X, a.num_gauss, cov_kind=a.cov, max_iter=a.iters, seed=a.seed)
    io.save_gmm(a.out, gmm)


def cmd_accumulate_stats(a):
    ubm = io.load_gmm(a.ubm)
    feats = io.load_features(a.feats)
    io.save_stats(a.out, [accumulate_stats(f, ubm, uid) for uid, f in sorted(feats.items())])


def cmd_train_ivector(a):
    ubm = io.load_gmm(a.ubm)
    model = train_total_variability(io.load_stats(a.stats), ubm, a.rank, iters=a.iters, seed=a.seed)
    io.save_tv(a.out, model)


def cmd_extract_ivector(a):
    model = io.load_tv(a.model)
    ivs = extract_ivectors(io.load_stats(a.stats), model)
    io.write_embeddings(a.out, [iv.utterance_id for iv in ivs],
                        np.array([iv.w for iv in ivs]).reshape(len(ivs), model.rank))


def cmd_pool(a):
    mode = a.mode.replace("-", "_")
    if mode.startswith("attention:"):
        mode = mode.split(":", 1)[1]
    feats = io.load_features(a.input)
    ids = sorted(feats)
    params = None
    if mode in ("learned", "split", "gated") and ids:
        params = AttentionParams.random(feats[ids[0]].dim, mode=mode, seed=a.seed)
    vecs = [pool(feats[i].frames, mode, params) for i in ids]
    io.write_embeddings(a.out, ids, np.array(vecs).reshape(len(ids), -1))


def cmd_train_backend(a):
    emb = io.read_embedding_set(a.embeddings, a.utt2spk)
    t = fit_transform(emb, a.lda_dim)
    plda = plda_train(transform_set(t, emb), iters=a.plda_iters, seed=a.seed)
    io.save_backend(a.out, t, plda)


def _processed(path, transform):
    ids, V = io.read_embeddings(path)
    if not ids:
        return {}
    return dict(zip(ids, apply_transform(transform, V.astype(np.float64))))


def _enroll_map(path, transform, spk2utt=None):
    """Processed enrollment vectors, grouped into multi-session models if a
    ``model utt1 utt2 ...`` list is given."""
    vecs = _processed(path, transform)
    if not spk2utt:
        return vecs
    out = {}
    for line in Path(spk2utt).read_text().splitlines():
        parts = line.split()
        if parts:
            out[parts[0]] = np.stack([vecs[u] for u in parts[1:]])
    return out


def cmd_score(a):
    t, plda = io.load_backend(a.model)
    keys, _ = io.read_trials(a.trials)
    scores = score_trials(plda, _enroll_map(a.enroll, t, a.enroll_map), _processed(a.test, t), keys)
    io.write_scores(a.out, scores)


def cmd_normalize(a):
    t, plda = io.load_backend(a.model)
    scores = io.read_scores(a.scores)
    _, C = io.read_embeddings(a.cohort)
    cohort = apply_transform(t, C.astype(np.float64))
    method, side = a.method, a.side
    if method == "s":
        method, side = "z", "both"
    kw = {"K": a.K, "keep_fraction": a.keep, "M": a.M, "seed": a.seed} if method == "ucsn" else {}
    normed, prov = normalize_scores(
        scores, plda, _enroll_map(a.enroll, t, a.enroll_map), _processed(a.test, t), cohort,
        method=method, side=side, pool_scope=a.scope, **kw)
    io.write_scores(a.out, normed)
    Path(a.provenance or str(a.out) + ".provenance.json").write_text(json.dumps(prov, indent=1, sort_keys=True))


def cmd_fuse(a):
    systems = [io.read_scores(p) for p in a.scores]
    if a.weights == "equal":
        w = FusionWeights.equal(len(systems))
    elif a.weights == "tuned":
        if not a.dev_scores or not a.dev_trials:
            raise CommandError("--weights tuned needs --dev-scores and --dev-trials")
        _, labels = io.read_trials(a.dev_trials)
        w = tune_weights([io.read_scores(p) for p in a.dev_scores], labels, a.grid_step, a.criterion)
    else:
        w = FusionWeights(tuple(float(x) for x in a.weights.split(",")))
    io.write_scores(a.out, fuse(systems, w))
    print("weights " + " ".join(f"{x:.4f}" for x in w.weights))


def cmd_evaluate(a):
    scores = io.read_scores(a.scores)
    _, labels = io.read_trials(a.trials)
    report = evaluate(scores, labels, a.ptar, a.cmiss, a.cfa, a.threshold)
    print(report.format(Path(a.scores).name), end="")
    if a.json:
        Path(a.json).write_text(json.dumps(report.as_dict(), indent=2))


def cmd_synth(a):
    spec = SyntheticWorldSpec(a.n_speakers, a.utts, a.dim, a.b_scale, a.w_scale, a.seed, n_trials=a.n_trials)
    train, evl, (keys, labels) = synth_world(spec)
    out = Path(a.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    io.write_embedding_set(out / "train.vvec", train)
    io.write_embedding_set(out / "eval.vvec", evl)
    io.write_trials(out / "eval.trials", keys, labels)


def cmd_run(a):
    cfg = io.read_config(a.config)
    res = run_experiment(cfg, a.out_dir)
    print((res.out_dir / "report.txt").read_text(), end="")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="svkit", description="Speaker-verification backend toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("extract", help="MFCC extraction with CMN and VAD")
    s.add_argument("--config")
    s.add_argument("--wav-list", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_extract)

    s = sub.add_parser("augment", help="reverb / music / noise augmentation")
    s.add_argument("--mode", choices=["reverb", "music", "noise"], required=True)
    s.add_argument("--wav-list", required=True)
    s.add_argument("--pool", required=True, help="list of RIR / music / noise wavs")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--snr-lo", type=float)
    s.add_argument("--snr-hi", type=float)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_augment)

    s = sub.add_parser("train-ubm")
    s.add_argument("--feats", required=True)
    s.add_argument("--num-gauss", type=int, required=True)
    s.add_argument("--cov", choices=["full", "diag"], default="diag")
    s.add_argument("--iters", type=int, default=20)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train_ubm)

    s = sub.add_parser("accumulate-stats")
    s.add_argument("--feats", required=True)
    s.add_argument("--ubm", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_accumulate_stats)

    s = sub.add_parser("train-ivector")
    s.add_argument("--stats", required=True)
    s.add_argument("--ubm", required=True)
    s.add_argument("--rank", type=int, required=True)
    s.add_argument("--iters", type=int, default=5)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train_ivector)

    s = sub.add_parser("extract-ivector")
    s.add_argument("--stats", required=True)
    s.add_argument("--model", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_extract_ivector)

    s = sub.add_parser("pool", help="network-free pooling of feature frames")
    s.add_argument("--mode", required=True,
                   help="stats | high-order | attention:{learned,split,parameter_free,gated}")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_pool)

    s = sub.add_parser("train-backend")
    s.add_argument("--embeddings", required=True)
    s.add_argument("--utt2spk")
    s.add_argument("--lda-dim", type=int)
    s.add_argument("--plda-iters", type=int, default=10)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train_backend)

    s = sub.add_parser("score")
    s.add_argument("--model", required=True)
    s.add_argument("--enroll", required=True)
    s.add_argument("--enroll-map", help="'model utt1 utt2 ...' lines for multi-session enrollment")
    s.add_argument("--test", required=True)
    s.add_argument("--trials", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_score)

    s = sub.add_parser("normalize")
    s.add_argument("--scores", required=True)
    s.add_argument("--cohort", required=True)
    s.add_argument("--model", required=True)
    s.add_argument("--enroll", required=True)
    s.add_argument("--enroll-map")
    s.add_argument("--test", required=True)
    s.add_argument("--method", choices=["z", "s", "ucsn"], default="ucsn")
    s.add_argument("--side", choices=["enroll", "test", "both"], default="enroll")
    s.add_argument("--scope", choices=["model", "global"], default="model")
    s.add_argument("--K", type=int, default=4)
    s.add_argument("--keep", type=float, default=0.3)
    s.add_argument("--M", type=int, default=2)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--provenance")
    s.set_defaults(func=cmd_normalize)

    s = sub.add_parser("fuse")
    s.add_argument("--scores", nargs="+", required=True)
    s.add_argument("--weights", default="equal", help="equal | tuned | comma-separated values")
    s.add_argument("--dev-scores", nargs="+")
    s.add_argument("--dev-trials")
    s.add_argument("--criterion", choices=["mindcf", "eer"], default="mindcf")
    s.add_argument("--grid-step", type=float, default=0.05)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_fuse)

    s = sub.add_parser("evaluate")
    s.add_argument("--scores", required=True)
    s.add_argument("--trials", required=True)
    s.add_argument("--ptar", type=float, default=0.01)
    s.add_argument("--cmiss", type=float, default=1.0)
    s.add_argument("--cfa", type=float, default=1.0)
    s.add_argument("--threshold", type=float)
    s.add_argument("--json")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("synth", help="generate a synthetic embedding world")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--n-speakers", type=int, default=200)
    s.add_argument("--utts", type=int, default=10)
    s.add_argument("--dim", type=int, default=50)
    s.add_argument("--b-scale", type=float, default=1.0)
    s.add_argument("--w-scale", type=float, default=0.5)
    s.add_argument("--n-trials", type=int, default=10000)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("run", help="run an experiment config")
    s.add_argument("--config", required=True)
    s.add_argument("--out-dir")
    s.set_defaults(func=cmd_run)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except PipelineError as exc:
        print(f"svkit {args.command}: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, KeyError, CommandError) as exc:
        print(f"svkit {args.command}: [{args.command}] {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
