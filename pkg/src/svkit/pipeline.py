"""Experiment orchestration: sub-system scoring, normalization, fusion and
evaluation, with every intermediate artifact written to ``out_dir``.

Presets:
    system1  equal-weight fusion of all sub-systems
    system2  UCSN per sub-system, then fusion with dev-tuned weights
    system3  dev-tuned fusion of raw scores
    single   each sub-system evaluated on its own, no fusion
"""

from __future__ import annotations

import hashlib
import json
import logging
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .backend import EmbeddingSet, fit_transform, plda_train, score_trials, select_longest, transform_set
from .fusion import FusionWeights, fuse, tune_weights
from .metrics import MetricReport, evaluate
from .scorenorm import normalize_scores
from .synth import SyntheticWorldSpec, synth_world

log = logging.getLogger(__name__)

PRESETS = ("system1", "system2", "system3", "single")

DEFAULTS = {
    "preset": "system1",
    "seed": "0",
    "source": "synthetic",
    "subsystems": "a,b,c",
    "world.n_speakers": "200",
    "world.utts_per_speaker": "10",
    "world.dim": "50",
    "world.B_scale": "1.0",
    "world.W_scale": "0.5",
    "world.n_trials": "2000",
    "world.n_eval_speakers": "100",
    "backend.lda_dim": "",
    "backend.plda_iters": "10",
    "backend.max_train": "200000",
    "norm.method": "ucsn",
    "norm.side": "enroll",
    "norm.scope": "model",
    "norm.K": "4",
    "norm.keep": "0.3",
    "norm.M": "2",
    "norm.cohort_size": "400",
    "fusion.grid_step": "0.05",
    "fusion.criterion": "mindcf",
    "metrics.p_target": "0.01",
    "metrics.c_miss": "1",
    "metrics.c_fa": "1",
}


class PipelineError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


@contextmanager
def stage(name: str):
    log.info("stage %s", name)
    try:
        yield
    except PipelineError:
        raise
    except Exception as exc:
        raise PipelineError(name, exc) from exc


@dataclass
class ExperimentResult:
    report: MetricReport
    subsystem_reports: dict
    weights: tuple
    manifest: dict
    out_dir: Path
    fused_scores: dict = field(repr=False, default_factory=dict)


def config_hash(cfg: dict) -> str:
    blob = json.dumps(sorted(cfg.items())).encode()
    return hashlib.sha256(blob).hexdigest()


def _sub_get(cfg, name, key, default=None):
    return cfg.get(f"sub.{name}.{key}", cfg.get(key, default))


# ----------------------------------------------------------------------------
# Data sources


def _view(emb: EmbeddingSet, A: np.ndarray, noise: float, rng) -> EmbeddingSet:
    V = emb.vectors @ A.T
    if noise > 0:
        V = V + noise * rng.standard_normal(V.shape)
    return emb.with_vectors(V)


def synthetic_subsystems(cfg: dict, names: list) -> dict:
    """Each sub-system sees the same latent world through its own random
    linear map plus its own observation noise."""
    seed = int(cfg["seed"])
    spec = dict(
        n_speakers=int(cfg["world.n_speakers"]),
        utts_per_speaker=int(cfg["world.utts_per_speaker"]),
        dim=int(cfg["world.dim"]),
        B_scale=float(cfg["world.B_scale"]),
        W_scale=float(cfg["world.W_scale"]),
        n_trials=int(cfg["world.n_trials"]),
        n_eval_speakers=int(cfg["world.n_eval_speakers"]),
    )
    train, dev, dev_trials = synth_world(SyntheticWorldSpec(seed=seed, **spec))
    _, evl, eval_trials = synth_world(SyntheticWorldSpec(seed=seed + 1, **spec))
    dim = spec["dim"]
    out = {}
    for i, name in enumerate(names):
        rng = np.random.default_rng([seed, 7919, i])
        view_dim = int(_sub_get(cfg, name, "view_dim", dim))
        noise = float(_sub_get(cfg, name, "noise", 0.3 + 0.2 * i))
        A = rng.standard_normal((view_dim, dim)) / np.sqrt(dim)
        out[name] = {
            "train": _view(train, A, noise, rng),
            "dev": _view(dev, A, noise, rng),
            "eval": _view(evl, A, noise, rng),
        }
    return out, dev_trials, eval_trials


def archive_subsystems(cfg: dict, names: list) -> tuple:
    out = {}
    for name in names:
        out[name] = {part: io.read_embedding_set(_sub_get(cfg, name, part)) for part in ("train", "dev", "eval")}
    dev_keys, dev_labels = io.read_trials(cfg["dev_trials"])
    eval_keys, eval_labels = io.read_trials(cfg["eval_trials"])
    return out, (dev_keys, dev_labels), (eval_keys, eval_labels)


# ----------------------------------------------------------------------------


def _norm_kwargs(cfg):
    if cfg["norm.method"] != "ucsn":
        return {}
    return {"K": int(cfg["norm.K"]), "keep_fraction": float(cfg["norm.keep"]),
            "M": int(cfg["norm.M"]), "seed": int(cfg["seed"])}


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(type(obj))


def run_experiment(config: dict, out_dir=None) -> ExperimentResult:
    """Run a declared scoring experiment and write all artifacts.

    Args:
        config: flat key/value mapping (see ``DEFAULTS``); values may be strings.
        out_dir: overrides ``config['out_dir']``.
    """
    cfg = dict(DEFAULTS)
    cfg.update({k: str(v) for k, v in config.items()})
    preset = cfg["preset"]
    if preset not in PRESETS:
        raise PipelineError("config", ValueError(f"unknown preset {preset!r}"))
    out = Path(out_dir or cfg.get("out_dir") or "experiment")
    out.mkdir(parents=True, exist_ok=True)
    names = [n.strip() for n in cfg["subsystems"].split(",") if n.strip()]
    artifacts = []
    cost = dict(p_target=float(cfg["metrics.p_target"]), c_miss=float(cfg["metrics.c_miss"]),
                c_fa=float(cfg["metrics.c_fa"]))

    def save_scores(name, scores):
        path = out / name
        io.write_scores(path, scores)
        artifacts.append(name)

    with stage("load"):
        if cfg["source"] == "synthetic":
            data, (dev_keys, dev_labels), (eval_keys, eval_labels) = synthetic_subsystems(cfg, names)
        elif cfg["source"] == "archives":
            data, (dev_keys, dev_labels), (eval_keys, eval_labels) = archive_subsystems(cfg, names)
        else:
            raise ValueError(f"unknown source {cfg['source']!r}")
        io.write_trials(out / "dev.trials", dev_keys, dev_labels)
        io.write_trials(out / "eval.trials", eval_keys, eval_labels)
        artifacts += ["dev.trials", "eval.trials"]

    dev_scores, eval_scores, sub_reports = {}, {}, {}
    for name in names:
        parts = data[name]
        with stage(f"backend:{name}"):
            train = select_longest(parts["train"], int(cfg["backend.max_train"]))
            lda_dim = _sub_get(cfg, name, "backend.lda_dim", "")
            transform = fit_transform(train, int(lda_dim) if lda_dim else None)
            train_t = transform_set(transform, train)
            plda = plda_train(train_t, iters=int(_sub_get(cfg, name, "backend.plda_iters")), seed=int(cfg["seed"]))
            io.save_backend(out / f"{name}.backend.npz", transform, plda)
            artifacts.append(f"{name}.backend.npz")
        with stage(f"score:{name}"):
            dev_emb = transform_set(transform, parts["dev"]).by_id()
            ev_emb = transform_set(transform, parts["eval"]).by_id()
            dev_s = score_trials(plda, dev_emb, dev_emb, dev_keys)
            ev_s = score_trials(plda, ev_emb, ev_emb, eval_keys)
            save_scores(f"{name}.dev.scores", dev_s)
            save_scores(f"{name}.eval.scores", ev_s)
        if preset == "system2":
            with stage(f"normalize:{name}"):
                cohort = train_t.subset(np.arange(min(len(train_t), int(cfg["norm.cohort_size"]))))
                kw = dict(method=cfg["norm.method"], side=cfg["norm.side"], pool_scope=cfg["norm.scope"],
                          **_norm_kwargs(cfg))
                dev_s, dev_prov = normalize_scores(dev_s, plda, dev_emb, dev_emb, cohort, **kw)
                ev_s, ev_prov = normalize_scores(ev_s, plda, ev_emb, ev_emb, cohort, **kw)
                save_scores(f"{name}.dev.norm.scores", dev_s)
                save_scores(f"{name}.eval.norm.scores", ev_s)
                (out / f"{name}.norm.json").write_text(
                    json.dumps({"dev": dev_prov, "eval": ev_prov}, default=_json_default, sort_keys=True))
                artifacts += [f"{name}.norm.json"]
        dev_scores[name], eval_scores[name] = dev_s, ev_s
        with stage(f"evaluate:{name}"):
            sub_reports[name] = evaluate(ev_s, eval_labels, **cost)

    with stage("fuse"):
        systems_dev = [dev_scores[n] for n in names]
        systems_eval = [eval_scores[n] for n in names]
        if preset in ("system2", "system3"):
            weights = tune_weights(systems_dev, dev_labels, float(cfg["fusion.grid_step"]),
                                   cfg["fusion.criterion"], **cost)
        else:
            weights = FusionWeights.equal(len(names))
        if preset == "single":
            fused = systems_eval[0]
        else:
            fused = fuse(systems_eval, weights)
        save_scores("fused.eval.scores", fused)

    with stage("evaluate"):
        report = evaluate(fused, eval_labels, **cost)
        lines = ["System\t" + "\t".join(MetricReport.COLUMNS)]
        for n in names:
            lines.append(n + "\t" + "\t".join(f"{v:.4f}" for v in sub_reports[n].row()))
        lines.append(preset + "\t" + "\t".join(f"{v:.4f}" for v in report.row()))
        (out / "report.txt").write_text("\n".join(lines) + "\n")
        (out / "report.json").write_text(json.dumps(
            {"fused": report.as_dict(), "subsystems": {n: r.as_dict() for n, r in sub_reports.items()},
             "weights": dict(zip(names, weights.weights))}, indent=2, sort_keys=True))
        artifacts += ["report.txt", "report.json"]

    manifest = {
        "config": cfg,
        "config_hash": config_hash(cfg),
        "seed": int(cfg["seed"]),
        "preset": preset,
        "subsystems": names,
        "weights": list(weights.weights),
        "artifacts": {a: hashlib.sha256((out / a).read_bytes()).hexdigest() for a in artifacts},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return ExperimentResult(report, sub_reports, weights.weights, manifest, out, fused)
