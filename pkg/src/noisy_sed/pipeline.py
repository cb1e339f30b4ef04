"""Pipeline commands: generate, extract, train, pseudo-label, evaluate, ensemble.

Each ``cmd_*`` function takes a :class:`RunConfig` and works on the directories
it names. Outputs are written atomically, so a failed command leaves the
previous state intact.
"""
from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import features as feat
from .config import RunConfig
from .datagen import SUBSETS, Dataset, generate, make_folds, read_dataset, signature, split_fold
from .evaluation import (
    Candidate, DetectionEvent, ScoreReport, ensemble_combine, events_to_grid, score, select, write_events,
    write_report,
)
from .evaluation.report import decode_all
from .rcrnn import ModelParams, StrongPrediction, predict
from .tensor_core.checkpoint import atomic_write_bytes, save_arrays
from .tensor_core.memory import tune_allocator
from .training import (
    STRONG, UNLABELED, WEAK, ClipRecord, load_params, pseudo_label, self_training, train_mean_teacher,
)

log = logging.getLogger(__name__)

TRAIN_SUBSETS = ("strong", "weak", "unlabeled")


class PipelineError(RuntimeError):
    pass


def _write_json(path: Path, obj) -> None:
    atomic_write_bytes(path, (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode())


# -- gen ------------------------------------------------------------------------

def cmd_gen(cfg: RunConfig) -> Dataset:
    root = cfg.path("data_root")
    log.info("generating %s into %s", cfg.scene.subset_sizes(), root)
    return generate(cfg.scene, root)


# -- extract --------------------------------------------------------------------

def feature_dir(cfg: RunConfig) -> Path:
    return cfg.path("cache_dir") / f"features-{cfg.features.fingerprint()}"


def _dataset(cfg: RunConfig) -> Dataset:
    root = cfg.path("data_root")
    if not (root / "manifest.tsv").exists():
        raise PipelineError(f"no dataset at {root} (missing manifest.tsv); run 'gen' first")
    return read_dataset(root)


@dataclass
class ExtractSummary:
    extracted: int
    cached: int
    norm_stats: feat.NormStats


def cmd_extract(cfg: RunConfig) -> ExtractSummary:
    """Log-mel features for every manifest clip, skipping clips whose WAV digest is unchanged.

    Normalization statistics are fitted on the training subsets and refitted
    only when some feature was (re)computed.
    """
    ds = _dataset(cfg)
    out = feature_dir(cfg)
    extracted = cached = 0
    for row in ds.rows:
        wav = ds.root / row.path
        if not wav.exists():
            raise PipelineError(f"audio file for clip {row.clip_id} not found: {wav}")
        digest = feat.file_digest(wav)
        target = out / f"{row.clip_id}.feat"
        if target.exists():
            _, meta = feat.load_features(target)
            if meta.get("source_sha256") == digest and meta.get("feature_config") == cfg.features.fingerprint():
                cached += 1
                continue
        spec = feat.extract(feat.read_wav(wav), cfg.features)
        feat.save_features(target, spec, digest, cfg.features)
        extracted += 1
    stats_path = out / "norm_stats.arr"
    if extracted or not stats_path.exists():
        train_rows = [r for r in ds.rows if r.subset in TRAIN_SUBSETS]
        if not train_rows:
            raise PipelineError("no training clips to fit normalization statistics on")
        stats = feat.fit_norm_stats(feat.load_features(out / f"{r.clip_id}.feat")[0] for r in train_rows)
        feat.save_norm_stats(stats_path, stats)
    else:
        stats = feat.load_norm_stats(stats_path)
    log.info("features: %d extracted, %d cached", extracted, cached)
    return ExtractSummary(extracted, cached, stats)


def load_records(cfg: RunConfig, ds: Optional[Dataset] = None) -> dict[str, list[ClipRecord]]:
    """Normalized cached features as training records, grouped by subset."""
    ds = ds or _dataset(cfg)
    fdir = feature_dir(cfg)
    stats_path = fdir / "norm_stats.arr"
    if not stats_path.exists():
        raise PipelineError(f"no feature cache at {fdir}; run 'extract' first")
    stats = feat.load_norm_stats(stats_path)
    index = {n: i for i, n in enumerate(ds.class_names)}
    t_out, k = cfg.output_frames, cfg.model.n_classes
    out: dict[str, list[ClipRecord]] = {s: [] for s in SUBSETS}
    for row in ds.rows:
        path = fdir / f"{row.clip_id}.feat"
        if not path.exists():
            raise PipelineError(f"clip {row.clip_id} missing from feature cache {fdir}; run 'extract'")
        spec, _ = feat.load_features(path)
        x = feat.normalize(spec, stats).frames
        weak = np.zeros(k)
        for name in row.weak_classes:
            weak[index[name]] = 1.0
        if row.subset in ("strong", "validation"):
            events = [DetectionEvent(index[n], on, off) for n, on, off in row.events]
            rec = ClipRecord(row.clip_id, x, STRONG, events_to_grid(events, t_out, k, cfg.scene.duration),
                             weak, events)
        elif row.subset == "weak":
            rec = ClipRecord(row.clip_id, x, WEAK, weak_label=weak)
        else:
            rec = ClipRecord(row.clip_id, x, UNLABELED)
        out[row.subset].append(rec)
    return out


def fold_split(cfg: RunConfig, records: dict[str, list[ClipRecord]], ds: Dataset, fold: int):
    """``(train, holdout)`` over the training subsets for one cross-validation fold."""
    rows = {r.clip_id: r for r in ds.rows}
    pool = [r for s in TRAIN_SUBSETS for r in records[s]]
    folds = make_folds([signature(rows[r.clip_id]) for r in pool], cfg.train.folds, cfg.seed)
    return split_fold(pool, folds, fold, cfg.train.folds)


# -- train ----------------------------------------------------------------------

def fold_dir(cfg: RunConfig, fold: int) -> Path:
    return cfg.path("checkpoint_dir") / f"fold{fold}"


def beta_dir(cfg: RunConfig, fold: int, beta: float) -> Path:
    return fold_dir(cfg, fold) / f"beta{beta:.2f}"


def _train_job(cfg: RunConfig, stage: str, fold: int, beta: Optional[float]) -> dict:
    tune_allocator()
    ds = _dataset(cfg)
    records = load_records(cfg, ds)
    train, holdout = fold_split(cfg, records, ds, fold)
    if stage == "mt":
        out = fold_dir(cfg, fold)
        res = train_mean_teacher(train, holdout, cfg.model, cfg.train, cfg.augment, out, fold)
        return {"stage": "mt", "fold": fold, "best_epoch": res.best_epoch,
                "history": res.history}
    mt_dir = fold_dir(cfg, fold)
    paths = [mt_dir / "mt_student.ckpt", mt_dir / "mt_teacher.ckpt"]
    for p in paths:
        if not p.exists():
            raise PipelineError(f"stage-1 checkpoint {p} not found; run 'train --stage mt --fold {fold}' first")
    student, _, _ = load_params(paths[0])
    teacher, _, _ = load_params(paths[1])
    strong = [r for r in train if r.kind == STRONG]
    rest = [r for r in train if r.kind in (WEAK, UNLABELED)]
    out = beta_dir(cfg, fold, beta)
    res = self_training(strong, rest, holdout, student, teacher, cfg.train, cfg.augment, beta, out, fold)
    beta_index = cfg.train.betas.index(beta) if beta in cfg.train.betas else -1
    cand = {"fold": fold, "beta": beta, "beta_index": beta_index, "f1": res.rounds[-1].best_val_f1,
            "checkpoint": str((out / "ns_final.ckpt").relative_to(cfg.path("checkpoint_dir")))}
    _write_json(out / "candidate.json", cand)
    return {"stage": "ns", **cand, "rounds": [asdict(r) for r in res.rounds]}


def cmd_train(cfg: RunConfig, stage: str, fold: Optional[int] = None, beta: Optional[float] = None,
              jobs: int = 1) -> list[dict]:
    """Train stage ``mt`` or ``ns`` for one fold (default: all) and one beta (default: the grid)."""
    if stage not in ("mt", "ns"):
        raise PipelineError(f"unknown stage {stage!r}; expected 'mt' or 'ns'")
    folds = [fold] if fold is not None else list(range(cfg.train.folds))
    for f in folds:
        if not 0 <= f < cfg.train.folds:
            raise PipelineError(f"fold {f} outside [0, {cfg.train.folds})")
    if stage == "mt":
        tasks = [(cfg, "mt", f, None) for f in folds]
    else:
        betas = [beta] if beta is not None else list(cfg.train.betas)
        tasks = [(cfg, "ns", f, b) for f in folds for b in betas]
    if jobs <= 1 or len(tasks) == 1:
        return [_train_job(*t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(_train_job, *t) for t in tasks]
        return [f.result() for f in futures]


# -- pseudolabel ----------------------------------------------------------------

def cmd_pseudolabel(cfg: RunConfig, checkpoint: str | Path, out: Optional[str | Path] = None) -> Path:
    """Binarized strong labels for the weak and unlabeled subsets from one teacher checkpoint.

    Writes a grid archive and an event TSV next to each other.
    """
    teacher = _load_checkpoint(cfg, checkpoint)
    ds = _dataset(cfg)
    records = load_records(cfg, ds)
    clips = records["weak"] + records["unlabeled"]
    pseudo = pseudo_label(teacher, clips, cfg.train.threshold)
    out = Path(out) if out else cfg.path("report_dir") / "pseudo_labels.arr"
    save_arrays(out, {f"pseudo/{r.clip_id}": r.strong_label for r in pseudo},
                {"checkpoint": Path(checkpoint).name, "threshold": cfg.train.threshold})
    events = {r.clip_id: _grid_events(r.strong_label, cfg) for r in pseudo}
    write_events(out.with_suffix(".tsv"), events, ds.class_names)
    return out


def _grid_events(grid: np.ndarray, cfg: RunConfig) -> list[DetectionEvent]:
    from .evaluation import decode_events
    return decode_events(grid, 0.5, 1, cfg.scene.duration)


# -- eval -----------------------------------------------------------------------

def _load_checkpoint(cfg: RunConfig, path: str | Path) -> ModelParams:
    p = Path(path)
    if not p.is_absolute() and not p.exists():
        p = cfg.path("checkpoint_dir") / p
    if not p.exists():
        raise PipelineError(f"checkpoint not found: {path}")
    params, _, _ = load_params(p)
    if params.config != cfg.model:
        raise PipelineError(f"checkpoint {p} was trained with a different model config")
    return params


def _members(cfg: RunConfig, target: str | Path) -> list[Path]:
    target = Path(target)
    if target.suffix == ".json":
        if not target.exists():
            raise PipelineError(f"ensemble spec not found: {target}")
        spec = json.loads(target.read_text())
        return [Path(m["checkpoint"]) for m in spec["members"]]
    return [target]


def predict_subset(cfg: RunConfig, target: str | Path, subset: str = "validation"):
    ds = _dataset(cfg)
    records = load_records(cfg, ds)[subset]
    if not records:
        raise PipelineError(f"subset {subset!r} is empty")
    x = np.stack([r.features for r in records])
    per_model = [predict(_load_checkpoint(cfg, m), x) for m in _members(cfg, target)]
    preds = {r.clip_id: ensemble_combine([pm[i] for pm in per_model]) for i, r in enumerate(records)}
    return ds, records, preds


def cmd_eval(cfg: RunConfig, target: str | Path, subset: str = "validation",
             name: Optional[str] = None) -> ScoreReport:
    """Score a checkpoint or an ensemble spec on a strongly labeled subset."""
    if subset not in ("strong", "validation"):
        raise PipelineError("evaluation needs a strongly labeled subset ('strong' or 'validation')")
    ds, records, preds = predict_subset(cfg, target, subset)
    ref = {r.clip_id: r.events for r in records}
    report = score(ref, preds, cfg.model.n_classes, cfg.eval.threshold, cfg.eval.median_len,
                   cfg.eval.n_thresholds, cfg.scene.duration)
    name = name or Path(target).stem
    report_dir = cfg.path("report_dir")
    write_report(report_dir / f"{name}_{subset}.json", report)
    est = decode_all(preds, cfg.eval.threshold, cfg.eval.median_len, cfg.scene.duration)
    write_events(report_dir / f"{name}_{subset}_events.tsv", est, ds.class_names)
    return report


# -- ensemble -------------------------------------------------------------------

def collect_candidates(cfg: RunConfig) -> list[Candidate]:
    root = cfg.path("checkpoint_dir")
    out = []
    for path in sorted(root.glob("fold*/beta*/candidate.json")):
        c = json.loads(path.read_text())
        out.append(Candidate(c["fold"], c["beta_index"], c["f1"], str(root / c["checkpoint"]), c["beta"]))
    return out


def cmd_ensemble(cfg: RunConfig, strategy: str, out: Optional[str | Path] = None) -> Path:
    """Select ensemble members from the trained fold x beta candidates and write the spec."""
    cands = collect_candidates(cfg)
    if not cands:
        raise PipelineError(f"no trained candidates under {cfg.path('checkpoint_dir')}; run 'train --stage ns'")
    try:
        members = select(cands, strategy)
    except ValueError as exc:
        raise PipelineError(str(exc)) from None
    out = Path(out) if out else cfg.path("report_dir") / f"ensemble_{strategy}.json"
    _write_json(out, {"strategy": strategy, "members": [
        {"fold": m.fold, "beta": m.beta, "beta_index": m.beta_index, "f1": m.f1, "checkpoint": m.checkpoint}
        for m in members]})
    return out


def single_model_spec(checkpoint: str | Path, out: str | Path) -> Path:
    """Ensemble spec holding exactly one checkpoint."""
    _write_json(Path(out), {"strategy": "single", "members": [{"checkpoint": str(checkpoint)}]})
    return Path(out)


def predictions_equal(a: dict[str, StrongPrediction], b: dict[str, StrongPrediction]) -> bool:
    return a.keys() == b.keys() and all(
        a[k].strong.tobytes() == b[k].strong.tobytes() and a[k].weak.tobytes() == b[k].weak.tobytes() for k in a)


# -- whole pipeline -------------------------------------------------------------

def run_pipeline(cfg: RunConfig, fold: int = 0, beta: Optional[float] = None) -> dict:
    """Generate, extract, train both stages on one fold and score both stage outputs on validation."""
    beta = cfg.train.beta if beta is None else beta
    cmd_gen(cfg)
    cmd_extract(cfg)
    mt = cmd_train(cfg, "mt", fold)[0]
    ns = cmd_train(cfg, "ns", fold, beta)[0]
    mt_report = cmd_eval(cfg, fold_dir(cfg, fold) / "mt_teacher.ckpt", name=f"fold{fold}_mt_teacher")
    ns_report = cmd_eval(cfg, beta_dir(cfg, fold, beta) / "ns_final.ckpt", name=f"fold{fold}_ns_final")
    losses = [h["loss"] for h in mt["history"]]
    summary = {"fold": fold, "beta": beta, "mt_loss_first": losses[0], "mt_loss_min": min(losses),
               "mt_best_epoch": mt["best_epoch"], "ns_rounds": ns["rounds"],
               "mt_report": asdict(mt_report), "ns_report": asdict(ns_report)}
    _write_json(cfg.path("report_dir") / f"pipeline_fold{fold}.json", summary)
    return summary


__all__: Sequence[str] = [
    "PipelineError", "cmd_gen", "cmd_extract", "cmd_train", "cmd_pseudolabel", "cmd_eval", "cmd_ensemble",
    "load_records", "fold_split", "run_pipeline", "predict_subset", "collect_candidates", "single_model_spec",
]
