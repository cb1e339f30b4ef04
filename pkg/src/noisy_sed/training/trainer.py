"""Stage-1 mean-teacher training and stage-2 noisy-student self-training.

Every epoch draws its randomness from a generator seeded by
``(seed, stage, fold, round, epoch)``, so an interrupted run resumed from its
state checkpoint continues exactly as the uninterrupted run would have.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from ..augment import AugmentConfig
from ..rcrnn import ModelConfig, ModelParams
from ..tensor_core.checkpoint import atomic_write_bytes, load_arrays, save_arrays
from .data import ClipRecord, TrainConfig, plan_epoch
from .losses import STRONG, UNLABELED, WEAK
from .optim import OptimizerState, PlateauState, rampup_lr, reduce_lr_on_plateau
from .params import init_params, load_params, save_params
from .steps import TrainingDiverged, evaluate_holdout, mean_teacher_step, noisy_student_step, pseudo_label

log = logging.getLogger(__name__)

STAGE_INIT, STAGE_MT, STAGE_NS = 0, 1, 2


def epoch_rng(seed: int, stage: int, fold: int, round_: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng([seed, stage, fold, round_, epoch])


def _prefixed(prefix: str, values: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {f"{prefix}/{k}": v for k, v in values.items()}


def _unprefixed(prefix: str, arrays: dict[str, np.ndarray], cfg: ModelConfig) -> ModelParams:
    head = prefix + "/"
    params = ModelParams(cfg, {k[len(head):]: v for k, v in arrays.items() if k.startswith(head)})
    params.check()
    return params


def write_metrics(path: Path, history: Sequence[dict]) -> None:
    text = "".join(json.dumps(rec, sort_keys=True) + "\n" for rec in history)
    atomic_write_bytes(path, text.encode())


def _better(score, best) -> bool:
    """Higher held-out F1 wins; equal F1 falls back to lower held-out loss."""
    if best is None:
        return True
    return (score[0], -score[1]) > (best[0], -best[1])


def _dump_divergence(path: Optional[Path], params: ModelParams, exc: TrainingDiverged, **where) -> None:
    """Save the offending parameters and diagnostics next to the run state, then let the error propagate."""
    if path is None:
        return
    diag = {k: v if isinstance(v, (int, float, str, list, tuple, dict)) or v is None else repr(v)
            for k, v in exc.diagnostics.items()}
    save_params(path, params, metadata={"error": exc.message, "diagnostics": diag, **where})
    log.error("training diverged, state dumped to %s", path)


def _pools(records: Sequence[ClipRecord], kinds: Sequence[str]) -> list[list[int]]:
    return [[i for i, r in enumerate(records) if r.kind == k] for k in kinds]


# -- stage 1 --------------------------------------------------------------------

@dataclass
class MeanTeacherResult:
    student: ModelParams
    teacher: ModelParams
    history: list[dict] = field(default_factory=list)
    best_epoch: int = -1


def train_mean_teacher(train: Sequence[ClipRecord], holdout: Sequence[ClipRecord], model_cfg: ModelConfig,
                       cfg: TrainConfig, aug: AugmentConfig, run_dir: Optional[str | Path] = None,
                       fold: int = 0, on_epoch: Optional[Callable[[dict], None]] = None) -> MeanTeacherResult:
    """Train student and EMA teacher for ``cfg.mt_epochs`` epochs.

    The learning rate and the consistency weight follow the exponential
    ramp-up. The returned pair is the one whose teacher scored best on the
    held-out clips (the last epoch when there are none). With ``run_dir``,
    a state checkpoint is written after every epoch and an existing one is
    resumed; the best pair lands in ``mt_student.ckpt`` / ``mt_teacher.ckpt``.
    """
    run_dir = Path(run_dir) if run_dir is not None else None
    state_path = run_dir / "mt_state.ckpt" if run_dir else None
    train = list(train)
    pools = _pools(train, (STRONG, WEAK, UNLABELED))
    sizes = (cfg.batch_strong, cfg.batch_weak, cfg.batch_unlabeled)

    if state_path is not None and state_path.exists():
        student, arrays, meta = load_params(state_path)
        teacher = _unprefixed("teacher", arrays, model_cfg)
        best_student = _unprefixed("best_student", arrays, model_cfg)
        best_teacher = _unprefixed("best_teacher", arrays, model_cfg)
        opt = OptimizerState.from_arrays(arrays, meta["optimizer"])
        start, history = meta["next_epoch"], meta["history"]
        best_score, best_epoch = meta["best_score"], meta["best_epoch"]
        log.info("resuming mean-teacher training at epoch %d", start)
    else:
        student = init_params(model_cfg, epoch_rng(cfg.seed, STAGE_INIT, fold, 0, 0))
        teacher = student.clone()
        best_student, best_teacher = student.clone(), teacher.clone()
        opt = OptimizerState.for_params(student.values, student.trainable_names(),
                                        lr=rampup_lr(0, cfg.max_lr, cfg.rampup_epochs))
        start, history, best_score, best_epoch = 0, [], None, -1

    for epoch in range(start, cfg.mt_epochs):
        rng = epoch_rng(cfg.seed, STAGE_MT, fold, 0, epoch)
        opt.lr = rampup_lr(epoch, cfg.max_lr, cfg.rampup_epochs)
        sums = {"total": 0.0, "strong": 0.0, "weak": 0.0, "consistency": 0.0}
        batches = plan_epoch(pools, sizes, rng)
        for idx in batches:
            try:
                losses, teacher = mean_teacher_step([train[i] for i in idx], student, teacher, opt, cfg,
                                                    aug, epoch, rng)
            except TrainingDiverged as exc:
                _dump_divergence(run_dir / "mt_diverged.ckpt" if run_dir else None, student, exc,
                                 stage="mt", fold=fold, epoch=epoch)
                raise
            for k in sums:
                sums[k] += getattr(losses, k)
        record = {"stage": "mt", "fold": fold, "epoch": epoch, "lr": opt.lr,
                  **{("loss" if k == "total" else f"loss_{k}"): v / len(batches) for k, v in sums.items()}}
        held = evaluate_holdout(teacher, holdout, cfg)
        if held is not None:
            record.update(val_loss=held.loss, val_f1=held.f1)
            score = [held.f1, held.loss]
        else:
            score = [0.0, record["loss"]]
        if held is None or _better(score, best_score):
            best_score, best_epoch = score, epoch
            best_student, best_teacher = student.clone(), teacher.clone()
        history.append(record)
        log.info("mt epoch %d: %s", epoch, record)
        if on_epoch:
            on_epoch(record)
        if run_dir is not None:
            extra = {**_prefixed("teacher", teacher.values), **_prefixed("best_student", best_student.values),
                     **_prefixed("best_teacher", best_teacher.values), **opt.to_arrays()}
            save_params(state_path, student, extra, {
                "next_epoch": epoch + 1, "history": history, "best_score": best_score,
                "best_epoch": best_epoch, "optimizer": opt.scalars(), "train_config": cfg.to_dict()})
            write_metrics(run_dir / "mt_metrics.jsonl", history)

    if run_dir is not None:
        meta = {"stage": "mt", "fold": fold, "best_epoch": best_epoch}
        save_params(run_dir / "mt_student.ckpt", best_student, metadata={**meta, "role": "student"})
        save_params(run_dir / "mt_teacher.ckpt", best_teacher, metadata={**meta, "role": "teacher"})
    return MeanTeacherResult(best_student, best_teacher, history, best_epoch)


# -- stage 2 --------------------------------------------------------------------

@dataclass
class RoundSummary:
    round: int
    best_epoch: int
    best_val_f1: float
    pseudo_positive_fraction: float
    pseudo_changed_fraction: float


@dataclass
class SelfTrainingResult:
    params: ModelParams
    history: list[dict] = field(default_factory=list)
    rounds: list[RoundSummary] = field(default_factory=list)
    pseudo_labels: list[dict[str, np.ndarray]] = field(default_factory=list)


def _train_round(strong: list[ClipRecord], pseudo: list[ClipRecord], holdout: Sequence[ClipRecord],
                 init: ModelParams, cfg: TrainConfig, aug: AugmentConfig, beta: float, fold: int,
                 round_: int, state_path: Optional[Path], history: list[dict],
                 on_epoch: Optional[Callable[[dict], None]]) -> tuple[ModelParams, int, float]:
    records = strong + pseudo
    weak_pool = [i for i, r in enumerate(records) if r.kind != STRONG and r.weak_label is not None]
    unl_pool = [i for i, r in enumerate(records) if r.kind != STRONG and r.weak_label is None]
    pools = [list(range(len(strong))), weak_pool, unl_pool]
    sizes = (cfg.batch_strong, cfg.batch_weak, cfg.batch_unlabeled)
    cfg_model = init.config

    if state_path is not None and state_path.exists():
        student, arrays, meta = load_params(state_path)
        best = _unprefixed("best", arrays, cfg_model)
        opt = OptimizerState.from_arrays(arrays, meta["optimizer"])
        plateau = PlateauState(**meta["plateau"])
        start, best_score, best_epoch = meta["next_epoch"], meta["best_score"], meta["best_epoch"]
        history[:] = meta["history"]
        log.info("resuming round %d at epoch %d", round_, start)
    else:
        student = init.clone()
        best = student.clone()
        opt = OptimizerState.for_params(student.values, student.trainable_names(), lr=cfg.max_lr)
        plateau = PlateauState(factor=cfg.plateau_factor, patience=cfg.plateau_patience,
                               min_delta=cfg.plateau_min_delta, min_lr=cfg.min_lr)
        start, best_score, best_epoch = 0, None, -1

    for epoch in range(start, cfg.ns_epochs):
        rng = epoch_rng(cfg.seed, STAGE_NS, fold, round_, epoch)
        batches = plan_epoch(pools, sizes, rng)
        total = 0.0
        for idx in batches:
            try:
                total += noisy_student_step([records[i] for i in idx], student, opt, beta, aug, rng).total
            except TrainingDiverged as exc:
                dump = state_path.parent / f"ns_round{round_}_diverged.ckpt" if state_path else None
                _dump_divergence(dump, student, exc, stage="ns", fold=fold, round=round_, epoch=epoch)
                raise
        record = {"stage": "ns", "fold": fold, "beta": beta, "round": round_, "epoch": epoch,
                  "lr": opt.lr, "loss": total / len(batches)}
        held = evaluate_holdout(student, holdout, cfg)
        if held is not None:
            record.update(val_loss=held.loss, val_f1=held.f1)
            score = [held.f1, held.loss]
        else:
            score = [0.0, record["loss"]]
        if held is None or _better(score, best_score):
            best_score, best_epoch, best = score, epoch, student.clone()
        opt.lr = reduce_lr_on_plateau(score[1], opt.lr, plateau)
        history.append(record)
        log.info("ns round %d epoch %d: %s", round_, epoch, record)
        if on_epoch:
            on_epoch(record)
        if state_path is not None:
            save_params(state_path, student, {**_prefixed("best", best.values), **opt.to_arrays()}, {
                "next_epoch": epoch + 1, "history": history, "best_score": best_score,
                "best_epoch": best_epoch, "optimizer": opt.scalars(), "plateau": plateau.to_dict(),
                "train_config": cfg.to_dict(), "beta": beta})
            write_metrics(state_path.parent / "ns_metrics.jsonl", history)
    return best, best_epoch, (best_score or [0.0])[0]


def self_training(strong: Sequence[ClipRecord], unlabeled: Sequence[ClipRecord], holdout: Sequence[ClipRecord],
                  stage1_student: ModelParams, stage1_teacher: ModelParams, cfg: TrainConfig,
                  aug: AugmentConfig, beta: Optional[float] = None, run_dir: Optional[str | Path] = None,
                  fold: int = 0, on_epoch: Optional[Callable[[dict], None]] = None) -> SelfTrainingResult:
    """``cfg.rounds`` rounds of pseudo labeling followed by noisy-student training.

    ``unlabeled`` holds the weakly labeled and unlabeled clips. Round 1 labels
    them with the stage-1 teacher; each later round uses the best student of
    the previous round. Every round restarts the student from
    ``stage1_student`` with a fresh optimizer at ``cfg.max_lr``.
    """
    beta = cfg.beta if beta is None else beta
    run_dir = Path(run_dir) if run_dir is not None else None
    strong = [r for r in strong if r.kind == STRONG]
    if any(r.kind not in (WEAK, UNLABELED) for r in unlabeled):
        raise ValueError("self_training expects weak or unlabeled clips to pseudo-label")
    teacher = stage1_teacher
    result = SelfTrainingResult(stage1_student)
    history: list[dict] = []
    previous = None
    for round_ in range(cfg.rounds):
        done_path = run_dir / f"ns_round{round_}.ckpt" if run_dir else None
        pseudo = pseudo_label(teacher, unlabeled, cfg.threshold)
        grids = {r.clip_id: r.strong_label for r in pseudo}
        stacked = np.stack(list(grids.values())) if grids else np.zeros((0,))
        changed = 0.0
        if previous is not None and stacked.size:
            changed = float(np.mean(stacked != np.stack(list(previous.values()))))
        previous = grids
        result.pseudo_labels.append(grids)
        if run_dir is not None:
            save_arrays(run_dir / f"pseudo_round{round_}.arr", {f"pseudo/{k}": v for k, v in grids.items()},
                        {"round": round_, "fold": fold, "threshold": cfg.threshold})

        if done_path is not None and done_path.exists():
            best, _, meta = load_params(done_path)
            best_epoch, best_f1 = meta["best_epoch"], meta["best_val_f1"]
            history = meta["history"]
        else:
            state_path = run_dir / f"ns_round{round_}_state.ckpt" if run_dir else None
            best, best_epoch, best_f1 = _train_round(strong, pseudo, holdout, stage1_student, cfg, aug, beta,
                                                     fold, round_, state_path, history, on_epoch)
            if done_path is not None:
                save_params(done_path, best, metadata={
                    "round": round_, "fold": fold, "beta": beta, "best_epoch": best_epoch,
                    "best_val_f1": best_f1, "history": history})
        result.rounds.append(RoundSummary(round_, best_epoch, best_f1,
                                          float(stacked.mean()) if stacked.size else 0.0, changed))
        teacher = best
    result.params = teacher
    result.history = history
    if run_dir is not None:
        save_params(run_dir / "ns_final.ckpt", teacher, metadata={
            "stage": "ns", "fold": fold, "beta": beta, "rounds": cfg.rounds,
            "best_val_f1": result.rounds[-1].best_val_f1})
    return result


def load_pseudo_labels(path: str | Path) -> dict[str, np.ndarray]:
    arrays, _ = load_arrays(path)
    return {k[len("pseudo/"):]: v for k, v in arrays.items() if k.startswith("pseudo/")}
