"""Stage-1 mean-teacher and stage-2 noisy-student training."""
from .data import ClipRecord, TrainConfig, plan_epoch
from .losses import (
    PSEUDO, STRONG, UNLABELED, WEAK, bce_mean, bce_soft, consistency_loss, interpolate_target,
    semi_supervised_loss,
)
from .optim import OptimizerState, PlateauState, adam_step, rampup_factor, rampup_lr, reduce_lr_on_plateau
from .params import ema_decay, ema_update, init_params, load_params, params_digest, save_params
from .steps import (
    HoldoutScore, StepLosses, TrainingDiverged, evaluate_holdout, mean_teacher_step, noisy_student_step,
    pseudo_label,
)
from .trainer import (
    MeanTeacherResult, RoundSummary, SelfTrainingResult, epoch_rng, load_pseudo_labels, self_training,
    train_mean_teacher,
)

__all__ = [
    "ClipRecord", "TrainConfig", "plan_epoch", "PSEUDO", "STRONG", "UNLABELED", "WEAK", "bce_mean",
    "bce_soft", "consistency_loss", "interpolate_target", "semi_supervised_loss", "OptimizerState",
    "PlateauState", "adam_step", "rampup_factor", "rampup_lr", "reduce_lr_on_plateau", "ema_decay",
    "ema_update", "init_params", "load_params", "params_digest", "save_params", "HoldoutScore",
    "StepLosses", "TrainingDiverged", "evaluate_holdout", "mean_teacher_step", "noisy_student_step",
    "pseudo_label", "MeanTeacherResult", "RoundSummary", "SelfTrainingResult", "epoch_rng",
    "load_pseudo_labels", "self_training", "train_mean_teacher",
]
