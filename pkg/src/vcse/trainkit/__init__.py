"""Staged training: stage plans, LR policies, the stage runner."""

from .runner import (
    FreezeViolation,
    MissingCheckpointError,
    StageData,
    StageResult,
    find_checkpoint,
    load_trained,
    run_stage,
    train_variant,
)
from .schedules import LrState, plateau_policy, warmup_lr
from .stages import StagePlan, stage_plan, variant_stages

__all__ = [
    "FreezeViolation", "LrState", "MissingCheckpointError", "StageData", "StagePlan", "StageResult",
    "find_checkpoint", "load_trained", "plateau_policy", "run_stage", "stage_plan", "train_variant",
    "variant_stages", "warmup_lr",
]
