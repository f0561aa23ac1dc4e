"""Which parameter groups train, freeze, or stay out of the graph at each training step."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

ContextSource = Literal["none", "clean_oracle", "pre_extracted"]
LossTarget = Literal["s_av", "ctc", "s_ac"]

AV, ASR, AC = "audio_visual", "asr", "audio_contextual"


@dataclass(frozen=True)
class StagePlan:
    """One training step of a variant.

    ``loss_target`` names the supervised output: ``s_av`` is the first
    extraction output (for single-stage baselines, their only output), ``ctc``
    is ASR pretraining on clean speech, ``s_ac`` the refined output.
    """

    stage: int
    variant: str
    trainable: frozenset[str]
    frozen: frozenset[str]
    context_source: ContextSource
    loss_target: LossTarget

    def __post_init__(self):
        if self.trainable & self.frozen:
            raise ValueError(f"groups both trainable and frozen: {sorted(self.trainable & self.frozen)}")


_TWO_STAGE = {
    1: ({AV}, set(), "none", "s_av"),
    2: ({ASR}, set(), "none", "ctc"),
    3: ({AC}, {AV, ASR}, "clean_oracle", "s_ac"),
    4: ({AC}, {AV, ASR}, "pre_extracted", "s_ac"),
    5: ({AV, ASR, AC}, set(), "pre_extracted", "s_ac"),
}

_TABLES = {
    "vcse": _TWO_STAGE,
    "vcsev": _TWO_STAGE,
    "av": {1: ({AV}, set(), "none", "s_av")},
    "pit": {1: ({"separator"}, set(), "none", "s_av")},
    "a_s": {1: ({"audio_speaker"}, set(), "none", "s_av")},
    "ac_oracle": {
        2: ({ASR}, set(), "none", "ctc"),
        3: ({AC}, {ASR}, "clean_oracle", "s_ac"),
    },
    "avc_oracle": {
        2: ({ASR}, set(), "none", "ctc"),
        3: ({"audio_visual_contextual"}, {ASR}, "clean_oracle", "s_ac"),
    },
}


def variant_stages(variant: str) -> list[int]:
    if variant not in _TABLES:
        raise ValueError(f"unknown variant {variant!r}")
    return sorted(_TABLES[variant])


def previous_stage(stage: int, variant: str = "vcse") -> int | None:
    stages = variant_stages(variant)
    i = stages.index(stage)
    return stages[i - 1] if i > 0 else None


def stage_plan(stage: int, variant: str = "vcse") -> StagePlan:
    table = _TABLES.get(variant)
    if table is None:
        raise ValueError(f"unknown variant {variant!r}")
    if stage not in table:
        raise ValueError(f"variant {variant!r} has no stage {stage}; valid stages: {sorted(table)}")
    trainable, frozen, source, target = table[stage]
    return StagePlan(stage, variant, frozenset(trainable), frozenset(frozen), source, target)
