"""Run one training stage, or a variant's full stage sequence, with checkpoints and an event log."""

from __future__ import annotations

import copy
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn

from ..checkpoint import group_digest, load_checkpoint, save_checkpoint
from ..config import Config
from ..datakit import MixtureRecord, UtteranceCache, load_batch
from ..datakit.formats import append_ndjson
from ..extractors import build_variant, warm_start_contextual
from .schedules import LrState, plateau_policy, warmup_lr
from .stages import AC, AV, StagePlan, previous_stage, stage_plan, variant_stages

log = logging.getLogger(__name__)


class MissingCheckpointError(RuntimeError):
    pass


class FreezeViolation(RuntimeError):
    pass


@dataclass
class StageData:
    train: Sequence[MixtureRecord]
    valid: Sequence[MixtureRecord]
    cache: UtteranceCache = field(default_factory=UtteranceCache)


@dataclass
class StageResult:
    plan: StagePlan
    checkpoint: Path
    history: list[dict]
    best_epoch: int
    halted: bool


def checkpoint_name(variant: str, stage: int, epoch: int) -> str:
    return f"{variant}_{stage}_{epoch}.ckpt"


def find_checkpoint(ckpt_dir: str | Path, variant: str, stage: int) -> Path | None:
    found = sorted(Path(ckpt_dir).glob(f"{variant}_{stage}_*.ckpt"))
    return found[-1] if found else None


def _set_modes(model: nn.Module, plan: StagePlan, training: bool) -> None:
    groups = model.groups
    for name, module in groups.items():
        trainable = name in plan.trainable
        module.requires_grad_(trainable)
        module.train(training and trainable)


def _trainable_params(model: nn.Module, plan: StagePlan) -> list[nn.Parameter]:
    return [p for name in sorted(plan.trainable) for p in model.groups[name].parameters()]


def _state_copy(model: nn.Module, names) -> dict[str, dict]:
    return {n: copy.deepcopy(model.groups[n].state_dict()) for n in names}


def evaluate_loss(model: nn.Module, plan: StagePlan, records, cache, batch_size: int) -> float:
    losses, weights = [], []
    with torch.no_grad():
        for batch in load_batch(records, batch_size, cache=cache):
            losses.append(float(model.stage_loss(batch, plan.loss_target, plan.context_source)))
            weights.append(len(batch))
    return float(np.average(losses, weights=weights))


def prepare_model_for_stage(model: nn.Module, plan: StagePlan, ckpt_dir: str | Path, cfg: Config,
                            external_asr: str | Path | None = None) -> Path | None:
    """Load the prerequisite checkpoint (and warm-start the AC module when entering stage 3).

    When stage 2 is replaced by ``external_asr``, the checkpoint of the stage
    before it is loaded first and the external ASR weights on top.
    """
    prev = previous_stage(plan.stage, plan.variant)
    if prev is None:
        return None
    use_external = prev == 2 and external_asr is not None
    if use_external:
        prev = previous_stage(2, plan.variant)
    path = None
    if prev is not None:
        path = find_checkpoint(ckpt_dir, plan.variant, prev)
        if path is None:
            raise MissingCheckpointError(
                f"stage {plan.stage} of {plan.variant!r} requires the stage {prev} checkpoint in {ckpt_dir}")
        load_checkpoint(path, model.groups, expect_variant=plan.variant)
    if use_external:
        load_checkpoint(external_asr, model.groups, only={"asr"})
    if plan.stage == 3 and AC in model.groups and AV in model.groups and cfg.train.warm_start_ac:
        warm_start_contextual(model)
    return path


def run_stage(plan: StagePlan, data: StageData, model: nn.Module, budget: int, cfg: Config,
              workdir: str | Path, *, external_asr: str | Path | None = None) -> StageResult:
    """Optimise ``plan.trainable`` for up to ``budget`` epochs and write the best-epoch checkpoint.

    Frozen groups are checked to be bit-identical afterwards. Events go to
    ``workdir/runs/{variant}.ndjson``.
    """
    workdir = Path(workdir)
    ckpt_dir, run_dir = workdir / "checkpoints", workdir / "runs"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    run_dir.mkdir(parents=True, exist_ok=True)
    events = run_dir / f"{plan.variant}.ndjson"
    tc = cfg.train

    prepare_model_for_stage(model, plan, ckpt_dir, cfg, external_asr)
    torch.manual_seed(cfg.seed * 1000 + plan.stage)
    frozen_before = {n: group_digest(model.groups[n]) for n in plan.frozen}

    params = _trainable_params(model, plan)
    is_ctc = plan.loss_target == "ctc"
    betas = (0.9, 0.98) if is_ctc else (0.9, 0.999)
    opt = torch.optim.Adam(params, lr=tc.lr, betas=betas, weight_decay=tc.weight_decay)
    lr_state = LrState(tc.lr)
    step = 0
    history: list[dict] = []
    val_losses: list[float] = []
    best = (float("inf"), 0, None)

    for epoch in range(1, budget + 1):
        t0 = time.time()
        _set_modes(model, plan, training=True)
        train_losses = []
        for batch in load_batch(data.train, tc.batch_size, cache=data.cache, shuffle=True,
                                seed=cfg.seed, epoch=epoch):
            step += 1
            if is_ctc:
                for g in opt.param_groups:
                    g["lr"] = warmup_lr(step, 256, tc.warmup_steps, tc.warmup_scale)
            loss = model.stage_loss(batch, plan.loss_target, plan.context_source)
            opt.zero_grad(set_to_none=True)
            loss.backward()
            if tc.grad_clip:
                torch.nn.utils.clip_grad_norm_(params, tc.grad_clip)
            opt.step()
            train_losses.append(loss.item())
        _set_modes(model, plan, training=False)
        val = evaluate_loss(model, plan, data.valid, data.cache, tc.batch_size)
        val_losses.append(val)
        lr_now = opt.param_groups[0]["lr"]
        row = {"variant": plan.variant, "stage": plan.stage, "epoch": epoch, "lr": lr_now,
               "train_loss": float(np.mean(train_losses)), "valid_loss": val, "seconds": round(time.time() - t0, 2)}
        history.append(row)
        append_ndjson(events, {"variant": plan.variant, "stage": plan.stage, "epoch": epoch, "split": "train",
                               "loss": row["train_loss"], "lr": lr_now})
        append_ndjson(events, {"variant": plan.variant, "stage": plan.stage, "epoch": epoch, "split": "valid",
                               "loss": val, "lr": lr_now})
        log.info("%s stage %d epoch %d: train %.4f valid %.4f lr %.2e", plan.variant, plan.stage, epoch,
                 row["train_loss"], val, lr_now)
        if val < best[0]:
            best = (val, epoch, _state_copy(model, plan.trainable))
        if not is_ctc:
            lr_state = plateau_policy(lr_state, val_losses)
            for g in opt.param_groups:
                g["lr"] = lr_state.lr
            if lr_state.halted:
                break

    if best[2] is not None:
        for name, state in best[2].items():
            model.groups[name].load_state_dict(state)
    for name, digest in frozen_before.items():
        if group_digest(model.groups[name]) != digest:
            raise FreezeViolation(f"frozen group {name!r} changed during stage {plan.stage}")
    for stale in ckpt_dir.glob(f"{plan.variant}_{plan.stage}_*.ckpt"):
        stale.unlink()
    path = save_checkpoint(ckpt_dir / checkpoint_name(plan.variant, plan.stage, best[1]), model.groups,
                           variant=plan.variant, stage=plan.stage, epoch=best[1],
                           extra={"valid_loss": best[0], "trainable": sorted(plan.trainable),
                                  "frozen": sorted(plan.frozen), "context_source": plan.context_source})
    return StageResult(plan, path, history, best[1], lr_state.halted)


def train_variant(variant: str, data: StageData, cfg: Config, workdir: str | Path,
                  budgets: dict[int, int] | None = None, stages: Sequence[int] | None = None,
                  external_asr: str | Path | None = None) -> tuple[nn.Module, list[StageResult]]:
    """Build a variant and run its stages in order."""
    budgets = {**cfg.train.stage_epochs, **(budgets or {})}
    model = build_variant(variant, cfg.model, seed=cfg.seed)
    results = []
    for stage in stages or variant_stages(variant):
        if stage == 2 and external_asr is not None:
            continue
        plan = stage_plan(stage, variant)
        results.append(run_stage(plan, data, model, budgets[stage], cfg, workdir, external_asr=external_asr))
    return model, results


def load_trained(variant: str, cfg: Config, workdir: str | Path) -> nn.Module:
    """Model for ``variant`` with its final-stage checkpoint loaded, in eval mode."""
    model = build_variant(variant, cfg.model, seed=cfg.seed)
    final = variant_stages(variant)[-1]
    path = find_checkpoint(Path(workdir) / "checkpoints", variant, final)
    if path is None:
        raise MissingCheckpointError(f"no stage {final} checkpoint for {variant!r} in {workdir}")
    load_checkpoint(path, model.groups, expect_variant=variant)
    return model.eval()
