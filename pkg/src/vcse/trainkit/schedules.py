"""Learning-rate policies: plateau halving/early stopping and transformer warmup."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

HALVE_AFTER = 3
STOP_AFTER = 6


@dataclass(frozen=True)
class LrState:
    lr: float
    bad_epochs: int = 0
    halted: bool = False


def consecutive_increases(history: Sequence[float]) -> int:
    """Length of the trailing run of strict epoch-over-epoch increases."""
    run = 0
    for prev, cur in zip(history[-2::-1], history[::-1]):
        if cur > prev:
            run += 1
        else:
            break
    return run


def plateau_policy(state: LrState, val_loss_history: Sequence[float]) -> LrState:
    """Halve the LR once a run of increases reaches 3 epochs; halt when it reaches 6.

    Pure in (state, history): ``state.bad_epochs`` is the run length the caller
    last saw, so calling once per epoch halves exactly once per run.
    """
    if not val_loss_history:
        raise ValueError("validation history is empty")
    run = consecutive_increases(val_loss_history)
    lr = state.lr
    for k in range(state.bad_epochs + 1, run + 1):
        if k % HALVE_AFTER == 0 and k < STOP_AFTER:
            lr /= 2
    return replace(state, lr=lr, bad_epochs=run, halted=state.halted or run >= STOP_AFTER)


def warmup_lr(step: int, model_dim: int, warmup_steps: int, scale: float = 1.0) -> float:
    """Linear warmup then inverse-square-root decay: d^-0.5 * min(step^-0.5, step * w^-1.5)."""
    if step < 1:
        raise ValueError("step counts from 1")
    return scale * model_dim**-0.5 * min(step**-0.5, step * warmup_steps**-1.5)
