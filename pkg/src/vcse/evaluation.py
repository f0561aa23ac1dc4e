"""Test-set evaluation: per-utterance SI-SNRi / SDRi averaged into one table row."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np
import torch

from . import signals
from .datakit import Batch, MixtureRecord, UtteranceCache, load_batch
from .extractors import DISPLAY

REFERENCE_KINDS = ("-", "V", "A_S", "C", "C (Oracle)", "V+C", "V+C (Oracle)")


@dataclass(frozen=True)
class EvalRow:
    model_name: str
    reference_kind: str
    si_snri_db: float
    sdri_db: float
    n_utterances: int

    def __post_init__(self):
        if self.n_utterances < 1:
            raise ValueError("an evaluation row needs at least one utterance")
        if self.reference_kind not in REFERENCE_KINDS:
            raise ValueError(f"unknown reference kind {self.reference_kind!r}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class UtteranceScore:
    id: str
    si_snri_db: float
    sdri_db: float


def _pick_target(estimates: torch.Tensor, batch: Batch) -> torch.Tensor:
    """For two-output separators, keep the output matched to the target under the best permutation."""
    if estimates.dim() == 2:
        return estimates
    refs = torch.stack([batch.clean, batch.interferer], dim=1)
    _, perms = signals.batch_pit_loss(refs.double(), estimates.double())
    return estimates[torch.arange(estimates.shape[0]), perms[:, 0]]


def score_batch(batch: Batch, estimates: torch.Tensor, fast_sdr: bool = False) -> list[UtteranceScore]:
    estimates = _pick_target(estimates, batch)
    out = []
    for i, uid in enumerate(batch.ids):
        s, s_hat, x = (t[i].double().numpy() for t in (batch.clean, estimates, batch.mixture))
        out.append(UtteranceScore(
            uid,
            signals.improvement("si_snr", s, s_hat, x),
            signals.improvement("sdr", s, s_hat, x, fast=fast_sdr),
        ))
    return out


def evaluate(model, test_mixtures: Sequence[MixtureRecord], *, cache: UtteranceCache | None = None,
             output: str = "refined", both_roles: bool = True, batch_size: int = 8, fast_sdr: bool = False,
             name: str | None = None, reference_kind: str | None = None,
             forward: Callable[[Batch], torch.Tensor] | None = None) -> tuple[EvalRow, list[UtteranceScore]]:
    """Average SI-SNRi and SDRi over the test set.

    With ``both_roles`` every mixture is scored twice, once per speaker as the
    target. ``output`` selects ``refined`` (final) or ``pre_extracted``
    (stage-1) estimates. ``forward`` overrides the model call, which is how
    null and oracle models are scored.
    """
    if not test_mixtures:
        raise ValueError("test set is empty")
    cache = cache or UtteranceCache()
    kind = getattr(model, "kind", None)
    display_name, display_ref = DISPLAY.get(kind, (kind or "model", "-"))
    if forward is None:
        model.eval()

        def forward(batch):
            out = model.run(batch)
            est = getattr(out, output)
            if est is None:
                raise ValueError(f"variant {kind!r} has no {output!r} output")
            return est

    scores: list[UtteranceScore] = []
    with torch.no_grad():
        for swap in ((False, True) if both_roles else (False,)):
            for batch in load_batch(test_mixtures, batch_size, cache=cache, swap=swap):
                scores.extend(score_batch(batch, forward(batch), fast_sdr))
    row = EvalRow(
        name or display_name,
        reference_kind or display_ref,
        float(np.mean([s.si_snri_db for s in scores])),
        float(np.mean([s.sdri_db for s in scores])),
        len(scores),
    )
    return row, scores
