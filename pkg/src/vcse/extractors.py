"""Mask-based extraction networks: the audio-visual and audio-contextual modules,
the composed two-stage model, and the baseline variants compared against it.

Every model exposes ``groups`` (named parameter groups used for freezing and
checkpointing), ``run(batch, context_source)`` returning an
:class:`ExtractorOutput`, and ``stage_loss(batch, loss_target, context_source)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import torch
import torch.nn as nn

from . import signals
from .asr import ASRModel
from .config import ModelConfig
from .frontends import build_audio_pair, build_context_encoder, build_visual_encoder

VariantKind = Literal["pit", "a_s", "av", "ac_oracle", "avc_oracle", "vcse", "vcsev"]
VARIANTS: tuple[str, ...] = ("pit", "a_s", "av", "ac_oracle", "avc_oracle", "vcse", "vcsev")
FEATURE_RATE = 25.0

# Table-style display names and reference taxonomy per variant.
DISPLAY = {
    "pit": ("Conv-TasNet (PIT)", "-"),
    "a_s": ("A_S-ConvTasNet", "A_S"),
    "av": ("AV-ConvTasNet", "V"),
    "ac_oracle": ("AC-ConvTasNet", "C (Oracle)"),
    "avc_oracle": ("AVC-ConvTasNet", "V+C (Oracle)"),
    "vcse": ("VCSE", "V+C"),
    "vcsev": ("VCSEv", "V+C"),
}


@dataclass
class ExtractorOutput:
    """Outputs of one forward pass. ``refined`` is always the variant's final estimate."""

    refined: torch.Tensor
    pre_extracted: torch.Tensor | None = None
    phonetic: torch.Tensor | None = None


@dataclass(frozen=True)
class VariantConfig:
    kind: str
    toy_scale: bool = True
    seed: int = 0


class TemporalBlock(nn.Module):
    """Conv-TasNet block: 1x1 expand, dilated depthwise conv, 1x1 project, residual."""

    def __init__(self, bottleneck: int, hidden: int, kernel: int, dilation: int):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv1d(bottleneck, hidden, 1),
            nn.PReLU(),
            nn.GroupNorm(1, hidden),
            nn.Conv1d(hidden, hidden, kernel, dilation=dilation, padding=dilation * (kernel - 1) // 2, groups=hidden),
            nn.PReLU(),
            nn.GroupNorm(1, hidden),
            nn.Conv1d(hidden, bottleneck, 1),
        )

    def forward(self, x):
        return x + self.net(x)


class MaskEstimator(nn.Module):
    """TCN over the channel-concatenation of the mixture latent and its reference streams.

    Each input stream is layer-normalised on its own before the bottleneck.
    Outputs sigmoid masks shaped like the mixture latent, (B, N, F), or
    (B, n_masks, N, F) when ``n_masks > 1``.
    """

    def __init__(self, n_streams: int, n_masks: int = 1, n_channels: int = 256, bottleneck: int = 256,
                 hidden: int = 512, kernel: int = 3, repeats: int = 3, blocks: int = 8):
        super().__init__()
        self.n_streams, self.n_masks, self.n_channels = n_streams, n_masks, n_channels
        self.input_norm = nn.GroupNorm(n_streams, n_streams * n_channels)
        self.bottleneck = nn.Conv1d(n_streams * n_channels, bottleneck, 1)
        self.tcn = nn.Sequential(*[
            TemporalBlock(bottleneck, hidden, kernel, 2**b) for _ in range(repeats) for b in range(blocks)
        ])
        self.output = nn.Sequential(nn.PReLU(), nn.Conv1d(bottleneck, n_masks * n_channels, 1))

    @classmethod
    def from_config(cls, cfg: ModelConfig, n_streams: int, n_masks: int = 1) -> "MaskEstimator":
        return cls(n_streams, n_masks, cfg.n_channels, cfg.tcn_bottleneck, cfg.tcn_hidden, cfg.tcn_kernel,
                   cfg.tcn_repeats, cfg.tcn_blocks)

    def forward(self, x_e: torch.Tensor, refs: list[torch.Tensor] = ()) -> torch.Tensor:
        refs = list(refs)
        if len(refs) + 1 != self.n_streams:
            raise ValueError(f"mask estimator built for {self.n_streams} streams, got {len(refs) + 1}")
        for r in refs:
            if r.shape[-1] != x_e.shape[-1]:
                raise ValueError(f"frame-count mismatch: mixture {x_e.shape[-1]} vs reference {r.shape[-1]}")
        h = self.input_norm(torch.cat([x_e, *refs], dim=1))
        h = self.tcn(self.bottleneck(h))
        mask = torch.sigmoid(self.output(h))
        if self.n_masks == 1:
            return mask
        return mask.view(mask.shape[0], self.n_masks, self.n_channels, -1)


def estimate_mask(estimator: MaskEstimator, x_e: torch.Tensor, refs: list[torch.Tensor] = ()) -> torch.Tensor:
    return estimator(x_e, refs)


def _check_lengths(x: torch.Tensor, other: torch.Tensor, what: str):
    if x.shape[-1] != other.shape[-1]:
        raise ValueError(f"{what} length {other.shape[-1]} does not match mixture length {x.shape[-1]}")


def _check_lip_duration(x: torch.Tensor, lips: torch.Tensor, stride: int):
    n_audio = -(-x.shape[-1] // stride)
    n_video = lips.shape[1] * 32
    if abs(n_audio - n_video) > 32:
        raise ValueError(f"lip sequence ({lips.shape[1]} frames) does not match audio duration ({x.shape[-1]} samples)")


class AudioVisualExtractor(nn.Module):
    """Stage 1: mixture + lip frames -> pre-extracted target speech."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.encoder, self.decoder = build_audio_pair(cfg)
        self.visual = build_visual_encoder(cfg)
        self.mask = MaskEstimator.from_config(cfg, n_streams=2)

    def forward(self, mixture: torch.Tensor, lips: torch.Tensor) -> torch.Tensor:
        _check_lip_duration(mixture, lips, self.encoder.stride)
        x_e = self.encoder(mixture)
        v_e = self.visual(lips, self.encoder.frame_rate, n_frames=x_e.shape[-1])
        m = self.mask(x_e, [v_e])
        return self.decoder(m * x_e, mixture.shape[-1])


class AudioContextualExtractor(nn.Module):
    """Stage 2: refine using phonetic features; one audio encoder serves mixture and pre-extraction.

    With ``use_preextracted=False`` the pre-extracted stream is not an input
    (the VCSEv / AC-oracle configurations).
    """

    def __init__(self, cfg: ModelConfig, use_preextracted: bool = True):
        super().__init__()
        self.use_preextracted = use_preextracted
        self.encoder, self.decoder = build_audio_pair(cfg)
        self.context = build_context_encoder(cfg)
        self.mask = MaskEstimator.from_config(cfg, n_streams=3 if use_preextracted else 2)

    def forward(self, mixture: torch.Tensor, phonetic: torch.Tensor, pre_extracted: torch.Tensor | None = None,
                ablate_preextracted: bool = False) -> torch.Tensor:
        x_e = self.encoder(mixture)
        c_e = self.context(phonetic, FEATURE_RATE, self.encoder.frame_rate, n_frames=x_e.shape[-1])
        refs = [c_e]
        if self.use_preextracted:
            if pre_extracted is None:
                raise ValueError("this extractor consumes the pre-extracted speech")
            _check_lengths(mixture, pre_extracted, "pre-extracted speech")
            s_e = self.encoder(pre_extracted)
            refs.insert(0, torch.zeros_like(s_e) if ablate_preextracted else s_e)
        m = self.mask(x_e, refs)
        return self.decoder(m * x_e, mixture.shape[-1])


class VCSE(nn.Module):
    """Two-stage visual-contextual extractor (``vcse``) or its variant without s_av input (``vcsev``)."""

    def __init__(self, cfg: ModelConfig, use_preextracted: bool = True):
        super().__init__()
        self.kind = "vcse" if use_preextracted else "vcsev"
        self.audio_visual = AudioVisualExtractor(cfg)
        self.asr = ASRModel.from_config(cfg)
        self.audio_contextual = AudioContextualExtractor(cfg, use_preextracted)

    @property
    def groups(self) -> dict[str, nn.Module]:
        return {"audio_visual": self.audio_visual, "asr": self.asr, "audio_contextual": self.audio_contextual}

    def forward(self, mixture, lips, oracle_clean=None, ablate_preextracted: bool = False) -> ExtractorOutput:
        s_av = self.audio_visual(mixture, lips)
        c = self.asr(oracle_clean if oracle_clean is not None else s_av)
        s_ac = self.audio_contextual(mixture, c, s_av, ablate_preextracted=ablate_preextracted)
        return ExtractorOutput(refined=s_ac, pre_extracted=s_av, phonetic=c)

    def run(self, batch, context_source: str = "pre_extracted", **kwargs) -> ExtractorOutput:
        oracle = batch.clean if context_source == "clean_oracle" else None
        return self(batch.mixture, batch.lips, oracle, **kwargs)

    def stage_loss(self, batch, loss_target: str, context_source: str = "pre_extracted") -> torch.Tensor:
        if loss_target == "s_av":
            return signals.si_snr_loss(batch.clean, self.audio_visual(batch.mixture, batch.lips)).mean()
        if loss_target == "ctc":
            return self.asr.ctc_loss(self.asr(batch.clean), batch.transcripts)
        if loss_target == "s_ac":
            return signals.si_snr_loss(batch.clean, self.run(batch, context_source).refined).mean()
        raise ValueError(f"unknown loss target {loss_target!r}")


class AudioVisualOnly(nn.Module):
    """Single-stage AV extractor baseline."""

    kind = "av"

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.audio_visual = AudioVisualExtractor(cfg)

    @property
    def groups(self):
        return {"audio_visual": self.audio_visual}

    def run(self, batch, context_source: str = "none", **kwargs) -> ExtractorOutput:
        s_av = self.audio_visual(batch.mixture, batch.lips)
        return ExtractorOutput(refined=s_av, pre_extracted=s_av)

    def stage_loss(self, batch, loss_target="s_av", context_source="none"):
        return signals.si_snr_loss(batch.clean, self.run(batch).refined).mean()


class PITSeparator(nn.Module):
    """Blind two-speaker Conv-TasNet trained with permutation invariant SI-SNR."""

    kind = "pit"

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.separator = nn.ModuleDict()
        self.separator["encoder"], self.separator["decoder"] = build_audio_pair(cfg)
        self.separator["mask"] = MaskEstimator.from_config(cfg, n_streams=1, n_masks=2)

    @property
    def groups(self):
        return {"separator": self.separator}

    def forward(self, mixture: torch.Tensor) -> torch.Tensor:
        enc, dec, mask = self.separator["encoder"], self.separator["decoder"], self.separator["mask"]
        x_e = enc(mixture)
        masks = mask(x_e)
        out = [dec(masks[:, i] * x_e, mixture.shape[-1]) for i in range(masks.shape[1])]
        return torch.stack(out, dim=1)

    def run(self, batch, context_source="none", **kwargs) -> ExtractorOutput:
        return ExtractorOutput(refined=self(batch.mixture))

    def stage_loss(self, batch, loss_target="s_av", context_source="none"):
        refs = torch.stack([batch.clean, batch.interferer], dim=1)
        loss, _ = signals.batch_pit_loss(refs, self(batch.mixture))
        return loss.mean()


class SpeakerEmbeddingExtractor(nn.Module):
    """Extraction conditioned on an enrollment utterance of the target speaker.

    The speaker embedding is the time-averaged encoder latent of the
    enrollment speech passed through a linear layer, broadcast over frames.
    """

    kind = "a_s"

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.audio_speaker = nn.ModuleDict()
        self.audio_speaker["encoder"], self.audio_speaker["decoder"] = build_audio_pair(cfg)
        self.audio_speaker["speaker"] = nn.Linear(cfg.n_channels, cfg.n_channels)
        self.audio_speaker["mask"] = MaskEstimator.from_config(cfg, n_streams=2)

    @property
    def groups(self):
        return {"audio_speaker": self.audio_speaker}

    def forward(self, mixture: torch.Tensor, enrollment: torch.Tensor) -> torch.Tensor:
        g = self.audio_speaker
        x_e = g["encoder"](mixture)
        spk = g["speaker"](g["encoder"](enrollment).mean(dim=-1))
        ref = spk.unsqueeze(-1).expand(-1, -1, x_e.shape[-1])
        return g["decoder"](g["mask"](x_e, [ref]) * x_e, mixture.shape[-1])

    def run(self, batch, context_source="none", **kwargs) -> ExtractorOutput:
        if batch.enrollment is None:
            raise ValueError("the A_S variant needs an enrollment utterance")
        return ExtractorOutput(refined=self(batch.mixture, batch.enrollment))

    def stage_loss(self, batch, loss_target="s_av", context_source="none"):
        return signals.si_snr_loss(batch.clean, self.run(batch).refined).mean()


class OracleContextExtractor(nn.Module):
    """Single-stage extraction from oracle phonetic features, optionally plus lips (``avc_oracle``)."""

    def __init__(self, cfg: ModelConfig, with_visual: bool):
        super().__init__()
        self.kind = "avc_oracle" if with_visual else "ac_oracle"
        self.group_name = "audio_visual_contextual" if with_visual else "audio_contextual"
        self.asr = ASRModel.from_config(cfg)
        main = nn.ModuleDict()
        main["encoder"], main["decoder"] = build_audio_pair(cfg)
        main["context"] = build_context_encoder(cfg)
        if with_visual:
            main["visual"] = build_visual_encoder(cfg)
        main["mask"] = MaskEstimator.from_config(cfg, n_streams=3 if with_visual else 2)
        self.main = main

    @property
    def groups(self):
        return {"asr": self.asr, self.group_name: self.main}

    def forward(self, mixture, clean, lips=None) -> ExtractorOutput:
        g = self.main
        x_e = g["encoder"](mixture)
        c = self.asr(clean)
        refs = []
        if "visual" in g:
            refs.append(g["visual"](lips, g["encoder"].frame_rate, n_frames=x_e.shape[-1]))
        refs.append(g["context"](c, FEATURE_RATE, g["encoder"].frame_rate, n_frames=x_e.shape[-1]))
        out = g["decoder"](g["mask"](x_e, refs) * x_e, mixture.shape[-1])
        return ExtractorOutput(refined=out, phonetic=c)

    def run(self, batch, context_source="clean_oracle", **kwargs) -> ExtractorOutput:
        return self(batch.mixture, batch.clean, batch.lips)

    def stage_loss(self, batch, loss_target="s_ac", context_source="clean_oracle"):
        if loss_target == "ctc":
            return self.asr.ctc_loss(self.asr(batch.clean), batch.transcripts)
        return signals.si_snr_loss(batch.clean, self.run(batch).refined).mean()


def build_variant(kind: str, cfg: ModelConfig, seed: int | None = None) -> nn.Module:
    """Construct the architecture for one row of the variant matrix."""
    if seed is not None:
        torch.manual_seed(seed)
    if kind == "pit":
        return PITSeparator(cfg)
    if kind == "a_s":
        return SpeakerEmbeddingExtractor(cfg)
    if kind == "av":
        return AudioVisualOnly(cfg)
    if kind == "ac_oracle":
        return OracleContextExtractor(cfg, with_visual=False)
    if kind == "avc_oracle":
        return OracleContextExtractor(cfg, with_visual=True)
    if kind in ("vcse", "vcsev"):
        return VCSE(cfg, use_preextracted=kind == "vcse")
    raise ValueError(f"unknown variant {kind!r}; expected one of {VARIANTS}")


def warm_start_contextual(model: VCSE) -> None:
    """Initialise the AC extractor from the trained stage-1 weights where shapes allow.

    The audio encoder/decoder and TCN blocks are copied; the AC mask bottleneck
    receives the stage-1 mixture-stream weights. Parameters stay disjoint.
    """
    av, ac = model.audio_visual, model.audio_contextual
    with torch.no_grad():
        ac.encoder.load_state_dict(av.encoder.state_dict())
        ac.decoder.load_state_dict(av.decoder.state_dict())
        ac.mask.tcn.load_state_dict(av.mask.tcn.state_dict())
        ac.mask.output.load_state_dict(av.mask.output.state_dict())
        n = av.mask.n_channels
        ac.mask.bottleneck.weight.zero_()
        ac.mask.bottleneck.weight[:, :n] = av.mask.bottleneck.weight[:, :n]
        ac.mask.bottleneck.bias.copy_(av.mask.bottleneck.bias)
        ac.mask.input_norm.weight[:n] = av.mask.input_norm.weight[:n]
        ac.mask.input_norm.bias[:n] = av.mask.input_norm.bias[:n]
