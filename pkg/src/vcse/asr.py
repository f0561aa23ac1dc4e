"""Transformer-encoder ASR with a CTC head; its encoder output is the phonetic feature stream."""

from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import ModelConfig

SAMPLE_RATE = 16000
WIN_LENGTH = 400  # 25 ms
HOP_LENGTH = 160  # 10 ms
N_FFT = 512
FEATURE_DIM = 256
MIN_DURATION_S = 0.2

BLANK = "<blank>"
SPACE = "<space>"
CHARACTERS = [BLANK, *"ABCDEFGHIJKLMNOPQRSTUVWXYZ", " ", "'"]


class Vocabulary:
    """Character vocabulary; id 0 is the CTC blank."""

    def __init__(self, tokens: Sequence[str] = CHARACTERS):
        if tokens[0] != BLANK:
            raise ValueError("token 0 must be the blank")
        self.tokens = list(tokens)
        self.index = {t: i for i, t in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def blank(self) -> int:
        return 0

    def encode(self, text: str) -> list[int]:
        try:
            return [self.index[ch] for ch in text.upper()]
        except KeyError as exc:
            raise ValueError(f"character {exc.args[0]!r} not in vocabulary") from None

    def decode(self, ids: Sequence[int]) -> str:
        return "".join(self.tokens[i] for i in ids if i != self.blank)

    def save(self, path: str | Path) -> None:
        lines = [SPACE if t == " " else t for t in self.tokens]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls([" " if t == SPACE else t for t in lines])


def mel_filterbank(n_mels: int = 80, n_fft: int = N_FFT, sample_rate: int = SAMPLE_RATE) -> torch.Tensor:
    """HTK-scale triangular filters, (n_mels, n_fft // 2 + 1)."""
    def hz_to_mel(f):
        return 2595.0 * np.log10(1.0 + f / 700.0)

    def mel_to_hz(m):
        return 700.0 * (10 ** (m / 2595.0) - 1.0)

    edges = mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(sample_rate / 2), n_mels + 2))
    freqs = np.linspace(0, sample_rate / 2, n_fft // 2 + 1)
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lower) / (center - lower)
    falling = (upper - freqs) / (upper - center)
    return torch.as_tensor(np.maximum(0.0, np.minimum(rising, falling)), dtype=torch.float32)


class LogMel(nn.Module):
    """(B, L) -> (B, L // 160, n_mels) log-mel with per-utterance mean/variance normalisation.

    Normalising per utterance makes the features insensitive to the arbitrary
    gain of SI-SNR-trained estimates.
    """

    def __init__(self, n_mels: int = 80):
        super().__init__()
        self.register_buffer("fbank", mel_filterbank(n_mels), persistent=False)
        self.register_buffer("window", torch.hann_window(WIN_LENGTH), persistent=False)

    def n_frames(self, n_samples: int) -> int:
        return n_samples // HOP_LENGTH

    def forward(self, wav: torch.Tensor) -> torch.Tensor:
        side = (N_FFT - HOP_LENGTH) // 2
        wav = F.pad(wav, (side, side))
        spec = torch.stft(wav, N_FFT, HOP_LENGTH, WIN_LENGTH, self.window, center=False, return_complex=True)
        mel = torch.matmul(self.fbank, spec.abs().pow(2))
        feats = torch.log(mel + 1e-6).transpose(1, 2)
        mean = feats.mean(dim=1, keepdim=True)
        std = feats.std(dim=1, keepdim=True)
        return (feats - mean) / (std + 1e-5)


class Conv2dSubsampling(nn.Module):
    """Two stride-2 conv layers: 4x temporal reduction."""

    def __init__(self, n_mels: int, d_model: int, channels: int):
        super().__init__()
        self.conv = nn.Sequential(
            nn.Conv2d(1, channels, 3, 2, 1), nn.ReLU(),
            nn.Conv2d(channels, channels, 3, 2, 1), nn.ReLU(),
        )
        freq = math.ceil(math.ceil(n_mels / 2) / 2)
        self.out = nn.Linear(channels * freq, d_model)

    @staticmethod
    def n_frames(n_in: int) -> int:
        return math.ceil(math.ceil(n_in / 2) / 2)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.conv(x.unsqueeze(1))  # (B, C, T/4, F/4)
        b, c, t, f = x.shape
        return self.out(x.transpose(1, 2).reshape(b, t, c * f))


def sinusoidal_encoding(length: int, dim: int) -> torch.Tensor:
    pos = torch.arange(length, dtype=torch.float32)[:, None]
    div = torch.exp(torch.arange(0, dim, 2, dtype=torch.float32) * (-math.log(10000.0) / dim))
    pe = torch.zeros(length, dim)
    pe[:, 0::2] = torch.sin(pos * div)
    pe[:, 1::2] = torch.cos(pos * div)
    return pe


class ASREncoder(nn.Module):
    """Waveform -> phonetic features (B, 256, T_c) at ~25 frames/s."""

    def __init__(self, n_mels=80, d_model=FEATURE_DIM, n_layers=6, n_heads=4, d_ff=1024, dropout=0.1,
                 subsample_channels=256):
        super().__init__()
        self.d_model = d_model
        self.frontend = LogMel(n_mels)
        self.subsample = Conv2dSubsampling(n_mels, d_model, subsample_channels)
        layer = nn.TransformerEncoderLayer(d_model, n_heads, d_ff, dropout, batch_first=True, norm_first=True)
        self.transformer = nn.TransformerEncoder(layer, n_layers, enable_nested_tensor=False)
        self.norm = nn.LayerNorm(d_model)
        self.dropout = nn.Dropout(dropout)

    def n_frames(self, n_samples: int) -> int:
        return Conv2dSubsampling.n_frames(self.frontend.n_frames(n_samples))

    def forward(self, wav: torch.Tensor) -> torch.Tensor:
        if wav.shape[-1] < MIN_DURATION_S * SAMPLE_RATE:
            raise ValueError(f"ASR input must be at least {MIN_DURATION_S} s, got {wav.shape[-1]} samples")
        x = self.subsample(self.frontend(wav))
        x = x * math.sqrt(self.d_model) + sinusoidal_encoding(x.shape[1], self.d_model).to(x)
        x = self.norm(self.transformer(self.dropout(x)))
        return x.transpose(1, 2)


class ASRModel(nn.Module):
    """Encoder plus the linear CTC projection used only for pretraining and decoding."""

    def __init__(self, encoder: ASREncoder, vocab: Vocabulary | None = None):
        super().__init__()
        self.vocab = vocab or Vocabulary()
        self.encoder = encoder
        self.ctc_head = nn.Linear(encoder.d_model, len(self.vocab))

    @classmethod
    def from_config(cls, cfg: ModelConfig, vocab: Vocabulary | None = None) -> "ASRModel":
        enc = ASREncoder(cfg.n_mels, FEATURE_DIM, cfg.asr_layers, cfg.asr_heads, cfg.asr_ff,
                         cfg.asr_dropout, cfg.asr_subsample_channels)
        return cls(enc, vocab)

    def forward(self, wav: torch.Tensor) -> torch.Tensor:
        return self.encoder(wav)

    def logits(self, features: torch.Tensor) -> torch.Tensor:
        """(B, 256, T) -> (B, T, V)."""
        return self.ctc_head(features.transpose(1, 2))

    def ctc_loss(self, features: torch.Tensor, transcripts: Sequence[str]) -> torch.Tensor:
        targets = [self.vocab.encode(t) for t in transcripts]
        return ctc_loss(self.logits(features), targets).mean()

    def transcribe(self, wav: torch.Tensor) -> list[str]:
        return [self.vocab.decode(ids) for ids in greedy_decode(self.logits(self.encoder(wav)))]


def min_ctc_frames(labels: Sequence[int]) -> int:
    """Shortest frame count admitting a CTC alignment: one frame per label plus a blank between repeats."""
    repeats = sum(1 for a, b in zip(labels, labels[1:]) if a == b)
    return len(labels) + repeats


def ctc_loss(logits: torch.Tensor, targets: Sequence[Sequence[int]], blank: int = 0) -> torch.Tensor:
    """Per-utterance CTC negative log-likelihood.

    ``logits`` is (B, T, V) or (T, V); ``targets`` a label-id sequence per
    utterance. Returns a (B,) tensor (0-d for unbatched input).
    """
    unbatched = logits.dim() == 2
    if unbatched:
        logits, targets = logits.unsqueeze(0), [targets]
    n_frames = logits.shape[1]
    for labels in targets:
        if any(t == blank for t in labels):
            raise ValueError("targets must not contain the blank token")
        if min_ctc_frames(labels) > n_frames:
            raise ValueError(f"transcript needs {min_ctc_frames(labels)} frames, only {n_frames} available")
    log_probs = logits.log_softmax(dim=-1).transpose(0, 1)
    flat = torch.as_tensor([t for labels in targets for t in labels], dtype=torch.long)
    target_lengths = torch.as_tensor([len(t) for t in targets], dtype=torch.long)
    input_lengths = torch.full((logits.shape[0],), n_frames, dtype=torch.long)
    loss = F.ctc_loss(log_probs, flat, input_lengths, target_lengths, blank=blank, reduction="none")
    return loss[0] if unbatched else loss


def greedy_decode(logits: torch.Tensor, blank: int = 0) -> list[list[int]]:
    """Best-path decoding: argmax per frame, merge repeats, drop blanks. (B, T, V) -> ids."""
    if logits.dim() == 2:
        logits = logits.unsqueeze(0)
    out = []
    for path in logits.argmax(dim=-1).tolist():
        ids, prev = [], None
        for p in path:
            if p != prev and p != blank:
                ids.append(p)
            prev = p
        out.append(ids)
    return out


def edit_distance(a: Sequence, b: Sequence) -> int:
    row = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        prev, row[0] = row[0], i
        for j, cb in enumerate(b, 1):
            prev, row[j] = row[j], min(row[j] + 1, row[j - 1] + 1, prev + (ca != cb))
    return row[-1]


def character_error_rate(hyps: Sequence[str], refs: Sequence[str]) -> float:
    errors = sum(edit_distance(h, r) for h, r in zip(hyps, refs))
    return errors / max(1, sum(len(r) for r in refs))
