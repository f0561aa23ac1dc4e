"""Numerical core: SI-SNR, BSS-eval style SDR, improvement metrics, SNR mixing, PIT.

Differentiable quantities (``si_snr``, ``si_snr_loss``, ``pit_loss``) are written
in torch and accept a leading batch dimension. Evaluation-only quantities
(``sdr``, ``mix_at_snr``) work on numpy arrays in float64.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Literal

import numpy as np
import scipy.linalg
import scipy.signal
import torch

SAMPLE_RATE = 16000
EPS = 1e-8
SDR_FILTER_LENGTH = 512

WaveRole = Literal["mixture", "clean", "estimate", "enrollment"]


@dataclass
class Waveform:
    """A mono 16 kHz signal with a provenance tag."""

    samples: np.ndarray
    role: WaveRole = "clean"
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise ValueError("waveform must be a non-empty 1-D signal")
        if self.sample_rate != SAMPLE_RATE:
            raise ValueError(f"sample_rate must be {SAMPLE_RATE}, got {self.sample_rate}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("waveform contains non-finite samples")

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class MetricReport:
    si_snr_db: float
    sdr_db: float
    si_snri_db: float
    sdri_db: float


def _as_tensor(x) -> torch.Tensor:
    if isinstance(x, Waveform):
        x = x.samples
    if isinstance(x, torch.Tensor):
        return x
    return torch.as_tensor(np.asarray(x, dtype=np.float64))


def _as_array(x) -> np.ndarray:
    if isinstance(x, Waveform):
        return x.samples
    if isinstance(x, torch.Tensor):
        return x.detach().cpu().double().numpy()
    return np.asarray(x, dtype=np.float64)


def _floored_db(target_energy, noise_energy, eps: float = EPS):
    # Relative floor caps the ratio at 1/eps (80 dB for eps=1e-8); the
    # absolute term only guards 0/0 and -inf.
    lib = torch if isinstance(target_energy, torch.Tensor) else np
    tiny = torch.finfo(target_energy.dtype).tiny if lib is torch else np.finfo(np.float64).tiny
    return 10 * lib.log10((target_energy + tiny) / (noise_energy + eps * target_energy + tiny))


def si_snr(s, s_hat, *, zero_mean: bool = False, eps: float = EPS) -> torch.Tensor:
    """Scale-invariant SNR in dB over the last axis.

    ``s`` is the reference, ``s_hat`` the estimate. Returns a tensor with the
    batch shape of the inputs (a 0-d tensor for 1-D inputs).
    """
    s, s_hat = _as_tensor(s), _as_tensor(s_hat)
    if s.shape[-1] != s_hat.shape[-1]:
        raise ValueError(f"length mismatch: {s.shape[-1]} vs {s_hat.shape[-1]}")
    if zero_mean:
        s = s - s.mean(dim=-1, keepdim=True)
        s_hat = s_hat - s_hat.mean(dim=-1, keepdim=True)
    ref_energy = (s * s).sum(dim=-1, keepdim=True)
    if bool((ref_energy == 0).any()):
        raise ValueError("reference signal is all zeros; SI-SNR projection undefined")
    s_target = (s_hat * s).sum(dim=-1, keepdim=True) / ref_energy * s
    e_noise = s_hat - s_target
    return _floored_db(s_target.pow(2).sum(-1), e_noise.pow(2).sum(-1), eps)


def si_snr_loss(s, s_hat, **kwargs) -> torch.Tensor:
    """Negative SI-SNR; minimise this to train an extractor."""
    return -si_snr(s, s_hat, **kwargs)


def pit_loss(refs, ests, **kwargs) -> tuple[torch.Tensor, tuple[int, ...]]:
    """Two-speaker permutation invariant SI-SNR loss for a single example.

    ``refs`` and ``ests`` are (n_spk, T). Returns the mean ``si_snr_loss`` under
    the best assignment and that assignment, where ``perm[i]`` is the estimate
    matched to reference ``i``.
    """
    refs, ests = _as_tensor(refs), _as_tensor(ests)
    if refs.shape != ests.shape:
        raise ValueError(f"shape mismatch: {tuple(refs.shape)} vs {tuple(ests.shape)}")
    best_loss, best_perm = None, None
    for perm in itertools.permutations(range(refs.shape[0])):
        loss = si_snr_loss(refs, ests[list(perm)], **kwargs).mean()
        if best_loss is None or loss < best_loss:
            best_loss, best_perm = loss, perm
    return best_loss, best_perm


def batch_pit_loss(refs: torch.Tensor, ests: torch.Tensor, **kwargs) -> tuple[torch.Tensor, torch.Tensor]:
    """Batched PIT over (B, n_spk, T). Returns per-example losses and permutations."""
    perms = list(itertools.permutations(range(refs.shape[1])))
    losses = torch.stack(
        [si_snr_loss(refs, ests[:, list(p)], **kwargs).mean(dim=-1) for p in perms], dim=-1
    )
    best, idx = losses.min(dim=-1)
    return best, torch.as_tensor(perms)[idx]


def _shift_gram(ref: np.ndarray, n_taps: int) -> np.ndarray:
    """Gram matrix of the first ``n_taps`` delayed copies of ``ref``, truncated to len(ref).

    Entry (i, j) is the full autocorrelation at lag |i - j| minus the part of
    the sum that falls off the end of the signal for the later copy.
    """
    n = ref.size
    n_fft = 1 << (2 * n - 1).bit_length()
    spec = np.fft.rfft(ref, n_fft)
    autocorr = np.fft.irfft(spec * np.conj(spec), n_fft)[:n_taps]
    tail = ref[n - n_taps:]
    lag = np.arange(n_taps)[:, None]
    pos = np.arange(n_taps)[None, :]
    valid = pos + lag < n_taps
    prods = np.where(valid, tail[pos] * tail[np.minimum(pos + lag, n_taps - 1)], 0.0)
    # suffix[k, m] = sum_{v >= m} prods[k, v]; one zero column for empty sums
    suffix = np.concatenate([np.cumsum(prods[:, ::-1], axis=1)[:, ::-1], np.zeros((n_taps, 1))], axis=1)
    i, j = np.meshgrid(np.arange(n_taps), np.arange(n_taps), indexing="ij")
    lo, hi = np.minimum(i, j), np.maximum(i, j)
    k = hi - lo
    return autocorr[k] - suffix[k, n_taps - hi]


def _cross_correlation(ref: np.ndarray, est: np.ndarray, n_taps: int) -> np.ndarray:
    n_fft = 1 << (2 * ref.size - 1).bit_length()
    return np.fft.irfft(np.fft.rfft(est, n_fft) * np.conj(np.fft.rfft(ref, n_fft)), n_fft)[:n_taps]


def sdr(s, s_hat, *, filter_length: int = SDR_FILTER_LENGTH, fast: bool = False, eps: float = EPS) -> float:
    """Signal-to-distortion ratio in dB.

    The target component is the least-squares projection of the estimate onto
    the span of ``filter_length`` delayed copies of the reference (each cut to
    the signal length), so a short linear filter applied to the reference is
    not counted as distortion. ``fast=True`` falls back to the plain energy
    ratio ``||s||^2 / ||s - s_hat||^2``.
    """
    s, s_hat = _as_array(s), _as_array(s_hat)
    if s.shape != s_hat.shape or s.ndim != 1:
        raise ValueError(f"expected equal-length 1-D signals, got {s.shape} and {s_hat.shape}")
    if fast:
        return float(_floored_db(np.dot(s, s), np.sum((s - s_hat) ** 2), eps))
    if s.size < filter_length:
        raise ValueError(f"reference shorter than filter length {filter_length}")
    if not np.any(s):
        raise ValueError("reference signal is all zeros")
    gram = _shift_gram(s, filter_length)
    # Diagonal loading keeps the solve stable for band-limited references.
    gram[np.diag_indices_from(gram)] += 1e-10 * gram[0, 0]
    taps = scipy.linalg.solve(gram, _cross_correlation(s, s_hat, filter_length), assume_a="pos")
    s_target = scipy.signal.fftconvolve(s, taps)[: s.size]
    e_noise = s_hat - s_target
    return float(_floored_db(np.dot(s_target, s_target), np.dot(e_noise, e_noise), eps))


def improvement(metric: Literal["si_snr", "sdr"], s, s_hat, x, **kwargs) -> float:
    """Metric gain of the estimate over the unprocessed mixture: m(s, ŝ) - m(s, x)."""
    s, s_hat, x = _as_array(s), _as_array(s_hat), _as_array(x)
    if not (s.shape == s_hat.shape == x.shape):
        raise ValueError("reference, estimate and mixture must have equal lengths")
    if metric == "si_snr":
        fn = lambda a, b: float(si_snr(a, b, **kwargs))  # noqa: E731
    elif metric == "sdr":
        fn = lambda a, b: sdr(a, b, **kwargs)  # noqa: E731
    else:
        raise ValueError(f"unknown metric {metric!r}")
    return fn(s, s_hat) - fn(s, x)


def metric_report(s, s_hat, x, *, fast_sdr: bool = False) -> MetricReport:
    s, s_hat, x = _as_array(s), _as_array(s_hat), _as_array(x)
    est_si, mix_si = float(si_snr(s, s_hat)), float(si_snr(s, x))
    est_sdr, mix_sdr = sdr(s, s_hat, fast=fast_sdr), sdr(s, x, fast=fast_sdr)
    return MetricReport(est_si, est_sdr, est_si - mix_si, est_sdr - mix_sdr)


def power(x: np.ndarray) -> float:
    """Mean squared sample value."""
    return float(np.mean(np.square(x, dtype=np.float64)))


def mix_at_snr(s1, s2, snr_db: float) -> tuple[np.ndarray, np.ndarray]:
    """Scale ``s2`` so that P(s1)/P(g·s2) equals ``snr_db`` and add it to ``s1``.

    Returns ``(mixture, scaled_s2)``. Float inputs keep their dtype; the gain
    is always computed in float64.
    """
    s1, s2 = np.asarray(s1), np.asarray(s2)
    if s1.shape != s2.shape:
        raise ValueError(f"length mismatch: {s1.shape} vs {s2.shape}")
    p1, p2 = power(s1), power(s2)
    if p1 == 0 or p2 == 0:
        raise ValueError("cannot mix zero-power signals")
    gain = np.sqrt(p1 / (p2 * 10 ** (snr_db / 10)))
    scaled = s2 * gain
    return s1 + scaled, scaled


def achieved_snr(s1, scaled_s2) -> float:
    return 10 * np.log10(power(s1) / power(scaled_s2))
