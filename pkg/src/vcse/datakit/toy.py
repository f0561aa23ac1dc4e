"""Synthetic audio-visual corpus that stands in for a real lip-reading dataset in tests.

Each speaker has a harmonic voice with its own pitch range and vocal-tract
scale. Letters select formant pairs, each letter is a short voiced bump,
words are separated by pauses. Lip frames are rendered mouth ellipses whose
opening follows the speech envelope at 25 fps.
"""

from __future__ import annotations

import string
from pathlib import Path

import numpy as np

from ..asr import Vocabulary
from .formats import write_lips, write_ndjson, write_wav

SAMPLE_RATE = 16000
FPS = 25
SAMPLES_PER_FRAME = SAMPLE_RATE // FPS
LIP_SIZE = 120
LETTERS = string.ascii_uppercase

# (F1, F2) per letter on a 7 x 4 grid.
_F1 = np.linspace(280.0, 900.0, 7)
_F2 = np.linspace(1000.0, 2600.0, 4)
FORMANTS = {ch: (_F1[i % 7], _F2[i // 7]) for i, ch in enumerate(LETTERS)}


def speaker_profile(index: int, n_speakers: int, rng: np.random.Generator) -> dict:
    span = index / max(1, n_speakers - 1)
    return {
        "f0": 95.0 * (250.0 / 95.0) ** span * rng.uniform(0.97, 1.03),
        "tract": rng.uniform(0.9, 1.15),
        "vibrato_hz": rng.uniform(0.4, 1.2),
        "lip_width": rng.uniform(24.0, 34.0),
        "lip_offset": rng.uniform(-6.0, 6.0, size=2),
    }


def _random_transcript(rng: np.random.Generator, duration_s: float):
    """Letters with onset times; returns (text, [(letter, start_s, dur_s)], speech end)."""
    t = rng.uniform(0.08, 0.3)
    words, segments = [], []
    while True:
        n = int(rng.integers(2, 6))
        durs = rng.uniform(0.09, 0.14, size=n)
        if t + durs.sum() > duration_s - 0.05:
            break
        word = "".join(rng.choice(list(LETTERS), size=n))
        for ch, d in zip(word, durs):
            segments.append((ch, t, d))
            t += d
        words.append(word)
        t += rng.uniform(0.08, 0.25)
    return " ".join(words), segments


def synthesize(profile: dict, segments, duration_s: float, rng: np.random.Generator):
    """Render a voiced utterance. Returns (samples, envelope)."""
    n = int(round(duration_s * SAMPLE_RATE))
    t = np.arange(n) / SAMPLE_RATE
    f0 = profile["f0"] * (1 + 0.04 * np.sin(2 * np.pi * profile["vibrato_hz"] * t + rng.uniform(0, 2 * np.pi)))
    f0 *= 1 - 0.06 * t / duration_s
    phase = 2 * np.pi * np.cumsum(f0) / SAMPLE_RATE

    env = np.zeros(n)
    f1 = np.full(n, 500.0)
    f2 = np.full(n, 1500.0)
    for ch, start, dur in segments:
        a, b = int(start * SAMPLE_RATE), min(n, int((start + dur) * SAMPLE_RATE))
        u = np.linspace(0.0, 1.0, b - a, endpoint=False)
        env[a:b] = rng.uniform(0.6, 1.0) * np.sin(np.pi * u) ** 1.5
        f1[a:b], f2[a:b] = FORMANTS[ch]
    f1 *= profile["tract"]
    f2 *= profile["tract"]

    voice = np.zeros(n)
    n_harm = int(7000 // profile["f0"])
    for h in range(1, n_harm + 1):
        fh = h * f0
        amp = (np.exp(-0.5 * ((fh - f1) / 90.0) ** 2) + 0.7 * np.exp(-0.5 * ((fh - f2) / 130.0) ** 2)
               + 0.05 / h)
        voice += amp * np.sin(h * phase)
    samples = env * voice
    samples *= rng.uniform(0.05, 0.1) / np.sqrt(np.mean(samples**2))
    return samples, env


def frame_apertures(envelope: np.ndarray) -> np.ndarray:
    n_frames = envelope.size // SAMPLES_PER_FRAME
    frames = envelope[: n_frames * SAMPLES_PER_FRAME].reshape(n_frames, SAMPLES_PER_FRAME).mean(axis=1)
    return frames / max(frames.max(), 1e-12)


def render_lips(apertures: np.ndarray, profile: dict) -> np.ndarray:
    """Grey mouth images: skin background, lip ring, dark opening whose height tracks the aperture."""
    yy, xx = np.mgrid[0:LIP_SIZE, 0:LIP_SIZE].astype(np.float64)
    cy, cx = LIP_SIZE / 2 + profile["lip_offset"][0], LIP_SIZE / 2 + profile["lip_offset"][1]
    rx = profile["lip_width"]
    frames = np.empty((apertures.size, LIP_SIZE, LIP_SIZE), dtype=np.uint8)
    for i, a in enumerate(apertures):
        ry = 2.0 + 22.0 * a
        inner = ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2
        outer = ((xx - cx) / (rx + 7)) ** 2 + ((yy - cy) / (ry + 7)) ** 2
        img = np.full(inner.shape, 175.0)
        img = np.where(outer <= 1.0, 110.0, img)
        img = np.where(inner <= 1.0, 30.0, img)
        frames[i] = np.round(img).astype(np.uint8)
    return frames


def mouth_opening(frames: np.ndarray) -> np.ndarray:
    """Dark-pixel area per frame; an image-side estimate of lip aperture."""
    return (frames < 70).reshape(frames.shape[0], -1).sum(axis=1).astype(np.float64)


def generate_toy_corpus(out_dir: str | Path, n_speakers: int = 4, n_utterances: int = 32, seed: int = 0,
                        duration_s: float = 3.0) -> Path:
    """Write ``n_utterances`` utterance directories plus ``manifest.ndjson`` and ``vocab.txt``.

    Utterances are assigned to speakers round-robin. Returns the manifest path.
    """
    if n_speakers < 2:
        raise ValueError("need at least two speakers")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    profiles = [speaker_profile(k, n_speakers, np.random.default_rng([seed, 0, k])) for k in range(n_speakers)]
    rows = []
    for j in range(n_utterances):
        spk = j % n_speakers
        rng = np.random.default_rng([seed, 1, j])
        text, segments = _random_transcript(rng, duration_s)
        samples, env = synthesize(profiles[spk], segments, duration_s, rng)
        lips = render_lips(frame_apertures(env), profiles[spk])
        uid = f"spk{spk:02d}_utt{j:04d}"
        udir = out / uid
        udir.mkdir(exist_ok=True)
        write_wav(udir / "audio.wav", samples)
        write_lips(udir / "lips.lips", lips)
        (udir / "transcript.txt").write_text(text + "\n", encoding="utf-8")
        rows.append({
            "id": uid,
            "speaker_id": f"spk{spk:02d}",
            "audio_path": f"{uid}/audio.wav",
            "lips_path": f"{uid}/lips.lips",
            "transcript_path": f"{uid}/transcript.txt",
            "duration_s": duration_s,
        })
    manifest = out / "manifest.ndjson"
    write_ndjson(manifest, rows)
    Vocabulary().save(out / "vocab.txt")
    return manifest
