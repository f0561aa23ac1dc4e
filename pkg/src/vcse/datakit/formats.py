"""On-disk formats: 16-bit PCM WAV, the LIPS binary frame container, NDJSON manifests."""

from __future__ import annotations

import json
import struct
import wave
from pathlib import Path
from typing import Any, Iterable, Iterator

import numpy as np

SAMPLE_RATE = 16000
LIPS_MAGIC = b"LIPS"
LIPS_VERSION = 1
# magic, version u16, frames u32, height u16, width u16, reserved u16 -> 16 bytes
LIPS_HEADER = struct.Struct("<4sHIHHH")


class FormatError(ValueError):
    """A file exists but does not parse as the expected format."""


def write_wav(path: str | Path, samples: np.ndarray, sample_rate: int = SAMPLE_RATE) -> None:
    pcm = np.clip(np.round(np.asarray(samples, dtype=np.float64) * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(sample_rate)
        fh.writeframes(pcm.tobytes())


def read_wav(path: str | Path) -> np.ndarray:
    """Mono 16-bit PCM at 16 kHz -> float64 samples in [-1, 1)."""
    try:
        with wave.open(str(path), "rb") as fh:
            if fh.getnchannels() != 1 or fh.getsampwidth() != 2:
                raise FormatError(f"{path}: expected mono 16-bit PCM")
            if fh.getframerate() != SAMPLE_RATE:
                raise FormatError(f"{path}: expected {SAMPLE_RATE} Hz, got {fh.getframerate()}")
            raw = fh.readframes(fh.getnframes())
    except wave.Error as exc:
        raise FormatError(f"{path}: {exc}") from exc
    return np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0


def write_lips(path: str | Path, frames: np.ndarray) -> None:
    frames = np.asarray(frames)
    if frames.dtype != np.uint8 or frames.ndim != 3:
        raise ValueError("lip frames must be a (T, H, W) uint8 array")
    t, h, w = frames.shape
    with open(path, "wb") as fh:
        fh.write(LIPS_HEADER.pack(LIPS_MAGIC, LIPS_VERSION, t, h, w, 0))
        fh.write(np.ascontiguousarray(frames).tobytes())


def read_lips(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < LIPS_HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, t, h, w, _ = LIPS_HEADER.unpack_from(data)
    if magic != LIPS_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != LIPS_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    payload = data[LIPS_HEADER.size:]
    if len(payload) != t * h * w:
        raise FormatError(f"{path}: expected {t * h * w} pixel bytes, found {len(payload)}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(t, h, w)


def read_transcript(path: str | Path) -> str:
    return Path(path).read_text(encoding="utf-8").strip().upper()


def write_ndjson(path: str | Path, rows: Iterable[dict[str, Any]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def append_ndjson(path: str | Path, row: dict[str, Any]) -> None:
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(row, sort_keys=True) + "\n")


def read_ndjson(path: str | Path) -> Iterator[dict[str, Any]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: {exc.msg}") from exc
