"""Utterance preparation, two-speaker mixture simulation, and batch loading."""

from __future__ import annotations

import itertools
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
import torch

from ..signals import mix_at_snr
from .formats import FormatError, read_lips, read_ndjson, read_transcript, read_wav, write_lips, write_ndjson, write_wav

log = logging.getLogger(__name__)

SAMPLE_RATE = 16000
FPS = 25
SPLITS = ("train", "valid", "test")


class DataError(RuntimeError):
    """A corpus, record, or batch could not be read or violates its schema."""


@dataclass(frozen=True)
class UtteranceRecord:
    id: str
    audio_path: str
    lips_path: str
    transcript_path: str
    speaker_id: str
    duration_s: float

    @classmethod
    def from_dict(cls, row: dict) -> "UtteranceRecord":
        return cls(**{k: row[k] for k in cls.__dataclass_fields__})


@dataclass(frozen=True)
class MixtureRecord:
    id: str
    split: str
    target: UtteranceRecord
    interferer: UtteranceRecord
    snr_db: float
    enrollment: UtteranceRecord | None = None
    interferer_enrollment: UtteranceRecord | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, row: dict) -> "MixtureRecord":
        def utt(key):
            return UtteranceRecord.from_dict(row[key]) if row.get(key) else None
        return cls(row["id"], row["split"], utt("target"), utt("interferer"), float(row["snr_db"]),
                   utt("enrollment"), utt("interferer_enrollment"))


@dataclass
class PrepareResult:
    records: list[UtteranceRecord]
    dropped: list[str] = field(default_factory=list)
    errors: dict[str, str] = field(default_factory=dict)


def _resolve(base: Path, p: str) -> Path:
    path = Path(p)
    return path if path.is_absolute() else base / path


def prepare_corpus(raw_manifest: str | Path, out_dir: str | Path, seed: int = 0,
                   duration_s: float = 3.0) -> PrepareResult:
    """Validate and cut utterances to exactly ``duration_s`` seconds; drop shorter ones.

    Broken or misaligned rows are reported in ``errors`` and skipped. Records
    are returned sorted by id, so the result does not depend on manifest
    order; ``seed`` is recorded in the written manifest for provenance.
    """
    raw_manifest = Path(raw_manifest)
    base = raw_manifest.parent
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n_samples, n_frames = int(round(duration_s * SAMPLE_RATE)), int(round(duration_s * FPS))
    result = PrepareResult(records=[])
    for row in sorted(read_ndjson(raw_manifest), key=lambda r: r["id"]):
        uid = row.get("id", "<missing id>")
        try:
            audio = read_wav(_resolve(base, row["audio_path"]))
            lips = read_lips(_resolve(base, row["lips_path"]))
            text = read_transcript(_resolve(base, row["transcript_path"]))
        except (OSError, KeyError, FormatError) as exc:
            result.errors[uid] = f"unreadable: {exc}"
            continue
        audio_s, video_s = audio.size / SAMPLE_RATE, lips.shape[0] / FPS
        if abs(audio_s - video_s) > 1.0 / FPS + 1e-9:
            result.errors[uid] = f"audio ({audio_s:.3f} s) and lips ({video_s:.3f} s) misaligned"
            continue
        if audio.size < n_samples or lips.shape[0] < n_frames:
            result.dropped.append(uid)
            continue
        udir = out / uid
        udir.mkdir(exist_ok=True)
        write_wav(udir / "audio.wav", audio[:n_samples])
        write_lips(udir / "lips.lips", np.ascontiguousarray(lips[:n_frames]))
        (udir / "transcript.txt").write_text(text + "\n", encoding="utf-8")
        result.records.append(UtteranceRecord(
            uid, str(udir / "audio.wav"), str(udir / "lips.lips"), str(udir / "transcript.txt"),
            str(row["speaker_id"]), duration_s,
        ))
    write_ndjson(out / "manifest.ndjson", [{**asdict(r), "seed": seed} for r in result.records])
    if result.errors:
        log.warning("prepare_corpus skipped %d broken records", len(result.errors))
    return result


def load_utterances(manifest: str | Path) -> list[UtteranceRecord]:
    return [UtteranceRecord.from_dict(r) for r in read_ndjson(manifest)]


def _split_sizes(total: int, counts: dict[str, int], minimum: int = 1) -> dict[str, int]:
    """Proportional integer allocation; every split with a nonzero count gets at least ``minimum``."""
    active = [s for s in SPLITS if counts.get(s, 0) > 0]
    weight = sum(counts[s] for s in active)
    sizes = {s: 0 for s in SPLITS}
    for s in active:
        if s != "train":
            sizes[s] = max(minimum, int(round(total * counts[s] / weight)))
    if "train" in active:
        sizes["train"] = total - sum(sizes.values())
    return sizes


def simulate_mixtures(records: Sequence[UtteranceRecord], counts: dict[str, int], seed: int = 0,
                      snr_range: tuple[float, float] = (-5.0, 5.0)) -> dict[str, list[MixtureRecord]]:
    """Sample target/interferer pairs with uniform SNR per split.

    Test speaker pairs are disjoint from the pairs used for train and valid;
    valid draws from the train pairs. Each speaker's utterances are
    partitioned across all three splits, so no utterance occurs in two.
    Each mixture is drawn from its own seeded generator.
    """
    by_speaker: dict[str, list[UtteranceRecord]] = {}
    for r in sorted(records, key=lambda r: r.id):
        by_speaker.setdefault(r.speaker_id, []).append(r)
    speakers = sorted(by_speaker)
    if len(speakers) < 2:
        raise DataError(f"need at least 2 distinct speakers, found {len(speakers)}")
    rng = np.random.default_rng([seed, 0])
    pairs = list(itertools.combinations(speakers, 2))
    rng.shuffle(pairs)
    seen = counts.get("train", 0) + counts.get("valid", 0)
    pair_sizes = _split_sizes(len(pairs), {"train": seen, "test": counts.get("test", 0)})
    if (seen and pair_sizes["train"] < 1) or (counts.get("test", 0) and pair_sizes["test"] < 1):
        raise DataError(f"{len(speakers)} speakers give {len(pairs)} pairs: too few for speaker-pair disjoint splits")
    pair_pools = {"train": pairs[:pair_sizes["train"]], "test": pairs[pair_sizes["train"]:]}
    pair_pools["valid"] = pair_pools["train"]

    pools: dict[str, dict[str, list[UtteranceRecord]]] = {s: {} for s in SPLITS}
    for spk in speakers:
        utts = list(by_speaker[spk])
        rng.shuffle(utts)
        sizes = _split_sizes(len(utts), counts)
        if any(counts.get(s, 0) > 0 and sizes[s] < 1 for s in SPLITS):
            raise DataError(f"speaker {spk} has too few utterances ({len(utts)}) to split")
        start = 0
        for s in SPLITS:
            pools[s][spk] = utts[start:start + sizes[s]]
            start += sizes[s]

    out: dict[str, list[MixtureRecord]] = {}
    for split_idx, split in enumerate(SPLITS):
        split_pairs = pair_pools[split]
        mixtures = []
        for i in range(counts.get(split, 0)):
            r = np.random.default_rng([seed, 1, split_idx, i])
            a, b = split_pairs[int(r.integers(len(split_pairs)))]
            tgt_spk, itf_spk = (a, b) if r.random() < 0.5 else (b, a)
            tgt_pool, itf_pool = pools[split][tgt_spk], pools[split][itf_spk]
            ti, ii = int(r.integers(len(tgt_pool))), int(r.integers(len(itf_pool)))
            snr = float(r.uniform(*snr_range))
            mixtures.append(MixtureRecord(
                f"{split}_{i:05d}", split, tgt_pool[ti], itf_pool[ii], snr,
                _other(tgt_pool, ti, r), _other(itf_pool, ii, r),
            ))
        out[split] = mixtures
    return out


def _other(pool: list[UtteranceRecord], exclude: int, rng: np.random.Generator) -> UtteranceRecord | None:
    if len(pool) < 2:
        return None
    j = int(rng.integers(len(pool) - 1))
    return pool[j + (j >= exclude)]


def save_mixtures(path: str | Path, mixtures: Sequence[MixtureRecord]) -> None:
    write_ndjson(path, [m.to_dict() for m in mixtures])


def load_mixtures(path: str | Path) -> list[MixtureRecord]:
    return [MixtureRecord.from_dict(r) for r in read_ndjson(path)]


@dataclass
class Batch:
    """Model-ready tensors. ``clean`` is the target, ``interferer`` the scaled competing speech."""

    ids: list[str]
    mixture: torch.Tensor
    clean: torch.Tensor
    interferer: torch.Tensor
    lips: torch.Tensor
    transcripts: list[str]
    enrollment: torch.Tensor | None = None

    def __len__(self) -> int:
        return len(self.ids)

    def to(self, device) -> "Batch":
        move = lambda t: None if t is None else t.to(device)  # noqa: E731
        return Batch(self.ids, move(self.mixture), move(self.clean), move(self.interferer), move(self.lips),
                     self.transcripts, move(self.enrollment))


class UtteranceCache:
    """Memoised reader of utterance audio, lips and transcripts."""

    def __init__(self):
        self._store: dict[str, tuple[np.ndarray, np.ndarray, str]] = {}

    def get(self, rec: UtteranceRecord) -> tuple[np.ndarray, np.ndarray, str]:
        if rec.id not in self._store:
            try:
                self._store[rec.id] = (read_wav(rec.audio_path), read_lips(rec.lips_path),
                                       read_transcript(rec.transcript_path))
            except (OSError, FormatError) as exc:
                raise DataError(f"failed to load utterance {rec.id}: {exc}") from exc
        return self._store[rec.id]


def mix_record(rec: MixtureRecord, cache: UtteranceCache, swap: bool = False) -> dict:
    """Mix one record on the fly. ``swap=True`` treats the interferer as the target."""
    s_tgt, lips_tgt, text_tgt = cache.get(rec.target)
    s_itf, lips_itf, text_itf = cache.get(rec.interferer)
    mixture, scaled = mix_at_snr(s_tgt, s_itf, rec.snr_db)
    enroll = rec.enrollment
    if swap:
        enroll = rec.interferer_enrollment
        return {"mixture": mixture, "clean": scaled, "interferer": s_tgt, "lips": lips_itf, "transcript": text_itf,
                "enrollment": cache.get(enroll)[0] if enroll else None}
    return {"mixture": mixture, "clean": s_tgt, "interferer": scaled, "lips": lips_tgt, "transcript": text_tgt,
            "enrollment": cache.get(enroll)[0] if enroll else None}


def load_batch(mixtures: Sequence[MixtureRecord], batch_size: int, *, cache: UtteranceCache | None = None,
               shuffle: bool = False, seed: int = 0, epoch: int = 0, swap: bool = False,
               drop_last: bool = False) -> Iterator[Batch]:
    """Yield fixed-shape batches; with ``shuffle`` the order depends only on (seed, epoch)."""
    cache = cache or UtteranceCache()
    order = np.arange(len(mixtures))
    if shuffle:
        order = np.random.default_rng([seed, epoch]).permutation(len(mixtures))
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        if drop_last and len(idx) < batch_size:
            break
        items = []
        for i in idx:
            try:
                items.append(mix_record(mixtures[i], cache, swap=swap))
            except DataError as exc:
                raise DataError(f"batch at record {mixtures[i].id}: {exc}") from exc
        stack = lambda key: torch.from_numpy(np.stack([it[key] for it in items]).astype(np.float32))  # noqa: E731
        enroll = None
        if all(it["enrollment"] is not None for it in items):
            enroll = stack("enrollment")
        yield Batch(
            ids=[mixtures[i].id + ("/swap" if swap else "") for i in idx],
            mixture=stack("mixture"),
            clean=stack("clean"),
            interferer=stack("interferer"),
            lips=torch.from_numpy(np.stack([it["lips"] for it in items])),
            transcripts=[it["transcript"] for it in items],
            enrollment=enroll,
        )


def materialize_mixtures(mixtures: Sequence[MixtureRecord], out_dir: str | Path,
                         cache: UtteranceCache | None = None) -> None:
    """Write mixture/target/interferer WAVs for a fixed simulated set."""
    cache = cache or UtteranceCache()
    out = Path(out_dir)
    for rec in mixtures:
        d = out / rec.split / rec.id
        d.mkdir(parents=True, exist_ok=True)
        item = mix_record(rec, cache)
        for key in ("mixture", "clean", "interferer"):
            write_wav(d / f"{key}.wav", item[key])
