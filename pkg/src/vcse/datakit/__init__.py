"""Corpus simulation and loading."""

from .corpus import (
    Batch,
    DataError,
    MixtureRecord,
    PrepareResult,
    UtteranceCache,
    UtteranceRecord,
    load_batch,
    load_mixtures,
    load_utterances,
    materialize_mixtures,
    mix_record,
    prepare_corpus,
    save_mixtures,
    simulate_mixtures,
)
from .toy import generate_toy_corpus

__all__ = [
    "Batch", "DataError", "MixtureRecord", "PrepareResult", "UtteranceCache", "UtteranceRecord",
    "generate_toy_corpus", "load_batch", "load_mixtures", "load_utterances", "materialize_mixtures",
    "mix_record", "prepare_corpus", "save_mixtures", "simulate_mixtures",
]
