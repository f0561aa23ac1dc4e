import itertools
import math

import numpy as np
import pytest
import torch

from vcse.asr import (
    CHARACTERS,
    ASRModel,
    LogMel,
    Vocabulary,
    character_error_rate,
    ctc_loss,
    edit_distance,
    greedy_decode,
    min_ctc_frames,
)
from vcse.config import toy_config


def collapse(path, blank=0):
    out, prev = [], None
    for p in path:
        if p != prev and p != blank:
            out.append(p)
        prev = p
    return out


def ctc_brute_force(log_probs, labels, blank=0):
    """-log of the summed probability of every frame path that collapses to ``labels``."""
    n_frames, n_vocab = log_probs.shape
    terms = [sum(log_probs[t, p] for t, p in enumerate(path))
             for path in itertools.product(range(n_vocab), repeat=n_frames)
             if collapse(path, blank) == list(labels)]
    return -np.logaddexp.reduce(terms) if terms else math.inf


def all_instances(max_frames=6, max_labels=3, n_symbols=3):
    for n_frames in range(1, max_frames + 1):
        for n_labels in range(max_labels + 1):
            for labels in itertools.product(range(1, n_symbols + 1), repeat=n_labels):
                yield n_frames, list(labels)


def test_ctc_matches_exhaustive_enumeration():
    rng = np.random.default_rng(0)
    checked = 0
    for n_frames, labels in all_instances():
        logits = torch.tensor(rng.standard_normal((n_frames, 4)))
        if min_ctc_frames(labels) > n_frames:
            with pytest.raises(ValueError):
                ctc_loss(logits, labels)
            continue
        oracle = ctc_brute_force(logits.log_softmax(-1).numpy(), labels)
        assert float(ctc_loss(logits, labels)) == pytest.approx(oracle, abs=1e-5)
        checked += 1
    assert checked > 150


def test_ctc_special_cases():
    logits = torch.randn(5, 4, dtype=torch.float64)
    lp = logits.log_softmax(-1)
    assert float(ctc_loss(logits, [])) == pytest.approx(-float(lp[:, 0].sum()), abs=1e-10)
    one = torch.randn(1, 4, dtype=torch.float64)
    assert float(ctc_loss(one, [2])) == pytest.approx(-float(one.log_softmax(-1)[0, 2]), abs=1e-10)


def test_ctc_nonnegative_and_batched():
    logits = torch.randn(3, 12, 29)
    loss = ctc_loss(logits, [[1, 2], [3], [4, 4, 5]])
    assert loss.shape == (3,) and (loss >= 0).all()


def test_ctc_errors():
    with pytest.raises(ValueError):
        ctc_loss(torch.randn(3, 5), [0, 1])
    with pytest.raises(ValueError):
        ctc_loss(torch.randn(2, 5), [1, 1])
    assert min_ctc_frames([1, 1]) == 3


def test_ctc_gradient_finite_differences():
    rng = np.random.default_rng(1)
    for n_frames, labels in [(4, [1, 2]), (5, [1, 1]), (6, [2, 3, 1]), (3, [])]:
        logits = torch.tensor(rng.standard_normal((n_frames, 4)), requires_grad=True)
        ctc_loss(logits, labels).backward()
        h = 1e-6
        fd = np.zeros(logits.shape)
        with torch.no_grad():
            for idx in itertools.product(range(n_frames), range(4)):
                e = torch.zeros_like(logits)
                e[idx] = h
                fd[idx] = (ctc_loss(logits + e, labels) - ctc_loss(logits - e, labels)).item() / (2 * h)
        rel = np.linalg.norm(logits.grad.numpy() - fd) / np.linalg.norm(fd)
        assert rel <= 1e-3


def test_greedy_decode():
    def onehot(path):
        return torch.nn.functional.one_hot(torch.tensor(path), 4).float() * 10

    assert greedy_decode(onehot([1, 1, 0, 2])) == [[1, 2]]
    assert greedy_decode(onehot([0, 0, 0])) == [[]]
    assert greedy_decode(onehot([1, 0, 1])) == [[1, 1]]


def test_vocabulary(tmp_path):
    vocab = Vocabulary()
    assert len(vocab) == 29 and vocab.blank == 0 and CHARACTERS[0] == "<blank>"
    ids = vocab.encode("it's A b")
    assert 0 not in ids and vocab.decode(ids) == "IT'S A B"
    with pytest.raises(ValueError):
        vocab.encode("x1")
    path = tmp_path / "vocab.txt"
    vocab.save(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "<blank>" and len(lines) == 29
    assert Vocabulary.load(path).tokens == vocab.tokens


def test_error_rates():
    assert edit_distance("KITTEN", "SITTING") == 3
    assert character_error_rate(["AB"], ["AB"]) == 0.0
    assert character_error_rate(["A"], ["AB"]) == 0.5


def test_logmel_frames():
    mel = LogMel()
    assert mel(torch.randn(2, 48000)).shape == (2, 300, 80)
    assert mel.n_frames(48000) == 300


@pytest.fixture(scope="module")
def toy_asr():
    torch.manual_seed(0)
    return ASRModel.from_config(toy_config().model).eval()


def test_encoder_shapes(toy_asr):
    with torch.no_grad():
        feats = toy_asr(torch.randn(2, 48000))
    assert feats.shape == (2, 256, 75) and torch.isfinite(feats).all()
    assert toy_asr.encoder.n_frames(48000) == 75


def test_encoder_deterministic_in_eval(toy_asr):
    x = torch.randn(1, 16000)
    with torch.no_grad():
        assert torch.equal(toy_asr(x), toy_asr(x))


def test_encoder_rejects_short_input(toy_asr):
    with pytest.raises(ValueError):
        toy_asr(torch.randn(1, 3000))


def test_full_size_encoder_builds():
    from vcse.config import ModelConfig
    model = ASRModel.from_config(ModelConfig()).eval()
    assert len(model.encoder.transformer.layers) == 6
    with torch.no_grad():
        assert model(torch.randn(1, 8000)).shape == (1, 256, 13)


def test_overfits_eight_utterances(toy_records):
    from vcse.datakit import UtteranceCache

    cache = UtteranceCache()
    data = [cache.get(r) for r in toy_records[:8]]
    wav = torch.tensor(np.stack([d[0] for d in data])).float()
    texts = [d[2] for d in data]
    torch.manual_seed(0)
    model = ASRModel.from_config(toy_config().model)
    opt = torch.optim.Adam(model.parameters(), 1e-3, betas=(0.9, 0.98))
    losses = []
    for _ in range(300):
        model.train()
        loss = model.ctc_loss(model(wav), texts)
        opt.zero_grad()
        loss.backward()
        torch.nn.utils.clip_grad_norm_(model.parameters(), 5.0)
        opt.step()
        losses.append(loss.item())
    assert min(losses) >= 0
    windows = np.asarray(losses).reshape(-1, 10).mean(axis=1)
    assert windows[-1] < 0.01 * windows[0]
    assert np.all(np.diff(windows[:5]) < 0)
    model.eval()
    with torch.no_grad():
        assert character_error_rate(model.transcribe(wav), texts) <= 0.05
