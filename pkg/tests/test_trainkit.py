import json
import math

import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from vcse.checkpoint import group_bytes, group_digest, read_header
from vcse.config import load_config, toy_config
from vcse.extractors import build_variant
from vcse.trainkit import (
    LrState,
    MissingCheckpointError,
    StageData,
    find_checkpoint,
    load_trained,
    plateau_policy,
    run_stage,
    stage_plan,
    train_variant,
    variant_stages,
    warmup_lr,
)
from vcse.trainkit.schedules import consecutive_increases


class TestStagePlans:
    def test_table(self):
        p1, p2, p3, p4, p5 = (stage_plan(s) for s in range(1, 6))
        assert p1.trainable == {"audio_visual"} and p1.loss_target == "s_av" and p1.context_source == "none"
        assert p2.trainable == {"asr"} and p2.loss_target == "ctc"
        assert p3.trainable == {"audio_contextual"}
        assert p3.frozen == {"audio_visual", "asr"} and p3.context_source == "clean_oracle"
        assert (p4.trainable, p4.frozen, p4.loss_target) == (p3.trainable, p3.frozen, p3.loss_target)
        assert p4.context_source == "pre_extracted"
        assert p5.trainable == {"audio_visual", "asr", "audio_contextual"} and not p5.frozen
        assert p5.loss_target == "s_ac"

    def test_stage1_scope(self):
        plan = stage_plan(1)
        assert "asr" not in plan.trainable | plan.frozen
        assert "audio_contextual" not in plan.trainable | plan.frozen

    def test_out_of_range(self):
        for bad in (0, 6, -1):
            with pytest.raises(ValueError):
                stage_plan(bad)
        with pytest.raises(ValueError):
            stage_plan(1, "nonsense")
        with pytest.raises(ValueError):
            stage_plan(4, "av")

    def test_variant_stage_lists(self):
        assert variant_stages("vcse") == variant_stages("vcsev") == [1, 2, 3, 4, 5]
        assert variant_stages("pit") == variant_stages("a_s") == variant_stages("av") == [1]
        assert variant_stages("ac_oracle") == variant_stages("avc_oracle") == [2, 3]

    def test_plans_cover_model_groups(self):
        cfg = toy_config().model
        for variant in ("pit", "a_s", "av", "ac_oracle", "avc_oracle", "vcse", "vcsev"):
            groups = set(build_variant(variant, cfg).groups)
            for stage in variant_stages(variant):
                plan = stage_plan(stage, variant)
                assert plan.trainable | plan.frozen <= groups
                assert not plan.trainable & plan.frozen


class TestPlateau:
    def test_improving(self):
        state = plateau_policy(LrState(1e-3), [5, 4, 3, 2])
        assert state == LrState(1e-3, 0, False)

    def test_three_increases_halve_once(self):
        state = LrState(1e-3)
        history = [3, 4, 5, 6]
        for k in range(1, len(history) + 1):
            state = plateau_policy(state, history[:k])
        assert state.lr == 0.0005 and not state.halted
        assert plateau_policy(LrState(1e-3), [3, 4, 5, 6]).lr == 0.0005

    def test_six_increases_halt(self):
        state = LrState(1e-3)
        history = [3, 4, 5, 6, 7, 8, 9]
        for k in range(1, len(history) + 1):
            state = plateau_policy(state, history[:k])
        assert state.halted
        assert plateau_policy(LrState(1e-3), history).halted

    def test_reset_on_improvement(self):
        state = LrState(1e-3)
        history = [3, 4, 5, 6, 2, 3, 4]
        for k in range(1, len(history) + 1):
            state = plateau_policy(state, history[:k])
        assert state.lr == 0.0005 and state.bad_epochs == 2 and not state.halted

    def test_ties_are_not_increases(self):
        assert consecutive_increases([1, 1, 1, 1]) == 0
        assert consecutive_increases([1, 2, 2, 3]) == 1

    def test_empty_history(self):
        with pytest.raises(ValueError):
            plateau_policy(LrState(1e-3), [])

    @given(st.lists(st.floats(0, 10, allow_nan=False), min_size=1, max_size=30))
    def test_pure_and_monotone(self, history):
        state, lrs = LrState(1e-3), []
        for k in range(1, len(history) + 1):
            a = plateau_policy(state, history[:k])
            assert a == plateau_policy(state, history[:k])
            state = a
            lrs.append(state.lr)
        assert all(b <= a for a, b in zip(lrs, lrs[1:]))


class TestWarmup:
    def test_knee_continuity(self):
        w, d = 4000, 256
        assert warmup_lr(w, d, w) == pytest.approx(d**-0.5 * w**-0.5, rel=1e-12)
        assert warmup_lr(w - 1, d, w) < warmup_lr(w, d, w) > warmup_lr(w + 1, d, w)

    def test_quarter_rule(self):
        for w in (200, 4000, 25):
            assert warmup_lr(4 * w, 256, w) == pytest.approx(warmup_lr(w, 256, w) / 2, rel=1e-12)

    def test_linear_phase(self):
        lrs = [warmup_lr(s, 256, 200) for s in range(1, 201)]
        assert all(b > a for a, b in zip(lrs, lrs[1:]))
        assert lrs[9] == pytest.approx(10 * lrs[0], rel=1e-12)

    def test_decay_and_scale(self):
        assert warmup_lr(300, 256, 200) < warmup_lr(200, 256, 200)
        assert warmup_lr(50, 256, 200, scale=0.5) == 0.5 * warmup_lr(50, 256, 200)
        with pytest.raises(ValueError):
            warmup_lr(0, 256, 200)


class TestConfig:
    def test_defaults_and_toy(self):
        cfg = load_config()
        assert cfg.model.tcn_repeats == 3 and cfg.model.tcn_blocks == 8 and cfg.model.resnet_layers == 18
        assert cfg.train.stage_epochs == {1: 30, 2: 50, 3: 30, 4: 30, 5: 20}
        assert cfg.train.lr == 1e-3 and cfg.train.grad_clip == 5.0
        toy = load_config(toy=True)
        assert toy.model.tcn_repeats == 1 and toy.model.tcn_blocks == 4 and toy.train.warmup_steps == 200

    def test_file_and_env(self, tmp_path, monkeypatch):
        path = tmp_path / "c.yaml"
        path.write_text("seed: 9\ntrain:\n  stage_epochs: {3: 2}\nmodel:\n  asr_layers: 1\n")
        cfg = load_config(path)
        assert cfg.seed == 9 and cfg.train.stage_epochs[3] == 2 and cfg.train.stage_epochs[1] == 30
        monkeypatch.setenv("VCSE_CONFIG", str(path))
        assert load_config().model.asr_layers == 1

    def test_unknown_key(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text("train:\n  learning_rate: 1\n")
        with pytest.raises(KeyError):
            load_config(path)


@pytest.fixture(scope="module")
def short_run(toy_mixtures, tmp_path_factory):
    work = tmp_path_factory.mktemp("train")
    cfg = toy_config(seed=3)
    data = StageData(toy_mixtures["train"][:8], toy_mixtures["valid"][:4])
    model = build_variant("vcse", cfg.model, seed=cfg.seed)
    digests, results = {}, {}
    for stage, budget in [(1, 1), (2, 1), (3, 3), (4, 1), (5, 1)]:
        digests[stage] = {n: group_digest(m) for n, m in model.groups.items()}
        results[stage] = run_stage(stage_plan(stage), data, model, budget, cfg, work)
    return work, cfg, data, model, digests, results


class TestRunStage:
    def test_checkpoints_named_by_best_epoch(self, short_run):
        work, _, _, _, _, results = short_run
        for stage, res in results.items():
            assert res.checkpoint.name == f"vcse_{stage}_{res.best_epoch}.ckpt"
            assert read_header(res.checkpoint)["stage"] == stage
            assert find_checkpoint(work / "checkpoints", "vcse", stage) == res.checkpoint
        assert len(results[3].history) == 3

    @pytest.mark.parametrize("stage", [3, 4])
    def test_frozen_groups_byte_identical(self, short_run, stage):
        _, _, _, _, _, results = short_run
        prev = results[stage - 1].checkpoint
        cur = results[stage].checkpoint
        for group in ("audio_visual", "asr"):
            assert group_bytes(prev, group) == group_bytes(cur, group)
        assert group_bytes(prev, "audio_contextual") != group_bytes(cur, "audio_contextual")

    def test_stage5_updates_every_group(self, short_run):
        _, _, _, _, digests, results = short_run
        after = {g: info["sha256"] for g, info in read_header(results[5].checkpoint)["groups"].items()}
        for group, before in digests[5].items():
            assert after[group] != before, group

    def test_event_log(self, short_run):
        work = short_run[0]
        rows = [json.loads(line) for line in (work / "runs" / "vcse.ndjson").read_text().splitlines()]
        assert len(rows) == 2 * (1 + 1 + 3 + 1 + 1)
        assert {"epoch", "split", "loss", "lr", "stage"} <= set(rows[0])
        assert {r["split"] for r in rows} == {"train", "valid"}
        assert all(math.isfinite(r["loss"]) for r in rows)

    def test_missing_prerequisite(self, toy_mixtures, tmp_path):
        cfg = toy_config()
        model = build_variant("vcse", cfg.model, seed=0)
        data = StageData(toy_mixtures["train"][:4], toy_mixtures["valid"][:4])
        for _ in range(2):
            with pytest.raises(MissingCheckpointError, match="stage 2"):
                run_stage(stage_plan(3), data, model, 1, cfg, tmp_path)

    def test_load_trained(self, short_run):
        work, cfg, _, model, _, _ = short_run
        loaded = load_trained("vcse", cfg, work)
        for a, b in zip(model.state_dict().values(), loaded.state_dict().values()):
            assert torch.equal(a, b)
        assert not loaded.training


def test_external_asr_replaces_stage2(short_run, tmp_path):
    src_work, cfg, data, _, _, results = short_run
    out, res = train_variant("vcse", data, cfg, tmp_path, budgets={1: 1, 3: 1}, stages=[1, 2, 3],
                             external_asr=results[2].checkpoint)
    assert [r.plan.stage for r in res] == [1, 3]
    ckpt = res[-1].checkpoint
    assert group_bytes(ckpt, "asr") == group_bytes(results[2].checkpoint, "asr")
    assert find_checkpoint(tmp_path / "checkpoints", "vcse", 2) is None


def test_validation_history_is_finite(short_run):
    results = short_run[5]
    losses = [row["valid_loss"] for res in results.values() for row in res.history]
    assert np.all(np.isfinite(losses))
