import csv

import numpy as np
import pytest
import torch

from vcse.checkpoint import CheckpointError, save_checkpoint
from vcse.config import toy_config
from vcse.evaluation import EvalRow, evaluate
from vcse.extractors import build_variant
from vcse.report import CHART_NAME, CSV_NAME, TABLE_NAME, format_csv, format_table, read_csv_rows, render_report
from vcse.trainkit import load_trained


def test_null_model_scores_zero(toy_mixtures):
    row, scores = evaluate(None, toy_mixtures["test"], forward=lambda b: b.mixture, name="null")
    assert row.n_utterances == 2 * len(toy_mixtures["test"]) == len(scores)
    assert abs(row.si_snri_db) <= 1e-6 and abs(row.sdri_db) <= 1e-6


def test_oracle_model_saturates(toy_mixtures):
    row, _ = evaluate(None, toy_mixtures["test"], forward=lambda b: b.clean, name="oracle")
    assert row.si_snri_db > 70 and row.sdri_db > 60


def test_two_output_separator_uses_best_permutation(toy_mixtures):
    swapped = evaluate(None, toy_mixtures["test"], forward=lambda b: torch.stack([b.interferer, b.clean], 1))[0]
    direct = evaluate(None, toy_mixtures["test"], forward=lambda b: b.clean)[0]
    assert swapped.si_snri_db == pytest.approx(direct.si_snri_db, abs=1e-6)


def test_single_role(toy_mixtures):
    row, _ = evaluate(None, toy_mixtures["test"], forward=lambda b: b.mixture, both_roles=False)
    assert row.n_utterances == len(toy_mixtures["test"])


def test_empty_test_set():
    with pytest.raises(ValueError):
        evaluate(None, [], forward=lambda b: b.mixture)


def test_row_validation():
    with pytest.raises(ValueError):
        EvalRow("x", "-", 0.0, 0.0, 0)
    with pytest.raises(ValueError):
        EvalRow("x", "Q", 0.0, 0.0, 3)


def test_model_rows_carry_display_names(toy_mixtures):
    model = build_variant("vcsev", toy_config().model, seed=0)
    row, _ = evaluate(model, toy_mixtures["test"][:2], fast_sdr=True)
    assert (row.model_name, row.reference_kind) == ("VCSEv", "V+C")
    pre, _ = evaluate(model, toy_mixtures["test"][:2], output="pre_extracted", fast_sdr=True)
    assert pre.si_snri_db != row.si_snri_db
    with pytest.raises(ValueError):
        evaluate(build_variant("pit", toy_config().model), toy_mixtures["test"][:2], output="pre_extracted")


def seven_rows():
    names = [("BLSTM-PIT", "-"), ("SpEx", "A_S"), ("AV", "V"), ("AC", "C (Oracle)"),
             ("AVC", "V+C (Oracle)"), ("VCSEv", "V+C"), ("VCSE", "V+C")]
    return [EvalRow(n, r, 1.5 * i - 2, 1.25 * i, 80) for i, (n, r) in enumerate(names)]


class TestReport:
    def test_files_and_csv_shape(self, tmp_path):
        paths = render_report(seven_rows(), tmp_path)
        assert [p.name for p in paths] == [TABLE_NAME, CSV_NAME, CHART_NAME]
        assert all(p.stat().st_size > 0 for p in paths)
        lines = (tmp_path / CSV_NAME).read_text().splitlines()
        assert len(lines) == 8
        assert lines[0] == "model_name,reference_kind,si_snri_db,sdri_db,n_utterances"
        assert (tmp_path / CHART_NAME).read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"

    def test_deterministic_bytes(self, tmp_path):
        a = render_report(seven_rows(), tmp_path / "a")
        b = render_report(seven_rows(), tmp_path / "b")
        for p, q in zip(a, b):
            assert p.read_bytes() == q.read_bytes(), p.name

    def test_empty_writes_nothing(self, tmp_path):
        with pytest.raises(ValueError):
            render_report([], tmp_path / "r")
        assert not (tmp_path / "r").exists()

    def test_failure_leaves_no_partial_files(self, tmp_path, monkeypatch):
        import vcse.report

        def broken(*args, **kwargs):
            raise RuntimeError("render failed")

        monkeypatch.setattr(vcse.report, "bar_chart", broken)
        with pytest.raises(RuntimeError):
            render_report(seven_rows(), tmp_path)
        assert list(tmp_path.iterdir()) == []

    def test_table_and_csv_agree(self, tmp_path):
        rows = seven_rows()
        render_report(rows, tmp_path)
        table = (tmp_path / TABLE_NAME).read_text()
        with open(tmp_path / CSV_NAME, newline="") as fh:
            for rec in csv.DictReader(fh):
                line = next(ln for ln in table.splitlines() if f" {rec['model_name']} " in ln)
                cells = [c.strip() for c in line.split("|")]
                assert cells == [rec["model_name"], rec["reference_kind"], rec["si_snri_db"], rec["sdri_db"],
                                 rec["n_utterances"]]
        assert read_csv_rows(tmp_path / CSV_NAME) == [
            EvalRow(r.model_name, r.reference_kind, round(r.si_snri_db, 4), round(r.sdri_db, 4), r.n_utterances)
            for r in rows
        ]

    def test_format_fixture(self):
        row = EvalRow("VCSE", "V+C", 15.852714, 16.08, 6000)
        assert format_csv([row]).splitlines()[1] == "VCSE,V+C,15.8527,16.0800,6000"
        table = format_table([row]).splitlines()
        assert table[0] == table[2] == table[-1] and set(table[0]) == {"-", "+"}
        assert table[1].split("|")[1].strip() == "Reference"
        assert [c.strip() for c in table[3].split("|")] == ["VCSE", "V+C", "15.8527", "16.0800", "6000"]


def test_evaluation_is_read_only(toy_mixtures, tmp_path):
    cfg = toy_config()
    model = build_variant("av", cfg.model, seed=0)
    ckpt_dir = tmp_path / "checkpoints"
    ckpt_dir.mkdir()
    path = save_checkpoint(ckpt_dir / "av_1_1.ckpt", model.groups, variant="av", stage=1, epoch=1)
    before = path.read_bytes()
    loaded = load_trained("av", cfg, tmp_path)
    evaluate(loaded, toy_mixtures["test"][:2], fast_sdr=True)
    assert path.read_bytes() == before
    assert sorted(p.name for p in ckpt_dir.iterdir()) == ["av_1_1.ckpt"]


def test_variant_mismatch_refused(tmp_path):
    cfg = toy_config()
    model = build_variant("av", cfg.model, seed=0)
    (tmp_path / "checkpoints").mkdir()
    save_checkpoint(tmp_path / "checkpoints" / "vcse_5_1.ckpt", model.groups, variant="av", stage=5, epoch=1)
    with pytest.raises(CheckpointError):
        load_trained("vcse", cfg, tmp_path)


def test_scores_are_finite(toy_mixtures):
    _, scores = evaluate(None, toy_mixtures["test"], forward=lambda b: 0.5 * b.clean + 0.1 * b.interferer)
    assert np.all(np.isfinite([s.si_snri_db for s in scores]))
