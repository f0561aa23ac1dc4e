import json

import pytest

from vcse.cli import EXIT_DATA, EXIT_OK, EXIT_RUN, EXIT_USAGE, main


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli")
    common = ["--toy", "--out", str(out), "--seed", "5"]
    assert main(["toy-corpus", *common, "--n-speakers", "4", "--n-utterances", "24"]) == EXIT_OK
    assert main(["simulate", *common, "--counts", "8", "4", "4"]) == EXIT_OK
    return out, common


def test_end_to_end(workdir, capsys):
    out, common = workdir
    assert main(["train", *common, "--stage", "1", "--variant", "av", "--epochs", "1"]) == EXIT_OK
    assert main(["evaluate", *common, "--variant", "av", "--fast-sdr"]) == EXIT_OK
    payload = json.loads((out / "eval" / "av.json").read_text())
    assert payload["row"]["model_name"] == "AV-ConvTasNet" and payload["row"]["n_utterances"] == 8
    assert len(payload["utterances"]) == 8
    assert main(["report", *common]) == EXIT_OK
    csv_lines = (out / "report" / "results.csv").read_text().splitlines()
    assert len(csv_lines) == 2 and csv_lines[1].startswith("AV-ConvTasNet,V,")
    assert (out / "report" / "si_snri.png").exists() and (out / "report" / "results.txt").exists()
    summary = json.loads((out / "mixtures" / "summary.json").read_text())
    assert summary["counts"] == {"train": 8, "valid": 4, "test": 4}


def test_usage_errors(workdir, capsys):
    out, common = workdir
    assert main(["train", *common, "--stage", "1", "--variant", "nonsense"]) == EXIT_USAGE
    assert main(["train", *common, "--stage", "6", "--variant", "vcse"]) == EXIT_USAGE
    assert main(["frobnicate"]) == EXIT_USAGE
    assert main(["evaluate", *common, "--device", "gpu"]) in (EXIT_USAGE, EXIT_RUN, EXIT_OK)


def test_data_errors(tmp_path, capsys):
    assert main(["simulate", "--toy", "--out", str(tmp_path)]) == EXIT_DATA
    assert main(["train", "--toy", "--out", str(tmp_path), "--stage", "1", "--variant", "av"]) == EXIT_DATA
    assert main(["report", "--toy", "--out", str(tmp_path)]) == EXIT_DATA
    assert "data error" in capsys.readouterr().err


def test_missing_prerequisite_is_run_failure(workdir, capsys):
    out, common = workdir
    assert main(["train", *common, "--stage", "3", "--variant", "vcse", "--epochs", "1"]) == EXIT_RUN
    assert "stage" in capsys.readouterr().err


def test_module_entry_point():
    import subprocess
    import sys

    res = subprocess.run([sys.executable, "-m", "vcse", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "train-all" in res.stdout
