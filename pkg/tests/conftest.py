import pytest
import torch

from vcse.datakit import generate_toy_corpus, prepare_corpus, simulate_mixtures

torch.set_num_threads(1)

_CRITERIA: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion check")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    failed = report.failed or (call.when == "call" and report.skipped)
    if call.when == "call" or failed:
        if failed or number not in _CRITERIA:
            _CRITERIA[number] = (title, "FAIL" if failed else "PASS")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, status = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:>2} {status}: {title}")


@pytest.fixture(scope="session")
def toy_manifest(tmp_path_factory):
    return generate_toy_corpus(tmp_path_factory.mktemp("toy_raw"), n_speakers=4, n_utterances=32, seed=7)


@pytest.fixture(scope="session")
def toy_records(toy_manifest, tmp_path_factory):
    return prepare_corpus(toy_manifest, tmp_path_factory.mktemp("toy_prepared")).records


@pytest.fixture(scope="session")
def toy_mixtures(toy_records):
    return simulate_mixtures(toy_records, {"train": 24, "valid": 8, "test": 8}, seed=0)
