import numpy as np
import pytest
import torch

from sthdr.synthetic import make_dataset

_ACCEPTANCE = {}


@pytest.fixture(scope="session")
def fixture_root(tmp_path_factory):
    """Two training and two test synthetic scenes, 128 x 128."""
    root = tmp_path_factory.mktemp("dataset")
    make_dataset(root, n_train=2, n_test=2, height=128, width=128, seed=7)
    return root


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _seed_torch():
    torch.manual_seed(0)


@pytest.fixture
def acceptance_detail(request):
    """Let an acceptance test attach a measured value to its summary line."""
    marker = request.node.get_closest_marker("acceptance")

    def record(text):
        _ACCEPTANCE.setdefault(marker.args[0], {})["detail"] = text

    return record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    number, title = marker.args
    entry = _ACCEPTANCE.setdefault(number, {})
    entry["title"] = title
    if rep.when == "call" or (rep.when == "setup" and rep.failed):
        entry["passed"] = rep.passed
        entry["duration"] = rep.duration


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        e = _ACCEPTANCE[number]
        if "passed" not in e:
            continue
        status = "PASS" if e["passed"] else "FAIL"
        line = f"[{status}] criterion {number:>2}: {e.get('title', '')} ({e.get('duration', 0):.1f}s)"
        if e.get("detail"):
            line += f" -- {e['detail']}"
        terminalreporter.write_line(line)
