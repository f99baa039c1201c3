import numpy as np
import pytest
import torch


def pytest_addoption(parser):
    parser.addoption("--run-slow", action="store_true", default=False,
                     help="run full-scale experiment tests (hours on a single core)")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--run-slow"):
        return
    skip = pytest.mark.skip(reason="full-scale experiment; pass --run-slow to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _seed_torch():
    torch.manual_seed(0)


_VERDICTS: list[str] = []


@pytest.fixture
def verdict(capsys):
    """Print one ``CRITERION n: PASS|FAIL|NOT RUN`` line, record it for the summary, then assert.

    ``passed=None`` records a criterion that was not executed in this session.
    """

    def report(number: int, passed, detail: str) -> None:
        status = "NOT RUN" if passed is None else "PASS" if passed else "FAIL"
        line = f"CRITERION {number}: {status}  {detail}"
        _VERDICTS.append(line)
        with capsys.disabled():
            print(f"\n{line}")
        assert passed is None or passed, line

    return report


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)
