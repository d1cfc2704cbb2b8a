import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from scout.features import extract_dataset  # noqa: E402
from scout.simulator import SimConfig, generate_benchmark  # noqa: E402


@pytest.fixture(scope="session")
def small_dataset():
    return generate_benchmark(SimConfig(n_primary_runs=3000, n_test_identities=60, n_commits=100, seed=7))


@pytest.fixture(scope="session")
def small_features(small_dataset):
    return extract_dataset(small_dataset)


@pytest.fixture(scope="session")
def default_dataset():
    return generate_benchmark(SimConfig(seed=1))


_ACCEPTANCE: list[tuple[str, str, str]] = []


def pytest_runtest_logreport(report):
    if report.when != "call" or "acceptance" not in report.keywords:
        return
    detail = dict(report.user_properties).get("detail", "")
    _ACCEPTANCE.append((report.head_line.rsplit(".", 1)[-1], "PASS" if report.passed else "FAIL", detail))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, status, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"{status} {name}  {detail}")
