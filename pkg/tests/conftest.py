from pathlib import Path

import pytest

from relhoare import specfile

ROOT = Path(__file__).resolve().parent.parent
CORPUS = ROOT / "corpus"

_PROBLEMS: dict = {}


def load_problem(name: str) -> specfile.Problem:
    """Parse and build a corpus spec, cached for the whole session."""
    if name not in _PROBLEMS:
        spec = specfile.parse_spec((CORPUS / name).read_text())
        _PROBLEMS[name] = specfile.build_problem(spec, CORPUS)
    return _PROBLEMS[name]


@pytest.fixture(scope="session")
def corpus() -> Path:
    return CORPUS


@pytest.fixture(scope="session")
def problems():
    return load_problem


def pytest_runtest_logreport(report):
    # one pass/fail line per acceptance criterion, outside capture
    if report.when != "call" or "test_acceptance" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    if not name.startswith("test_criterion"):
        return
    label = name.removeprefix("test_").replace("_", " ")
    print(f"\n[acceptance] {label}: {'PASS' if report.passed else 'FAIL'}")
