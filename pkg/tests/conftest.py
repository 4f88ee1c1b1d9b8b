import pytest

from physres.dataset import DatasetConfig, make_dataset
from physres.signals import SynthConfig


@pytest.fixture(scope="session")
def small_dataset():
    """Four classes, 60 windows each, from short recordings."""
    cfg = DatasetConfig(classes=(1, 2, 3, 4), windows_per_class=60, synth=SynthConfig(duration_s=2.0))
    return make_dataset(cfg, seed=1)


ACCEPTANCE_LINES = []


@pytest.fixture
def report_criterion():
    """Record one PASS/FAIL line per acceptance criterion."""

    def record(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append((number, line))
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
