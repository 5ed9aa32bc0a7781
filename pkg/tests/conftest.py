import pytest

from lur.data import SynthSpec, gen_synthetic

_ACCEPTANCE_LINES = []


@pytest.fixture
def report_criterion():
    """Record one pass/fail line per acceptance criterion for the terminal summary."""

    def record(number, passed, detail):
        _ACCEPTANCE_LINES.append(f"[{'PASS' if passed else 'FAIL'}] criterion {number:>2}: {detail}")
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def blobs():
    """The 5-class, 16-dim well-separated synthetic set used across the suite."""
    return gen_synthetic(SynthSpec(classes=5, dim=16, per_class_count=200, cluster_mean_scale=3.0,
                                   cluster_stdev=0.5, seed=0))


@pytest.fixture(scope="session")
def small_blobs():
    return gen_synthetic(SynthSpec(classes=3, dim=4, per_class_count=30, cluster_mean_scale=3.0,
                                   cluster_stdev=0.5, seed=11))
