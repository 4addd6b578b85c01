from __future__ import annotations

from collections import defaultdict

import pytest

from nermorph import demo
from nermorph.core import PipelineConfig

_criteria: dict[int, list[tuple[str, str]]] = defaultdict(list)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number n")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _criteria[marker.args[0]].append((item.originalname or item.name, report.outcome))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        results = _criteria[n]
        ok = all(outcome == "passed" for _, outcome in results)
        names = ", ".join(dict.fromkeys(name for name, _ in results))
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  ({names})")


@pytest.fixture
def config() -> PipelineConfig:
    return PipelineConfig()


@pytest.fixture(scope="session")
def demo_suite():
    return demo.demo_oracle_suite()


@pytest.fixture
def clean_backend():
    return demo.demo_backend(with_faults=False)


@pytest.fixture
def faulty_backend():
    return demo.demo_backend(with_faults=True)
