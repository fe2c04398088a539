"""Shared fixtures: replay stores, images, and the default schema."""

from __future__ import annotations

import sys
from pathlib import Path

import pytest

FIXTURES = Path(__file__).resolve().parent / "fixtures"
sys.path.insert(0, str(FIXTURES))

from prodkg.model_client import DirectoryFixtureStore, ReplayBackend  # noqa: E402
from prodkg.pipeline import Backends  # noqa: E402
from prodkg.schema import default_schema  # noqa: E402

IMAGES = FIXTURES / "images"
REPLAY = FIXTURES / "replay"
E2E_IMAGES = ["dark_chocolate_bar.png", "milk_chocolate_bar.png", "sparkling_water.png"]


def replay_backends(name: str) -> Backends:
    store = DirectoryFixtureStore(REPLAY / name)
    return Backends(vlm=ReplayBackend(store, "vlm"), llm=ReplayBackend(store, "llm"))


@pytest.fixture
def schema():
    return default_schema()


@pytest.fixture
def e2e_backends() -> Backends:
    return replay_backends("e2e")


@pytest.fixture
def edge_backends() -> Backends:
    return replay_backends("edge_cases")


@pytest.fixture
def e2e_images() -> list[Path]:
    return [IMAGES / name for name in E2E_IMAGES]


def enroll_e2e():
    """The three-product fixture inventory, built from replay."""
    from prodkg.graph import InventoryGraph
    from prodkg.pipeline import enroll

    inventory = InventoryGraph()
    backends = replay_backends("e2e")
    schema = default_schema()
    for name in E2E_IMAGES:
        enroll(IMAGES / name, schema, inventory, backends)
    return inventory


@pytest.fixture
def e2e_inventory():
    return enroll_e2e()


# --- acceptance report -----------------------------------------------------------

_CRITERIA: list[tuple[str, str, float]] = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): an acceptance criterion, reported as PASS/FAIL")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        _CRITERIA.append((marker.args[0], "PASS" if report.passed else "FAIL", report.duration))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, status, seconds in _CRITERIA:
        terminalreporter.write_line(f"{status}  {name}  ({seconds:.2f} s)")
