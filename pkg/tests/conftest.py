import json
from pathlib import Path

import pytest

import relaxlab
from relaxlab import run

CONFIG_DIR = Path(relaxlab.__file__).parent / "configs"

# (criterion id, "[PASS/FAIL] <id> <name>: <detail>") pairs, echoed in id
# order after the test summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("-", "acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


def config_path(name: str) -> Path:
    return CONFIG_DIR / f"{name}.json"


@pytest.fixture(scope="session")
def flagship_fast(tmp_path_factory):
    """One fast flagship run shared by the acceptance tests."""
    out = tmp_path_factory.mktemp("flagship_fast") / "run"
    summary = run(config_path("hedgehog_b3"), out, fast=True)
    return out, summary


@pytest.fixture(scope="session")
def constant_fast(tmp_path_factory):
    out = tmp_path_factory.mktemp("constant_fast") / "run"
    summary = run(config_path("constant_box"), out, fast=True)
    return out, summary


@pytest.fixture(scope="session")
def refinement_pair(tmp_path_factory):
    """The same small problem at h and h/2, for grid-stability checks."""
    base = tmp_path_factory.mktemp("pair")
    coarse = base / "coarse"
    fine = base / "fine"
    run(config_path("hedgehog_pair"), coarse, fast=True)
    run(config_path("hedgehog_pair"), fine, fast=False)
    return coarse, fine


def load_summary(run_dir: Path) -> dict:
    with open(run_dir / "summary.json") as f:
        return json.load(f)
