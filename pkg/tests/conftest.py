import os
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

from lsjm.network import AdjacencyView  # noqa: E402

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", max_examples=200, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

ROOT = Path(__file__).resolve().parents[1]
DATA = ROOT / "data"


def random_view(rng, n, density=0.4, directed=True, missing=0.0):
    y = (rng.random((n, n)) < density).astype(int)
    np.fill_diagonal(y, 0)
    obs = rng.random((n, n)) >= missing
    if not directed:
        y = np.triu(y, 1)
        y = y | y.T
        obs = np.triu(obs, 1)
        obs = obs | obs.T
    return AdjacencyView(y, obs, directed=directed)


def random_spd(rng, d, scale=0.3):
    a = rng.normal(size=(d, d)) * scale
    return a @ a.T + 0.05 * np.eye(d)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def real_paths(name, files):
    paths = [DATA / name / f for f in files]
    return paths if all(p.exists() for p in paths) else None


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion():
    def record(name, status, detail=""):
        ACCEPTANCE_LINES.append(f"[{status}] {name}" + (f": {detail}" if detail else ""))
        return status
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
