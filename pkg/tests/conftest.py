import os
import time
from pathlib import Path

import pytest

_STARTED = pytest.StashKey[float]()
DEFAULT_DATA = Path(__file__).resolve().parents[1] / "data" / "ml-100k" / "u.data"


def movielens_path() -> Path:
    return Path(os.environ.get("STABLEGNN_DATA", DEFAULT_DATA))


@pytest.fixture(scope="session")
def ml100k_path():
    path = movielens_path()
    if not path.is_file():
        pytest.skip(f"MovieLens 100k not found at {path} (set STABLEGNN_DATA)")
    return path


@pytest.fixture(scope="session")
def ml100k(ml100k_path):
    from stablegnn.movielens import load_ratings
    return load_ratings(ml100k_path)



def pytest_sessionstart(session):
    session.config.stash[_STARTED] = time.time()


def pytest_terminal_summary(terminalreporter, config):
    # repeat the acceptance verdicts, which are otherwise hidden by output capture
    cache = Path(os.environ.get("STABLEGNN_ACCEPTANCE_CACHE",
                                Path(__file__).resolve().parents[1] / "runs" / "acceptance"))
    lines = cache / "criteria.txt"
    if not lines.is_file() or lines.stat().st_mtime < config.stash.get(_STARTED, 0.0):
        return
    terminalreporter.section("acceptance criteria")
    for line in lines.read_text().splitlines():
        terminalreporter.write_line(line)
