import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from fedgraphrec.dataset import from_arrays

settings.register_profile("repo", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "repo"))

DATA = Path(__file__).parent / "data"


@pytest.fixture
def data_dir() -> Path:
    return DATA


@pytest.fixture
def tiny():
    """Four users, five items, a hand-made interaction log."""
    rows = [
        (0, 0, 10), (0, 1, 20), (0, 2, 30),
        (1, 0, 15), (1, 1, 25), (1, 3, 35),
        (2, 1, 40), (2, 4, 50),
        (3, 2, 45), (3, 3, 55), (3, 4, 60),
    ]
    u, i, t = zip(*rows)
    return from_arrays(u, i, t, n_users=4, n_items=5)


def rows_of(ds):
    return sorted(zip(ds.users.tolist(), ds.items.tolist(), ds.ratings.tolist(), ds.timestamps.tolist()))


def random_dataset(rng: np.random.Generator, n_users=8, n_items=10, n=60, t_max=1000):
    u = rng.integers(0, n_users, n)
    i = rng.integers(0, n_items, n)
    t = rng.integers(0, t_max, n)
    return from_arrays(u, i, t, n_users=n_users, n_items=n_items)


ACCEPTANCE: list[tuple[int, str, bool, str]] = []


def record(number: int, title: str, ok: bool, detail: str) -> None:
    """Log one acceptance criterion; the summary prints them in order."""
    ACCEPTANCE.append((number, title, bool(ok), detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, ok, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {number:>2}. {title}: {detail}")
