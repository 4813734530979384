import numpy as np
import pytest

from fedcast.config import FLConfig, TaskConfig


def scalar_l1(values) -> float:
    """Plain Python loop, used as an independent oracle."""
    total = 0.0
    for v in np.asarray(values, dtype=np.float64).reshape(-1).tolist():
        total += abs(v)
    return total


def scalar_deviation(curr, prev) -> float:
    c = np.asarray(curr, dtype=np.float64).reshape(-1).tolist()
    p = np.asarray(prev, dtype=np.float64).reshape(-1).tolist()
    num = den = 0.0
    for a, b in zip(c, p):
        num += abs(a - b)
        den += abs(b)
    if den > 0:
        return num / den
    return 0.0 if num == 0 else float("inf")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def tiny_config():
    """A config small enough for sub-second end-to-end runs."""
    return FLConfig(rounds=4, warm_start_rounds=1, lr=0.1,
                    task=TaskConfig(train_per_client=60, val_per_direction=20, test_per_direction=20))


ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record(criterion: int, ok: bool, detail: str) -> bool:
    """Store one acceptance verdict; printed together at the end of the session."""
    ACCEPTANCE[criterion] = (bool(ok), detail)
    print(f"criterion {criterion:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
    return bool(ok)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
