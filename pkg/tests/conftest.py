import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("lavernet", deadline=None, max_examples=40)
settings.load_profile("lavernet")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def numeric_grad(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` w.r.t. every entry of ``x`` (mutated in place)."""
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = f()
        flat[i] = orig - h
        down = f()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * h)
    return g


# -- acceptance summary ---------------------------------------------------------

ACCEPTANCE: dict[int, dict] = {}


@pytest.fixture
def criterion(request):
    """Record ``(number, title, passed, detail)`` for the end-of-run acceptance table."""
    def record(number: int, title: str, passed: bool, detail: str) -> None:
        ACCEPTANCE[number] = {"title": title, "passed": bool(passed), "detail": detail}
        print(f"{'PASS' if passed else 'FAIL'} criterion {number:>2} {title}: {detail}")
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        r = ACCEPTANCE[n]
        terminalreporter.write_line(f"{'PASS' if r['passed'] else 'FAIL'} criterion {n:>2} {r['title']}: {r['detail']}")
