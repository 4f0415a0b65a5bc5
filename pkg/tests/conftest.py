import time
from contextlib import contextmanager

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from funnelbibo.spectral import (point_observation_coefficients, reactor_input_coefficients,
                                 reactor_operator)

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

D, V, PSI = 0.1, 0.4, 2.8


@pytest.fixture(scope="session")
def reactor():
    return reactor_operator(D, V, PSI, 100)


@pytest.fixture(scope="session")
def reactor_bc(reactor):
    return reactor_input_coefficients(reactor), point_observation_coefficients(reactor, 1.0)


def closed_form_eigenvalue(n):
    """lambda_n of D x'' - v x' - psi x with Neumann ends (independent oracle)."""
    if n == 0:
        return -PSI
    return -(V**2 + 4 * D**2 * n**2 * np.pi**2) / (4 * D) - PSI


# ---------------------------------------------------------------------------
# acceptance reporting: one PASS/FAIL line per criterion

_ACCEPTANCE = pytest.StashKey[list]()


class _Criterion:
    def __init__(self):
        self.checks: list[tuple[str, bool]] = []
        self.notes: list[str] = []

    def check(self, name: str, ok) -> bool:
        self.checks.append((name, bool(ok)))
        return bool(ok)

    def note(self, text: str) -> None:
        self.notes.append(text)


@pytest.fixture
def acceptance(request):
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    @contextmanager
    def run(number: int, title: str, limit: float):
        c = _Criterion()
        err = None
        t0 = time.perf_counter()
        try:
            yield c
        except Exception as exc:  # noqa: BLE001
            err = exc
        elapsed = time.perf_counter() - t0
        c.check(f"runtime {elapsed:.2f} s < {limit:g} s", elapsed < limit)
        c.note(f"{elapsed:.2f} s")
        failed = [name for name, ok in c.checks if not ok]
        ok = err is None and not failed
        detail = c.notes + ([f"failed: {', '.join(failed)}"] if failed else [])
        if err is not None:
            detail.append(f"error: {type(err).__name__}: {err}")
        line = f"criterion {number} [{'PASS' if ok else 'FAIL'}] {title}: " + "; ".join(detail)
        lines.append(line)
        print(line)
        if err is not None:
            raise err
        assert ok, line

    return run


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
