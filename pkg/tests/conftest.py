import numpy as np
import pytest

from mvvcast.model import build_lattice, make_params

FULL = dict(R=18.59e6, B=312500, N=64, T=0.1, n0=1e-9, E_b=1e-3, beta=2)
SMALL = dict(R=625e3, B=312500, N=4, T=0.1, n0=1e-9, E_b=1e-4, beta=2)


@pytest.fixture
def lattice55():
    return build_lattice(5, 5)


def small_params(requests, N=4, **kw):
    base = dict(SMALL, N=N)
    base.update(kw)
    return make_params(requests, **base)


def random_selection_instance(rng, K_max=3, A_max=3, N_max=4, lattice=None):
    """Random (h, sel, params) with a few multicast groups over distinct views."""
    from mvvcast.model import ViewSelection
    lattice = lattice or build_lattice(3, 2)
    N = int(rng.integers(1, N_max + 1))
    K = int(rng.integers(1, K_max + 1))
    A = int(rng.integers(1, min(A_max, N, K) + 1))
    views = rng.choice(len(lattice), A, replace=False)
    y = np.zeros((K, len(lattice)), dtype=np.int8)
    for k in range(K):
        y[k, views[k % A]] = 1
    for k in range(K):  # a few users also use a second view
        if rng.random() < 0.3:
            y[k, views[rng.integers(A)]] = 1
    params = small_params([1] * K, N=N, R=float(rng.uniform(1e5, 2e6)))
    h = rng.exponential(1e-6, size=(N, K))
    return h, ViewSelection.from_y(y), params


ACCEPTANCE_LINES: list[str] = []


def report(number: int, ok: bool, detail: str) -> None:
    """Record one pass/fail line for an acceptance criterion and print it."""
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
