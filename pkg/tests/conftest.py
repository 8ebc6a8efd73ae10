import numpy as np
import pytest

from cespin.hamiltonian import SpinSystem
from cespin.lattice import load_crystal_spec
from cespin.scenario import central_spin_setup


@pytest.fixture(scope="session")
def yag():
    return load_crystal_spec("builtin:yag")


@pytest.fixture(scope="session")
def small_setup():
    """Al bath within 0.8 nm of the default Ce site; small enough for brute force."""
    return central_spin_setup(cutoff=0.8)


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


def random_secular_pair(rng) -> SpinSystem:
    """Two spin-1/2 nuclei with secular hyperfine and a diag(b, b, c) pair tensor."""
    b, c = rng.normal(scale=0.05, size=2)
    return SpinSystem(
        spins=np.array([0.5, 0.5]),
        gammas=rng.normal(scale=0.02, size=2),
        positions=rng.normal(size=(2, 3)),
        hyperfine=np.column_stack([np.zeros((2, 2)), rng.normal(scale=0.3, size=2)]),
        field=rng.uniform(1, 100),
        pair_couplings={(0, 1): np.diag([b, b, c])},
    )


ACCEPTANCE_LINES = []


@pytest.fixture
def report():
    """Record one pass/fail line per acceptance criterion, then assert it."""

    def _report(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
