import pytest
from hypothesis import settings

from spillfree.functionals import Gains, compute_R
from spillfree.model import Grid, PhysicalParams

# numba dispatch makes the first example slow; deadlines only add noise here
settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture
def unit2():
    """mu = g = L = m = 1 with H_max = 2."""
    return PhysicalParams(g=1.0, mu=1.0, L=1.0, m=1.0, H_max=2.0)


@pytest.fixture
def unit4():
    """mu = g = L = m = 1 with H_max = 4, so that R = 4/3."""
    return PhysicalParams(g=1.0, mu=1.0, L=1.0, m=1.0, H_max=4.0)


@pytest.fixture
def grid50():
    return Grid(1.0, 50)


@pytest.fixture
def certified_gains(unit4):
    return Gains(sigma=10.0, q=10.0, k=0.5, r=0.5 * compute_R(unit4))


_ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE_KEY] = []


@pytest.fixture
def acceptance(request):
    """Record one verdict line per acceptance criterion; echoed in the terminal summary."""
    lines = request.config.stash[_ACCEPTANCE_KEY]

    def record(number: int, title: str, ok: bool, detail: str = ""):
        line = f"criterion {number} [{'PASS' if ok else 'FAIL'}] {title}" + (f": {detail}" if detail else "")
        print(line)
        lines.append((number, line))
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
