import numpy as np
import pytest

from wmhseg.data import PhantomSpec, generate_phantom

# (criterion, status, detail) with status PASS, FAIL or SKIP
ACCEPTANCE_RESULTS: list[tuple[str, str, str]] = []


@pytest.fixture(scope="session")
def phantom():
    return generate_phantom(PhantomSpec(shape=(32, 40, 40), seed=5), "ph_a")


@pytest.fixture(scope="session")
def small_phantoms():
    return [generate_phantom(PhantomSpec(shape=(24, 32, 32), region_count=5, seed=s), f"ph_{s}")
            for s in range(3)]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, status, detail in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(f"{status}  {name}: {detail}")
