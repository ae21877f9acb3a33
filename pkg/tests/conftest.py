import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from cowtopo.phantom import PhantomSpec, generate_phantom, spec_lattice  # noqa: E402


@pytest.fixture(scope="session")
def full_phantom():
    """Full CoW (Acom, both Pcoms, no 3rd-A2): volume, ROI, expected graph."""
    return generate_phantom(PhantomSpec())


@pytest.fixture(scope="session")
def lattice():
    specs = spec_lattice()
    return [(spec, *generate_phantom(spec)) for spec in specs]


@pytest.fixture(scope="session")
def phantom_of():
    cache = {}

    def make(**fields):
        key = tuple(sorted(fields.items()))
        if key not in cache:
            cache[key] = generate_phantom(PhantomSpec(**fields))
        return cache[key]

    return make


def pytest_terminal_summary(terminalreporter):
    from criteria import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for number in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[number])
