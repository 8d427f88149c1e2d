import pytest

from qcelevator.genmap import build_generating_map
from qcelevator.ifs import build_instance_systems
from qcelevator.params import TheoremInputs, check_direct_params, derive_paper_params

W1_ARGS = (2, 2.1, 0.1, 3, 4, 0.27)


@pytest.fixture(scope="session")
def w1_params():
    return check_direct_params(*W1_ARGS)


@pytest.fixture(scope="session")
def w1(w1_params):
    return build_instance_systems(w1_params)


@pytest.fixture(scope="session")
def w1_gm(w1):
    return build_generating_map(w1)


@pytest.fixture(scope="session")
def w2_params():
    return derive_paper_params(TheoremInputs(2, 3.0, 1.2, 0.4))


@pytest.fixture(scope="session")
def w2(w2_params):
    return build_instance_systems(w2_params)


ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = []


@pytest.fixture
def record(request):
    """Log one acceptance line; the test still asserts on its own."""
    def _record(number, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        request.config.stash[ACCEPTANCE].append(line)
        print(line)
        return ok
    return _record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
