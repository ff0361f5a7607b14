import pytest

from ddbranch.conjugacy import build_table
from ddbranch.offspring import make_model

FAMILIES = ("geometric", "ricker", "binary_splitting", "density_independent")


@pytest.fixture(scope="session")
def ricker():
    return make_model("ricker", rho=2.0)


@pytest.fixture(scope="session")
def geometric():
    return make_model("geometric", rho=2.0)


@pytest.fixture(scope="session")
def linear():
    return make_model("density_independent", rho=2.0)


@pytest.fixture(scope="session")
def ricker_table(ricker):
    return build_table(ricker)


@pytest.fixture(scope="session")
def geometric_table(geometric):
    return build_table(geometric)


@pytest.fixture(scope="session")
def linear_table(linear):
    return build_table(linear)


@pytest.fixture(params=FAMILIES)
def any_model(request):
    return make_model(request.param, rho=2.0)


ACCEPTANCE_LINES = []


@pytest.fixture
def record():
    """Collect one acceptance verdict line; all lines are echoed in the terminal summary."""

    def _record(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return _record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
