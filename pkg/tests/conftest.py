import numpy as np
import pytest

from vitransport.benchmarks import build_problem
from vitransport.mesh import build_structured_quad_mesh, extrude_to_hex


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def unit_square_4():
    return build_structured_quad_mesh(4, 4)


@pytest.fixture(scope="session")
def cube_3():
    return extrude_to_hex(build_structured_quad_mesh(3, 3), 3)


@pytest.fixture(scope="session")
def diff3d_gal_10():
    return build_problem("diff3d", "gal", 1 / 10)


@pytest.fixture(scope="session")
def diff3d_dg_10():
    return build_problem("diff3d", "dg", 1 / 10)


@pytest.fixture(scope="session")
def adr3d_supg_10():
    return build_problem("adr3d", "supg", 1 / 10)


class CriterionLog:
    """Collects sub-check outcomes per acceptance criterion."""

    def __init__(self):
        self.checks = {}

    def record(self, criterion, title, ok, detail):
        self.checks.setdefault(criterion, (title, []))[1].append((bool(ok), detail))
        return bool(ok)

    def lines(self):
        out = []
        for criterion in sorted(self.checks):
            title, results = self.checks[criterion]
            status = "PASS" if all(ok for ok, _ in results) else "FAIL"
            out.append(f"criterion {criterion:>2} {status}: {title}")
            out.extend(f"    {'ok  ' if ok else 'FAIL'} {detail}" for ok, detail in results)
        return out


_CRITERIA = CriterionLog()


@pytest.fixture(scope="session")
def criteria():
    return _CRITERIA


def pytest_terminal_summary(terminalreporter):
    lines = _CRITERIA.lines()
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
