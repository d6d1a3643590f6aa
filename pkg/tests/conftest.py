import pytest

from flexmap.network import Bus, DemandProfile, Line, Network, load_fixture, validate


def two_bus(pd=1.0, qd=0.5, r=0.01, x=0.01, gens=(), bats=(), factors=(1.0,), imax_sq=float("inf")):
    """PCC (bus 0) feeding one load bus (bus 1)."""
    return validate(Network(
        (Bus(0, is_pcc=True), Bus(1, vmin_sq=0.0001, vmax_sq=10.0)),
        (Line(0, 1, r, x, imax_sq),),
        tuple(gens),
        tuple(bats),
        DemandProfile({0: 0.0, 1: pd}, {0: 0.0, 1: qd}, tuple(factors), 1.0),
        1.0,
        "two-bus",
    ))


def distflow_2bus(pd, qd, r, x, iters=200):
    """Scalar fixed point of the 2-bus branch flow: (p, q, l, v_load)."""
    l = 0.0
    for _ in range(iters):
        p, q = pd + r * l, qd + x * l
        l = p * p + q * q  # v_pcc = 1
    v = 1 - 2 * (r * p + x * q) + (r * r + x * x) * l
    return p, q, l, v


@pytest.fixture(scope="session")
def five_bus():
    return load_fixture("five_bus")


@pytest.fixture(scope="session")
def copper():
    return load_fixture("copper_plate")


# one line per acceptance criterion, printed after the run
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
