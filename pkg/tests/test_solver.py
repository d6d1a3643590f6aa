import math

import numpy as np
import pytest
import scipy.sparse as sp

from flexmap.model import Cone, CouplingMode, OptimizationModel, VariableRef, assemble
from flexmap.network import Battery
from flexmap.solver import (
    SURVEYOR, SolveRequest, SolverError, Status, enumerate_binaries, max_violation, maximize_surveyor,
    relaxation_gaps, signed_areas, solve, solve_conic, solve_with_binaries,
)

from conftest import distflow_2bus, two_bus
from oracles import inscribed_polygon_area


def toy(kinds, bounds, rows=(), cones=(), pcc=None, H=1, T=1):
    """Hand-built model.  ``kinds``: list of (kind, elem, h, t); ``rows``: (terms, lo, hi)."""
    vars_ = [VariableRef(*k) for k in kinds]
    index = {v: j for j, v in enumerate(vars_)}
    n = len(vars_)
    lb = np.array([b[0] for b in bounds], dtype=float)
    ub = np.array([b[1] for b in bounds], dtype=float)
    data, ri, ci = [], [], []
    for r, (terms, _, _) in enumerate(rows):
        for j, a in terms.items():
            ri.append(r)
            ci.append(j)
            data.append(a)
    A = sp.csr_matrix((data, (ri, ci)), shape=(len(rows), n))
    return OptimizationModel(
        variables=vars_, index=index, lb=lb, ub=ub, binary=np.zeros(n, dtype=bool), A=A,
        row_lo=np.array([r[1] for r in rows], dtype=float), row_hi=np.array([r[2] for r in rows], dtype=float),
        row_names=[f"r{k}" for k in range(len(rows))], row_family=["toy"] * len(rows),
        cones=list(cones), audit=[], exclusive=[], complementary=[], pcc=pcc or {}, line_rx={},
        H=H, T=T, mode=CouplingMode.SAME_INDEX,
    )


def disk_model(H, squash=1.0):
    """One point (p_h, q_h) per direction inside the ellipse p^2 + (q/squash)^2 <= 1."""
    kinds, bounds, rows, cones, pcc = [], [], [], [], {}
    for h in range(H):
        base = len(kinds)
        kinds += [("p_pcc", 0, h, 0), ("q_pcc", 0, h, 0), ("s", 0, h, 0), ("l", 0, h, 0), ("v", 0, h, 0)]
        bounds += [(-2, 2), (-2, 2), (-2, 2), (1, 1), (1, 1)]
        rows.append(({base + 1: 1.0, base + 2: -squash}, 0.0, 0.0))
        cones.append(Cone(base, base + 2, base + 3, base + 4, f"disk{h}"))
        pcc[(h, 0)] = (base, base + 1)
    return toy(kinds, bounds, rows, cones, pcc, H=H)


def directional(model, H, offset=0.0):
    c = np.zeros(model.n)
    for h in range(H):
        a = offset + 2 * math.pi * h / H
        pp, qq = model.pcc[(h, 0)]
        c[pp], c[qq] = math.cos(a), math.sin(a)
    return c


def test_bound_toy():
    m = toy([("x", 0, 0, 0)], [(-math.inf, 2.0)])
    sol = solve_conic(SolveRequest(m, np.array([1.0])))
    assert sol.status is Status.OPTIMAL
    assert sol.x[0] == pytest.approx(2.0, abs=1e-7)


def test_disk_toy():
    m = toy([("x", 0, 0, 0), ("y", 0, 0, 0), ("l", 0, 0, 0), ("v", 0, 0, 0)],
            [(-5, 5), (-5, 5), (1, 1), (1, 1)], cones=[Cone(0, 1, 2, 3, "c")])
    sol = solve_conic(SolveRequest(m, np.array([1.0, 0, 0, 0])))
    assert sol.x[0] == pytest.approx(1.0, abs=1e-6)
    assert sol.x[1] == pytest.approx(0.0, abs=1e-6)


def test_infeasible_toy_has_diagnostic():
    m = toy([("x", 0, 0, 0)], [(0.0, 1.0)], rows=[({0: 1.0}, 2.0, 3.0)])
    sol = solve_conic(SolveRequest(m, np.array([1.0])))
    assert sol.status is Status.INFEASIBLE
    assert "toy" in sol.diagnostic


def test_request_validation():
    m = toy([("x", 0, 0, 0)], [(0, 1)])
    with pytest.raises(ValueError):
        SolveRequest(m, np.zeros(1), feas_tol=0)
    with pytest.raises(ValueError):
        SolveRequest(m, np.zeros(1), node_limit=0)
    with pytest.raises(SolverError):
        solve(SolveRequest(m, np.zeros(2)))
    with pytest.raises(SolverError):
        solve(SolveRequest(m, SURVEYOR))


def test_two_bus_conic_matches_fixed_point():
    from flexmap.model import assemble_path
    m = assemble_path(two_bus(1.0, 0.5, 0.01, 0.01), 1)
    sol = solve_conic(SolveRequest(m, np.zeros(m.n)))
    p, q, l, v = distflow_2bus(1.0, 0.5, 0.01, 0.01)
    assert sol.value("p_pcc", 0, 0, 0) == pytest.approx(p, abs=1e-6)
    assert sol.value("l", 0, 0, 0) == pytest.approx(l, abs=1e-6)
    assert sol.value("v", 1, 0, 0) == pytest.approx(v, abs=1e-6)


def _charge_model(pc=0.5, pd=0.5):
    net = two_bus(0.2, 0.0, bats=[Battery(1, 1.0, pc, pd, e0=0.0)])
    return assemble(net, 3, 1)


def test_charging_forced_by_objective():
    m = _charge_model()
    c = np.zeros(m.n)
    c[m.col("p_charge", 0, 0, 0)] = 1.0
    sol = solve_with_binaries(SolveRequest(m, c))
    uc, ud = sol.value("u_charge", 0, 0, 0), sol.value("u_discharge", 0, 0, 0)
    assert (uc, ud) == (1.0, 0.0)
    assert sol.value("p_charge", 0, 0, 0) == pytest.approx(0.5, abs=1e-6)


def test_degenerate_battery_matches_battery_free():
    m = _charge_model(0.0, 0.0)
    free = assemble(two_bus(0.2, 0.0), 3, 1)
    rng = np.random.default_rng(0)
    w = rng.normal(size=(3, 2))

    def obj(model):
        c = np.zeros(model.n)
        for (h, t), (pp, qq) in model.pcc.items():
            c[pp], c[qq] = w[h]
        return c

    a = solve_with_binaries(SolveRequest(m, obj(m)))
    b = solve(SolveRequest(free, obj(free)))
    assert a.objective_value == pytest.approx(b.objective_value, abs=1e-6)


@pytest.fixture(scope="module")
def small_battery_model(five_bus):
    # T=2, H=4 on the fixture with one battery: 8 binary pairs, 256 patterns
    net = five_bus.with_horizon(2)
    net = net.__class__(net.buses, net.lines, net.generators, net.batteries[:1], net.demand, net.base_mva, net.name)
    return assemble(net, 4, 2)


def _dir_obj(m, H):
    c = np.zeros(m.n)
    for (h, t), (pp, qq) in m.pcc.items():
        a = 2 * math.pi * h / H
        c[pp], c[qq] = math.cos(a), math.sin(a)
    return c


def test_branch_and_bound_matches_enumeration(small_battery_model):
    m = small_battery_model
    req = SolveRequest(m, _dir_obj(m, 4), node_limit=10_000)
    bb = solve_with_binaries(req)
    full = solve_with_binaries(req, shortcut=False)
    brute = enumerate_binaries(req)
    assert bb.status is Status.OPTIMAL
    assert bb.objective_value == pytest.approx(brute.objective_value, abs=1e-6)
    assert full.objective_value == pytest.approx(brute.objective_value, abs=1e-6)
    assert max_violation(m, bb.x) <= 1e-6


def test_enumeration_dominates_fixings(small_battery_model):
    m = small_battery_model
    req = SolveRequest(m, _dir_obj(m, 4), node_limit=10_000)
    best = solve_with_binaries(req).objective_value
    rng = np.random.default_rng(5)
    for _ in range(4):
        fixing = {k: int(rng.integers(0, 2)) for k in range(len(m.exclusive))}
        sol = solve_conic(SolveRequest(m, req.objective, fixing=fixing))
        if sol.status.ok:
            assert sol.objective_value <= best + 1e-6


def test_feasible_solutions_pass_residual_sweep(small_battery_model):
    m = small_battery_model
    sol = solve(SolveRequest(m, _dir_obj(m, 4)))
    assert sol.status.ok
    assert max_violation(m, sol.x) <= 1e-6


def test_determinism(small_battery_model):
    m = small_battery_model
    a = solve(SolveRequest(m, _dir_obj(m, 4)))
    b = solve(SolveRequest(m, _dir_obj(m, 4)))
    assert a.status == b.status
    assert abs(a.objective_value - b.objective_value) <= 1e-10


def test_surveyor_disk_octagon_from_squashed_start():
    H = 8
    m = disk_model(H)
    # start from an interior octagon of radius 0.5
    x = np.zeros(m.n)
    for h in range(H):
        a = 2 * math.pi * h / H
        pp, qq = m.pcc[(h, 0)]
        x[pp], x[qq] = 0.5 * math.cos(a), 0.5 * math.sin(a)
        s = m.index[VariableRef("s", 0, h, 0)]
        x[s] = x[qq]
        x[m.index[VariableRef("l", 0, h, 0)]] = x[m.index[VariableRef("v", 0, h, 0)]] = 1.0
    init = solve_conic(SolveRequest(m, np.zeros(m.n)))
    init.x = x
    sol = maximize_surveyor(SolveRequest(m, SURVEYOR), init)
    hist = sol.stats["area_history"]
    assert all(b >= a - 1e-12 for a, b in zip(hist, hist[1:]))
    inf = sol.stats["infeasibility_history"]
    assert max(inf) <= 1e-6
    area = float(signed_areas(m, sol.x)[0])
    assert area <= math.pi
    assert area == pytest.approx(inscribed_polygon_area(8), abs=2e-3)


def test_surveyor_fixed_point_on_regular_octagon():
    H = 8
    m = disk_model(H)
    init = solve_conic(SolveRequest(m, directional(m, H)))
    start = float(signed_areas(m, init.x)[0])
    assert start == pytest.approx(inscribed_polygon_area(8), abs=1e-6)
    sol = maximize_surveyor(SolveRequest(m, SURVEYOR), init)
    assert float(signed_areas(m, sol.x)[0]) == pytest.approx(start, abs=1e-6)


def test_surveyor_beats_linear_on_ellipse():
    H = 6
    m = disk_model(H, squash=0.4)
    init = solve_conic(SolveRequest(m, directional(m, H, offset=0.3)))
    lin = float(signed_areas(m, init.x)[0])
    sol = maximize_surveyor(SolveRequest(m, SURVEYOR), init)
    got = float(signed_areas(m, sol.x)[0])
    # largest hexagon inscribed in an ellipse: affine image of the regular one
    best = inscribed_polygon_area(6) * 0.4
    assert got > lin + 1e-3
    assert got <= best + 1e-6


def test_surveyor_rejects_infeasible_init():
    m = disk_model(4)
    bad = solve_conic(SolveRequest(m, np.zeros(m.n)))
    bad.status = Status.INFEASIBLE
    with pytest.raises(SolverError):
        maximize_surveyor(SolveRequest(m, SURVEYOR), bad)


def test_solution_gaps_nonnegative(five_bus):
    m = assemble(five_bus.without_batteries(), 4, 2)
    sol = solve(SolveRequest(m, _dir_obj(m, 4)))
    assert relaxation_gaps(m, sol.x).min() >= -1e-7
