"""Reference estimators: Monte Carlo sampling, Minkowski boxes, per-period maps."""
from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import geometry
from .model import CouplingMode
from .network import Network
from .region import FlexibilityMap, make_directions, solve_linear_map


@dataclass
class SampleCloud:
    points: np.ndarray  # (n_feasible, 2)
    attempted: int
    feasible: int
    seed: int | None
    t: int = 0
    # every attempted sample, in draw order: (p, q, feasible)
    all_points: np.ndarray = field(default_factory=lambda: np.empty((0, 2)))
    mask: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=bool))
    diagnostic: str = ""

    def hull(self) -> list[tuple[float, float]]:
        return geometry.convex_hull(self.points) if len(self.points) else []

    def hull_area(self) -> float:
        h = self.hull()
        return geometry.shoelace(h) if len(h) >= 3 else 0.0

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["idx", "p", "q", "feasible"])
        for i, ((p, q), ok) in enumerate(zip(self.all_points, self.mask)):
            w.writerow([i, repr(float(p)), repr(float(q)), int(bool(ok))])
        return buf.getvalue()

    def write_csv(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv())


def _sweep(net: Network, t: int, pg: np.ndarray, qg: np.ndarray, pb: np.ndarray,
           tol: float = 1e-12, max_iter: int = 200):
    """Backward/forward DistFlow sweep for a batch of injections.

    ``pg``, ``qg`` are (n, n_gen) setpoints and ``pb`` the (n, n_bat) net
    battery power (charging positive).  Returns the PCC exchange, bus voltages
    squared, line currents squared and a convergence mask.
    """
    tree = net.tree()
    n = pg.shape[0]
    pos = {b.id: k for k, b in enumerate(net.buses)}
    nb = len(net.buses)
    net_p = np.zeros((n, nb))
    net_q = np.zeros((n, nb))
    for b in net.buses:
        pd, qd = net.demand.at(b.id, t)
        net_p[:, pos[b.id]] += pd
        net_q[:, pos[b.id]] += qd
    for g, gen in enumerate(net.generators):
        net_p[:, pos[gen.bus]] -= pg[:, g]
        net_q[:, pos[gen.bus]] -= qg[:, g]
    for s, bat in enumerate(net.batteries):
        net_p[:, pos[bat.bus]] += pb[:, s]

    v = np.ones((n, nb))
    nl = len(net.lines)
    P = np.zeros((n, nl))
    Q = np.zeros((n, nl))
    L = np.zeros((n, nl))
    order = tree.order
    converged = np.zeros(n, dtype=bool)
    for _ in range(max_iter):
        # backward: flows from the leaves towards the PCC
        P_new = np.zeros_like(P)
        Q_new = np.zeros_like(Q)
        for j in reversed(order[1:]):
            k = tree.parent_line[j]
            ln = net.lines[k]
            p = net_p[:, pos[j]] + sum(P_new[:, tree.parent_line[c]] for c in tree.children.get(j, ()))
            q = net_q[:, pos[j]] + sum(Q_new[:, tree.parent_line[c]] for c in tree.children.get(j, ()))
            # losses use the previous iterate's current
            P_new[:, k] = p + ln.r * L[:, k]
            Q_new[:, k] = q + ln.x * L[:, k]
        # forward: voltages from the PCC outwards
        v_new = np.ones((n, nb))
        L_new = np.zeros_like(L)
        for j in order[1:]:
            k = tree.parent_line[j]
            ln = net.lines[k]
            vi = v_new[:, pos[tree.parent[j]]]
            with np.errstate(divide="ignore", invalid="ignore"):
                L_new[:, k] = (P_new[:, k] ** 2 + Q_new[:, k] ** 2) / vi
            v_new[:, pos[j]] = vi - 2 * (ln.r * P_new[:, k] + ln.x * Q_new[:, k]) + ln.z_sq * L_new[:, k]
        step = np.abs(v_new - v).max(axis=1, initial=0.0)
        step = np.maximum(step, np.abs(L_new - L).max(axis=1, initial=0.0))
        P, Q, L, v = P_new, Q_new, L_new, v_new
        converged = np.isfinite(step) & (step < tol)
        if converged.all():
            break
        if not np.isfinite(step).any():
            break
    root = tree.root
    p_pcc = net_p[:, pos[root]] + sum(P[:, tree.parent_line[c]] for c in tree.children.get(root, ()))
    q_pcc = net_q[:, pos[root]] + sum(Q[:, tree.parent_line[c]] for c in tree.children.get(root, ()))
    ok = converged & np.all(v > 0, axis=1)
    return np.asarray(p_pcc, dtype=float), np.asarray(q_pcc, dtype=float), v, L, ok


def monte_carlo_region(net: Network, t: int = 0, n: int = 10_000, seed: int | None = 0,
                       tol: float = 1e-9) -> SampleCloud:
    """Sample DER setpoints uniformly in their boxes and keep the feasible ones.

    Each sample is solved with an exact power-flow sweep; a sample is kept when
    voltages and currents respect their limits (within ``tol``) and, for
    batteries, the single-period energy change from the initial state stays in
    range.
    """
    if n < 1:
        raise ValueError("need at least one sample")
    if not 0 <= t < net.horizon:
        raise IndexError(f"period {t} outside the horizon")
    rng = np.random.default_rng(seed)
    gens, bats = net.generators, net.batteries
    lo = np.array([g.pmin for g in gens]), np.array([g.qmin for g in gens])
    hi = np.array([g.pmax for g in gens]), np.array([g.qmax for g in gens])
    pg = rng.uniform(lo[0], hi[0], size=(n, len(gens)))
    qg = rng.uniform(lo[1], hi[1], size=(n, len(gens)))
    pb = rng.uniform([-b.pd_max for b in bats], [b.pc_max for b in bats], size=(n, len(bats)))
    p, q, v, L, ok = _sweep(net, t, pg, qg, pb)
    dt = net.demand.dt
    for s, bat in enumerate(bats):
        x = pb[:, s]
        e = bat.initial_energy + np.where(x >= 0, bat.eta_c * x, x / bat.eta_d) * dt
        ok &= (e >= -tol) & (e <= bat.emax + tol)
    pos = {b.id: k for k, b in enumerate(net.buses)}
    for b in net.buses:
        if b.is_pcc:
            continue
        ok &= (v[:, pos[b.id]] >= b.vmin_sq - tol) & (v[:, pos[b.id]] <= b.vmax_sq + tol)
    for k, ln in enumerate(net.lines):
        ok &= L[:, k] <= ln.imax_sq + tol
    pts = np.stack([p, q], axis=1)
    diag = "" if ok.any() else "no feasible sample"
    return SampleCloud(pts[ok], n, int(ok.sum()), seed, t, pts, ok, diag)


def minkowski_box(net: Network, t: int = 0) -> list[tuple[float, float]]:
    """Device intervals summed and offset by demand; the network is ignored.

    Returned counter-clockwise from the lower-left corner.  Without devices
    the box collapses to the demand point (four equal vertices).
    """
    pd, qd = net.demand.total(t)
    pmin = sum(g.pmin for g in net.generators) - sum(b.pc_max for b in net.batteries)
    pmax = sum(g.pmax for g in net.generators) + sum(b.pd_max for b in net.batteries)
    qmin = sum(g.qmin for g in net.generators)
    qmax = sum(g.qmax for g in net.generators)
    p0, p1 = pd - pmax, pd - pmin
    q0, q1 = qd - qmax, qd - qmin
    return [(p0, q0), (p1, q0), (p1, q1), (p0, q1)]


def per_period_map(
    net: Network,
    H: int = 8,
    T: int | None = None,
    *,
    offset: float = 0.0,
    **kwargs,
) -> FlexibilityMap:
    """Independent single-period maps stitched together (no ramp or SOC chaining)."""
    T = net.horizon if T is None else T
    if not 1 <= T <= net.horizon:
        raise ValueError(f"horizon {T} outside 1..{net.horizon}")
    t0 = time.perf_counter()
    verts = []
    dispatch = {}
    for t in range(T):
        single = net.with_factors([net.demand.factors[t]])
        m = solve_linear_map(single, H, 1, CouplingMode.ALL_PAIRS, offset=offset, **kwargs)
        verts.append(m.vertices[0])
        for (h, _), d in m.dispatch.items():
            dispatch[(h, t)] = d
    return FlexibilityMap(
        directions=make_directions(H, offset),
        vertices=np.stack(verts),
        dispatch=dispatch,
        coupling=CouplingMode.ALL_PAIRS,
        objective="linear",
        independent_periods=True,
        stats={"wall_time": time.perf_counter() - t0},
        network_name=net.name,
        factors=tuple(net.demand.factors[:T]),
    )
