"""Flexibility maps: direction sets, the monolithic map solves and dispatch access."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import geometry
from .model import AssemblyOptions, CouplingMode, OptimizationModel, assemble, assemble_path
from .network import Network
from .solver import SURVEYOR, Solution, SolveRequest, maximize_surveyor, refine_exact, signed_areas, solve

# one replica's operating point keyed by (variable kind, element index)
Dispatch = dict[tuple[str, int], float]


class MapInfeasibleError(RuntimeError):
    def __init__(self, message: str, diagnostic: str = ""):
        super().__init__(message if not diagnostic else f"{message}: {diagnostic}")
        self.diagnostic = diagnostic


@dataclass(frozen=True)
class DirectionSet:
    angles: tuple[float, ...]

    def __post_init__(self):
        a = self.angles
        if len(a) < 3:
            raise ValueError("need at least 3 directions")
        if any(not 0.0 <= x < 2 * math.pi for x in a):
            raise ValueError("angles must lie in [0, 2*pi)")
        if any(a[i] >= a[i + 1] for i in range(len(a) - 1)):
            raise ValueError("angles must be strictly increasing")

    @property
    def H(self) -> int:
        return len(self.angles)

    def unit(self) -> np.ndarray:
        a = np.asarray(self.angles)
        return np.stack([np.cos(a), np.sin(a)], axis=1)


def make_directions(H: int, offset: float = 0.0) -> DirectionSet:
    if H < 3:
        raise ValueError("need at least 3 directions")
    angles = sorted((offset + 2 * math.pi * h / H) % (2 * math.pi) for h in range(H))
    return DirectionSet(tuple(angles))


@dataclass
class FlexibilityMap:
    directions: DirectionSet
    vertices: np.ndarray  # (T, H, 2): p_pcc, q_pcc
    dispatch: dict[tuple[int, int], Dispatch] = field(default_factory=dict)
    coupling: CouplingMode = CouplingMode.ALL_PAIRS
    objective: str = "linear"
    independent_periods: bool = False
    stats: dict = field(default_factory=dict)
    network_name: str = ""
    factors: tuple[float, ...] = ()

    @property
    def H(self) -> int:
        return self.vertices.shape[1]

    @property
    def T(self) -> int:
        return self.vertices.shape[0]

    def polygon(self, t: int) -> list[tuple[float, float]]:
        return [(float(p), float(q)) for p, q in self.vertices[t]]

    def hull(self, t: int) -> list[tuple[float, float]]:
        """The region of period ``t``: convex hull of its vertices."""
        return geometry.convex_hull(self.vertices[t])

    def area(self, t: int) -> float:
        return geometry.shoelace(self.polygon(t))

    def areas(self) -> list[float]:
        return [self.area(t) for t in range(self.T)]

    def metadata(self) -> dict:
        return {
            "H": self.H,
            "T": self.T,
            "coupling": self.coupling.value,
            "objective": self.objective,
            "independent_periods": self.independent_periods,
            "network": self.network_name,
            "factors": list(self.factors),
        }


TIE_BREAK = 1e-5


def directional_objective(model: OptimizationModel, directions: DirectionSet, tie: float = TIE_BREAK) -> np.ndarray:
    """sum over (h, t) of p_pcc cos(alpha_h) + q_pcc sin(alpha_h).

    A face of the region normal to alpha_h makes the optimum a whole segment.
    The ``tie`` weight on the counter-clockwise normal picks the same end of
    every such face; left to the solver the end is arbitrary and the polygon
    can lose a corner.  On a curved boundary it costs O(tie^2) in support.
    """
    c = np.zeros(model.n)
    u = directions.unit()
    for (h, t), (pp, qq) in model.pcc.items():
        c[pp] = u[h, 0] - tie * u[h, 1]
        c[qq] = u[h, 1] + tie * u[h, 0]
    return c


def _replica_columns(model: OptimizationModel) -> dict[tuple[int, int], np.ndarray]:
    cols: dict[tuple[int, int], list[int]] = {}
    for j, ref in enumerate(model.variables):
        cols.setdefault((ref.h, ref.t), []).append(j)
    return {k: np.array(v) for k, v in cols.items()}


def repair_support(model: OptimizationModel, x: np.ndarray, directions: DirectionSet) -> tuple[np.ndarray, int]:
    """Give every slot h the best stored operating point for direction alpha_h.

    Reassigning replicas never breaks a constraint as long as what moves is a
    whole unit the constraints treat symmetrically: a single (h, t) replica
    under all-pairs ramps without batteries, otherwise a whole trajectory.
    The directional objective can only grow.
    """
    cols = _replica_columns(model)
    u = directions.unit()
    H, T = model.H, model.T
    pq = np.empty((T, H, 2))
    for (h, t), (pp, qq) in model.pcc.items():
        pq[t, h] = x[pp], x[qq]
    score = np.einsum("thk,gk->tgh", pq, u)  # score[t, g, h]: direction g applied to vertex h
    new = x.copy()
    moved = 0
    if model.mode == CouplingMode.ALL_PAIRS and not model.exclusive:
        for t in range(T):
            for g in range(H):
                best = int(np.argmax(score[t, g]))
                if score[t, g, best] > score[t, g, g] + 1e-12:
                    new[cols[(g, t)]] = x[cols[(best, t)]]
                    moved += 1
    else:
        total = score.sum(axis=0)
        for g in range(H):
            best = int(np.argmax(total[g]))
            if total[g, best] > total[g, g] + 1e-12:
                for t in range(T):
                    new[cols[(g, t)]] = x[cols[(best, t)]]
                moved += 1
    return new, moved


def dispatches_of(sol: Solution) -> dict[tuple[int, int], Dispatch]:
    out: dict[tuple[int, int], Dispatch] = {}
    for j, ref in enumerate(sol.model.variables):
        out.setdefault((ref.h, ref.t), {})[(ref.kind, ref.elem)] = float(sol.x[j])
    return out


def presolve(net: Network, T: int, options: AssemblyOptions | None = None, **solver_options) -> Solution:
    """Feasibility of nominal operation over the horizon (zero objective).

    With every extreme point copying one trajectory all ramp pairs coincide,
    so the single-trajectory model is feasible iff the full model is.
    """
    model = assemble_path(net, T, options)
    sol = solve(SolveRequest(model, np.zeros(model.n), **solver_options))
    if not sol.status.ok:
        raise MapInfeasibleError("nominal operation is infeasible", sol.diagnostic)
    return sol


def _prepare(net: Network, T: int | None) -> Network:
    return net if T is None or T == net.horizon else net.with_horizon(T)


def _map_from(sol: Solution, directions: DirectionSet, mode, objective, net, stats) -> FlexibilityMap:
    return FlexibilityMap(
        directions=directions,
        vertices=sol.pq(),
        dispatch=dispatches_of(sol),
        coupling=CouplingMode(mode),
        objective=objective,
        stats=stats,
        network_name=net.name,
        factors=tuple(net.demand.factors),
    )


def _linear_solution(net, H, T, mode, offset, options, refine, solver_options):
    net = _prepare(net, T)
    T = net.horizon
    directions = make_directions(H, offset)
    t0 = time.perf_counter()
    presolve(net, T, options, **solver_options)
    model = assemble(net, H, T, mode, options)
    c = directional_objective(model, directions)
    req = SolveRequest(model, c, **solver_options)
    sol = solve(req)
    if not sol.status.ok:
        raise MapInfeasibleError("map solve failed", sol.diagnostic)
    if refine:
        sol = refine_exact(req, sol)
    sol.x, moved = repair_support(model, sol.x, directions)
    sol.objective_value = float(c @ sol.x)
    sol.stats = {**sol.stats, "support_repairs": moved}
    stats = {
        "wall_time": time.perf_counter() - t0,
        "status": sol.status.value,
        "objective_value": sol.objective_value,
        **model.counts(),
        **{k: v for k, v in sol.stats.items() if not isinstance(v, list)},
    }
    return net, directions, model, req, sol, stats


def solve_linear_map(
    net: Network,
    H: int = 8,
    T: int | None = None,
    mode: CouplingMode | str = CouplingMode.ALL_PAIRS,
    *,
    offset: float = 0.0,
    options: AssemblyOptions | None = None,
    refine: bool = True,
    **solver_options,
) -> FlexibilityMap:
    """One monolithic solve of the directional objective over all (h, t)."""
    net, directions, model, req, sol, stats = _linear_solution(net, H, T, mode, offset, options, refine, solver_options)
    return _map_from(sol, directions, mode, "linear", net, stats)


def solve_surveyor_map(
    net: Network,
    H: int = 8,
    T: int | None = None,
    mode: CouplingMode | str = CouplingMode.ALL_PAIRS,
    *,
    offset: float = 0.0,
    options: AssemblyOptions | None = None,
    refine: bool = True,
    **solver_options,
) -> FlexibilityMap:
    """Area objective, warm-started from the directional map."""
    t0 = time.perf_counter()
    net, directions, model, req, init, stats = _linear_solution(net, H, T, mode, offset, options, refine, solver_options)
    sreq = SolveRequest(model, SURVEYOR, **solver_options)
    sol = maximize_surveyor(sreq, init)
    stats = {
        **stats,
        "wall_time": time.perf_counter() - t0,
        "linear_areas": [float(a) for a in np.abs(signed_areas(model, init.x))],
        "surveyor_iterations": sol.stats["iterations"],
        "area_history": sol.stats["area_history"],
        "status": sol.status.value,
    }
    return _map_from(sol, directions, mode, SURVEYOR, net, stats)


def extract_dispatch(fmap: FlexibilityMap, h: int, t: int) -> Dispatch:
    """Full operating point behind vertex ``h`` of period ``t``."""
    if not (0 <= h < fmap.H and 0 <= t < fmap.T):
        raise IndexError(f"vertex ({h}, {t}) outside H={fmap.H}, T={fmap.T}")
    if (h, t) not in fmap.dispatch:
        raise KeyError(f"no dispatch stored for vertex ({h}, {t})")
    return dict(fmap.dispatch[(h, t)])


def dispatch_values(d: Mapping[tuple[str, int], float], kind: str) -> dict[int, float]:
    return {elem: v for (k, elem), v in d.items() if k == kind}
