"""Solver backend for assembled flexibility models.

The convex part (linear rows, bounds and rotated branch cones) goes to the
Clarabel interior-point solver.  Battery binaries are handled by a small
depth-first branch and bound, and the polygon-area objective by successive
linearization.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import clarabel
import numpy as np
import scipy.sparse as sp

from .model import OptimizationModel, VariableRef

log = logging.getLogger(__name__)

SURVEYOR = "surveyor"

# Charge on squared currents per unit of |z| that keeps the branch cones tight.
LOSS_WEIGHT = 0.1


class Status(str, Enum):
    OPTIMAL = "Optimal"
    FEASIBLE = "Feasible"
    INFEASIBLE = "Infeasible"
    ITERATION_LIMIT = "IterationLimit"

    @property
    def ok(self) -> bool:
        return self in (Status.OPTIMAL, Status.FEASIBLE)


class SolverError(RuntimeError):
    pass


@dataclass
class SolveRequest:
    model: OptimizationModel
    objective: np.ndarray | str
    warm_start: np.ndarray | None = None
    feas_tol: float = 1e-6
    opt_tol: float = 1e-9
    max_iter: int = 300
    time_limit: float | None = None
    loss_weight: float = LOSS_WEIGHT
    node_limit: int = 2000
    mip_gap: float = 1e-6
    fixing: dict[int, int] | None = None
    # successive linearization of the area objective
    damping: float = 0.5
    prox: float = 10.0  # proximal weight on the PCC move of each area step
    area_tol: float = 1e-6
    surveyor_iters: int = 50
    # loss-aware refinement
    refine_iters: int = 40
    refine_tol: float = 1e-10
    # loss charge kept during refinement; it only has to break ties on idle lines
    refine_loss_weight: float = 1e-2
    iter_log: Callable[[str], None] | None = None

    def __post_init__(self):
        if self.feas_tol <= 0 or self.opt_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_iter <= 0 or self.node_limit <= 0 or self.surveyor_iters <= 0:
            raise ValueError("iteration caps must be positive")
        if self.time_limit is not None and self.time_limit <= 0:
            raise ValueError("time limit must be positive")


@dataclass
class Solution:
    model: OptimizationModel
    x: np.ndarray
    objective_value: float
    status: Status
    binary_fixing: dict[int, int] = field(default_factory=dict)
    stats: dict = field(default_factory=dict)
    max_violation: float = math.nan
    diagnostic: str = ""

    def value(self, kind: str, elem: int, h: int, t: int) -> float:
        return float(self.x[self.model.col(kind, elem, h, t)])

    @property
    def assignment(self) -> dict[VariableRef, float]:
        return {ref: float(self.x[j]) for j, ref in enumerate(self.model.variables)}

    def pq(self) -> np.ndarray:
        """PCC exchange per replica, shape (T, H, 2)."""
        m = self.model
        out = np.empty((m.T, m.H, 2))
        for (h, t), (pp, qq) in m.pcc.items():
            out[t, h] = self.x[pp], self.x[qq]
        return out


# -- residuals -----------------------------------------------------------------


def violations(model: OptimizationModel, x: np.ndarray) -> dict[str, float]:
    """Largest violation per constraint family (rows, bounds, cones)."""
    out: dict[str, float] = {}
    ax = model.A @ x
    viol = np.maximum(model.row_lo - ax, 0.0) + np.maximum(ax - model.row_hi, 0.0)
    for fam in set(model.row_family):
        mask = np.fromiter((f == fam for f in model.row_family), dtype=bool, count=len(model.row_family))
        out[fam] = float(viol[mask].max(initial=0.0))
    bnd = np.maximum(model.lb - x, 0.0) + np.maximum(x - model.ub, 0.0)
    out["bounds"] = float(bnd.max(initial=0.0))
    if model.cones:
        idx = np.array([(c.p, c.q, c.l, c.v) for c in model.cones])
        p, q, l, v = (x[idx[:, k]] for k in range(4))
        out["cone"] = float(np.maximum(p * p + q * q - l * v, 0.0).max())
    return out


def max_violation(model: OptimizationModel, x: np.ndarray) -> float:
    return max(violations(model, x).values(), default=0.0)


def complementarity(model: OptimizationModel, x: np.ndarray) -> np.ndarray:
    if not model.complementary:
        return np.zeros(0)
    idx = np.array(model.complementary)
    return np.minimum(x[idx[:, 0]], x[idx[:, 1]])


def relaxation_gaps(model: OptimizationModel, x: np.ndarray) -> np.ndarray:
    """l*v - p^2 - q^2 for every audit record."""
    if not model.audit:
        return np.zeros(0)
    idx = np.array([(c.p, c.q, c.l, c.v) for c in model.audit])
    p, q, l, v = (x[idx[:, k]] for k in range(4))
    return l * v - p * p - q * q


# -- objectives ------------------------------------------------------------------


def signed_areas(model: OptimizationModel, x: np.ndarray) -> np.ndarray:
    """Shoelace signed area of each period's vertex sequence."""
    pq = np.empty((model.T, model.H, 2))
    for (h, t), (pp, qq) in model.pcc.items():
        pq[t, h] = x[pp], x[qq]
    p, q = pq[..., 0], pq[..., 1]
    return 0.5 * (p * np.roll(q, -1, axis=1) - np.roll(p, -1, axis=1) * q).sum(axis=1)


def area_gradient(model: OptimizationModel, x: np.ndarray) -> np.ndarray:
    c = np.zeros(model.n)
    H = model.H
    for (h, t), (pp, qq) in model.pcc.items():
        pn, qn = model.pcc[((h + 1) % H, t)]
        pb, qb = model.pcc[((h - 1) % H, t)]
        c[pp] = 0.5 * (x[qn] - x[qb])
        c[qq] = 0.5 * (x[pb] - x[pn])
    return c


def surrogate(model: OptimizationModel, c: np.ndarray, weight: float, x_lin: np.ndarray | None = None) -> np.ndarray:
    """Objective actually handed to the convex solver for ``maximize c @ x``.

    The PCC exchange grows by ``r*l`` and ``x*l`` with every line's squared
    current, so an objective rewarding imports also rewards overstated
    currents, which the cone relaxation happily supplies.  That credit is
    removed from ``l`` and ``weight*|z|*l`` is charged on top, which keeps
    the cones tight.  With ``x_lin`` the credit comes back through the
    linearization of the exact current ``(p^2 + q^2) / v`` around ``x_lin``,
    a minorant of the true objective that touches it at ``x_lin``.
    """
    out = np.array(c, dtype=float)
    if not model.line_rx:
        return out
    for (h, t), (pp, qq) in model.pcc.items():
        a, b = c[pp], c[qq]
        for cone in _replica_cones(model, h, t):
            r, xx = model.line_rx[cone.l]
            credit = max(0.0, a * r + b * xx + c[cone.l])
            out[cone.l] -= credit + weight * math.hypot(r, xx)
            if credit > 0.0 and x_lin is not None:
                pk, qk, vk = x_lin[cone.p], x_lin[cone.q], x_lin[cone.v]
                out[cone.p] += credit * 2 * pk / vk
                out[cone.q] += credit * 2 * qk / vk
                out[cone.v] -= credit * (pk * pk + qk * qk) / vk**2
    return out


def _replica_cones(model: OptimizationModel, h: int, t: int) -> list:
    cache = model.__dict__.setdefault("_cones_by_replica", {})
    if not cache:
        for cone in model.cones:
            ref = model.variables[cone.l]
            cache.setdefault((ref.h, ref.t), []).append(cone)
    return cache.get((h, t), [])


# -- convex solve ------------------------------------------------------------------


def _conic_form(model: OptimizationModel, lb: np.ndarray, ub: np.ndarray):
    n = model.n
    A = model.A.tocsr()
    lo, hi = model.row_lo, model.row_hi
    eq = np.isfinite(hi) & (lo == hi)
    up = np.isfinite(hi) & ~eq
    dn = np.isfinite(lo) & ~eq
    fixed = np.isfinite(lb) & (lb == ub)
    has_ub = np.isfinite(ub) & ~fixed
    has_lb = np.isfinite(lb) & ~fixed
    eye = sp.identity(n, format="csr")

    zero_blocks = [A[eq], eye[fixed]]
    zero_b = [hi[eq], lb[fixed]]
    nn_blocks = [A[up], -A[dn], eye[has_ub], -eye[has_lb]]
    nn_b = [hi[up], -lo[dn], ub[has_ub], -lb[has_lb]]

    nc = len(model.cones)
    if nc:
        idx = np.array([(c.p, c.q, c.l, c.v) for c in model.cones])
        base = 4 * np.arange(nc)
        rows = np.concatenate([base, base, base + 1, base + 2, base + 3, base + 3])
        cols = np.concatenate([idx[:, 2], idx[:, 3], idx[:, 0], idx[:, 1], idx[:, 2], idx[:, 3]])
        # s = (l + v, 2p, 2q, l - v) must lie in the second-order cone
        vals = np.concatenate([-np.ones(nc), -np.ones(nc), -2 * np.ones(nc), -2 * np.ones(nc), -np.ones(nc), np.ones(nc)])
        soc = sp.csr_matrix((vals, (rows, cols)), shape=(4 * nc, n))
    else:
        soc = sp.csr_matrix((0, n))
    Z = sp.vstack(zero_blocks, format="csr")
    N = sp.vstack(nn_blocks, format="csr")
    M = sp.vstack([Z, N, soc], format="csc")
    b = np.concatenate(zero_b + nn_b + [np.zeros(4 * nc)])
    cones = []
    if Z.shape[0]:
        cones.append(clarabel.ZeroConeT(Z.shape[0]))
    if N.shape[0]:
        cones.append(clarabel.NonnegativeConeT(N.shape[0]))
    cones.extend(clarabel.SecondOrderConeT(4) for _ in range(nc))
    fam = np.array(model.row_family, dtype=object)
    labels = np.concatenate(
        [
            fam[eq],
            np.array(["bounds"] * int(fixed.sum()), dtype=object),
            fam[up],
            fam[dn],
            np.array(["bounds"] * int(has_ub.sum() + has_lb.sum()), dtype=object),
            np.array(["cone"] * (4 * nc), dtype=object),
        ]
    )
    return M, b, cones, labels


_STATUS = {
    "Solved": Status.OPTIMAL,
    "AlmostSolved": Status.FEASIBLE,
    "PrimalInfeasible": Status.INFEASIBLE,
    "AlmostPrimalInfeasible": Status.INFEASIBLE,
}


def _solve(req: SolveRequest, c: np.ndarray, lb: np.ndarray, ub: np.ndarray, prox=None) -> Solution:
    """Maximize ``c @ x`` over the convex relaxation with the given variable bounds.

    ``prox = (cols, rho, center)`` subtracts ``rho/2 * |x[cols] - center|^2``.
    """
    model = req.model
    t0 = time.perf_counter()
    if np.any(lb > ub + 1e-12):
        return Solution(model, np.zeros(model.n), -math.inf, Status.INFEASIBLE, diagnostic="empty bounds")
    M, b, cones, labels = _conic_form(model, lb, ub)
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.max_iter = req.max_iter
    settings.tol_gap_abs = req.opt_tol
    settings.tol_gap_rel = req.opt_tol
    settings.tol_feas = min(1e-8, req.feas_tol)
    settings.tol_ktratio = 1e-7
    if req.time_limit is not None:
        settings.time_limit = float(req.time_limit)
    q = -np.asarray(c, dtype=float)
    if prox is None:
        P = sp.csc_matrix((model.n, model.n))
    else:
        cols, rho, center = prox
        P = sp.csc_matrix((np.full(len(cols), rho), (cols, cols)), shape=(model.n, model.n))
        q = q.copy()
        q[cols] -= rho * np.asarray(center)
    res = clarabel.DefaultSolver(P, q, M, b, cones, settings).solve()
    x = np.asarray(res.x, dtype=float)
    status = _STATUS.get(str(res.status), Status.ITERATION_LIMIT)
    diag = ""
    if status is Status.INFEASIBLE:
        z = np.abs(np.asarray(res.z))
        k = int(np.argmax(z)) if z.size else 0
        fams = {}
        for lab, w in zip(labels, z):
            fams[lab] = fams.get(lab, 0.0) + w
        worst = max(fams, key=fams.get) if fams else "?"
        diag = f"infeasible; certificate weight largest on '{worst}' rows (row {k})"
        x = np.full(model.n, np.nan)
    viol = max_violation(model, x) if status.ok else math.nan
    if status.ok and viol > req.feas_tol:
        diag = f"solver returned {res.status} with violation {viol:.2e}"
        status = Status.ITERATION_LIMIT
    stats = {"iterations": int(res.iterations), "solve_time": time.perf_counter() - t0, "solves": 1}
    obj = float(c @ x) if status.ok else -math.inf
    return Solution(model, x, obj, status, stats=stats, max_violation=viol, diagnostic=diag or str(res.status))


def _objective_vector(req: SolveRequest) -> np.ndarray:
    if isinstance(req.objective, str):
        raise SolverError("area objective needs maximize_surveyor")
    c = np.asarray(req.objective, dtype=float)
    if c.shape != (req.model.n,):
        raise SolverError(f"objective has shape {c.shape}, expected ({req.model.n},)")
    return c


def _bounds_with_fixing(model: OptimizationModel, fixing: dict[int, int] | None):
    lb, ub = model.lb.copy(), model.ub.copy()
    for k, mode in (fixing or {}).items():
        uc, ud = model.exclusive[k]
        if mode == 0:  # charging
            lb[uc] = ub[uc] = 1.0
            lb[ud] = ub[ud] = 0.0
        else:
            lb[uc] = ub[uc] = 0.0
            lb[ud] = ub[ud] = 1.0
    return lb, ub


def _penalized(req: SolveRequest, c: np.ndarray) -> np.ndarray:
    return surrogate(req.model, c, req.loss_weight)


def solve_conic(req: SolveRequest) -> Solution:
    """Convex solve with binaries fixed by ``req.fixing`` (or absent / relaxed)."""
    c = _objective_vector(req)
    lb, ub = _bounds_with_fixing(req.model, req.fixing)
    sol = _solve(req, _penalized(req, c), lb, ub)
    if sol.status.ok:
        sol.objective_value = float(c @ sol.x)
        sol.binary_fixing = dict(req.fixing or {})
    return sol


# -- binaries -----------------------------------------------------------------------


def _branch_order(model: OptimizationModel) -> list[int]:
    def key(k):
        ref = model.variables[model.exclusive[k][0]]
        return (ref.t, ref.h, ref.elem)

    return sorted(range(len(model.exclusive)), key=key)


def _round_binaries(model: OptimizationModel, x: np.ndarray, fixing: dict[int, int]) -> dict[int, int]:
    """Complete a fixing from the charge/discharge powers of ``x``."""
    full = dict(fixing)
    for k, (pc, pd) in enumerate(model.complementary):
        if k not in full:
            full[k] = 0 if x[pc] >= x[pd] else 1
    return full


def _set_binaries(model: OptimizationModel, x: np.ndarray, fixing: dict[int, int]) -> np.ndarray:
    x = x.copy()
    for k, mode in fixing.items():
        uc, ud = model.exclusive[k]
        x[uc], x[ud] = (1.0, 0.0) if mode == 0 else (0.0, 1.0)
    return x


def solve_with_binaries(req: SolveRequest, *, shortcut: bool = True) -> Solution:
    """Depth-first branch and bound over battery charge/discharge states.

    Nodes fix the state of one (battery, h, t) at a time, the pair with the
    largest simultaneous charge and discharge first, charging branch first.  A relaxation whose charge and discharge powers are
    already complementary is accepted without branching when ``shortcut``.
    """
    model = req.model
    c = _objective_vector(req)
    cp = _penalized(req, c)
    t0 = time.perf_counter()
    order = _branch_order(model)
    comp_tol = 1e-7
    tol = 1e-9
    nodes = 0
    solves = 0
    incumbent: Solution | None = None
    inc_val = -math.inf

    def relax(fixing):
        nonlocal solves
        solves += 1
        lb, ub = _bounds_with_fixing(model, fixing)
        return _solve(req, cp, lb, ub)

    def offer(sol: Solution, fixing: dict[int, int]):
        nonlocal incumbent, inc_val
        val = float(cp @ sol.x)
        if incumbent is None or val > inc_val + tol * (1 + abs(inc_val)):
            full = _round_binaries(model, sol.x, fixing)
            sol.x = _set_binaries(model, sol.x, full)
            sol.binary_fixing = full
            incumbent, inc_val = sol, val

    def violated(sol: Solution, fixing) -> int | None:
        # most violated pair first; chronological order breaks ties
        comp = complementarity(model, sol.x)
        cand = [k for k in order if k not in fixing and (not shortcut or comp[k] > comp_tol)]
        return max(cand, key=lambda k: comp[k]) if cand else None

    base = dict(req.fixing or {})
    root = relax(base)
    hit_limit = False
    if root.status.ok:
        k0 = violated(root, base)
        if k0 is None:
            offer(root, base)
        else:
            # rounding heuristic for an early incumbent
            guess = _round_binaries(model, root.x, base)
            cand = relax(guess)
            if cand.status.ok:
                offer(cand, guess)
            stack = [(base, root)]
            while stack:
                fixing, sol = stack.pop()
                nodes += 1
                if nodes > req.node_limit or (req.time_limit and time.perf_counter() - t0 > req.time_limit):
                    hit_limit = True
                    break
                if incumbent is not None and float(cp @ sol.x) <= inc_val + req.mip_gap * (1 + abs(inc_val)):
                    continue
                k = violated(sol, fixing)
                if k is None:
                    offer(sol, fixing)
                    continue
                children = []
                for mode in (0, 1):
                    f2 = {**fixing, k: mode}
                    child = relax(f2)
                    if child.status.ok:
                        children.append((f2, child))
                # charge branch explored first
                for item in reversed(children):
                    stack.append(item)
    elapsed = time.perf_counter() - t0
    stats = {"nodes": nodes, "solves": solves, "solve_time": elapsed}
    if incumbent is None:
        status = Status.ITERATION_LIMIT if hit_limit or root.status is Status.ITERATION_LIMIT else Status.INFEASIBLE
        return Solution(model, np.full(model.n, np.nan), -math.inf, status, stats=stats, diagnostic=root.diagnostic)
    incumbent.status = Status.FEASIBLE if hit_limit else Status.OPTIMAL
    incumbent.objective_value = float(c @ incumbent.x)
    incumbent.max_violation = max_violation(model, incumbent.x)
    incumbent.stats = stats
    return incumbent


def enumerate_binaries(req: SolveRequest) -> Solution:
    """Exhaustive search over every charge/discharge pattern (small models only)."""
    model = req.model
    n = len(model.exclusive)
    if n > 12:
        raise SolverError("too many binary pairs for exhaustive enumeration")
    c = _objective_vector(req)
    cp = _penalized(req, c)
    best: Solution | None = None
    for code in range(2**n):
        fixing = {k: (code >> k) & 1 for k in range(n)}
        lb, ub = _bounds_with_fixing(model, fixing)
        sol = _solve(req, cp, lb, ub)
        if sol.status.ok and (best is None or cp @ sol.x > cp @ best.x + 1e-12):
            sol.x = _set_binaries(model, sol.x, fixing)
            sol.binary_fixing = fixing
            best = sol
    if best is None:
        return Solution(model, np.full(model.n, np.nan), -math.inf, Status.INFEASIBLE)
    best.objective_value = float(c @ best.x)
    return best


def solve(req: SolveRequest) -> Solution:
    """Dispatch to the conic or the binary search path."""
    if req.model.exclusive and req.fixing is None:
        return solve_with_binaries(req)
    return solve_conic(req)


TIGHT_GAP = 1e-7


def _tight_solve(req: SolveRequest, c: np.ndarray, x_lin: np.ndarray, lb, ub, weight: float, prox=None):
    """Solve the linearized surrogate, raising the loss charge until the cones are tight.

    A small charge keeps the vertices close to the exact optimum, but it can
    leave room for currents overstated on purpose (a larger ``l`` lifts the
    voltages downstream).  The charge grows threefold per try up to ``req.loss_weight``.
    Returns the solution and the charge used; ``None`` if no charge worked.
    """
    model = req.model
    w = weight
    while True:
        sol = _solve(req, surrogate(model, c, w, x_lin), lb, ub, prox)
        if sol.status.ok and relaxation_gaps(model, sol.x).max(initial=0.0) <= TIGHT_GAP:
            return sol, w
        if w >= req.loss_weight:
            return None, w
        w = min(3 * w, req.loss_weight)


def refine_exact(req: SolveRequest, init: Solution) -> Solution:
    """Minorize-maximize iterations that restore the loss term of the objective.

    ``init`` solved the surrogate without loss credit.  Each step maximizes
    the surrogate linearized at the previous dispatch, so the true objective
    never decreases while every iterate keeps tight cones.  Binaries stay
    as fixed in ``init``.
    """
    model = req.model
    c = _objective_vector(req)
    if not model.line_rx or not init.status.ok:
        return init
    fixing = dict(init.binary_fixing)
    lb, ub = _bounds_with_fixing(model, fixing)
    best = init
    best_val = float(c @ init.x)
    t0 = time.perf_counter()
    solves = 0
    it = 0
    weight = req.refine_loss_weight
    for it in range(1, req.refine_iters + 1):
        sol, weight = _tight_solve(req, c, best.x, lb, ub, weight)
        solves += 1
        if sol is None:
            break
        val = float(c @ sol.x)
        if req.iter_log:
            req.iter_log(f"refine {it} {val:.10f} {sol.max_violation:.3e}")
        if val <= best_val + req.refine_tol * (1 + abs(best_val)):
            if val > best_val:
                best, best_val = sol, val
            break
        best, best_val = sol, val
    if best is not init:
        best.x = _set_binaries(model, best.x, fixing)
        best.binary_fixing = fixing
        best.status = init.status
        best.max_violation = max_violation(model, best.x)
    best.objective_value = best_val
    best.stats = {**init.stats, "refine_iterations": it, "refine_solves": solves,
                  "refine_time": time.perf_counter() - t0, "loss_weight_used": weight}
    return best


# -- area objective -------------------------------------------------------------------


def polish(req: SolveRequest, x: np.ndarray, fixing: dict[int, int]) -> Solution:
    """Re-solve with every PCC exchange pinned to ``x``, minimizing weighted losses."""
    model = req.model
    lb, ub = _bounds_with_fixing(model, fixing)
    for pp, qq in model.pcc.values():
        lb[pp] = ub[pp] = x[pp]
        lb[qq] = ub[qq] = x[qq]
    sol = _solve(req, surrogate(model, np.zeros(model.n), max(req.loss_weight, 1e-3)), lb, ub)
    if sol.status.ok:
        sol.x = _set_binaries(model, sol.x, fixing)
    return sol


def _period_weights(model: OptimizationModel, g: np.ndarray, w: np.ndarray) -> np.ndarray:
    out = g.copy()
    for (h, t), (pp, qq) in model.pcc.items():
        out[pp] *= w[t]
        out[qq] *= w[t]
    return out


def maximize_surveyor(req: SolveRequest, init: Solution) -> Solution:
    """Locally maximize the summed polygon areas by successive linearization.

    Each iterate linearizes the shoelace areas around the current PCC
    vertices and solves the convex model with a proximal term
    ``prox/2 * |PCC move|^2`` that keeps the step local.  The subproblem's
    solution (tight cones, so exact physics) is the candidate; blending it
    with the current point instead would leave the exact feasible set.  The
    areas of ``init`` are a per-period floor: a candidate is accepted only if
    the summed area does not drop and no period falls below its floor.  A
    rejected step doubles the proximal weight, halving its length (at most
    four times in a row); a period that fell below its floor instead gets
    more weight in the linearized objective.
    """
    model = req.model
    if model.H < 3:
        raise SolverError("area objective needs H >= 3")
    if not init.status.ok or not np.all(np.isfinite(init.x)):
        raise SolverError("initial point is not feasible")
    t0 = time.perf_counter()
    fixing = dict(init.binary_fixing)
    lb, ub = _bounds_with_fixing(model, fixing)
    x = init.x.copy()
    weight = init.stats.get("loss_weight_used", req.refine_loss_weight)
    floor = signed_areas(model, x)
    per = floor.copy()
    area = float(per.sum())
    history = [area]
    infeas = [max_violation(model, x)]
    pw = np.ones(model.T)
    pcc_cols = np.array([c for key in sorted(model.pcc) for c in model.pcc[key]])
    rho = req.prox
    solves = 0
    it = 0
    shrinks = bumps = 0
    factor = 1.25
    last_below = None
    while it < req.surveyor_iters:
        it += 1
        # normalized so the loss charge keeps its scale relative to the objective
        g = _period_weights(model, area_gradient(model, x), pw / pw.max())
        cand, weight = _tight_solve(req, g, x, lb, ub, weight, (pcc_cols, rho, x[pcc_cols]))
        solves += 1
        if cand is None:
            break
        cand_per = signed_areas(model, cand.x)
        cand_area = float(cand_per.sum())
        below = cand_per < floor
        if below.any():
            if bumps >= 30:
                break
            if last_below is not None and not np.any(below & last_below):
                factor = math.sqrt(factor)  # overshot: the other periods dropped now
            pw[below] *= factor
            last_below = below
            bumps += 1
            continue
        if cand_area < area:
            if shrinks >= 4:
                break
            rho /= req.damping
            shrinks += 1
            continue
        shrinks = bumps = 0
        last_below = None
        gain = cand_area - area
        x, area, per = cand.x, cand_area, cand_per
        history.append(area)
        infeas.append(max_violation(model, x))
        if req.iter_log:
            req.iter_log(f"{it} {area:.9f} {infeas[-1]:.3e}")
        if gain < req.area_tol:
            break
    x = _set_binaries(model, x, fixing)
    # vertices are kept exactly as accepted
    sol = Solution(model, x, 0.0, init.status)
    sol.status = init.status if init.status.ok else Status.FEASIBLE
    sol.binary_fixing = fixing
    sol.objective_value = area
    sol.max_violation = max_violation(model, sol.x)
    sol.stats = {
        "iterations": it,
        "solves": solves,
        "solve_time": time.perf_counter() - t0,
        "area_history": history,
        "infeasibility_history": infeas,
    }
    return sol
