"""Assembly of the multi-period flexibility model.

Each extreme point ``h`` and period ``t`` owns a full replica of the
network: DistFlow balances, voltage drops, the branch cone, device limits and
battery dynamics.  Replicas are tied together by generator ramps (according
to the ``CouplingMode``) and by the battery energy chains of each ``h``.

Line flows are oriented away from the PCC.  ``p_pcc``/``q_pcc`` is the power
imported from the transmission grid.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import scipy.sparse as sp

from .network import Network, Tree, validate_radial

VARIABLE_KINDS = (
    "v",
    "l",
    "p_flow",
    "q_flow",
    "p_gen",
    "q_gen",
    "p_charge",
    "p_discharge",
    "energy",
    "u_charge",
    "u_discharge",
    "p_pcc",
    "q_pcc",
)
BINARY_KINDS = ("u_charge", "u_discharge")


class ModelError(ValueError):
    pass


class CouplingMode(str, Enum):
    SAME_INDEX = "same-index"
    ALL_PAIRS = "all-pairs"


@dataclass(frozen=True, order=True)
class VariableRef:
    kind: str
    elem: int
    h: int
    t: int


@dataclass(frozen=True)
class Cone:
    """Rotated cone ``p^2 + q^2 <= l * v`` for one line replica."""

    p: int
    q: int
    l: int
    v: int
    name: str


@dataclass(frozen=True)
class AssemblyOptions:
    network_limits: bool = True
    pcc_voltage_sq: float = 1.0
    terminal_soc: bool = False


@dataclass
class OptimizationModel:
    variables: list[VariableRef]
    index: dict[VariableRef, int]
    lb: np.ndarray
    ub: np.ndarray
    binary: np.ndarray  # bool mask
    A: sp.csr_matrix
    row_lo: np.ndarray
    row_hi: np.ndarray
    row_names: list[str]
    row_family: list[str]
    cones: list[Cone]
    audit: list[Cone]  # exact bilinear equalities p^2 + q^2 = l * v
    exclusive: list[tuple[int, int]]  # (u_charge, u_discharge)
    complementary: list[tuple[int, int]]  # (p_charge, p_discharge), same order as exclusive
    pcc: dict[tuple[int, int], tuple[int, int]]
    line_rx: dict[int, tuple[float, float]]  # l column -> (r, x)
    H: int
    T: int
    mode: CouplingMode
    options: AssemblyOptions = field(default_factory=AssemblyOptions)

    @property
    def n(self) -> int:
        return len(self.variables)

    def col(self, kind: str, elem: int, h: int, t: int) -> int:
        return self.index[VariableRef(kind, elem, h, t)]

    def counts(self) -> dict[str, int]:
        fam = Counter(self.row_family)
        return {
            "variables": self.n,
            "binaries": int(self.binary.sum()),
            "rows": len(self.row_family),
            "cones": len(self.cones),
            **{f"rows.{k}": v for k, v in sorted(fam.items())},
        }

    def family_count(self, family: str) -> int:
        return sum(1 for f in self.row_family if f == family)

    def dump(self) -> str:
        """Plain-text listing, one constraint per line, for diffing."""
        out = []
        A = self.A.tocsr()
        names = [f"{v.kind}[{v.elem},{v.h},{v.t}]" for v in self.variables]
        for r, name in enumerate(self.row_names):
            lo, hi = self.row_lo[r], self.row_hi[r]
            start, end = A.indptr[r], A.indptr[r + 1]
            terms = " ".join(f"{A.data[k]:+.6g}*{names[A.indices[k]]}" for k in range(start, end))
            if lo == hi:
                rel = f"= {hi:.6g}"
            elif math.isinf(lo):
                rel = f"<= {hi:.6g}"
            elif math.isinf(hi):
                rel = f">= {lo:.6g}"
            else:
                rel = f"in [{lo:.6g}, {hi:.6g}]"
            out.append(f"{name}: {terms} {rel}")
        for c in self.cones:
            out.append(f"{c.name}: {names[c.p]}^2 + {names[c.q]}^2 <= {names[c.l]}*{names[c.v]}")
        for j, ref in enumerate(self.variables):
            out.append(f"bound {names[j]}: [{self.lb[j]:.6g}, {self.ub[j]:.6g}]" + (" binary" if self.binary[j] else ""))
        return "\n".join(out) + "\n"


class ModelBuilder:
    """Mutable accumulator used while assembling an ``OptimizationModel``."""

    def __init__(self, net: Network, H: int, T: int, mode: CouplingMode, options: AssemblyOptions):
        self.net = net
        self.tree: Tree = validate_radial(net)
        self.H, self.T, self.mode, self.options = H, T, mode, options
        self.variables: list[VariableRef] = []
        self.index: dict[VariableRef, int] = {}
        self.lb: list[float] = []
        self.ub: list[float] = []
        self.binary: list[bool] = []
        self.rows_cols: list[list[int]] = []
        self.rows_vals: list[list[float]] = []
        self.row_lo: list[float] = []
        self.row_hi: list[float] = []
        self.row_names: list[str] = []
        self.row_family: list[str] = []
        self.cones: list[Cone] = []
        self.exclusive: list[tuple[int, int]] = []
        self.complementary: list[tuple[int, int]] = []
        self.pcc: dict[tuple[int, int], tuple[int, int]] = {}
        self.line_rx: dict[int, tuple[float, float]] = {}
        self.bus_ids = [b.id for b in net.buses]

    def var(self, kind, elem, h, t, lb=-math.inf, ub=math.inf, binary=False) -> int:
        ref = VariableRef(kind, elem, h, t)
        if ref in self.index:
            raise ModelError(f"duplicate variable {ref}")
        j = len(self.variables)
        self.variables.append(ref)
        self.index[ref] = j
        self.lb.append(lb)
        self.ub.append(ub)
        self.binary.append(binary)
        return j

    def col(self, kind, elem, h, t) -> int:
        return self.index[VariableRef(kind, elem, h, t)]

    def bound(self, j: int, lb: float | None = None, ub: float | None = None) -> None:
        if lb is not None:
            self.lb[j] = max(self.lb[j], lb)
        if ub is not None:
            self.ub[j] = min(self.ub[j], ub)

    def row(self, terms: dict[int, float], lo: float, hi: float, name: str, family: str) -> None:
        cols, vals = [], []
        for c, v in terms.items():
            if v != 0.0:
                cols.append(c)
                vals.append(float(v))
        self.rows_cols.append(cols)
        self.rows_vals.append(vals)
        self.row_lo.append(lo)
        self.row_hi.append(hi)
        self.row_names.append(name)
        self.row_family.append(family)

    def declare_replica(self, h: int, t: int) -> None:
        net = self.net
        for i in self.bus_ids:
            self.var("v", i, h, t, lb=0.0)
        for k, _ in enumerate(net.lines):
            self.var("l", k, h, t, lb=0.0)
            self.var("p_flow", k, h, t)
            self.var("q_flow", k, h, t)
        for g, _ in enumerate(net.generators):
            self.var("p_gen", g, h, t)
            self.var("q_gen", g, h, t)
        for b, bat in enumerate(net.batteries):
            self.var("p_charge", b, h, t, lb=0.0)
            self.var("p_discharge", b, h, t, lb=0.0)
            self.var("energy", b, h, t)
            self.var("u_charge", b, h, t, lb=0.0, ub=1.0, binary=True)
            self.var("u_discharge", b, h, t, lb=0.0, ub=1.0, binary=True)
        self.var("p_pcc", 0, h, t)
        self.var("q_pcc", 0, h, t)

    def finish(self) -> OptimizationModel:
        n = len(self.variables)
        indptr = np.zeros(len(self.rows_cols) + 1, dtype=np.int64)
        indptr[1:] = np.cumsum([len(c) for c in self.rows_cols])
        indices = np.fromiter((c for cols in self.rows_cols for c in cols), dtype=np.int64, count=int(indptr[-1]))
        data = np.fromiter((v for vals in self.rows_vals for v in vals), dtype=float, count=int(indptr[-1]))
        A = sp.csr_matrix((data, indices, indptr), shape=(len(self.rows_cols), n))
        A.sum_duplicates()
        return OptimizationModel(
            variables=self.variables,
            index=self.index,
            lb=np.array(self.lb, dtype=float),
            ub=np.array(self.ub, dtype=float),
            binary=np.array(self.binary, dtype=bool),
            A=A,
            row_lo=np.array(self.row_lo, dtype=float),
            row_hi=np.array(self.row_hi, dtype=float),
            row_names=self.row_names,
            row_family=self.row_family,
            cones=self.cones,
            audit=list(self.cones),
            exclusive=self.exclusive,
            complementary=self.complementary,
            pcc=self.pcc,
            line_rx=self.line_rx,
            H=self.H,
            T=self.T,
            mode=self.mode,
            options=self.options,
        )


def _oriented(tree: Tree, net: Network) -> list[tuple[int, int, int]]:
    """(line index, upstream bus, downstream bus) for every line."""
    out = []
    for j, k in tree.parent_line.items():
        out.append((k, tree.parent[j], j))
    out.sort()
    return out


def build_distflow(b: ModelBuilder, h: int, t: int) -> None:
    """Branch balances, voltage drops, branch cones and the PCC exchange for one replica."""
    net, tree = b.net, b.tree
    demand = net.demand
    gens_at: dict[int, list[int]] = {}
    for g, gen in enumerate(net.generators):
        gens_at.setdefault(gen.bus, []).append(g)
    bats_at: dict[int, list[int]] = {}
    for s, bat in enumerate(net.batteries):
        bats_at.setdefault(bat.bus, []).append(s)
    out_lines: dict[int, list[int]] = {}
    for j, k in tree.parent_line.items():
        out_lines.setdefault(tree.parent[j], []).append(k)

    def injections(bus: int) -> tuple[dict[int, float], dict[int, float]]:
        tp: dict[int, float] = {}
        tq: dict[int, float] = {}
        for g in gens_at.get(bus, ()):
            tp[b.col("p_gen", g, h, t)] = 1.0
            tq[b.col("q_gen", g, h, t)] = 1.0
        for s in bats_at.get(bus, ()):
            tp[b.col("p_charge", s, h, t)] = -1.0
            tp[b.col("p_discharge", s, h, t)] = 1.0
        for k in out_lines.get(bus, ()):
            tp[b.col("p_flow", k, h, t)] = -1.0
            tq[b.col("q_flow", k, h, t)] = -1.0
        return tp, tq

    for k, i, j in _oriented(tree, net):
        line = net.lines[k]
        pd, qd = demand.at(j, t)
        cp, cl, cq = b.col("p_flow", k, h, t), b.col("l", k, h, t), b.col("q_flow", k, h, t)
        vi, vj = b.col("v", i, h, t), b.col("v", j, h, t)
        tp, tq = injections(j)
        # p_ij = Pd_j - pg_j + pc_j - pd_j + r l_ij + sum_k p_jk
        b.row({cp: 1.0, cl: -line.r, **tp}, pd, pd, f"pbal[{k},{h},{t}]", "p_balance")
        b.row({cq: 1.0, cl: -line.x, **tq}, qd, qd, f"qbal[{k},{h},{t}]", "q_balance")
        b.row(
            {vj: 1.0, vi: -1.0, cp: 2 * line.r, cq: 2 * line.x, cl: -line.z_sq},
            0.0,
            0.0,
            f"vdrop[{k},{h},{t}]",
            "voltage_drop",
        )
        b.cones.append(Cone(cp, cq, cl, vi, f"cone[{k},{h},{t}]"))
        b.line_rx[cl] = (line.r, line.x)

    root = tree.root
    pd, qd = demand.at(root, t)
    pp, qq = b.col("p_pcc", 0, h, t), b.col("q_pcc", 0, h, t)
    tp, tq = injections(root)
    b.row({pp: 1.0, **tp}, pd, pd, f"pcc_p[{h},{t}]", "pcc_balance")
    b.row({qq: 1.0, **tq}, qd, qd, f"pcc_q[{h},{t}]", "pcc_balance")
    b.pcc[(h, t)] = (pp, qq)
    vr = b.col("v", root, h, t)
    b.bound(vr, b.options.pcc_voltage_sq, b.options.pcc_voltage_sq)


def build_engineering_limits(b: ModelBuilder, h: int, t: int) -> None:
    net = b.net
    root = b.tree.root
    for bus in net.buses:
        if bus.id == root:
            if not bus.vmin_sq <= b.options.pcc_voltage_sq <= bus.vmax_sq:
                raise ModelError("PCC voltage setpoint outside its bus limits")
            continue
        if b.options.network_limits:
            b.bound(b.col("v", bus.id, h, t), bus.vmin_sq, bus.vmax_sq)
    if b.options.network_limits:
        for k, line in enumerate(net.lines):
            if math.isfinite(line.imax_sq):
                b.bound(b.col("l", k, h, t), 0.0, line.imax_sq)


def build_generator_limits(b: ModelBuilder, h: int, t: int) -> None:
    for g, gen in enumerate(b.net.generators):
        b.bound(b.col("p_gen", g, h, t), gen.pmin, gen.pmax)
        b.bound(b.col("q_gen", g, h, t), gen.qmin, gen.qmax)


def ramp_pairs(mode: CouplingMode, H: int) -> list[tuple[int, int]]:
    """(h' at t, h at t+1) pairs bound by the ramp rows."""
    if mode == CouplingMode.SAME_INDEX:
        return [(h, h) for h in range(H)]
    return [(hp, h) for h in range(H) for hp in range(H)]


def build_ramp(b: ModelBuilder, mode: CouplingMode, H: int, T: int) -> None:
    for g, gen in enumerate(b.net.generators):
        lo = -gen.ramp_dn
        hi = gen.ramp_up
        if math.isinf(lo) and math.isinf(hi):
            continue
        for t in range(T - 1):
            for hp, h in ramp_pairs(mode, H):
                b.row(
                    {b.col("p_gen", g, h, t + 1): 1.0, b.col("p_gen", g, hp, t): -1.0},
                    lo,
                    hi,
                    f"ramp[{g},{hp}->{h},{t}]",
                    "ramp",
                )


def build_battery(b: ModelBuilder, H: int, T: int, dt: float) -> None:
    if dt <= 0:
        raise ModelError("dt must be positive")
    for s, bat in enumerate(b.net.batteries):
        for h in range(H):
            for t in range(T):
                e = b.col("energy", s, h, t)
                pc = b.col("p_charge", s, h, t)
                pd = b.col("p_discharge", s, h, t)
                uc = b.col("u_charge", s, h, t)
                ud = b.col("u_discharge", s, h, t)
                terms = {e: 1.0, pc: -bat.eta_c * dt, pd: dt / bat.eta_d}
                rhs = 0.0
                if t == 0:
                    rhs = bat.initial_energy
                else:
                    terms[b.col("energy", s, h, t - 1)] = -1.0
                b.row(terms, rhs, rhs, f"soc[{s},{h},{t}]", "soc")
                b.bound(e, 0.0, bat.emax)
                b.bound(pc, 0.0, bat.pc_max)
                b.bound(pd, 0.0, bat.pd_max)
                b.row({pc: 1.0, uc: -bat.pc_max}, -math.inf, 0.0, f"chg[{s},{h},{t}]", "charge_limit")
                b.row({pd: 1.0, ud: -bat.pd_max}, -math.inf, 0.0, f"dis[{s},{h},{t}]", "discharge_limit")
                b.row({uc: 1.0, ud: 1.0}, -math.inf, 1.0, f"excl[{s},{h},{t}]", "exclusivity")
                b.exclusive.append((uc, ud))
                b.complementary.append((pc, pd))
            if b.options.terminal_soc:
                e_end = b.col("energy", s, h, T - 1)
                e0 = bat.initial_energy
                b.row({e_end: 1.0}, e0, math.inf, f"soc_end[{s},{h}]", "soc")


def _build(net: Network, H: int, T: int, mode: CouplingMode, options: AssemblyOptions) -> OptimizationModel:
    if T < 1:
        raise ModelError("T must be >= 1")
    if T > net.horizon:
        raise ModelError(f"horizon T={T} exceeds the demand profile ({net.horizon} periods)")
    b = ModelBuilder(net, H, T, CouplingMode(mode), options)
    for t in range(T):
        for h in range(H):
            b.declare_replica(h, t)
    for t in range(T):
        for h in range(H):
            build_distflow(b, h, t)
            build_engineering_limits(b, h, t)
            build_generator_limits(b, h, t)
    build_ramp(b, b.mode, H, T)
    build_battery(b, H, T, net.demand.dt)
    return b.finish()


def assemble(
    net: Network,
    H: int,
    T: int,
    mode: CouplingMode | str = CouplingMode.ALL_PAIRS,
    options: AssemblyOptions | None = None,
) -> OptimizationModel:
    """Full constraint system over ``H`` extreme points and ``T`` periods; no objective."""
    if H < 3:
        raise ModelError("a polygon needs H >= 3 extreme points")
    return _build(net, H, T, CouplingMode(mode), options or AssemblyOptions())


def assemble_path(net: Network, T: int, options: AssemblyOptions | None = None) -> OptimizationModel:
    """Single-trajectory model (H = 1), used for feasibility checks of PCC paths."""
    return _build(net, 1, T, CouplingMode.SAME_INDEX, options or AssemblyOptions())
