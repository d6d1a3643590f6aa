"""Radial distribution network description, parsing and per-unit handling.

Networks are stored in per-unit.  The JSON document format is described in
``docs/formats.md``; ``load_network`` / ``dump_network`` round-trip it.
"""
from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np

DEFAULT_VMIN_SQ = 0.95**2
DEFAULT_VMAX_SQ = 1.05**2


class NetworkError(ValueError):
    pass


class NetworkParseError(NetworkError):
    pass


class NetworkValidationError(NetworkError):
    pass


@dataclass(frozen=True)
class Bus:
    id: int
    vmin_sq: float = DEFAULT_VMIN_SQ
    vmax_sq: float = DEFAULT_VMAX_SQ
    is_pcc: bool = False


@dataclass(frozen=True)
class Line:
    from_bus: int
    to_bus: int
    r: float
    x: float
    imax_sq: float = math.inf

    @property
    def z_sq(self) -> float:
        return self.r**2 + self.x**2


@dataclass(frozen=True)
class Generator:
    bus: int
    pmin: float
    pmax: float
    qmin: float
    qmax: float
    ramp_up: float = math.inf
    ramp_dn: float = math.inf


@dataclass(frozen=True)
class Battery:
    bus: int
    emax: float
    pc_max: float
    pd_max: float
    eta_c: float = 1.0
    eta_d: float = 1.0
    e0: float | None = None

    @property
    def initial_energy(self) -> float:
        # initial state of charge is not part of the data in most cases
        return self.emax / 2 if self.e0 is None else self.e0


@dataclass(frozen=True)
class DemandProfile:
    base_p: dict[int, float]
    base_q: dict[int, float]
    factors: tuple[float, ...] = (1.0,)
    dt: float = 1.0

    @property
    def horizon(self) -> int:
        return len(self.factors)

    def at(self, bus: int, t: int) -> tuple[float, float]:
        """Active/reactive demand of ``bus`` in period ``t`` (0-based)."""
        f = self.factors[t]
        return f * self.base_p.get(bus, 0.0), f * self.base_q.get(bus, 0.0)

    def total(self, t: int) -> tuple[float, float]:
        f = self.factors[t]
        return f * sum(self.base_p.values()), f * sum(self.base_q.values())


@dataclass(frozen=True)
class Tree:
    """Radial structure rooted at the PCC bus."""

    root: int
    parent: dict[int, int]
    order: tuple[int, ...]  # root first, leaves last
    children: dict[int, tuple[int, ...]]
    parent_line: dict[int, int]  # bus -> index of the line feeding it


@dataclass(frozen=True)
class Network:
    buses: tuple[Bus, ...]
    lines: tuple[Line, ...]
    generators: tuple[Generator, ...] = ()
    batteries: tuple[Battery, ...] = ()
    demand: DemandProfile = field(default_factory=lambda: DemandProfile({}, {}))
    base_mva: float = 1.0
    name: str = ""

    @property
    def pcc(self) -> int:
        return next(b.id for b in self.buses if b.is_pcc)

    @property
    def horizon(self) -> int:
        return self.demand.horizon

    def bus(self, bus_id: int) -> Bus:
        for b in self.buses:
            if b.id == bus_id:
                return b
        raise KeyError(bus_id)

    def tree(self) -> Tree:
        return validate_radial(self)

    # -- scenario transforms -------------------------------------------------

    def with_ramp_scale(self, percent: float | None) -> "Network":
        """Ramp limits as a percentage of each generator's capacity (None = unlimited)."""
        if percent is not None and percent < 0:
            raise NetworkValidationError("ramp scale must be nonnegative")
        gens = []
        for g in self.generators:
            r = math.inf if percent is None else percent / 100.0 * g.pmax
            gens.append(replace(g, ramp_up=r, ramp_dn=r))
        return replace(self, generators=tuple(gens))

    def without_batteries(self) -> "Network":
        return replace(self, batteries=())

    def without_limits(self) -> "Network":
        """Drop voltage and thermal limits, keeping the power-flow physics."""
        buses = tuple(replace(b, vmin_sq=1e-4, vmax_sq=1e4) for b in self.buses)
        lines = tuple(replace(ln, imax_sq=math.inf) for ln in self.lines)
        return replace(self, buses=buses, lines=lines)

    def copper_plate(self) -> "Network":
        """Lossless single-bus equivalent: every device and load moved to the PCC."""
        root = self.pcc
        pcc_bus = replace(self.bus(root), vmin_sq=1e-4, vmax_sq=1e4)
        d = self.demand
        demand = DemandProfile(
            {root: sum(d.base_p.values())}, {root: sum(d.base_q.values())}, d.factors, d.dt
        )
        return replace(
            self,
            buses=(pcc_bus,),
            lines=(),
            generators=tuple(replace(g, bus=root) for g in self.generators),
            batteries=tuple(replace(b, bus=root) for b in self.batteries),
            demand=demand,
        )

    def with_horizon(self, T: int) -> "Network":
        """Keep the first ``T`` periods of the demand profile."""
        if not 1 <= T <= self.horizon:
            raise NetworkValidationError(f"horizon {T} outside 1..{self.horizon}")
        return replace(self, demand=replace(self.demand, factors=self.demand.factors[:T]))

    def with_factors(self, factors) -> "Network":
        return replace(self, demand=replace(self.demand, factors=tuple(float(x) for x in factors)))


# -- validation -------------------------------------------------------------


def validate_radial(net: Network) -> Tree:
    """Check that the line graph is a tree rooted at the PCC bus."""
    ids = [b.id for b in net.buses]
    if len(set(ids)) != len(ids):
        raise NetworkValidationError("duplicate bus ids")
    pccs = [b.id for b in net.buses if b.is_pcc]
    if len(pccs) != 1:
        raise NetworkValidationError(f"expected exactly one PCC bus, found {len(pccs)}")
    known = set(ids)
    adj: dict[int, list[tuple[int, int]]] = {i: [] for i in ids}
    seen_pairs = set()
    for k, ln in enumerate(net.lines):
        if ln.from_bus not in known or ln.to_bus not in known:
            raise NetworkValidationError(f"line {k} references an unknown bus")
        if ln.from_bus == ln.to_bus:
            raise NetworkValidationError(f"line {k} is a self-loop")
        pair = frozenset((ln.from_bus, ln.to_bus))
        if pair in seen_pairs:
            raise NetworkValidationError(f"parallel lines between {sorted(pair)}")
        seen_pairs.add(pair)
        adj[ln.from_bus].append((ln.to_bus, k))
        adj[ln.to_bus].append((ln.from_bus, k))

    root = pccs[0]
    parent: dict[int, int] = {}
    parent_line: dict[int, int] = {}
    order = [root]
    visited = {root}
    queue = deque([root])
    while queue:
        i = queue.popleft()
        for j, k in adj[i]:
            if k == parent_line.get(i):
                continue
            if j in visited:
                raise NetworkValidationError(f"cycle detected through line {k}")
            visited.add(j)
            parent[j] = i
            parent_line[j] = k
            order.append(j)
            queue.append(j)
    if len(visited) != len(ids):
        missing = sorted(set(ids) - visited)
        raise NetworkValidationError(f"disconnected buses: {missing}")
    children = {i: tuple(j for j in order if parent.get(j) == i) for i in ids}
    return Tree(root, parent, tuple(order), children, parent_line)


def _check_devices(net: Network) -> None:
    known = {b.id for b in net.buses}
    for b in net.buses:
        if not 0 < b.vmin_sq < b.vmax_sq:
            raise NetworkValidationError(f"bus {b.id}: need 0 < vmin_sq < vmax_sq")
    for k, ln in enumerate(net.lines):
        if ln.r < 0 or ln.x < 0 or ln.r + ln.x <= 0:
            raise NetworkValidationError(f"line {k}: impedance must be nonnegative and nonzero")
        if not ln.imax_sq > 0:
            raise NetworkValidationError(f"line {k}: imax_sq must be positive")
    for k, g in enumerate(net.generators):
        if g.bus not in known:
            raise NetworkValidationError(f"generator {k} at unknown bus {g.bus}")
        if g.pmin > g.pmax or g.qmin > g.qmax:
            raise NetworkValidationError(f"generator {k}: inverted limits")
        if g.ramp_up < 0 or g.ramp_dn < 0:
            raise NetworkValidationError(f"generator {k}: negative ramp")
    for k, s in enumerate(net.batteries):
        if s.bus not in known:
            raise NetworkValidationError(f"battery {k} at unknown bus {s.bus}")
        if not (0 < s.eta_c <= 1 and 0 < s.eta_d <= 1):
            raise NetworkValidationError(f"battery {k}: efficiencies must lie in (0, 1]")
        if s.pc_max < 0 or s.pd_max < 0 or s.emax < 0:
            raise NetworkValidationError(f"battery {k}: negative limits")
        if not 0 <= s.initial_energy <= s.emax:
            raise NetworkValidationError(f"battery {k}: e0 outside [0, emax]")
    d = net.demand
    if d.dt <= 0:
        raise NetworkValidationError("demand dt must be positive")
    if not d.factors:
        raise NetworkValidationError("demand factors must be non-empty")
    for table in (d.base_p, d.base_q):
        unknown = set(table) - known
        if unknown:
            raise NetworkValidationError(f"demand at unknown buses {sorted(unknown)}")


def validate(net: Network) -> Network:
    _check_devices(net)
    validate_radial(net)
    return net


# -- per-unit -----------------------------------------------------------------


def _scale(net: Network, s_power: float, s_imp: float, s_current_sq: float) -> Network:
    """Divide powers by ``s_power``, impedances by ``s_imp``, currents² by ``s_current_sq``."""
    lines = tuple(
        replace(ln, r=ln.r / s_imp, x=ln.x / s_imp, imax_sq=ln.imax_sq / s_current_sq)
        for ln in net.lines
    )
    gens = tuple(
        replace(
            g,
            pmin=g.pmin / s_power,
            pmax=g.pmax / s_power,
            qmin=g.qmin / s_power,
            qmax=g.qmax / s_power,
            ramp_up=g.ramp_up / s_power,
            ramp_dn=g.ramp_dn / s_power,
        )
        for g in net.generators
    )
    # energies are MWh against a base of base_mva * 1 h
    bats = tuple(
        replace(
            b,
            emax=b.emax / s_power,
            pc_max=b.pc_max / s_power,
            pd_max=b.pd_max / s_power,
            e0=None if b.e0 is None else b.e0 / s_power,
        )
        for b in net.batteries
    )
    d = net.demand
    demand = replace(
        d,
        base_p={k: v / s_power for k, v in d.base_p.items()},
        base_q={k: v / s_power for k, v in d.base_q.items()},
    )
    return replace(net, lines=lines, generators=gens, batteries=bats, demand=demand)


def _bases(base_mva: float, base_kv: float) -> tuple[float, float, float]:
    if not (base_mva > 0 and base_kv > 0):
        raise NetworkValidationError("per-unit bases must be positive")
    z_base = base_kv**2 / base_mva
    i_base = base_mva / (math.sqrt(3) * base_kv)  # kA
    return base_mva, z_base, i_base**2


def to_per_unit(raw: Network, base_mva: float, base_kv: float) -> Network:
    """Convert MW/MVAr/MWh/ohm/kA quantities to per-unit on the given bases."""
    s, z, i2 = _bases(base_mva, base_kv)
    return replace(_scale(raw, s, z, i2), base_mva=base_mva)


def from_per_unit(net: Network, base_mva: float, base_kv: float) -> Network:
    s, z, i2 = _bases(base_mva, base_kv)
    return replace(_scale(net, 1 / s, 1 / z, 1 / i2), base_mva=base_mva)


# -- JSON document ----------------------------------------------------------------


def _num(value: Any, default: float | None = None, *, inf_if_null: bool = False) -> float:
    if value is None:
        if inf_if_null:
            return math.inf
        if default is None:
            raise NetworkParseError("missing numeric field")
        return default
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise NetworkParseError(f"expected a number, got {value!r}")
    return float(value)


def network_from_dict(doc: dict) -> Network:
    if not isinstance(doc, dict):
        raise NetworkParseError("network document must be a JSON object")
    try:
        buses = tuple(
            Bus(
                id=int(b["id"]),
                vmin_sq=_num(b.get("vmin_sq"), DEFAULT_VMIN_SQ),
                vmax_sq=_num(b.get("vmax_sq"), DEFAULT_VMAX_SQ),
                is_pcc=bool(b.get("pcc", False)),
            )
            for b in doc["buses"]
        )
        lines = tuple(
            Line(
                from_bus=int(ln["from"]),
                to_bus=int(ln["to"]),
                r=_num(ln["r"]),
                x=_num(ln["x"]),
                imax_sq=_num(ln.get("imax_sq"), inf_if_null=True),
            )
            for ln in doc.get("lines", [])
        )
        gens = tuple(
            Generator(
                bus=int(g["bus"]),
                pmin=_num(g.get("pmin"), 0.0),
                pmax=_num(g["pmax"]),
                qmin=_num(g.get("qmin"), 0.0),
                qmax=_num(g.get("qmax"), 0.0),
                ramp_up=_num(g.get("ramp_up"), inf_if_null=True),
                ramp_dn=_num(g.get("ramp_dn"), inf_if_null=True),
            )
            for g in doc.get("generators", [])
        )
        bats = tuple(
            Battery(
                bus=int(s["bus"]),
                emax=_num(s["emax"]),
                pc_max=_num(s["pc_max"]),
                pd_max=_num(s["pd_max"]),
                eta_c=_num(s.get("eta_c"), 1.0),
                eta_d=_num(s.get("eta_d"), 1.0),
                e0=None if s.get("e0") is None else _num(s["e0"]),
            )
            for s in doc.get("batteries", [])
        )
        d = doc.get("demand", {})
        bus_ids = [b.id for b in buses]
        base_p = {int(k): _num(v) for k, v in d.get("base_p", {}).items()}
        base_q = {int(k): _num(v) for k, v in d.get("base_q", {}).items()}
        for i in bus_ids:
            base_p.setdefault(i, 0.0)
            base_q.setdefault(i, 0.0)
        demand = DemandProfile(
            base_p=dict(sorted(base_p.items())),
            base_q=dict(sorted(base_q.items())),
            factors=tuple(_num(f) for f in d.get("factors", [1.0])),
            dt=_num(d.get("dt"), 1.0),
        )
        base_mva = _num(doc.get("base_mva"), 1.0)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, NetworkError):
            raise
        raise NetworkParseError(f"malformed network document: {exc!r}") from exc
    net = Network(buses, lines, gens, bats, demand, base_mva, str(doc.get("name", "")))
    units = doc.get("units", "pu")
    if units == "physical":
        net = to_per_unit(net, base_mva, _num(doc.get("base_kv")))
    elif units != "pu":
        raise NetworkParseError(f"unknown units {units!r}")
    return validate(net)


def load_network(source: str | Path) -> Network:
    """Parse a network from JSON text or from a path to a JSON file."""
    text = str(source)
    if not text.lstrip().startswith("{"):
        try:
            text = Path(source).read_text(encoding="utf-8")
        except OSError as exc:
            raise NetworkParseError(f"cannot read {source}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise NetworkParseError(str(exc)) from exc
    return network_from_dict(doc)


def _finite(x: float) -> float | None:
    return None if math.isinf(x) else x


def network_to_dict(net: Network) -> dict:
    doc: dict[str, Any] = {"base_mva": net.base_mva}
    if net.name:
        doc["name"] = net.name
    doc["buses"] = [
        {"id": b.id, "vmin_sq": b.vmin_sq, "vmax_sq": b.vmax_sq, **({"pcc": True} if b.is_pcc else {})}
        for b in net.buses
    ]
    doc["lines"] = [
        {"from": ln.from_bus, "to": ln.to_bus, "r": ln.r, "x": ln.x, "imax_sq": _finite(ln.imax_sq)}
        for ln in net.lines
    ]
    doc["generators"] = [
        {
            "bus": g.bus,
            "pmin": g.pmin,
            "pmax": g.pmax,
            "qmin": g.qmin,
            "qmax": g.qmax,
            "ramp_up": _finite(g.ramp_up),
            "ramp_dn": _finite(g.ramp_dn),
        }
        for g in net.generators
    ]
    doc["batteries"] = [
        {
            "bus": s.bus,
            "emax": s.emax,
            "pc_max": s.pc_max,
            "pd_max": s.pd_max,
            "eta_c": s.eta_c,
            "eta_d": s.eta_d,
            "e0": s.e0,
        }
        for s in net.batteries
    ]
    d = net.demand
    doc["demand"] = {
        "base_p": {str(k): v for k, v in d.base_p.items()},
        "base_q": {str(k): v for k, v in d.base_q.items()},
        "factors": list(d.factors),
        "dt": d.dt,
    }
    return doc


def dump_network(net: Network) -> str:
    return json.dumps(network_to_dict(net), indent=2)


# -- shipped fixtures -------------------------------------------------------------

DATA_DIR = Path(__file__).parent / "data"


def fixture_path(name: str) -> Path:
    path = DATA_DIR / (name if name.endswith(".json") else f"{name}.json")
    if not path.exists():
        raise FileNotFoundError(path)
    return path


def load_fixture(name: str) -> Network:
    return load_network(fixture_path(name))


def synthetic_feeder(
    n_buses: int = 141,
    n_der: int = 10,
    seed: int = 141,
    horizon: int = 24,
    total_p: float = 1.4052,
    total_q: float = 0.7410,
) -> Network:
    """Random radial feeder used as a large-scale stand-in.

    The tree is a long trunk with laterals.  Loads are spread over all non-PCC
    buses and ``n_der`` generators are placed at random buses.
    """
    rng = np.random.default_rng(seed)
    buses = [Bus(0, is_pcc=True)] + [Bus(i) for i in range(1, n_buses)]
    lines = []
    trunk = max(2, n_buses // 4)
    for i in range(1, n_buses):
        if i < trunk:
            parent = i - 1
        else:
            parent = int(rng.integers(0, i))
        # impedances shrink downstream of the trunk to keep voltages sane
        r = float(rng.uniform(0.0005, 0.002))
        x = float(rng.uniform(0.0005, 0.002))
        lines.append(Line(parent, i, r, x, imax_sq=4.0))
    w = rng.uniform(0.5, 1.5, n_buses - 1)
    w /= w.sum()
    base_p = {0: 0.0, **{i: float(total_p * w[i - 1]) for i in range(1, n_buses)}}
    base_q = {0: 0.0, **{i: float(total_q * w[i - 1]) for i in range(1, n_buses)}}
    sites = rng.choice(np.arange(1, n_buses), size=n_der, replace=False)
    gens = []
    for b in sorted(int(s) for s in sites):
        cap = float(rng.uniform(0.05, 0.15))
        gens.append(Generator(b, 0.0, cap, -0.5 * cap, 0.5 * cap, 0.3 * cap, 0.3 * cap))
    hours = np.arange(horizon)
    # residential-like daily shape, peak in the evening
    factors = 0.8 + 0.25 * np.sin(2 * np.pi * (hours - 12) / 24) ** 2 + 0.1 * np.cos(2 * np.pi * hours / 24)
    demand = DemandProfile(base_p, base_q, tuple(float(f) for f in factors), 1.0)
    return validate(Network(tuple(buses), tuple(lines), tuple(gens), (), demand, 1.0, f"synthetic-{n_buses}"))
