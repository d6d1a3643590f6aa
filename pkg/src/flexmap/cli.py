"""Command-line front end: ``flexmap solve | compare | verify | sample``.

Exit codes: 0 ok, 1 usage error, 2 infeasible, 3 verification failed.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

from . import geometry
from .baselines import minkowski_box, monte_carlo_region
from .io import FormatError, read_map, write_map
from .model import CouplingMode
from .network import Network, NetworkError, fixture_path, load_network
from .region import MapInfeasibleError, solve_linear_map, solve_surveyor_map
from .solver import SolverError
from .verify import audit_map

EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_VERIFY = 0, 1, 2, 3

log = logging.getLogger("flexmap")


class UsageError(Exception):
    pass


@dataclass
class ScenarioConfig:
    net: str = "five_bus"
    H: int = 8
    T: int | None = None
    objective: str = "linear"
    coupling: str = "all-pairs"
    ramp_scale: float | None = None  # percent of capacity; None keeps the file's ramps
    batteries: bool = True
    network_limits: bool = True
    seed: int = 0
    out: str = "out"

    def validate(self) -> "ScenarioConfig":
        if self.H < 3:
            raise UsageError("H must be at least 3")
        if self.T is not None and self.T < 1:
            raise UsageError("T must be at least 1")
        if self.objective not in ("linear", "surveyor"):
            raise UsageError(f"unknown objective {self.objective!r}")
        if self.coupling not in ("all-pairs", "same-index"):
            raise UsageError(f"unknown coupling {self.coupling!r}")
        if self.ramp_scale is not None and not 0 <= self.ramp_scale:
            raise UsageError("ramp scale must be nonnegative")
        return self


def resolve_net(name: str) -> Network:
    """A path to a network file, or the name of a shipped fixture."""
    p = Path(name)
    if not p.exists():
        try:
            p = fixture_path(p.name)
        except FileNotFoundError:
            raise UsageError(f"no network file or fixture named {name!r}") from None
    return load_network(p)


def scenario_network(cfg: ScenarioConfig) -> Network:
    net = resolve_net(cfg.net)
    if cfg.T is not None:
        if cfg.T > net.horizon:
            raise UsageError(f"T={cfg.T} exceeds the demand profile ({net.horizon} periods)")
        net = net.with_horizon(cfg.T)
    if not cfg.batteries:
        net = net.without_batteries()
    if not cfg.network_limits:
        net = net.copper_plate()
    if cfg.ramp_scale is not None:
        net = net.with_ramp_scale(None if math.isinf(cfg.ramp_scale) else cfg.ramp_scale)
    return net


def run_scenario(cfg: ScenarioConfig):
    net = scenario_network(cfg)
    fn = solve_surveyor_map if cfg.objective == "surveyor" else solve_linear_map
    return net, fn(net, cfg.H, net.horizon, CouplingMode(cfg.coupling))


# -- config ---------------------------------------------------------------------------


def read_config(path: str) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment, ``[sections]`` are ignored."""
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config: {exc}") from None
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line or (line.startswith("[") and line.endswith("]")):
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key = value")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k.replace("-", "_")] = v.strip("\"'")
    return out


def _bool(v) -> bool:
    if isinstance(v, bool):
        return v
    s = str(v).lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"not a boolean: {v!r}")


def _ramp(v) -> float | None:
    if v is None:
        return None
    s = str(v).lower()
    if s in ("inf", "none", "unlimited"):
        return math.inf
    try:
        return float(s)
    except ValueError:
        raise UsageError(f"bad ramp scale {v!r}") from None


def _ramp_arg(v: str) -> float:
    try:
        return _ramp(v)
    except UsageError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


_CASTS = {
    "H": int, "T": int, "seed": int, "trials": int, "n": int, "t": int,
    "ramp_scale": _ramp, "batteries": _bool, "network_limits": _bool, "overlay": _bool,
}


def _merge(args: argparse.Namespace) -> dict:
    """Command-line flags override the config file, which overrides defaults."""
    vals = read_config(args.config) if getattr(args, "config", None) else {}
    out = {}
    for k, v in vals.items():
        try:
            out[k] = _CASTS.get(k, str)(v)
        except ValueError:
            raise UsageError(f"bad value for {k}: {v!r}") from None
    for k, v in vars(args).items():
        if v is not None and k not in ("config", "cmd", "func", "verbose"):
            out[k] = v
    return out


def _config(d: dict) -> ScenarioConfig:
    fields = ScenarioConfig.__dataclass_fields__
    cfg = ScenarioConfig(**{k: v for k, v in d.items() if k in fields})
    return cfg.validate()


def threads() -> int:
    try:
        return max(1, int(os.environ.get("FLEXMAP_THREADS", "1")))
    except ValueError:
        return 1


# -- commands ------------------------------------------------------------------------


def cmd_solve(d: dict) -> int:
    cfg = _config(d)
    net, fmap = run_scenario(cfg)
    ramp_rows = fmap.stats.get("rows.ramp", 0)
    if net.horizon == 1:
        log.info("T=1: no ramp rows")
    else:
        log.info("%d ramp rows (%s)", ramp_rows, cfg.coupling)
    fmap.stats["config"] = {**cfg.__dict__, "ramp_scale": _ramp_str(cfg.ramp_scale)}
    written = write_map(fmap, cfg.out, overlay=bool(d.get("overlay")))
    for p in written:
        log.info("wrote %s", p)
    areas = ", ".join(f"t={t + 1}: {a:.6f}" for t, a in enumerate(fmap.areas()))
    print(f"{cfg.objective} map, {fmap.H} directions x {fmap.T} periods, {cfg.coupling}; areas {areas}")
    print(f"wall time {fmap.stats['wall_time']:.3f} s")
    return EXIT_OK


def _ramp_str(r):
    return "file" if r is None else ("unlimited" if math.isinf(r) else r)


CASES = {
    # case: (network limits, batteries, ramps apply)
    "I": (False, False, False),
    "II": (False, False, True),
    "III": (True, False, True),
    "IV": (True, True, True),
}


@dataclass
class Variant:
    case: str
    cfg: ScenarioConfig
    label: str = ""


@dataclass
class VariantResult:
    label: str
    objective: str
    areas: list[float]
    reference: list[float]
    wall_time: float
    error: str = ""
    extra: dict = field(default_factory=dict)


def compare_variants(base: ScenarioConfig, cases, ramps, objectives) -> list[Variant]:
    out = []
    for case in cases:
        if case not in CASES:
            raise UsageError(f"unknown case {case!r}; choose from {', '.join(CASES)}")
        limits, bats, ramped = CASES[case]
        for r in (ramps if ramped else [math.inf]):
            for obj in objectives:
                cfg = replace(base, objective=obj, network_limits=limits, batteries=bats, ramp_scale=r).validate()
                tag = case if not ramped else f"{case}-{'inf' if math.isinf(r) else f'{r:g}'}%"
                out.append(Variant(case, cfg, tag))
    return out


def _run_variant(v: Variant) -> VariantResult:
    try:
        net, fmap = run_scenario(v.cfg)
    except MapInfeasibleError as exc:
        return VariantResult(v.label, v.cfg.objective, [], [], 0.0, error=str(exc))
    ref = [geometry.shoelace(minkowski_box(net, t)) for t in range(net.horizon)]
    return VariantResult(v.label, v.cfg.objective, fmap.areas(), ref, fmap.stats["wall_time"])


def compare_table(results: list[VariantResult]) -> str:
    """Relative area is against the period's Minkowski box (network-free Case I)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["case", "period", "objective", "area", "relative-area-%", "wall-time-s"])
    for r in results:
        if r.error:
            w.writerow([r.label, "", r.objective, "infeasible", "", ""])
            continue
        for t, (a, ref) in enumerate(zip(r.areas, r.reference)):
            rel = 100.0 * a / ref if ref > 0 else float("nan")
            w.writerow([r.label, t + 1, r.objective, f"{a:.6f}", f"{rel:.2f}", f"{r.wall_time:.3f}"])
    return buf.getvalue()


def cmd_compare(d: dict) -> int:
    base = _config(d)
    cases = _split(d.get("cases", "III"))
    ramps = [_ramp(x) for x in _split(d.get("ramps", "50"))]
    objectives = _split(d.get("objectives", "linear,surveyor"))
    variants = compare_variants(base, cases, ramps, objectives)
    if len(variants) < 2:
        raise UsageError("compare needs at least two variants")
    n = min(threads(), len(variants))
    if n > 1:
        with ProcessPoolExecutor(n) as pool:
            results = list(pool.map(_run_variant, variants))  # map keeps variant order
    else:
        results = [_run_variant(v) for v in variants]
    table = compare_table(results)
    out = Path(base.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "compare.csv").write_text(table)
    sys.stdout.write(table)
    return EXIT_INFEASIBLE if all(r.error for r in results) else EXIT_OK


def _split(v) -> list[str]:
    if isinstance(v, (list, tuple)):
        items = [str(x) for x in v]
    else:
        items = [str(v)]
    return [s.strip() for x in items for s in x.split(",") if s.strip()]


def cmd_verify(d: dict) -> int:
    if "map" not in d:
        raise UsageError("verify needs a map file")
    try:
        fmap = read_map(d["map"])
    except (OSError, FormatError) as exc:
        raise UsageError(f"cannot read map: {exc}") from None
    cfg = _config({**d, "T": d.get("T", fmap.T)})
    if cfg.T != fmap.T:
        raise UsageError(f"map has {fmap.T} periods, --T says {cfg.T}")
    net = scenario_network(cfg)
    trials = int(d.get("trials", 100))
    if trials < 0:
        raise UsageError("trials must be nonnegative")
    report = audit_map(fmap, net, trials, cfg.seed, network_limits=cfg.network_limits)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "verify.json").write_text(report.to_json())
    sys.stdout.write(report.summary())
    return EXIT_OK if report.passed else EXIT_VERIFY


def cmd_sample(d: dict) -> int:
    cfg = _config(d)
    net = scenario_network(cfg)
    t = int(d.get("t", 1)) - 1
    n = int(d.get("n", 10_000))
    if not 0 <= t < net.horizon:
        raise UsageError(f"period {t + 1} outside 1..{net.horizon}")
    if n < 1:
        raise UsageError("n must be at least 1")
    cloud = monte_carlo_region(net, t, n, cfg.seed)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    cloud.write_csv(out / "samples.csv")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["idx", "p", "q"])
    for i, (p, q) in enumerate(cloud.hull()):
        w.writerow([i, repr(float(p)), repr(float(q))])
    (out / "hull.csv").write_text(buf.getvalue())
    summary = {"t": t + 1, "attempted": cloud.attempted, "feasible": cloud.feasible,
               "seed": cfg.seed, "hull_area": cloud.hull_area(), "diagnostic": cloud.diagnostic}
    (out / "sample_summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    print(f"{cloud.feasible}/{cloud.attempted} feasible samples, hull area {cloud.hull_area():.6f}")
    if cloud.diagnostic:
        print(cloud.diagnostic)
    return EXIT_OK


# -- parser --------------------------------------------------------------------------


def _scenario_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--net", help="network file or shipped fixture name (default five_bus)")
    p.add_argument("--H", type=int, help="number of directions (default 8)")
    p.add_argument("--T", type=int, help="number of periods (default: whole profile)")
    p.add_argument("--objective", choices=["linear", "surveyor"])
    p.add_argument("--coupling", choices=["all-pairs", "same-index"])
    p.add_argument("--ramp-scale", dest="ramp_scale", type=_ramp_arg,
                   help="ramp limits as %% of generator capacity, or 'inf'")
    p.add_argument("--no-batteries", dest="batteries", action="store_const", const=False)
    p.add_argument("--no-network-limits", dest="network_limits", action="store_const", const=False,
                   help="lossless copper-plate equivalent")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory (default out)")
    p.add_argument("--config", help="key = value file; flags override it")
    p.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="flexmap", description="Multi-period PQ flexibility maps.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("solve", help="compute a flexibility map and export it")
    _scenario_flags(p)
    p.add_argument("--overlay", action="store_const", const=True, help="also write one combined SVG")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("compare", help="area/time table over cases, ramps and objectives")
    _scenario_flags(p)
    p.add_argument("--cases", nargs="+", help="subset of I II III IV (default III)")
    p.add_argument("--ramps", nargs="+", help="ramp scales in %% (default 50)")
    p.add_argument("--objectives", nargs="+", help="linear and/or surveyor (default both)")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("verify", help="audit a map file against a network")
    p.add_argument("map", help="map CSV or JSON")
    _scenario_flags(p)
    p.add_argument("--trials", type=int, help="random interior paths (default 100)")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("sample", help="Monte Carlo region estimate for one period")
    _scenario_flags(p)
    p.add_argument("--t", type=int, help="period, 1-based (default 1)")
    p.add_argument("--n", type=int, help="samples (default 10000)")
    p.set_defaults(func=cmd_sample)
    return ap


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(_merge(args))
    except UsageError as exc:
        print(f"flexmap: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NetworkError as exc:
        print(f"flexmap: error: invalid network: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except MapInfeasibleError as exc:
        print(f"flexmap: infeasible: {exc}", file=sys.stderr)
        if exc.diagnostic:
            print(exc.diagnostic, file=sys.stderr)
        return EXIT_INFEASIBLE
    except SolverError as exc:
        print(f"flexmap: solver failure: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE


if __name__ == "__main__":
    sys.exit(main())
