"""Flexibility map export: CSV vertices, JSON with witnesses, SVG drawings.

Layouts are described in ``docs/formats.md``.  All writers are deterministic:
the same map gives byte-identical files.
"""
from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

import numpy as np

from .model import CouplingMode
from .region import DirectionSet, FlexibilityMap

CSV_HEADER = ["t", "h", "alpha", "p_pcc", "q_pcc"]


class FormatError(ValueError):
    pass


def _num(x: float) -> str:
    return repr(float(x))


def map_to_csv(fmap: FlexibilityMap) -> str:
    """One row per vertex; ``t`` and ``h`` are 1-based."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for t in range(fmap.T):
        for h in range(fmap.H):
            p, q = fmap.vertices[t, h]
            w.writerow([t + 1, h + 1, _num(fmap.directions.angles[h]), _num(p), _num(q)])
    return buf.getvalue()


def map_from_csv(text: str) -> FlexibilityMap:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or [c.strip() for c in rows[0]] != CSV_HEADER:
        raise FormatError(f"expected header {','.join(CSV_HEADER)}")
    data = {}
    angles = {}
    try:
        for r in rows[1:]:
            if not r:
                continue
            t, h = int(r[0]) - 1, int(r[1]) - 1
            data[(t, h)] = (float(r[3]), float(r[4]))
            angles[h] = float(r[2])
    except (ValueError, IndexError) as exc:
        raise FormatError(f"bad CSV row: {exc}") from None
    if not data:
        raise FormatError("no vertices")
    T = max(t for t, _ in data) + 1
    H = max(h for _, h in data) + 1
    if len(data) != T * H or min(min(k) for k in data) < 0:
        raise FormatError("vertex table is not a full T x H grid")
    verts = np.array([[data[(t, h)] for h in range(H)] for t in range(T)])
    return FlexibilityMap(DirectionSet(tuple(angles[h] for h in range(H))), verts)


def _key(kind: str, elem: int) -> str:
    return f"{kind}[{elem}]"


def _parse_key(s: str) -> tuple[str, int]:
    kind, _, rest = s.partition("[")
    return kind, int(rest.rstrip("]"))


def _jsonable(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    if isinstance(v, (np.floating, np.integer)):
        return _jsonable(v.item())
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


def map_to_dict(fmap: FlexibilityMap, dispatch: bool = True, stats: bool = False) -> dict:
    d = {
        "metadata": fmap.metadata(),
        "directions": list(fmap.directions.angles),
        "vertices": [[[float(p), float(q)] for p, q in fmap.vertices[t]] for t in range(fmap.T)],
        "areas": [float(a) for a in fmap.areas()],
    }
    if dispatch:
        d["dispatch"] = [
            {"t": t + 1, "h": h + 1, "values": {_key(k, e): float(v) for (k, e), v in sorted(fmap.dispatch[(h, t)].items())}}
            for t in range(fmap.T)
            for h in range(fmap.H)
            if (h, t) in fmap.dispatch
        ]
    if stats:
        d["stats"] = _jsonable(fmap.stats)
    return d


def map_to_json(fmap: FlexibilityMap, dispatch: bool = True, stats: bool = False) -> str:
    return json.dumps(map_to_dict(fmap, dispatch, stats), indent=1, sort_keys=True) + "\n"


def map_from_json(text: str) -> FlexibilityMap:
    try:
        d = json.loads(text)
        meta = d.get("metadata", {})
        verts = np.asarray(d["vertices"], dtype=float)
        directions = DirectionSet(tuple(float(a) for a in d["directions"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad map document: {exc}") from None
    if verts.ndim != 3 or verts.shape[2] != 2 or verts.shape[1] != directions.H:
        raise FormatError("vertices must be a T x H x 2 array matching the directions")
    disp = {}
    for item in d.get("dispatch", []):
        disp[(int(item["h"]) - 1, int(item["t"]) - 1)] = {_parse_key(k): float(v) for k, v in item["values"].items()}
    return FlexibilityMap(
        directions=directions,
        vertices=verts,
        dispatch=disp,
        coupling=CouplingMode(meta.get("coupling", CouplingMode.ALL_PAIRS.value)),
        objective=meta.get("objective", "linear"),
        independent_periods=bool(meta.get("independent_periods", False)),
        network_name=meta.get("network", ""),
        factors=tuple(meta.get("factors", ())),
    )


def read_map(path: str | Path) -> FlexibilityMap:
    p = Path(path)
    text = p.read_text()
    return map_from_json(text) if p.suffix.lower() == ".json" else map_from_csv(text)


# -- SVG -------------------------------------------------------------------------

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf")


def _frame(polys: list[np.ndarray]):
    pts = np.concatenate(polys)
    lo = np.floor(pts.min(axis=0)) - 0.0
    hi = np.ceil(pts.max(axis=0))
    # keep at least one grid cell and a small margin
    hi = np.where(hi - lo < 1, lo + 1, hi)
    return lo, hi


def _svg(polys: list[tuple[str, np.ndarray]], title: str) -> str:
    size, pad = 480, 50
    lo, hi = _frame([p for _, p in polys])
    span = float(max(hi - lo))
    scale = (size - 2 * pad) / span

    def X(p):
        return pad + (p - lo[0]) * scale

    def Y(q):
        return size - pad - (q - lo[1]) * scale

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
        f'<text x="{size / 2:.1f}" y="20" text-anchor="middle" font-family="sans-serif" font-size="14">{title}</text>',
    ]
    # 1 p.u. grid
    for k in range(int(lo[0]), int(lo[0] + span) + 1):
        out.append(f'<line x1="{X(k):.2f}" y1="{Y(lo[1]):.2f}" x2="{X(k):.2f}" y2="{Y(lo[1] + span):.2f}" stroke="#ccc"/>')
        out.append(f'<text x="{X(k):.2f}" y="{size - pad + 16}" text-anchor="middle" font-family="sans-serif" font-size="11">{k}</text>')
    for k in range(int(lo[1]), int(lo[1] + span) + 1):
        out.append(f'<line x1="{X(lo[0]):.2f}" y1="{Y(k):.2f}" x2="{X(lo[0] + span):.2f}" y2="{Y(k):.2f}" stroke="#ccc"/>')
        out.append(f'<text x="{pad - 8}" y="{Y(k) + 4:.2f}" text-anchor="end" font-family="sans-serif" font-size="11">{k}</text>')
    out.append(f'<text x="{size / 2:.1f}" y="{size - 12}" text-anchor="middle" font-family="sans-serif" font-size="12">p_pcc (p.u.)</text>')
    out.append(f'<text x="14" y="{size / 2:.1f}" text-anchor="middle" font-family="sans-serif" font-size="12" transform="rotate(-90 14 {size / 2:.1f})">q_pcc (p.u.)</text>')
    for i, (label, poly) in enumerate(polys):
        color = _COLORS[i % len(_COLORS)]
        pts = " ".join(f"{X(p):.2f},{Y(q):.2f}" for p, q in poly)
        out.append(f'<polygon points="{pts}" fill="{color}" fill-opacity="0.15" stroke="{color}" stroke-width="1.5"><title>{label}</title></polygon>')
        for p, q in poly:
            out.append(f'<circle cx="{X(p):.2f}" cy="{Y(q):.2f}" r="2.5" fill="{color}"/>')
    if len(polys) > 1:
        for i, (label, _) in enumerate(polys):
            color = _COLORS[i % len(_COLORS)]
            y = 40 + 14 * i
            out.append(f'<rect x="{size - pad - 70}" y="{y - 9}" width="10" height="10" fill="{color}"/>')
            out.append(f'<text x="{size - pad - 55}" y="{y}" font-family="sans-serif" font-size="11">{label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def period_svg(fmap: FlexibilityMap, t: int) -> str:
    return _svg([(f"t={t + 1}", fmap.vertices[t])], f"Flexibility region, period {t + 1}")


def overlay_svg(fmap: FlexibilityMap) -> str:
    return _svg([(f"t={t + 1}", fmap.vertices[t]) for t in range(fmap.T)], "Flexibility map")


def write_map(fmap: FlexibilityMap, outdir: str | Path, prefix: str = "map", overlay: bool = False) -> list[Path]:
    """CSV, JSON (with witnesses), stats JSON and one SVG per period."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    def put(name, text):
        p = out / name
        p.write_text(text)
        written.append(p)

    put(f"{prefix}.csv", map_to_csv(fmap))
    put(f"{prefix}.json", map_to_json(fmap))
    put(f"{prefix}_stats.json", json.dumps(_jsonable(fmap.stats), indent=1, sort_keys=True) + "\n")
    for t in range(fmap.T):
        put(f"{prefix}_t{t + 1}.svg", period_svg(fmap, t))
    if overlay:
        put(f"{prefix}_overlay.svg", overlay_svg(fmap))
    return written
