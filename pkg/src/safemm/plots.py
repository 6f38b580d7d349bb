"""SVG exports of a simulation trace: top-down snapshots, clearance over time, band evolution.

Plots are plain SVG built with ElementTree, so no plotting package is needed.
World coordinates map to the canvas through :class:`Frame`; every obstacle
element carries ``data-id``/``data-tick`` attributes so a reader can match
drawn shapes back to trace rows.
"""
from __future__ import annotations

import math
import os
import xml.etree.ElementTree as ET
from dataclasses import dataclass

import numpy as np

from .sim import read_trace

SVG_NS = "http://www.w3.org/2000/svg"
WIDTH, HEIGHT, MARGIN = 640, 480, 40
_COLORS = {"box": "#8c8c8c", "cap": "#d62728", "sph": "#d62728", "att": "#2ca02c"}


@dataclass(frozen=True)
class Frame:
    """Affine map from a world rectangle to the canvas (y axis flipped)."""

    x0: float
    y0: float
    scale: float
    width: float = WIDTH
    height: float = HEIGHT
    margin: float = MARGIN

    @classmethod
    def fit(cls, lo, hi, width=WIDTH, height=HEIGHT, margin=MARGIN):
        lo, hi = np.asarray(lo, float), np.asarray(hi, float)
        span = np.maximum(hi - lo, 1e-9)
        s = min((width - 2 * margin) / span[0], (height - 2 * margin) / span[1])
        return cls(float(lo[0]), float(lo[1]), float(s), width, height, margin)

    def to_svg(self, x, y):
        return self.margin + (x - self.x0) * self.scale, self.height - self.margin - (y - self.y0) * self.scale

    def to_world(self, u, v):
        return self.x0 + (u - self.margin) / self.scale, self.y0 + (self.height - self.margin - v) / self.scale


def parse_obstacles(field: str) -> list:
    """``id:kind:x:y:a:b`` entries -> list of (id, kind, x, y, a, b)."""
    out = []
    for item in filter(None, field.split(";")):
        oid, kind, *vals = item.split(":")
        out.append((oid, kind, *map(float, vals)))
    return out


def parse_points(field: str) -> np.ndarray:
    pts = [tuple(map(float, p.split(":")[:2])) for p in filter(None, field.split(";"))]
    return np.array(pts).reshape(-1, 2)


def parse_tracks(field: str) -> list:
    out = []
    for item in filter(None, field.split(";")):
        tid, *vals = item.split(":")
        out.append((tid, *map(float, vals)))
    return out


def _svg(width=WIDTH, height=HEIGHT):
    root = ET.Element("svg", xmlns=SVG_NS, width=str(width), height=str(height), viewBox=f"0 0 {width} {height}")
    ET.SubElement(root, "rect", x="0", y="0", width=str(width), height=str(height), fill="white")
    return root


def _n(x) -> str:
    return format(float(x), ".6g")


def _text(parent, x, y, s, size=12, anchor="start"):
    el = ET.SubElement(parent, "text", x=_n(x), y=_n(y), attrib={"font-size": str(size), "text-anchor": anchor})
    el.text = s
    return el


def _polyline(parent, pts, color, width=1.5, **extra):
    if len(pts) == 0:
        return None
    attrs = {"points": " ".join(f"{_n(u)},{_n(v)}" for u, v in pts), "fill": "none",
             "stroke": color, "stroke-width": _n(width)}
    attrs.update(extra)
    return ET.SubElement(parent, "polyline", attrs)


def _write(root, path):
    ET.ElementTree(root).write(path, encoding="utf-8", xml_declaration=True)
    return path


def _empty(path, title):
    root = _svg()
    _text(root, WIDTH / 2, 30, title, 16, "middle")
    _text(root, WIDTH / 2, HEIGHT / 2, "no data", 14, "middle")
    return _write(root, path)


def _base_xy(rows) -> np.ndarray:
    return np.array([[float(r["q0"]), float(r["q1"])] for r in rows]).reshape(-1, 2)


def world_extent(rows, pad=0.5):
    """Bounding rectangle of everything drawn in the top-down views."""
    pts = [_base_xy(rows)]
    for r in rows:
        for _, _, x, y, a, b in parse_obstacles(r.get("obstacles", "")):
            pts.append(np.array([[x - a, y - b], [x + a, y + b]]))
        pts.append(parse_points(r.get("band_xy", "")))
    P = np.vstack([p for p in pts if len(p)])
    return P.min(axis=0) - pad, P.max(axis=0) + pad


def snapshot_ticks(rows, count=4) -> list:
    n = len(rows)
    idx = sorted(set(np.linspace(0, n - 1, min(count, n)).round().astype(int).tolist()))
    return idx


def snapshot_svg(rows, path, count=4):
    """Top-down world state at ``count`` evenly spaced ticks plus the base path."""
    if not rows:
        return _empty(path, "world snapshots")
    frame = Frame.fit(*world_extent(rows))
    root = _svg()
    root.set("data-frame", f"{_n(frame.x0)} {_n(frame.y0)} {_n(frame.scale)}")
    _text(root, WIDTH / 2, 20, "world snapshots (top view)", 14, "middle")
    idx = snapshot_ticks(rows, count)
    for j, i in enumerate(idx):
        r = rows[i]
        alpha = 0.25 + 0.75 * (j + 1) / len(idx)
        g = ET.SubElement(root, "g", {"id": f"snapshot-{r['tick']}", "data-tick": r["tick"], "opacity": _n(alpha)})
        for oid, kind, x, y, a, b in parse_obstacles(r.get("obstacles", "")):
            attrs = {"data-id": oid, "data-kind": kind, "data-tick": r["tick"],
                     "fill": _COLORS.get(kind, "#1f77b4"), "fill-opacity": "0.5"}
            if kind in ("box", "att"):
                u, v = frame.to_svg(x - a, y + b)
                attrs.update(x=_n(u), y=_n(v), width=_n(2 * a * frame.scale), height=_n(2 * b * frame.scale))
                ET.SubElement(g, "rect", attrs)
            else:
                u, v = frame.to_svg(x, y)
                attrs.update(cx=_n(u), cy=_n(v), r=_n(a * frame.scale))
                ET.SubElement(g, "circle", attrs)
        for tid, x, y, vx, vy in parse_tracks(r.get("tracks", "")):
            u, v = frame.to_svg(x, y)
            u2, v2 = frame.to_svg(x + vx, y + vy)
            ET.SubElement(g, "circle", {"cx": _n(u), "cy": _n(v), "r": "3", "fill": "#ff7f0e", "data-track": tid})
            ET.SubElement(g, "line", {"x1": _n(u), "y1": _n(v), "x2": _n(u2), "y2": _n(v2), "stroke": "#ff7f0e"})
        u, v = frame.to_svg(float(r["q0"]), float(r["q1"]))
        ET.SubElement(g, "circle", {"cx": _n(u), "cy": _n(v), "r": "4", "fill": "#1f77b4", "data-robot": r["tick"]})
    path_pts = [frame.to_svg(x, y) for x, y in _base_xy(rows)]
    _polyline(root, path_pts, "#1f77b4", 1.5, id="base-path")
    return _write(root, path)


def _finite(a, cap):
    a = np.asarray(a, float)
    return np.where(np.isfinite(a), np.minimum(a, cap), cap)


def clearance_svg(rows, path):
    """Sensed and human clearance (upper panel) and speed scale (lower panel) over time."""
    if not rows:
        return _empty(path, "clearance over time")
    t = np.array([float(r["time"]) for r in rows])
    d = np.array([float(r["min_distance"]) for r in rows])
    dh = np.array([float(r.get("human_distance", "inf")) for r in rows])
    s = np.array([float(r["speed_scale"]) for r in rows])
    finite = np.concatenate([d[np.isfinite(d)], dh[np.isfinite(dh)]])
    cap = float(max(finite.max() * 1.1, 0.5)) if finite.size else 1.0
    root = _svg()
    _text(root, WIDTH / 2, 20, "clearance over time", 14, "middle")
    t0, t1 = float(t[0]), float(max(t[-1], t[0] + 1e-9))
    top, mid, bottom = 40.0, 300.0, 440.0
    left, right = 60.0, WIDTH - 20.0

    def tx(x):
        return left + (x - t0) / (t1 - t0) * (right - left)

    def panel(y0, y1, values, vmax, color, label, ident):
        pts = [(tx(a), y1 - v / vmax * (y1 - y0)) for a, v in zip(t, values)]
        _polyline(root, pts, color, 1.5, id=ident)
        _text(root, left + 4, y0 + 14, label, 11)

    for y0, y1 in ((top, mid - 20), (mid, bottom)):
        ET.SubElement(root, "rect", x=_n(left), y=_n(y0), width=_n(right - left), height=_n(y1 - y0),
                      fill="none", stroke="#444")
    panel(top, mid - 20, _finite(d, cap), cap, "#1f77b4", f"min distance (m, capped at {_n(cap)})", "min-distance")
    panel(top, mid - 20, _finite(dh, cap), cap, "#d62728", "", "human-distance")
    panel(mid, bottom, s, 1.0, "#2ca02c", "speed scale", "speed-scale")
    _text(root, left, bottom + 16, _n(t0), 10)
    _text(root, right, bottom + 16, f"{_n(t1)} s", 10, "end")
    return _write(root, path)


def band_svg(rows, path, max_bands=40):
    """Band polylines (base or tool positions) sampled over the run, old to new."""
    bands = [(r, parse_points(r.get("band_xy", ""))) for r in rows]
    bands = [(r, b) for r, b in bands if len(b)]
    if not bands:
        return _empty(path, "band evolution")
    frame = Frame.fit(*world_extent(rows))
    root = _svg()
    _text(root, WIDTH / 2, 20, "band evolution", 14, "middle")
    step = max(1, math.ceil(len(bands) / max_bands))
    chosen = bands[::step]
    for j, (r, b) in enumerate(chosen):
        alpha = 0.15 + 0.85 * (j + 1) / len(chosen)
        pts = [frame.to_svg(x, y) for x, y in b]
        _polyline(root, pts, "#9467bd", 1.0, opacity=_n(alpha), **{"data-tick": r["tick"]})
    _polyline(root, [frame.to_svg(x, y) for x, y in _base_xy(rows)], "#1f77b4", 1.5, id="base-path")
    return _write(root, path)


def export_plots(trace, out_dir) -> list:
    """Write ``snapshot.svg``, ``clearance.svg`` and ``band.svg`` for a trace file (or parsed rows)."""
    rows = trace if isinstance(trace, list) else read_trace(trace)
    os.makedirs(out_dir, exist_ok=True)
    return [
        snapshot_svg(rows, os.path.join(out_dir, "snapshot.svg")),
        clearance_svg(rows, os.path.join(out_dir, "clearance.svg")),
        band_svg(rows, os.path.join(out_dir, "band.svg")),
    ]
