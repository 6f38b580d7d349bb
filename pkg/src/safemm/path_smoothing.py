"""Post-processing of sampled paths.

Every operation only accepts a rewrite whose new segments pass the
certified collision check and whose weighted length does not grow, so the
length never increases even under floating-point round-off.
"""
from __future__ import annotations

from typing import Optional

import numpy as np

from .errors import InvalidArgument
from .paths import Path, SegmentChecker, TimedPath, weighted_distance

SINGLE_VERTEX = "single-vertex"
BINARY_INTERVAL = "binary-interval"
RANDOM_PAIR = "random-pair"
STRATEGIES = (SINGLE_VERTEX, BINARY_INTERVAL, RANDOM_PAIR)


def _len(configs, w):
    return float(np.sum(weighted_distance(configs[:-1], configs[1:], w)))


def _free(checker: Optional[SegmentChecker], a, b):
    return True if checker is None else checker.segment_free(a, b)


def _single_vertex(q, w, checker):
    changed = True
    while changed and len(q) > 2:
        changed = False
        i = 1
        while i < len(q) - 1:
            old = weighted_distance(q[i - 1], q[i], w) + weighted_distance(q[i], q[i + 1], w)
            if weighted_distance(q[i - 1], q[i + 1], w) <= old and _free(checker, q[i - 1], q[i + 1]):
                q = np.delete(q, i, axis=0)
                changed = True
            else:
                i += 1
    return q


def _sub_len(q, w, i, j):
    return float(np.sum(weighted_distance(q[i:j], q[i + 1 : j + 1], w)))


def _binary_interval(q, w, checker):
    """From each kept vertex, jump to the farthest vertex found by binary search that connects directly."""
    out = [q[0]]
    i = 0
    while i < len(q) - 1:
        lo, hi = i + 1, len(q) - 1
        best = i + 1
        while lo <= hi:
            mid = (lo + hi) // 2
            ok = weighted_distance(q[i], q[mid], w) <= _sub_len(q, w, i, mid) and (
                mid == i + 1 or _free(checker, q[i], q[mid])
            )
            if ok:
                best, lo = mid, mid + 1
            else:
                hi = mid - 1
        out.append(q[best])
        i = best
    return np.array(out)


def _random_pair(q, w, checker, budget, rng):
    for _ in range(budget):
        if len(q) < 3:
            break
        i, j = sorted(rng.choice(len(q), 2, replace=False))
        if j - i < 2:
            continue
        if weighted_distance(q[i], q[j], w) <= _sub_len(q, w, i, j) and _free(checker, q[i], q[j]):
            q = np.concatenate([q[: i + 1], q[j:]])
    return q


def shortcut(path: Path, checker: Optional[SegmentChecker], strategy=None, budget=200, seed=0) -> Path:
    """Remove vertices whose neighbours connect directly.

    ``strategy`` is one of ``single-vertex``, ``binary-interval``,
    ``random-pair``; ``None`` runs a binary-interval pass followed by
    ``budget`` random-pair attempts. ``checker=None`` means free space.
    """
    q = path.configs.copy()
    w = path.weights
    if strategy is None:
        q = _binary_interval(q, w, checker)
        q = _random_pair(q, w, checker, budget, np.random.default_rng(seed))
    elif strategy == SINGLE_VERTEX:
        q = _single_vertex(q, w, checker)
    elif strategy == BINARY_INTERVAL:
        q = _binary_interval(q, w, checker)
    elif strategy == RANDOM_PAIR:
        q = _random_pair(q, w, checker, budget, np.random.default_rng(seed))
    else:
        raise InvalidArgument(f"unknown shortcut strategy {strategy!r}")
    return path.replaced(q) if _len(q, w) <= path.length() else path


def _window_values(q, w, j, lo, hi):
    """Joint-``j`` values for vertices ``lo+1 .. hi-1`` on the straight line between ``q[lo]`` and ``q[hi]``.

    Positions are the cumulative weighted distances of the other joints,
    normalized over the window. For fixed other joints this is the exact
    minimizer of the window's length, so the path never gets longer.
    """
    mask = np.ones(q.shape[1], bool)
    mask[j] = False
    steps = np.linalg.norm(w[mask] * np.diff(q[lo : hi + 1][:, mask], axis=0), axis=1)
    cum = np.cumsum(steps)[:-1]
    total = float(np.sum(steps))
    s = cum / total if total > 0 else np.arange(1, hi - lo) / (hi - lo)
    u, v = q[lo, j], q[hi, j]
    if u == v:
        return np.full(hi - lo - 1, u)
    return u + s * (v - u)


def _is_extremum(x, i, tol):
    p, c, n = x[i - 1], x[i], x[i + 1]
    return (c > p + tol and c > n + tol) or (c < p - tol and c < n - tol)


def flatten_extrema(path: Path, checker: Optional[SegmentChecker], tol=1e-9, max_passes=10) -> Path:
    """Replace per-joint local extrema at interior vertices by straight-line values.

    A strict extremum of joint j at vertex i gets the value on the straight
    line between its neighbours (equal neighbours: that value, the joint
    then does not move at all). When this makes a neighbour an extremum,
    the window grows by that neighbour and is re-interpolated, so extrema
    cannot bounce between adjacent vertices. Each accepted rewrite removes
    at least one extremum; rewrites whose segments fail the collision check
    are skipped. In free space the result has no extremum left, so applying
    the function again changes nothing.
    """
    q = path.configs.copy()
    w = path.weights
    n = len(q)
    for _ in range(max_passes):
        changed = False
        for j in range(q.shape[1]):
            blocked = set()
            i = 1
            while i < n - 1:
                if i in blocked or not _is_extremum(q[:, j], i, tol):
                    i += 1
                    continue
                lo, hi = i - 1, i + 1
                while True:
                    trial = q[:, j].copy()
                    trial[lo + 1 : hi] = _window_values(q, w, j, lo, hi)
                    grow_lo = lo > 0 and _is_extremum(trial, lo, tol)
                    grow_hi = hi < n - 1 and _is_extremum(trial, hi, tol)
                    if not (grow_lo or grow_hi):
                        break
                    lo -= int(grow_lo)
                    hi += int(grow_hi)
                cand = q.copy()
                cand[:, j] = trial
                old = _len(q[lo : hi + 1], w)
                new = _len(cand[lo : hi + 1], w)
                ok = new <= old and all(_free(checker, cand[k], cand[k + 1]) for k in range(lo, hi))
                if ok:
                    q = cand
                    changed = True
                    i = max(1, lo)
                else:
                    blocked.add(i)
                    i += 1
        if not changed:
            break
    return path.replaced(q)


def insert_center_connections(path: Path, checker: Optional[SegmentChecker], min_length=0.2, max_depth=3) -> Path:
    """Cut corners: replace a vertex by the midpoints of its two segments when they connect freely.

    Only applied where both segments are at least ``min_length`` long and the
    rewrite strictly shortens the path; repeated ``max_depth`` times.
    """
    if min_length <= 0:
        raise InvalidArgument("min_length must be positive")
    q = path.configs.copy()
    w = path.weights
    for _ in range(max_depth):
        out = [q[0]]
        changed = False
        i = 1
        while i < len(q) - 1:
            prev = out[-1]
            a, b = weighted_distance(prev, q[i], w), weighted_distance(q[i], q[i + 1], w)
            if a >= min_length and b >= min_length:
                m1, m2 = 0.5 * (prev + q[i]), 0.5 * (q[i] + q[i + 1])
                saved = (0.5 * a + 0.5 * b) - weighted_distance(m1, m2, w)
                if saved > 1e-12 * (a + b) and _free(checker, m1, m2):
                    out.extend([m1, m2])
                    changed = True
                    i += 1
                    continue
            out.append(q[i])
            i += 1
        out.append(q[-1])
        q = np.array(out)
        if not changed:
            break
    return path.replaced(q) if _len(q, w) <= path.length() else path


def smooth(path: Path, checker: Optional[SegmentChecker], budget=200, seed=0, min_length=0.2, max_depth=3) -> Path:
    """Full pipeline: shortcuts, extremum flattening, corner cutting, final shortcuts."""
    p = shortcut(path, checker, None, budget, seed)
    p = flatten_extrema(p, checker)
    p = insert_center_connections(p, checker, min_length, max_depth)
    p = shortcut(p, checker, None, budget, seed + 1)
    return p


# ----------------------------------------------------------------- timing


def _durations(motions, vmax):
    return np.max(np.abs(motions) / vmax, axis=1)


def _best_vertex_value(prev, cur, nxt, other_a, other_b, v):
    """Minimize max(A, |x - prev| / v) + max(B, |nxt - x| / v) over x.

    The function is convex and piecewise linear; its minimum lies on a
    breakpoint. The current value wins ties so only strict gains move it.
    """
    f = lambda x: max(other_a, abs(x - prev) / v) + max(other_b, abs(nxt - x) / v)
    cands = [prev, nxt, prev - other_a * v, prev + other_a * v, nxt - other_b * v, nxt + other_b * v]
    best_x, best_f = cur, f(cur)
    for x in cands:
        fx = f(x)
        if fx < best_f - 1e-12:
            best_x, best_f = x, fx
    return best_x


def interleave_timing(path: Path, vmax, checker: Optional[SegmentChecker] = None, max_passes=20) -> TimedPath:
    """Segment durations from the slowest joint, then shift joint motion across vertices.

    Each interior vertex value of each joint is moved to the position that
    minimizes the summed duration of its two segments (closed form, see
    :func:`_best_vertex_value`), sweeping until no strict gain remains.
    Endpoints stay fixed; with a checker, moves that break the collision
    certificate are rejected.
    """
    vmax = np.asarray(vmax, float)
    if vmax.shape != (path.configs.shape[1],) or np.any(vmax <= 0):
        raise InvalidArgument("one positive velocity limit per joint is required")
    q = path.configs.copy()
    if len(q) < 3:
        motions = np.diff(q, axis=0)
        return TimedPath(path, _durations(motions, vmax) if len(motions) else np.zeros(0), vmax, motions)
    for _ in range(max_passes):
        changed = False
        for i in range(1, len(q) - 1):
            for j in range(q.shape[1]):
                others = np.ones(q.shape[1], bool)
                others[j] = False
                a = float(np.max(np.abs(q[i, others] - q[i - 1, others]) / vmax[others], initial=0.0))
                b = float(np.max(np.abs(q[i + 1, others] - q[i, others]) / vmax[others], initial=0.0))
                x = _best_vertex_value(q[i - 1, j], q[i, j], q[i + 1, j], a, b, vmax[j])
                if x == q[i, j]:
                    continue
                cand = q[i].copy()
                cand[j] = x
                if checker is not None and not (checker.segment_free(q[i - 1], cand) and checker.segment_free(cand, q[i + 1])):
                    continue
                q[i] = cand
                changed = True
        if not changed:
            break
    motions = np.diff(q, axis=0)
    keep = np.any(motions != 0, axis=1)
    q = np.concatenate([q[:1], q[1:][keep]])
    motions = np.diff(q, axis=0)
    return TimedPath(path.replaced(q), _durations(motions, vmax), vmax, motions)


def initial_timing(path: Path, vmax) -> TimedPath:
    """Durations from the slowest joint per segment, without interleaving."""
    vmax = np.asarray(vmax, float)
    motions = np.diff(path.configs, axis=0)
    return TimedPath(path, _durations(motions, vmax) if len(motions) else np.zeros(0), vmax, motions)


__all__ = [
    "BINARY_INTERVAL",
    "RANDOM_PAIR",
    "SINGLE_VERTEX",
    "flatten_extrema",
    "initial_timing",
    "insert_center_connections",
    "interleave_timing",
    "shortcut",
    "smooth",
]
