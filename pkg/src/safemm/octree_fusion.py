"""Per-sensor voxel classification and multi-sensor fusion of occupied and occluded space.

Each sensor yields voxel sets: obstacle points P, obstacle occupied/occluded O,
robot occupied/occluded R and field of view V; free space is F = V - (O | R).
Fusion removes from each O_i what any other sensor sees as free and merges
the result with all P_i.

Sets are stored as boolean masks over the leaf level of an implicit octree;
the hierarchy is only used to compact uniform regions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidArgument
from .sensor_sim import MAX_RANGE, OBSTACLE, ROBOT, PointCloud

UNKNOWN, FREE, ROBOT_STATE, OCCLUDED, POINT = 0, 1, 2, 3, 4
STATE_NAMES = {UNKNOWN: "unknown", FREE: "free", ROBOT_STATE: "robot", OCCLUDED: "obstacle-occluded", POINT: "obstacle-point"}


@dataclass(frozen=True)
class OctreeSpec:
    """Axis-aligned cube of edge ``size`` centred at ``center``, split ``depth`` times."""

    center: tuple = (0.0, 0.0, 0.0)
    size: float = 4.0
    depth: int = 6

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if self.size <= 0 or self.depth < 0:
            raise InvalidArgument("octree needs positive size and non-negative depth")

    @classmethod
    def from_min_voxel(cls, center=(0.0, 0.0, 0.0), size=4.0, min_voxel=0.05):
        """Deepest tree whose leaves are not smaller than ``min_voxel``."""
        depth = max(0, int(math.floor(math.log2(size / min_voxel) + 1e-12)))
        return cls(center, size, depth)

    @property
    def n(self):
        return 2**self.depth

    @property
    def leaf(self):
        return self.size / self.n

    @property
    def lo(self):
        return np.asarray(self.center) - self.size / 2

    @property
    def hi(self):
        return np.asarray(self.center) + self.size / 2

    def key_of(self, points):
        """Leaf key (ix, iy, iz) of each point; points outside give keys outside [0, n)."""
        return np.floor((np.asarray(points, float) - self.lo) / self.leaf).astype(int)

    def contains_key(self, keys):
        keys = np.asarray(keys)
        return np.all((keys >= 0) & (keys < self.n), axis=-1)

    def box_of(self, key):
        lo = self.lo + np.asarray(key, float) * self.leaf
        return lo, lo + self.leaf


# ------------------------------------------------------------------ ray tracing


def trace_segments(starts, ends, spec: OctreeSpec):
    """3D DDA of many segments through the grid, clipped to its bounds.

    Returns arrays ``(ray, key(N,3), t_enter, t_exit)`` with one row per
    visited voxel, in traversal order per ray; ``t`` is the segment parameter
    in [0, 1].
    """
    starts = np.atleast_2d(np.asarray(starts, float))
    ends = np.atleast_2d(np.asarray(ends, float))
    n = spec.n
    a = (starts - spec.lo) / spec.leaf
    d = (ends - starts) / spec.leaf
    # clip to [0, n]^3
    with np.errstate(divide="ignore", invalid="ignore"):
        t_lo = (0.0 - a) / d
        t_hi = (n - a) / d
    par = d == 0.0
    inside = (a >= 0.0) & (a <= n)
    tmin = np.where(par, np.where(inside, -np.inf, np.inf), np.minimum(t_lo, t_hi))
    tmax = np.where(par, np.where(inside, np.inf, -np.inf), np.maximum(t_lo, t_hi))
    t0 = np.maximum(tmin.max(axis=1), 0.0)
    t1 = np.minimum(tmax.min(axis=1), 1.0)
    live = t0 <= t1
    rays = np.flatnonzero(live)
    if len(rays) == 0:
        e = np.zeros(0)
        return np.zeros(0, int), np.zeros((0, 3), int), e, e
    a, d, t0, t1 = a[rays], d[rays], t0[rays], t1[rays]
    # start voxel; a start exactly on a face belongs to the voxel the segment moves into
    p0 = a + t0[:, None] * d
    cur = np.floor(p0).astype(int)
    on_face = np.isclose(p0, np.round(p0), rtol=0, atol=1e-12) & (d < 0)
    cur = np.where(on_face, np.round(p0).astype(int) - 1, cur)
    cur = np.clip(cur, 0, n - 1)
    step = np.sign(d).astype(int)
    with np.errstate(divide="ignore", invalid="ignore"):
        nxt = cur + (step > 0)
        t_next = np.where(step != 0, (nxt - a) / d, np.inf)
        t_delta = np.where(step != 0, 1.0 / np.abs(d), np.inf)
    out_ray, out_key, out_in, out_out = [], [], [], []
    t_enter = t0.copy()
    idx = np.arange(len(rays))
    while len(idx):
        axis = np.argmin(t_next, axis=1)
        t_leave = t_next[np.arange(len(idx)), axis]
        t_exit = np.minimum(t_leave, t1)
        out_ray.append(rays[idx])
        out_key.append(cur.copy())
        out_in.append(t_enter.copy())
        out_out.append(t_exit)
        go = t_leave < t1
        rows = np.flatnonzero(go)
        ax = axis[rows]
        cur[rows, ax] += step[rows, ax]
        t_next[rows, ax] += t_delta[rows, ax]
        go[rows] &= (cur[rows, ax] >= 0) & (cur[rows, ax] < n)
        keep = np.flatnonzero(go)
        idx, cur, t_next, t_delta, step = idx[keep], cur[keep], t_next[keep], t_delta[keep], step[keep]
        t_enter, t1 = t_leave[keep], t1[keep]
        a, d = a[keep], d[keep]
    return np.concatenate(out_ray), np.concatenate(out_key), np.concatenate(out_in), np.concatenate(out_out)


def raytrace_voxels(origin, endpoint, spec: OctreeSpec):
    """Ordered leaf keys intersected by the segment, clipped to the octree bounds."""
    origin, endpoint = np.asarray(origin, float), np.asarray(endpoint, float)
    if not (np.all(np.isfinite(origin)) and np.all(np.isfinite(endpoint))):
        raise InvalidArgument("ray endpoints must be finite")
    _, keys, t_in, t_out = trace_segments(origin[None], endpoint[None], spec)
    if np.array_equal(origin, endpoint):
        return [tuple(map(int, k)) for k in keys[:1]]
    return [tuple(map(int, k)) for k, a, b in zip(keys, t_in, t_out) if b > a]


# -------------------------------------------------------------- sensor views


class SensorView:
    """Voxel sets of one sensor as boolean masks over the leaf grid."""

    def __init__(self, sensor_id, spec: OctreeSpec, P, O, R, V, timestamp=0.0):
        self.sensor_id = sensor_id
        self.spec = spec
        self.P, self.O, self.R, self.V = P, O, R, V
        self.timestamp = timestamp
        for m in (P, O, R, V):
            m.setflags(write=False)

    @property
    def F(self):
        return self.V & ~(self.O | self.R)

    @staticmethod
    def keys(mask):
        return {tuple(map(int, k)) for k in np.argwhere(mask)}


def preprocess_sensor(cloud: PointCloud, spec: OctreeSpec, max_range=None, timestamp=0.0) -> SensorView:
    """Classify voxels for one labeled point cloud.

    Each ray runs from the sensor origin to its maximum range. Voxels up to
    the return are observed; for obstacle (robot) returns, the hit voxel and
    everything behind it along the ray are occupied-or-occluded by an
    obstacle (the robot). Obstacle returns also mark their point voxel.
    """
    max_range = cloud.max_range if max_range is None else max_range
    if not np.isfinite(max_range):
        raise InvalidArgument("a finite sensor max range is required")
    n = spec.n
    P = np.zeros((n, n, n), bool)
    O = np.zeros_like(P)
    R = np.zeros_like(P)
    V = np.zeros_like(P)
    o = np.asarray(cloud.origin, float)
    vec = cloud.points - o
    rng = np.linalg.norm(vec, axis=1)
    ok = rng > 1e-12
    dirs = vec[ok] / rng[ok, None]
    labels = cloud.labels[ok]
    t_hit = np.where(labels == MAX_RANGE, np.inf, rng[ok] / max_range)
    ends = o + dirs * max_range
    ray, keys, t_in, t_out = trace_segments(np.broadcast_to(o, ends.shape), ends, spec)
    seen = t_out > t_in
    ray, keys, t_in, t_out = ray[seen], keys[seen], t_in[seen], t_out[seen]
    V[keys[:, 0], keys[:, 1], keys[:, 2]] = True
    behind = t_out > t_hit[ray]
    for label, mask in ((OBSTACLE, O), (ROBOT, R)):
        sel = behind & (labels[ray] == label)
        k = keys[sel]
        mask[k[:, 0], k[:, 1], k[:, 2]] = True
    hit_pts = cloud.points[ok][labels == OBSTACLE]
    hk = spec.key_of(hit_pts)
    hk = hk[spec.contains_key(hk)]
    P[hk[:, 0], hk[:, 1], hk[:, 2]] = True
    O |= P
    V |= O
    return SensorView(cloud.sensor_id, spec, P, O, R, V, timestamp)


# --------------------------------------------------------------------- fusion


class Octree:
    """Fused leaf states with octree compaction of uniform regions."""

    def __init__(self, spec: OctreeSpec, states: np.ndarray, timestamp=0.0):
        self.spec = spec
        self.states = states
        self.states.setflags(write=False)
        self.timestamp = timestamp

    def state(self, key):
        return int(self.states[tuple(key)])

    def keys(self, *states):
        return {tuple(map(int, k)) for k in np.argwhere(np.isin(self.states, states))}

    def count(self, *states):
        return int(np.isin(self.states, states).sum())

    @property
    def obstacle_mask(self):
        return (self.states == POINT) | (self.states == OCCLUDED)

    def nodes(self, values=None):
        """Maximal uniform octree nodes as ``(level, key, value)``; level 0 = leaves.

        ``values`` defaults to the leaf states; any integer array of the leaf
        shape may be compacted.
        """
        grid = self.states if values is None else values
        out = []
        uniform = np.ones(grid.shape, bool)
        level_vals = grid
        covered = np.zeros(grid.shape, bool)
        levels = [(level_vals, uniform)]
        for _ in range(self.spec.depth):
            m = level_vals.shape[0] // 2
            v = level_vals.reshape(m, 2, m, 2, m, 2)
            u = uniform.reshape(m, 2, m, 2, m, 2)
            same = (v.min(axis=(1, 3, 5)) == v.max(axis=(1, 3, 5))) & u.all(axis=(1, 3, 5))
            level_vals = v[:, 0, :, 0, :, 0]
            uniform = same
            levels.append((level_vals, uniform))
        covered = np.zeros((1, 1, 1), bool)
        for level in range(self.spec.depth, -1, -1):
            vals, uni = levels[level]
            take = uni & ~covered
            for k in np.argwhere(take):
                out.append((level, tuple(map(int, k)), int(vals[tuple(k)])))
            covered = np.repeat(np.repeat(np.repeat(covered | take, 2, 0), 2, 1), 2, 2) if level else covered
        return out

    def dump(self, path) -> None:
        """Text dump: one ``ix iy iz state`` line per known leaf, sorted by key."""
        lines = [f"# octree center {' '.join(f'{c:.9g}' for c in self.spec.center)} size {self.spec.size:.9g} depth {self.spec.depth}"]
        for k in np.argwhere(self.states != UNKNOWN):
            lines.append(f"{k[0]} {k[1]} {k[2]} {STATE_NAMES[int(self.states[tuple(k)])]}")
        Path(path).write_text("\n".join(lines) + "\n")


def fuse(views, timestamp=None) -> Octree:
    """Fuse sensor views: each sensor's obstacle space minus the others' free space."""
    views = list(views)
    if not views:
        raise InvalidArgument("at least one sensor view is required")
    spec = views[0].spec
    if any(v.spec != spec for v in views):
        raise InvalidArgument("all views must share one octree spec")
    if timestamp is None:
        timestamp = views[0].timestamp
    free = [v.F for v in views]
    free_count = np.sum(free, axis=0, dtype=np.int32)
    point = np.zeros_like(views[0].P)
    obstacle = np.zeros_like(point)
    robot = np.zeros_like(point)
    any_free = free_count > 0
    for v, f in zip(views, free):
        others_free = (free_count - f) > 0
        obstacle |= v.P | (v.O & ~others_free)
        point |= v.P
        robot |= v.R
    states = np.full(point.shape, UNKNOWN, np.uint8)
    states[any_free] = FREE
    states[robot] = ROBOT_STATE
    states[obstacle] = OCCLUDED
    states[point] = POINT
    return Octree(spec, states, timestamp)


def obstacle_cells(octree: Octree, merge=False) -> np.ndarray:
    """Boxes ``(N, 2, 3)`` of obstacle leaves; with ``merge``, of maximal uniform obstacle nodes."""
    spec = octree.spec
    if not merge:
        keys = np.argwhere(octree.obstacle_mask)
        lo = spec.lo + keys * spec.leaf
        return np.stack([lo, lo + spec.leaf], axis=1) if len(keys) else np.zeros((0, 2, 3))
    boxes = []
    for level, key, val in octree.nodes(octree.obstacle_mask.astype(np.uint8)):
        if val:
            size = spec.leaf * 2**level
            lo = spec.lo + np.asarray(key) * size
            boxes.append((lo, lo + size))
    return np.array(boxes, float).reshape(-1, 2, 3)
