"""Obstacle world, robot-obstacle distance queries and the speed-scaling supervisor."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Optional

import numpy as np

from . import geometry
from .errors import InvalidArgument, NotFound
from .kinematics import Capsule, RobotModel, Sphere, link_transforms, link_transforms_batch, world_shapes, world_shapes_batch

SPHERE, CAPSULE, BOX, VOXELS = "sphere", "capsule", "box", "voxels"
STATIC, DYNAMIC, HANDLED, ATTACHED = "static", "dynamic", "handled-object", "robot-attached"
OBSTACLE_CLASSES = (STATIC, DYNAMIC, HANDLED, ATTACHED)
# classes that do not take part in robot-obstacle distance queries
_EXCLUDED = (HANDLED, ATTACHED)

OCTREE_ID = "octree"


@dataclass(frozen=True)
class Obstacle:
    """A world object. ``center`` is its position; ``half`` is the capsule half-axis or box half-extents.

    Attached objects keep their geometry in the frame of link ``link`` via ``rel``.
    """

    id: str
    kind: str
    center: tuple = (0.0, 0.0, 0.0)
    radius: float = 0.0
    half: tuple = (0.0, 0.0, 0.0)
    boxes: Optional[np.ndarray] = None
    cls: str = STATIC
    link: Optional[int] = None
    rel: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in (SPHERE, CAPSULE, BOX, VOXELS):
            raise InvalidArgument(f"unknown obstacle shape {self.kind!r}")
        if self.cls not in OBSTACLE_CLASSES:
            raise InvalidArgument(f"unknown obstacle class {self.cls!r}")
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))
        object.__setattr__(self, "half", tuple(float(v) for v in self.half))

    @classmethod
    def sphere(cls, id, center, radius, klass=STATIC):
        return cls(id, SPHERE, center, float(radius), cls=klass)

    @classmethod
    def capsule(cls, id, p0, p1, radius, klass=STATIC):
        p0, p1 = np.asarray(p0, float), np.asarray(p1, float)
        return cls(id, CAPSULE, (p0 + p1) / 2, float(radius), (p1 - p0) / 2, cls=klass)

    @classmethod
    def box(cls, id, lo, hi, klass=STATIC):
        lo, hi = np.asarray(lo, float), np.asarray(hi, float)
        if np.any(hi < lo):
            raise InvalidArgument("box requires lo <= hi")
        return cls(id, BOX, (lo + hi) / 2, 0.0, (hi - lo) / 2, cls=klass)

    @classmethod
    def voxels(cls, id, boxes, klass=STATIC):
        boxes = np.asarray(boxes, float).reshape(-1, 2, 3)
        c = boxes.reshape(-1, 3).mean(axis=0) if len(boxes) else np.zeros(3)
        return cls(id, VOXELS, c, boxes=boxes, cls=klass)

    def moved_to(self, position):
        position = np.asarray(position, float)
        if self.kind == VOXELS:
            return replace(self, center=position, boxes=self.boxes + (position - np.asarray(self.center)))
        return replace(self, center=position)

    @property
    def lo(self):
        return np.asarray(self.center) - np.asarray(self.half)

    @property
    def hi(self):
        return np.asarray(self.center) + np.asarray(self.half)

    def robot_shape(self):
        """Conservative capsule in link coordinates used while the object is attached."""
        R, t = self.rel[:3, :3], self.rel[:3, 3]
        if self.kind == SPHERE:
            return Sphere(t, self.radius)
        if self.kind == CAPSULE:
            h = R @ np.asarray(self.half)
            return Capsule(tuple(t - h), tuple(t + h), self.radius)
        half = np.asarray(self.half)
        k = int(np.argmax(half))
        axis = np.zeros(3)
        axis[k] = half[k]
        h = R @ axis
        others = np.delete(half, k)
        return Capsule(tuple(t - h), tuple(t + h), float(np.linalg.norm(others)))


@dataclass(frozen=True)
class WorldSnapshot:
    obstacles: tuple = ()
    octree_boxes: Optional[np.ndarray] = None
    timestamp: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        if self.octree_boxes is not None:
            b = np.asarray(self.octree_boxes, float).reshape(-1, 2, 3)
            b.setflags(write=False)
            object.__setattr__(self, "octree_boxes", b)

    def get(self, obstacle_id) -> Obstacle:
        for o in self.obstacles:
            if o.id == obstacle_id:
                return o
        raise NotFound(obstacle_id)

    def with_obstacles(self, obstacles):
        return replace(self, obstacles=tuple(obstacles))

    def with_octree(self, boxes, timestamp=None):
        return replace(self, octree_boxes=boxes, timestamp=self.timestamp if timestamp is None else timestamp)

    def replaced(self, obstacle):
        """New snapshot with the obstacle of the same id replaced."""
        self.get(obstacle.id)
        return self.with_obstacles(obstacle if o.id == obstacle.id else o for o in self.obstacles)

    def added(self, obstacle):
        return self.with_obstacles(self.obstacles + (obstacle,))

    def removed(self, obstacle_id):
        self.get(obstacle_id)
        return self.with_obstacles(o for o in self.obstacles if o.id != obstacle_id)

    @cached_property
    def env(self):
        """Distance-relevant geometry: capsule and box arrays plus owning ids."""
        cp0, cp1, crad, cid, blo, bhi, bid = [], [], [], [], [], [], []
        for o in self.obstacles:
            if o.cls in _EXCLUDED:
                continue
            c = np.asarray(o.center)
            if o.kind == SPHERE:
                cp0.append(c), cp1.append(c), crad.append(o.radius), cid.append(o.id)
            elif o.kind == CAPSULE:
                h = np.asarray(o.half)
                cp0.append(c - h), cp1.append(c + h), crad.append(o.radius), cid.append(o.id)
            elif o.kind == BOX:
                blo.append(o.lo), bhi.append(o.hi), bid.append(o.id)
            else:
                for lo, hi in o.boxes:
                    blo.append(lo), bhi.append(hi), bid.append(o.id)
        if self.octree_boxes is not None:
            for lo, hi in self.octree_boxes:
                blo.append(lo), bhi.append(hi), bid.append(OCTREE_ID)
        return _Env(
            np.array(cp0, float).reshape(-1, 3),
            np.array(cp1, float).reshape(-1, 3),
            np.array(crad, float),
            cid,
            np.array(blo, float).reshape(-1, 3),
            np.array(bhi, float).reshape(-1, 3),
            bid,
        )

    def robot_model(self, model: RobotModel) -> RobotModel:
        """``model`` extended by the conservative shapes of attached objects."""
        extra = {}
        for o in self.obstacles:
            if o.cls == ATTACHED:
                extra.setdefault(o.link, []).append(o.robot_shape())
        if not extra:
            return model
        cache = self.__dict__.setdefault("_models", {})
        key = id(model)
        if key not in cache:
            cache[key] = (model, model.with_link_shapes(extra))
        return cache[key][1]


@dataclass(frozen=True)
class _Env:
    cap_p0: np.ndarray
    cap_p1: np.ndarray
    cap_r: np.ndarray
    cap_id: list
    box_lo: np.ndarray
    box_hi: np.ndarray
    box_id: list

    @property
    def empty(self):
        return len(self.cap_r) == 0 and len(self.box_lo) == 0


@dataclass(frozen=True)
class LinkDistance:
    link: int
    distance: float
    robot_point: np.ndarray
    obstacle_point: np.ndarray
    obstacle_id: str


@dataclass(frozen=True)
class DistanceResult:
    d: float
    links: tuple = field(default_factory=tuple)

    def for_link(self, link) -> Optional[LinkDistance]:
        for e in self.links:
            if e.link == link:
                return e
        return None


def _shape_distances(p0, p1, rad, env: _Env):
    """Distances of robot capsules (leading dims ..., S) to every env primitive.

    Returns (dist (..., S, N), robot points, obstacle points, ids). With many
    boxes, capsule-box pairs that provably cannot be the nearest box of their
    capsule are skipped and reported as ``inf`` (points NaN), so every
    per-capsule minimum stays exact.
    """
    parts_d, parts_x, parts_o = [], [], []
    if len(env.cap_r):
        d, x, o = geometry.capsule_capsule(
            p0[..., :, None, :], p1[..., :, None, :], rad[:, None], env.cap_p0, env.cap_p1, env.cap_r
        )
        parts_d.append(d), parts_x.append(x), parts_o.append(o)
    if len(env.box_lo):
        lo, hi = env.box_lo, env.box_hi
        if len(lo) > _BROAD_PHASE_MIN:
            d, x, o = _sparse_capsule_box(p0, p1, rad, lo, hi)
        else:
            d, x, o = geometry.capsule_box(p0[..., :, None, :], p1[..., :, None, :], rad[:, None], lo, hi)
        parts_d.append(d), parts_x.append(x), parts_o.append(o)
    return (
        np.concatenate(parts_d, axis=-1),
        np.concatenate(parts_x, axis=-2),
        np.concatenate(parts_o, axis=-2),
        env.cap_id + env.box_id,
    )


_BROAD_PHASE_MIN = 32


def _sparse_capsule_box(p0, p1, rad, lo, hi):
    """Capsule-box distances evaluated only for pairs that can be a capsule's nearest box.

    For a capsule with midpoint m and half length h, a box is at least
    ``|m - box| - h - r`` away, and the nearest box is at most
    ``min |m - box| - r`` away; pairs whose lower bound exceeds that are skipped.
    """
    lead = p0.shape[:-1]
    K = len(lo)
    a0, a1 = p0.reshape(-1, 3), p1.reshape(-1, 3)
    r = np.broadcast_to(rad, lead).reshape(-1)
    mid = 0.5 * (a0 + a1)
    half = 0.5 * np.linalg.norm(a1 - a0, axis=-1)
    pd, _ = geometry.point_box(mid[:, None, :], lo, hi)
    upper = pd.min(axis=1) - r
    ii, kk = np.nonzero(pd - (half + r)[:, None] <= upper[:, None])
    d = np.full((len(a0), K), np.inf)
    x = np.full((len(a0), K, 3), np.nan)
    o = np.full((len(a0), K, 3), np.nan)
    de, xe, oe = geometry.capsule_box(a0[ii], a1[ii], r[ii], lo[kk], hi[kk])
    d[ii, kk], x[ii, kk], o[ii, kk] = de, xe, oe
    return d.reshape(lead + (K,)), x.reshape(lead + (K, 3)), o.reshape(lead + (K, 3))


def min_distance(model: RobotModel, q, world: WorldSnapshot, Ts=None) -> DistanceResult:
    """Minimum robot-obstacle distance with per-link nearest point pairs.

    Attached and handled objects are not obstacles; attached ones are part of
    the robot. Octree cells count as boxes. An empty world gives ``d = inf``.
    """
    model = world.robot_model(model)
    env = world.env
    if env.empty or len(model.shape_radius) == 0:
        return DistanceResult(math.inf, ())
    if Ts is None:
        Ts = link_transforms(model, q)
    p0, p1, rad, owner = world_shapes(model, Ts)
    dist, xs, os_, ids = _shape_distances(p0, p1, rad, env)
    entries = []
    for link in np.unique(owner):
        rows = np.flatnonzero(owner == link)
        sub = dist[rows]
        s, k = np.unravel_index(int(np.argmin(sub)), sub.shape)
        r = rows[s]
        entries.append(LinkDistance(int(link), float(dist[r, k]), xs[r, k].copy(), os_[r, k].copy(), ids[k]))
    d = min(e.distance for e in entries)
    return DistanceResult(d, tuple(entries))


def min_distance_batch(model: RobotModel, Q, world: WorldSnapshot) -> np.ndarray:
    """Minimum distance for each configuration row of ``Q`` (no nearest points)."""
    Q = np.atleast_2d(Q)
    model = world.robot_model(model)
    env = world.env
    if env.empty or len(model.shape_radius) == 0:
        return np.full(len(Q), math.inf)
    p0, p1 = world_shapes_batch(model, link_transforms_batch(model, Q))
    dist, _, _, _ = _shape_distances(p0, p1, model.shape_radius, env)
    return dist.reshape(len(Q), -1).min(axis=1)


def link_distances_batch(model: RobotModel, Q, world: WorldSnapshot):
    """Per-link minimum distances and nearest point pairs for each row of ``Q``.

    Returns ``(d, x, o)`` with shapes (B, n_joints), (B, n_joints, 3) and
    (B, n_joints, 3); links without shapes, or an empty world, give ``inf``
    and NaN points. ``model`` should already include attached objects.
    """
    Q = np.atleast_2d(np.asarray(Q, float))
    B, L = len(Q), len(model.joints)
    d = np.full((B, L), math.inf)
    x = np.full((B, L, 3), np.nan)
    o = np.full((B, L, 3), np.nan)
    env = world.env
    if env.empty or len(model.shape_radius) == 0:
        return d, x, o
    p0, p1 = world_shapes_batch(model, link_transforms_batch(model, Q))
    dist, xs, os_, _ = _shape_distances(p0, p1, model.shape_radius, env)
    rows = np.arange(B)
    for link in np.unique(model.shape_link):
        sel = np.flatnonzero(model.shape_link == link)
        sub = dist[:, sel].reshape(B, -1)
        k = np.argmin(sub, axis=1)
        s, n = np.unravel_index(k, (len(sel), dist.shape[-1]))
        d[:, link] = sub[rows, k]
        x[:, link] = xs[rows, sel[s], n]
        o[:, link] = os_[rows, sel[s], n]
    return d, x, o


def is_collision_free(model, q, world, clearance=0.0) -> bool:
    return min_distance(model, q, world).d > clearance


def attach_object(world: WorldSnapshot, obstacle_id, link: int, link_transform=None) -> WorldSnapshot:
    """Reclassify an obstacle as part of the robot, rigidly fixed to ``link``.

    ``link_transform`` is the link's world transform at grasp time; the
    object's relative placement is derived from it. Attaching an already
    attached object returns the snapshot unchanged.
    """
    o = world.get(obstacle_id)
    if o.cls == ATTACHED:
        return world
    if o.kind == VOXELS:
        raise InvalidArgument("voxel obstacles cannot be attached")
    T = np.eye(4) if link_transform is None else np.asarray(link_transform, float)
    Tobj = np.eye(4)
    Tobj[:3, 3] = o.center
    rel = np.linalg.inv(T) @ Tobj
    return world.replaced(replace(o, cls=ATTACHED, link=int(link), rel=rel))


def release_object(world: WorldSnapshot, obstacle_id, position) -> WorldSnapshot:
    """Put an attached object back into the world as a dynamic obstacle at ``position``."""
    o = world.get(obstacle_id)
    released = replace(o, cls=DYNAMIC, link=None, rel=None).moved_to(np.asarray(position, float))
    return world.replaced(released)


def mark_object(world: WorldSnapshot, obstacle_id, klass) -> WorldSnapshot:
    """Change an obstacle's class, e.g. to ``handled-object`` before grasping."""
    o = world.get(obstacle_id)
    if klass == ATTACHED:
        raise InvalidArgument("use attach_object to attach")
    return world.replaced(replace(o, cls=klass, link=None, rel=None))


def attached_position(model, q, obstacle: Obstacle):
    """World position of an attached object's reference point at configuration ``q``."""
    T = link_transforms(model, q)[obstacle.link] @ obstacle.rel
    return T[:3, 3].copy()


@dataclass(frozen=True)
class SpeedConfig:
    d_stop: float = 0.05
    d_slow: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.d_stop < self.d_slow:
            raise InvalidArgument("speed thresholds require 0 <= d_stop < d_slow")


def compute_speed_scale(d_current, d_predicted=math.inf, cfg: SpeedConfig = SpeedConfig()) -> float:
    """Piecewise-linear speed factor: 0 at or below ``d_stop``, 1 at or above ``d_slow``."""
    if not 0.0 <= cfg.d_stop < cfg.d_slow:
        raise InvalidArgument("speed thresholds require 0 <= d_stop < d_slow")
    d = min(d_current, d_predicted)
    if d <= cfg.d_stop:
        return 0.0
    if d >= cfg.d_slow:
        return 1.0
    return (d - cfg.d_stop) / (cfg.d_slow - cfg.d_stop)


def interpolate_timed(configs, times, t):
    """Configuration at time ``t`` along a piecewise-linear timed path (clamped)."""
    configs = np.atleast_2d(np.asarray(configs, float))
    times = np.asarray(times, float)
    if len(configs) == 1 or t <= times[0]:
        return configs[0]
    if t >= times[-1]:
        return configs[-1]
    k = int(np.searchsorted(times, t, side="right")) - 1
    a = (t - times[k]) / (times[k + 1] - times[k])
    return configs[k] + a * (configs[k + 1] - configs[k])


def predicted_min_distance(
    model, configs, times, tracks, horizon=2.0, dt=0.05, tracking_cfg=None, obstacle_height=2.0, world=None
) -> float:
    """Minimum over sampled future times of robot-to-predicted-obstacle distance.

    The robot follows the timed path ``configs``/``times`` (relative times,
    clamped at the end); each track contributes its predicted disc extruded
    to a vertical capsule of height ``obstacle_height``.
    """
    from .tracking import TrackingConfig, predict_occupancy

    if horizon <= 0:
        raise InvalidArgument("horizon must be positive")
    if not tracks:
        return math.inf
    tracking_cfg = tracking_cfg or TrackingConfig()
    steps = max(1, int(round(horizon / dt)))
    ts = np.linspace(0.0, horizon, steps + 1)
    if world is not None:
        model = world.robot_model(model)
    Q = np.array([interpolate_timed(configs, times, t) for t in ts])
    p0, p1 = world_shapes_batch(model, link_transforms_batch(model, Q))
    rad = model.shape_radius
    best = math.inf
    for tr in tracks:
        pred = predict_occupancy(tr, horizon, steps, tracking_cfg)
        c = np.array([[cx, cy] for _, (cx, cy), _ in pred])
        r = np.array([rr for _, _, rr in pred])
        a = np.column_stack([c, np.zeros(len(c))])
        b = np.column_stack([c, np.full(len(c), obstacle_height)])
        d, _, _ = geometry.capsule_capsule(p0, p1, rad[None, :], a[:, None, :], b[:, None, :], r[:, None])
        best = min(best, float(d.min()))
    return best
