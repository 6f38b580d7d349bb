"""Elastic band: a chain of overlapping free-space bubbles deformed by artificial forces.

A bubble around configuration q with clearance d contains every q' whose
displacement measure (swept radius times angle for revolute joints plus the
Euclidean length of the translational part) is below d. Moving joints one at
a time from the root outwards shows no robot point travels farther than that
measure, so every configuration in a bubble is collision-free.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .collision_world import SpeedConfig, WorldSnapshot, link_distances_batch
from .errors import InvalidArgument
from .kinematics import REVOLUTE, TRANS_X, RobotModel, _joint_frames, bubble_measure, link_transforms_batch, swept_radii

PROCEED = "proceed"
SLOW = "slow"
STOP = "stop"


@dataclass(frozen=True)
class BandConfig:
    lambda_int: float = 1.0
    lambda_obst: float = 2.0
    d_max: float = 1.0
    probe: float = 1e-2
    d_cap: float = 2.0
    # upper bound on the step factor; the bubble rule may shrink it further
    gain: float = 0.1
    max_depth: int = 8
    max_bubbles: int = 400
    # recompute true distances at every probe instead of moving the stored nearest points
    per_probe_distance: bool = False

    def __post_init__(self):
        if self.d_max <= 0 or self.probe <= 0 or self.d_cap <= 0 or self.gain <= 0:
            raise InvalidArgument("d_max, probe, d_cap and gain must be positive")
        if self.lambda_int < 0 or self.lambda_obst < 0:
            raise InvalidArgument("force weights must be non-negative")
        if self.max_depth < 0 or self.max_bubbles < 2:
            raise InvalidArgument("max_depth must be >= 0 and max_bubbles >= 2")


@dataclass(frozen=True, eq=False)
class Bubble:
    """Free-space certificate around ``q``.

    ``link_d``, ``x`` and ``o`` hold the per-link distance and nearest robot
    and obstacle points of the query that produced ``d``; ``radii`` are the
    swept radii at ``q`` and ``Ts`` the link transforms.
    """

    q: np.ndarray
    d: float
    radii: np.ndarray
    link_d: np.ndarray
    x: np.ndarray
    o: np.ndarray
    Ts: np.ndarray

    @property
    def valid(self) -> bool:
        return self.d > 0


def make_bubbles(model: RobotModel, Q, world: WorldSnapshot, d_cap=2.0) -> list:
    """Bubbles for every row of ``Q`` from one batched distance query."""
    robot = world.robot_model(model)
    Q = np.atleast_2d(np.asarray(Q, float))
    Ts = link_transforms_batch(robot, Q)
    ld, x, o = link_distances_batch(robot, Q, world)
    out = []
    for b in range(len(Q)):
        d = float(np.min(ld[b], initial=math.inf))
        d = min(max(d, 0.0), d_cap)
        out.append(Bubble(Q[b].copy(), d, swept_radii(robot, Q[b], Ts[b]), ld[b], x[b], o[b], Ts[b]))
    return out


def make_bubble(model: RobotModel, q, world: WorldSnapshot, d_cap=2.0) -> Bubble:
    """Bubble at ``q``; a configuration in collision gets ``d = 0`` (an empty bubble)."""
    return make_bubbles(model, np.asarray(q, float)[None], world, d_cap)[0]


def bubble_contains(b: Bubble, q, model: RobotModel) -> bool:
    return bool(bubble_measure(np.asarray(q, float) - b.q, b.radii, model.revolute_mask) < b.d)


def overlap_candidate(b1: Bubble, b2: Bubble):
    s = b1.d + b2.d
    if s <= 0:
        return None
    return (b2.d * b1.q + b1.d * b2.q) / s


def bubbles_overlap(b1: Bubble, b2: Bubble, model: RobotModel) -> bool:
    """Conservative overlap test through the clearance-weighted point on the connecting segment.

    Both bubbles are convex, so a positive answer also certifies the whole
    straight segment between the two centres.
    """
    qc = overlap_candidate(b1, b2)
    return qc is not None and bubble_contains(b1, qc, model) and bubble_contains(b2, qc, model)


@dataclass(frozen=True)
class ElasticBand:
    bubbles: tuple
    weights: np.ndarray
    config: BandConfig = field(default_factory=BandConfig)
    lock_start: bool = True
    lock_end: bool = True
    # index of the first bubble that is empty or does not overlap its predecessor
    blockage: Optional[int] = None

    def __len__(self):
        return len(self.bubbles)

    @property
    def configs(self) -> np.ndarray:
        return np.array([b.q for b in self.bubbles])

    @property
    def clearances(self) -> np.ndarray:
        return np.array([b.d for b in self.bubbles])

    def min_clearance(self) -> float:
        return float(self.clearances.min())

    @classmethod
    def from_path(cls, configs, model, world, weights=None, config: BandConfig = None, **kw) -> "ElasticBand":
        config = config or BandConfig()
        configs = np.atleast_2d(np.asarray(configs, float))
        w = np.ones(configs.shape[1]) if weights is None else np.asarray(weights, float)
        band = cls(tuple(make_bubbles(model, configs, world, config.d_cap)), w, config, **kw)
        return maintain(band, model, world, refresh=False)


def _bridge(a: Bubble, b: Bubble, model, world, cfg, depth):
    """Bubbles to insert between ``a`` and ``b``; None if a midpoint is blocked or depth runs out."""
    if bubbles_overlap(a, b, model):
        return []
    if depth == 0 or not (a.valid and b.valid):
        return None
    m = make_bubble(model, 0.5 * (a.q + b.q), world, cfg.d_cap)
    if not m.valid:
        return None
    left = _bridge(a, m, model, world, cfg, depth - 1)
    if left is None:
        return None
    right = _bridge(m, b, model, world, cfg, depth - 1)
    if right is None:
        return None
    return left + [m] + right


def maintain(band: ElasticBand, model: RobotModel, world: WorldSnapshot, refresh=True) -> ElasticBand:
    """Refresh bubbles, drop redundant ones, bridge gaps with midpoint bubbles.

    Interior bubble i goes when its neighbours overlap; a failed overlap gets
    midpoint bubbles recursively up to ``max_depth``. Where that is not
    possible (a midpoint in collision, an empty bubble, depth or size limit)
    the band keeps the gap and ``blockage`` names its first index. End
    configurations are never changed.
    """
    cfg = band.config
    bubbles = list(band.bubbles)
    if refresh:
        bubbles = make_bubbles(model, band.configs, world, cfg.d_cap)
    i = 1
    while i < len(bubbles) - 1:
        if bubbles_overlap(bubbles[i - 1], bubbles[i + 1], model):
            del bubbles[i]
        else:
            i += 1
    out = [bubbles[0]]
    for nxt in bubbles[1:]:
        room = cfg.max_bubbles - len(out) - 1
        fill = _bridge(out[-1], nxt, model, world, cfg, cfg.max_depth)
        if fill is not None and len(fill) <= room:
            out.extend(fill)
        out.append(nxt)
    blockage = None
    for k, b in enumerate(out):
        if not b.valid or (k > 0 and not bubbles_overlap(out[k - 1], b, model)):
            blockage = k
            break
    return replace(band, bubbles=tuple(out), blockage=blockage)


def _unit(v, w):
    n = math.sqrt(float(np.sum((w * v) ** 2)))
    return v / n if n > 0 else np.zeros_like(v)


def internal_force(band: ElasticBand, i: int) -> np.ndarray:
    """Sum of unit vectors (weighted metric) towards both neighbours; a coincident neighbour adds nothing."""
    q = band.configs
    F = np.zeros(q.shape[1])
    if i > 0:
        F += _unit(q[i - 1] - q[i], band.weights)
    if i < len(q) - 1:
        F += _unit(q[i + 1] - q[i], band.weights)
    return F


def scaling_factor(d, d_max) -> float:
    """Repulsion scale: 1 at contact, falling quadratically to 0 at ``d_max``."""
    if d >= d_max:
        return 0.0
    return ((d_max - d) / d_max) ** 2


def _distal_nearest(bubble: Bubble, joint: int):
    """Index of the nearest link moved by ``joint`` (None if none has a finite distance)."""
    ld = bubble.link_d[joint:]
    if not np.any(np.isfinite(ld)):
        return None
    return joint + int(np.argmin(ld))


def obstacle_force(model: RobotModel, bubble: Bubble, probe=1e-2, d_max=1.0, world: WorldSnapshot = None, per_probe_distance=False):
    """Repulsive force in configuration space.

    Each joint acts on the nearest link it moves. Translational components
    are the scaled offset from obstacle point to robot point along the joint
    axis. A revolute component is the scaled central difference of the
    distance from the moved robot point (fixed in its link) to the fixed
    obstacle point, so one distance query per bubble suffices. With
    ``per_probe_distance`` the true distance is recomputed at every probe
    instead, which needs ``world``.
    """
    if probe <= 0:
        raise InvalidArgument("probe step must be positive")
    F = np.zeros(model.dof)
    s = scaling_factor(bubble.d, d_max)
    if s == 0.0:
        return F
    robot = model if world is None else world.robot_model(model)
    frames = _joint_frames(robot, bubble.Ts)
    rev = [(c, i) for c, i in enumerate(robot.active) if robot.joints[i].kind == REVOLUTE]
    for c, i in enumerate(robot.active):
        if robot.joints[i].kind == REVOLUTE:
            continue
        k = _distal_nearest(bubble, i)
        if k is None:
            continue
        axis = frames[i][:3, 0] if robot.joints[i].kind == TRANS_X else frames[i][:3, 1]
        F[c] = s * float(np.dot(bubble.x[k] - bubble.o[k], axis))
    if not rev:
        return F
    Q = np.repeat(bubble.q[None], 2 * len(rev), axis=0)
    for n, (c, _) in enumerate(rev):
        Q[2 * n, c] += probe
        Q[2 * n + 1, c] -= probe
    if per_probe_distance:
        if world is None:
            raise InvalidArgument("per-probe distances need the world snapshot")
        ld, _, _ = link_distances_batch(robot, Q, world)
        for n, (c, i) in enumerate(rev):
            if np.isfinite(bubble.link_d[i:]).any():
                F[c] = s * (ld[2 * n, i:].min() - ld[2 * n + 1, i:].min()) / (2 * probe)
        return F
    Tp = link_transforms_batch(robot, Q)
    for n, (c, i) in enumerate(rev):
        k = _distal_nearest(bubble, i)
        if k is None:
            continue
        local = np.linalg.solve(bubble.Ts[k], np.append(bubble.x[k], 1.0))
        xp = (Tp[2 * n, k] @ local)[:3]
        xm = (Tp[2 * n + 1, k] @ local)[:3]
        o = bubble.o[k]
        F[c] = s * (np.linalg.norm(xp - o) - np.linalg.norm(xm - o)) / (2 * probe)
    return F


def band_force(band: ElasticBand, i: int, model: RobotModel, world: WorldSnapshot = None) -> np.ndarray:
    """Weighted force sum at bubble ``i`` with the component along the band removed."""
    cfg = band.config
    b = band.bubbles[i]
    F = cfg.lambda_int * internal_force(band, i)
    F = F + cfg.lambda_obst * obstacle_force(model, b, cfg.probe, cfg.d_max, world, cfg.per_probe_distance)
    q = band.configs
    t = q[min(i + 1, len(q) - 1)] - q[max(i - 1, 0)]
    w2 = band.weights**2
    tt = float(np.sum(w2 * t * t))
    if tt > 0:
        F = F - (float(np.sum(w2 * F * t)) / tt) * t
    return F


def displaced_configs(band: ElasticBand, model: RobotModel, world: WorldSnapshot) -> np.ndarray:
    """Configurations after one force step, before bubbles are rebuilt.

    Every movable bubble moves by ``eps * F`` with ``eps = min(gain, d / (2
    rho(F)))``, where rho is the bubble displacement measure, so the new
    configuration lies strictly inside the old bubble. Empty bubbles and
    locked ends stay put.
    """
    cfg = band.config
    robot = world.robot_model(model)
    Q = band.configs.copy()
    n = len(Q)
    for i, b in enumerate(band.bubbles):
        if (i == 0 and band.lock_start) or (i == n - 1 and band.lock_end) or not b.valid:
            continue
        F = band_force(band, i, model, world)
        rho = float(bubble_measure(F, b.radii, robot.revolute_mask))
        if rho == 0.0:
            continue
        eps = min(cfg.gain, 0.5 * b.d / rho)
        Q[i] = model.clamp(b.q + eps * F)
    return Q


def step(band: ElasticBand, model: RobotModel, world: WorldSnapshot) -> ElasticBand:
    """One deformation step (see :func:`displaced_configs`) followed by maintenance."""
    Q = displaced_configs(band, model, world)
    moved = replace(band, bubbles=tuple(make_bubbles(model, Q, world, band.config.d_cap)))
    return maintain(moved, model, world, refresh=False)


def check_execution(band: ElasticBand, progress: int = 0, window: int = 3, speed: SpeedConfig = SpeedConfig()) -> str:
    """Executor status for the ``window`` bubbles ahead of bubble ``progress``.

    ``stop`` for a blockage or clearance at or below ``d_stop`` in the
    window, ``proceed`` when all clearance there is at least ``d_slow``,
    ``slow`` in between.
    """
    if not 0 <= progress < len(band):
        raise InvalidArgument("progress index outside the band")
    hi = min(len(band) - 1, progress + window)
    if band.blockage is not None and progress <= band.blockage <= hi:
        return STOP
    d = float(band.clearances[progress : hi + 1].min())
    if d <= speed.d_stop:
        return STOP
    if d >= speed.d_slow:
        return PROCEED
    return SLOW


__all__ = [
    "PROCEED",
    "SLOW",
    "STOP",
    "BandConfig",
    "Bubble",
    "ElasticBand",
    "band_force",
    "bubble_contains",
    "bubbles_overlap",
    "check_execution",
    "displaced_configs",
    "internal_force",
    "maintain",
    "make_bubble",
    "make_bubbles",
    "obstacle_force",
    "overlap_candidate",
    "scaling_factor",
    "step",
]
