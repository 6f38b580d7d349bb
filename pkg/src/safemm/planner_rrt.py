"""RRT planning toward a Cartesian goal pose with Jacobian-based approach attempts.

The single-stage planner grows a tree in configuration space and, from
vertices whose end-effector is already near the goal, follows the straight
Cartesian line to the goal with damped least-squares steps. The two-stage
baseline first fixes one inverse-kinematics solution and then runs a plain
RRT to it.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .collision_world import WorldSnapshot
from .errors import InvalidArgument, InvalidStart, PlanningFailure
from .kinematics import (
    DEFAULT_W_ROT,
    Pose,
    RobotModel,
    cartesian_distance,
    end_effector_transform,
    jacobian,
    rotation_log,
)
from .paths import Path, SegmentChecker, default_weights, weighted_distance


@dataclass(frozen=True)
class PlannerConfig:
    max_iterations: int = 4000
    time_budget: float = 30.0
    step: float = 0.3
    trigger: float = 0.5
    approach_step: float = 0.05
    tolerance: float = 0.01
    weights: Optional[tuple] = None
    seed: int = 0
    goal_bias: float = 0.1
    w_rot: float = DEFAULT_W_ROT
    # damped least squares
    ik_damping: float = 0.05
    ik_max_step: float = 0.2
    ik_iterations: int = 100
    waypoint_iterations: int = 10
    # collision checking: max Cartesian motion between checks (half a 5 cm voxel)
    resolution: float = 0.025
    clearance: float = 0.0
    # optional sampling box overriding the joint limits
    sample_lower: Optional[tuple] = None
    sample_upper: Optional[tuple] = None

    def __post_init__(self):
        pos = (self.max_iterations, self.time_budget, self.step, self.trigger, self.approach_step, self.tolerance)
        if min(pos) <= 0:
            raise InvalidArgument("planner parameters must be positive")
        if not self.tolerance < self.trigger:
            raise InvalidArgument("goal tolerance must be below the approach trigger distance")
        if not 0 <= self.goal_bias <= 1:
            raise InvalidArgument("goal bias must lie in [0, 1]")


@dataclass
class PlanResult:
    path: Path
    stats: dict = field(default_factory=dict)


# ---------------------------------------------------------------- inverse kinematics


def pose_error(T, target: np.ndarray) -> np.ndarray:
    """6-vector (position, rotation vector) from the current frame ``T`` to ``target``."""
    e = np.empty(6)
    e[:3] = target[:3, 3] - T[:3, 3]
    e[3:] = rotation_log(target[:3, :3] @ T[:3, :3].T)
    return e


def ik_step(model: RobotModel, q, p_target: Pose, cfg: PlannerConfig = PlannerConfig(), target_matrix=None):
    """One damped least-squares step on the pose error, clamped to the joint limits."""
    q = np.asarray(q, float)
    target = p_target.matrix() if target_matrix is None else target_matrix
    e = pose_error(end_effector_transform(model, q), target)
    if not np.any(e):
        return q.copy()
    J = jacobian(model, q)
    lam2 = cfg.ik_damping**2
    dq = J.T @ np.linalg.solve(J @ J.T + lam2 * np.eye(6), e)
    big = np.max(np.abs(dq))
    if big > cfg.ik_max_step:
        dq *= cfg.ik_max_step / big
    return model.clamp(q + dq)


def solve_ik(model, q, p_target: Pose, cfg: PlannerConfig = PlannerConfig(), iterations=None, tol=None):
    """Repeated :func:`ik_step` until within ``tol`` of the goal; returns (q, d_C)."""
    iterations = cfg.ik_iterations if iterations is None else iterations
    tol = cfg.tolerance if tol is None else tol
    T = p_target.matrix()
    d = _d_c(model, q, p_target, cfg)
    for _ in range(iterations):
        if d <= tol:
            break
        q = ik_step(model, q, p_target, cfg, T)
        d = _d_c(model, q, p_target, cfg)
    return q, d


def _d_c(model, q, p_goal, cfg):
    return cartesian_distance(Pose.from_matrix(end_effector_transform(model, q)), p_goal, cfg.w_rot)


def interpolate_pose(a: Pose, b: Pose, s: float) -> Pose:
    """Straight line in position, spherical interpolation in orientation."""
    qa, qb = a.orientation, b.orientation
    dot = float(np.dot(qa, qb))
    if dot < 0:
        qb, dot = -qb, -dot
    if dot > 1 - 1e-12:
        q = qa + s * (qb - qa)
    else:
        th = math.acos(dot)
        q = (math.sin((1 - s) * th) * qa + math.sin(s * th) * qb) / math.sin(th)
    return Pose(a.position + s * (b.position - a.position), q)


# ---------------------------------------------------------------------- tree


class Tree:
    """Growable vertex arrays with cached end-effector poses and goal distances."""

    def __init__(self, dof, capacity=1024):
        self.q = np.empty((capacity, dof))
        self.parent = np.empty(capacity, int)
        self.d_goal = np.empty(capacity)
        self.poses: list = []
        self.attempted: set = set()
        self.n = 0

    def add(self, q, parent, pose: Optional[Pose] = None, d_goal=math.inf) -> int:
        if self.n == len(self.q):
            self.q = np.concatenate([self.q, np.empty_like(self.q)])
            self.parent = np.concatenate([self.parent, np.empty_like(self.parent)])
            self.d_goal = np.concatenate([self.d_goal, np.empty_like(self.d_goal)])
        i = self.n
        self.q[i] = q
        self.parent[i] = -1 if parent is None else parent
        self.d_goal[i] = d_goal
        self.poses.append(pose)
        self.n += 1
        return i

    def nearest(self, q, weights) -> int:
        return int(np.argmin(weighted_distance(self.q[: self.n], q, weights)))

    def branch(self, i) -> np.ndarray:
        idx = []
        while i >= 0:
            idx.append(i)
            i = self.parent[i]
        return self.q[idx[::-1]].copy()


class _Context:
    def __init__(self, model, world, cfg: PlannerConfig):
        self.model = model
        self.world = world
        self.cfg = cfg
        self.weights = np.asarray(cfg.weights, float) if cfg.weights is not None else default_weights(model)
        self.checker = SegmentChecker(model, world, cfg.resolution, cfg.clearance)
        self.rng = np.random.default_rng(cfg.seed)
        self.lo = np.asarray(cfg.sample_lower, float) if cfg.sample_lower is not None else model.lower
        self.hi = np.asarray(cfg.sample_upper, float) if cfg.sample_upper is not None else model.upper
        self.stats = {"iterations": 0, "vertices": 0, "approach_attempts": 0, "approach_successes": 0}

    def sample(self):
        return self.rng.uniform(self.lo, self.hi)


def extend(tree: Tree, q_rand, ctx: _Context, p_goal: Optional[Pose] = None) -> Optional[int]:
    """Step from the nearest vertex toward ``q_rand``; returns the new vertex index if the segment is free."""
    i = tree.nearest(q_rand, ctx.weights)
    q_near = tree.q[i]
    dist = float(weighted_distance(q_near, q_rand, ctx.weights))
    if dist < 1e-12:
        return None
    q_new = ctx.model.clamp(q_near + min(1.0, ctx.cfg.step / dist) * (np.asarray(q_rand) - q_near))
    if np.array_equal(q_new, q_near) or not ctx.checker.segment_free(q_near, q_new):
        return None
    pose, d = _pose_and_distance(ctx, q_new, p_goal)
    return tree.add(q_new, i, pose, d)


def _pose_and_distance(ctx, q, p_goal):
    if p_goal is None:
        return None, math.inf
    pose = Pose.from_matrix(end_effector_transform(ctx.model, q))
    return pose, cartesian_distance(pose, p_goal, ctx.cfg.w_rot)


def approach_attempt(tree: Tree, vertex: int, p_goal: Pose, ctx: _Context):
    """Follow the straight Cartesian line from the vertex's end-effector pose to the goal.

    Waypoints are spaced ``approach_step`` apart; each configuration comes
    from a few damped least-squares steps starting at the previous one.
    Every collision-free configuration reached is added to the tree.
    Returns ``(success, last_vertex)``.
    """
    cfg = ctx.cfg
    tree.attempted.add(vertex)
    ctx.stats["approach_attempts"] += 1
    if tree.d_goal[vertex] <= cfg.tolerance:
        ctx.stats["approach_successes"] += 1
        return True, vertex
    start = tree.poses[vertex] or _pose_and_distance(ctx, tree.q[vertex], p_goal)[0]
    span = cartesian_distance(start, p_goal, cfg.w_rot)
    n = max(1, int(math.ceil(span / cfg.approach_step)))
    cur, q = vertex, tree.q[vertex]
    for k in range(1, n + 1):
        way = p_goal if k == n else interpolate_pose(start, p_goal, k / n)
        last = k == n
        q_next, d_way = solve_ik(
            ctx.model, q, way, cfg, cfg.ik_iterations if last else cfg.waypoint_iterations, cfg.tolerance
        )
        if d_way > cfg.tolerance + (0 if last else cfg.approach_step):
            return False, cur  # diverged: keep the partial chain
        if np.array_equal(q_next, q):
            continue
        if not ctx.checker.segment_free(q, q_next):
            return False, cur
        pose, d = _pose_and_distance(ctx, q_next, p_goal)
        cur = tree.add(q_next, cur, pose, d)
        q = q_next
    success = tree.d_goal[cur] <= cfg.tolerance
    ctx.stats["approach_successes"] += int(success)
    return bool(success), cur


def _finish(ctx, tree, start_time, path_configs):
    ctx.stats["vertices"] = tree.n
    ctx.stats["checks"] = ctx.checker.checks
    ctx.stats["time"] = time.perf_counter() - start_time
    return PlanResult(Path(path_configs, ctx.weights), dict(ctx.stats))


def _check_start(ctx, q_start):
    q_start = ctx.model.check(q_start)
    if not ctx.model.within_limits(q_start):
        raise InvalidStart("start configuration violates joint limits")
    if not ctx.checker.config_free(q_start):
        raise InvalidStart("start configuration is in collision")
    return q_start


def plan(model: RobotModel, world: WorldSnapshot, q_start, p_goal: Pose, cfg: PlannerConfig = PlannerConfig()) -> PlanResult:
    """Single-stage planning from a configuration to a Cartesian goal pose.

    Deterministic for a given seed as long as the time budget is not the
    binding limit.
    """
    t0 = time.perf_counter()
    ctx = _Context(model, world, cfg)
    q_start = _check_start(ctx, q_start)
    tree = Tree(model.dof)
    pose, d = _pose_and_distance(ctx, q_start, p_goal)
    root = tree.add(q_start, None, pose, d)
    if d <= cfg.tolerance:
        return _finish(ctx, tree, t0, q_start[None])
    if d < cfg.trigger:
        ok, v = approach_attempt(tree, root, p_goal, ctx)
        if ok:
            return _finish(ctx, tree, t0, tree.branch(v))
    for it in range(cfg.max_iterations):
        ctx.stats["iterations"] = it + 1
        if time.perf_counter() - t0 > cfg.time_budget:
            break
        if ctx.rng.uniform() < cfg.goal_bias:
            q_rand = _goal_sample(tree, p_goal, ctx)
        else:
            q_rand = ctx.sample()
        v = extend(tree, q_rand, ctx, p_goal)
        if v is None or tree.d_goal[v] >= cfg.trigger or v in tree.attempted:
            continue
        ok, last = approach_attempt(tree, v, p_goal, ctx)
        if ok:
            return _finish(ctx, tree, t0, tree.branch(last))
    ctx.stats["vertices"] = tree.n
    ctx.stats["time"] = time.perf_counter() - t0
    ctx.stats["best_goal_distance"] = float(tree.d_goal[: tree.n].min())
    raise PlanningFailure("planning budget exhausted", dict(ctx.stats))


def _goal_sample(tree: Tree, p_goal: Pose, ctx: _Context):
    """Configuration pulled toward the goal pose by a few IK steps.

    Half of the seeds are uniform samples, half are the tree vertex closest to
    the goal (perturbed), which keeps goal-directed samples reachable from the tree.
    """
    if ctx.rng.uniform() < 0.5:
        seed = ctx.sample()
    else:
        best = int(np.argmin(tree.d_goal[: tree.n]))
        seed = ctx.model.clamp(tree.q[best] + ctx.rng.normal(0.0, 0.1, ctx.model.dof))
    q, _ = solve_ik(ctx.model, seed, p_goal, ctx.cfg, iterations=20)
    return q


def sample_goal_configuration(model, world, p_goal: Pose, cfg: PlannerConfig, ctx: Optional[_Context] = None, attempts=200):
    """Random-restart inverse kinematics: first collision-free solution within tolerance."""
    ctx = ctx or _Context(model, world, cfg)
    for _ in range(attempts):
        q, d = solve_ik(model, ctx.sample(), p_goal, cfg)
        if d <= cfg.tolerance and ctx.checker.config_free(q):
            return q
    return None


def plan_to_configuration(model, world, q_start, q_goal, cfg: PlannerConfig = PlannerConfig(), ctx=None, t0=None):
    """Plain RRT between two configurations with goal biasing."""
    t0 = time.perf_counter() if t0 is None else t0
    ctx = ctx or _Context(model, world, cfg)
    q_start = _check_start(ctx, q_start)
    q_goal = np.asarray(q_goal, float)
    tree = Tree(model.dof)
    tree.add(q_start, None)
    for it in range(cfg.max_iterations):
        ctx.stats["iterations"] = it + 1
        if time.perf_counter() - t0 > cfg.time_budget:
            break
        q_rand = q_goal if ctx.rng.uniform() < cfg.goal_bias else ctx.sample()
        v = extend(tree, q_rand, ctx)
        if v is None:
            continue
        if weighted_distance(tree.q[v], q_goal, ctx.weights) <= cfg.step and ctx.checker.segment_free(tree.q[v], q_goal):
            g = v if np.array_equal(tree.q[v], q_goal) else tree.add(q_goal, v)
            return _finish(ctx, tree, t0, tree.branch(g))
    ctx.stats["vertices"] = tree.n
    raise PlanningFailure("planning budget exhausted", dict(ctx.stats))


def plan_two_stage(model, world, q_start, p_goal: Pose, cfg: PlannerConfig = PlannerConfig()) -> PlanResult:
    """Baseline: pick a random collision-free IK solution, then plan to it."""
    t0 = time.perf_counter()
    ctx = _Context(model, world, cfg)
    q_start = _check_start(ctx, q_start)
    if _d_c(model, q_start, p_goal, cfg) <= cfg.tolerance:
        return _finish(ctx, Tree(model.dof), t0, q_start[None])
    q_goal = sample_goal_configuration(model, world, p_goal, cfg, ctx)
    if q_goal is None:
        raise PlanningFailure("no collision-free inverse kinematics solution found", dict(ctx.stats))
    res = plan_to_configuration(model, world, q_start, q_goal, cfg, ctx, t0)
    res.stats["goal_configuration"] = q_goal.tolist()
    return res


def end_pose_error(model, q, p_goal: Pose, w_rot=DEFAULT_W_ROT) -> float:
    return cartesian_distance(Pose.from_matrix(end_effector_transform(model, q)), p_goal, w_rot)


__all__ = [
    "PlannerConfig",
    "PlanResult",
    "Tree",
    "approach_attempt",
    "end_pose_error",
    "extend",
    "ik_step",
    "interpolate_pose",
    "plan",
    "plan_to_configuration",
    "plan_two_stage",
    "pose_error",
    "sample_goal_configuration",
    "solve_ik",
]
