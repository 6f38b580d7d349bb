"""Closed-loop simulation: sense, fuse, track, adapt the band, scale speed, move, run tasks.

Every tick renders the platform sensors against the true world, removes
points on the robot and on mapped obstacles, fuses the rest into an octree
window around the robot and tracks it on a ground grid. The active task is
a flat state machine (idle -> plan -> move -> act -> done / failed); moves
follow an elastic band, and the short approach and lift motions of picking
and placing are straight tool-frame lines.
"""
from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .collision_world import (
    ATTACHED,
    DYNAMIC,
    HANDLED,
    STATIC,
    BOX,
    CAPSULE,
    SpeedConfig,
    WorldSnapshot,
    attach_object,
    attached_position,
    compute_speed_scale,
    mark_object,
    min_distance,
    predicted_min_distance,
    release_object,
)
from .elastic_band import STOP, ElasticBand, check_execution, maintain, make_bubble, step
from .errors import (
    DegenerateCluster,
    InsufficientData,
    InvalidArgument,
    InvalidStart,
    PlanningFailure,
    Ungraspable,
)
from .grasp_perception import perceive, select_grasp
from .kinematics import (
    TRANS_X,
    TRANS_Y,
    Pose,
    cartesian_distance,
    end_effector_transform,
    link_transforms,
    rotation_about,
    transform,
)
from .octree_fusion import OctreeSpec, fuse, obstacle_cells, preprocess_sensor
from .path_smoothing import smooth
from .paths import Path, SegmentChecker, default_weights, weighted_distance
from .planner_rrt import interpolate_pose, plan, plan_two_stage, solve_ik
from .scenario import Scenario, TaskSpec
from .sensor_sim import OBSTACLE, filter_robot_points, render_depth
from .tracking import Grid25D, Tracker, cluster, insert_points

IDLE, PLAN, MOVE, ACT, DONE, FAILED = "idle", "plan", "move", "act", "done", "failed"
MOVING_STATES = (MOVE, ACT)
EXIT_OK, EXIT_TASK_FAILED, EXIT_CONFIG = 0, 2, 3

TOOL_DOWN = np.array([[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]])
# camera +x (its viewing axis) onto tool +z
_CAMERA_TO_TOOL = transform(rotation=rotation_about((0, 1, 0), -math.pi / 2))


def trace_header(dof: int) -> list:
    return (
        ["tick", "time"]
        + [f"q{i}" for i in range(dof)]
        + [
            "speed_scale",
            "min_distance",
            "predicted_min_distance",
            "human_distance",
            "band_status",
            "band_bubbles",
            "band_min_d",
            "task",
            "task_state",
            "tracks",
            "obstacles",
            "band_xy",
            "event",
        ]
    )


def _f(x) -> str:
    return format(float(x), ".9g")


@dataclass
class TraceRecord:
    tick: int
    time: float
    q: np.ndarray
    speed_scale: float
    min_distance: float
    predicted_min_distance: float
    human_distance: float
    band_status: str
    band_bubbles: int
    band_min_d: float
    task: int
    task_state: str
    tracks: str = ""
    obstacles: str = ""
    band_xy: str = ""
    event: str = ""

    def row(self) -> list:
        return (
            [str(self.tick), _f(self.time)]
            + [_f(v) for v in self.q]
            + [
                _f(self.speed_scale),
                _f(self.min_distance),
                _f(self.predicted_min_distance),
                _f(self.human_distance),
                self.band_status,
                str(self.band_bubbles),
                _f(self.band_min_d),
                str(self.task),
                self.task_state,
                self.tracks,
                self.obstacles,
                self.band_xy,
                self.event,
            ]
        )


def tool_down(yaw: float) -> np.ndarray:
    """Tool rotation pointing straight down, closing direction at ``yaw`` about the vertical."""
    return rotation_about((0, 0, 1), yaw) @ TOOL_DOWN


def cartesian_line(model, q, target: Pose, cfg, spacing=0.01, tol=2e-3):
    """Configurations following the straight tool-frame line to ``target``, or None if IK loses it."""
    start = Pose.from_matrix(end_effector_transform(model, q))
    n = max(1, int(math.ceil(cartesian_distance(start, target, cfg.w_rot) / spacing)))
    out = [np.asarray(q, float)]
    for k in range(1, n + 1):
        goal = interpolate_pose(start, target, k / n)
        qk, err = solve_ik(model, out[-1], goal, cfg, iterations=cfg.ik_iterations, tol=tol * 0.5)
        if err > tol:
            return None
        out.append(qk)
    return np.array(out)


def _advance(configs, lengths, s):
    """Point at arc length ``s`` along a polyline: (q, index of the segment it lies on)."""
    cum = np.concatenate([[0.0], np.cumsum(lengths)])
    if s >= cum[-1]:
        return configs[-1].copy(), len(configs) - 1
    k = int(np.searchsorted(cum, s, side="right")) - 1
    a = (s - cum[k]) / lengths[k] if lengths[k] > 0 else 0.0
    return configs[k] + a * (configs[k + 1] - configs[k]), k


@dataclass
class _Fine:
    configs: np.ndarray
    lengths: np.ndarray
    s: float = 0.0
    label: str = "fine"
    exclude: tuple = ()

    @property
    def total(self):
        return float(self.lengths.sum())


@dataclass
class TaskRun:
    spec: TaskSpec
    state: str = IDLE
    phases: list = field(default_factory=list)
    phase: int = 0
    reason: str = ""


@dataclass
class RunResult:
    exit_code: int
    records: list
    tasks: list
    wall_time: float
    scenario: str = ""

    def metrics(self) -> dict:
        return compute_metrics(self.records)


class Simulator:
    """Owns all mutable simulation state; :meth:`tick` advances it by one period."""

    def __init__(self, scenario: Scenario):
        self.sc = sc = scenario
        self.cfg = sc.config
        self.model = sc.model
        self.weights = default_weights(self.model)
        self.ee_link = len(self.model.joints) - 1
        self.q = sc.start.copy()
        self.k = 0
        self.world = WorldSnapshot(tuple(sc.static) + tuple(sc.objects))
        self.boxes = np.zeros((0, 2, 3))
        self.tracker = Tracker(self.cfg.tracking)
        self.tasks = [TaskRun(t) for t in sc.tasks]
        self.current = 0
        self.band: Optional[ElasticBand] = None
        self.fine: Optional[_Fine] = None
        self.goal: Optional[Pose] = None
        self.carrying: Optional[str] = None
        self.grasp_offset = np.zeros(3)
        self.grasp_rotation = TOOL_DOWN.copy()
        self.stopped = 0.0
        self.since_attempt = math.inf
        self.plans = 0
        self.events: list = []
        self.hand = None
        if sc.hand_camera is not None:
            pose = self.model.end_effector @ sc.hand_camera.pose @ _CAMERA_TO_TOOL
            self.hand = replace(sc.hand_camera, pose=pose, link=self.ee_link)
        mob = [j.kind for j in self.model.joints[:2]] == [TRANS_X, TRANS_Y]
        self._base_xy = mob
        self._band_speed = SpeedConfig(0.0, self.cfg.speed.d_slow)
        lo, hi = sc.workspace_lo, sc.workspace_hi
        planner = self.cfg.planner
        if mob and planner.sample_lower is None:
            sl, su = self.model.lower.copy(), self.model.upper.copy()
            sl[:2], su[:2] = np.maximum(sl[:2], lo), np.minimum(su[:2], hi)
            planner = replace(planner, sample_lower=tuple(sl), sample_upper=tuple(su))
        self.planner_cfg = planner

    # ------------------------------------------------------------ worlds

    @property
    def time(self):
        return self.k * self.cfg.tick

    def humans(self, t):
        return [h.obstacle(t) for h in self.sc.humans if h.present(t)]

    def truth(self, t):
        return self.world.with_obstacles(self.world.obstacles + tuple(self.humans(t)))

    def control_world(self, exclude=()):
        w = self.world.with_octree(self.boxes)
        for oid in exclude:
            w = w.removed(oid)
        return w

    def sensed_world(self):
        att = tuple(o for o in self.world.obstacles if o.cls == ATTACHED)
        return WorldSnapshot(att).with_octree(self.boxes)

    def sensed_distance(self, q):
        if len(self.boxes) == 0:
            return math.inf
        return min_distance(self.model, q, self.sensed_world()).d

    def human_distance(self, q, t):
        hs = self.humans(t)
        if not hs:
            return math.inf
        att = tuple(o for o in self.world.obstacles if o.cls == ATTACHED)
        return min_distance(self.model, q, WorldSnapshot(att + tuple(hs))).d

    # ------------------------------------------------------------ perception

    def perceive(self, t):
        cfg, model, q = self.cfg, self.model, self.q
        leaf = cfg.octree_size / 2**cfg.octree_depth
        base = link_transforms(model, q)[0][:3, 3]
        center = (round(base[0] / leaf) * leaf, round(base[1] / leaf) * leaf, cfg.octree_z)
        spec = OctreeSpec(center, cfg.octree_size, cfg.octree_depth)
        truth = self.truth(t)
        known = [o for o in self.world.obstacles if o.cls != ATTACHED]
        grid = Grid25D.covering(self.sc.workspace_lo, self.sc.workspace_hi, cfg.tracking.cell)
        views = []
        for i, s in enumerate(self.sc.sensors):
            cloud = render_depth(truth, model, q, s, seed=(self.sc.seed * 7919 + self.k) * 31 + i)
            cloud = filter_robot_points(cloud, model, q, cfg.filter_margin, self.world, extra=known)
            views.append(preprocess_sensor(cloud, spec, timestamp=t))
            grid = insert_points(grid, cloud.points[cloud.labels == OBSTACLE], cfg.floor, cfg.ceiling, s.id, s.is_3d)
        if views:
            self.boxes = obstacle_cells(fuse(views, t), merge=True)
        self.tracker.step(cluster(grid, t, cfg.tracking.min_points), t)

    # ------------------------------------------------------------ tasks

    def _event(self, msg):
        self.events.append(msg)

    def _fail(self, task: TaskRun, reason):
        task.state, task.reason = FAILED, reason
        self.band = self.fine = self.goal = None
        self._event(f"task-failed:{self.current}:{reason}")
        self.current += 1
        self.stopped, self.since_attempt = 0.0, math.inf

    def _phases(self, spec: TaskSpec):
        if spec.kind == "pick":
            return [("goal", "pregrasp"), ("move",), ("sense",), ("fine", "descend"), ("attach",), ("fine", "lift")]
        if spec.kind == "place":
            return [("goal", "preplace"), ("move",), ("fine", "lower"), ("release",), ("fine", "retreat"), ("settle", STATIC)]
        if spec.kind == "handover":
            return [("goal", "handover"), ("move",), ("release",), ("fine", "retreat"), ("settle", DYNAMIC)]
        return [("goal", "goto"), ("move",)]

    def _carry_target(self, spec: TaskSpec):
        Rz = rotation_about((0, 0, 1), spec.yaw)
        R = Rz @ self.grasp_rotation
        return spec.position + Rz @ self.grasp_offset, R

    def _goal_pose(self, task: TaskRun, which):
        spec, cfg = task.spec, self.cfg
        if which == "pregrasp":
            p = self.sc.approx[spec.object] + np.array([0.0, 0.0, cfg.approach_height])
            return Pose.from_matrix(transform(p, TOOL_DOWN))
        if which == "goto":
            return Pose.from_matrix(transform(spec.position, tool_down(spec.yaw)))
        p, R = self._carry_target(spec)
        if which == "preplace":
            p = p + np.array([0.0, 0.0, cfg.lift_height])
        return Pose.from_matrix(transform(p, R))

    def _supports_below(self, p):
        ids = []
        for o in self.world.obstacles:
            if o.cls == STATIC and o.kind == BOX:
                lo, hi = o.lo, o.hi
                if lo[0] <= p[0] <= hi[0] and lo[1] <= p[1] <= hi[1] and hi[2] <= p[2]:
                    ids.append(o.id)
        return tuple(ids)

    def _fine_target(self, task: TaskRun, label):
        """Target pose and obstacles to ignore for a straight tool motion."""
        T = end_effector_transform(self.model, self.q)
        up = np.array([0.0, 0.0, self.cfg.lift_height])
        if label == "descend":
            return self._grasp_pose, ()
        if label == "lift":
            sup = self.sc.support.get(self._grasped)
            return Pose.from_matrix(transform(T[:3, 3] + up, T[:3, :3])), (sup,) if sup else ()
        if label == "lower":
            p, R = self._carry_target(task.spec)
            return Pose.from_matrix(transform(p, R)), self._supports_below(task.spec.position)
        # retreat after letting go
        return Pose.from_matrix(transform(T[:3, 3] + up, T[:3, :3])), ()

    def _sense_grasp(self, task: TaskRun):
        if self.hand is None:
            raise InsufficientData("no hand camera configured")
        cloud = render_depth(self.truth(self.time), self.model, self.q, self.hand, seed=self.sc.seed * 7919 + self.k)
        pts = cloud.points[cloud.labels == OBSTACLE]
        plane, boxes = perceive(pts, threshold=0.005, min_height=0.01, cluster_radius=0.03, seed=self.sc.seed)
        approx = self.sc.approx[task.spec.object]
        if not boxes:
            raise InsufficientData("no object found on the support")
        box = min(boxes, key=lambda b: float(np.linalg.norm(b.center[:2] - approx[:2])))
        if np.linalg.norm(box.center[:2] - approx[:2]) > 0.15:
            raise InsufficientData("no object near the expected position")
        g = select_grasp(box, self.cfg.max_aperture, self.cfg.finger_clearance)
        R = g.tool_rotation()
        x_now = end_effector_transform(self.model, self.q)[:3, 0]
        if R[:, 0] @ x_now < 0:
            R = R @ rotation_about((0, 0, 1), math.pi)
        lift = max(0.0, 0.5 * box.extents[2] - self.cfg.grasp_depth)
        self._grasp_pose = Pose.from_matrix(transform(g.center + lift * box.normal, R))
        self._event(f"grasp:{task.spec.object}:{g.aperture:.3f}")

    def _fine_configs(self, task: TaskRun, label):
        """Straight motion for a fine phase: (configurations, obstacle ids to ignore) or None."""
        if label == "retreat" and task.spec.kind == "handover" and self._base_xy:
            # back the platform away from the person, keeping the arm still
            tcp = end_effector_transform(self.model, self.q)[:2, 3]
            away = self.q[:2] - tcp
            n = np.linalg.norm(away)
            away = away / n if n > 1e-9 else np.array([-1.0, 0.0])
            q1 = self.q.copy()
            q1[:2] += self.cfg.retreat_distance * away
            steps = max(1, int(math.ceil(self.cfg.retreat_distance / 0.01)))
            return self.q + np.linspace(0.0, 1.0, steps + 1)[:, None] * (q1 - self.q), ()
        target, exclude = self._fine_target(task, label)
        Q = cartesian_line(self.model, self.q, target, self.planner_cfg)
        if Q is None and label == "retreat":
            T = end_effector_transform(self.model, self.q)
            half = Pose.from_matrix(transform(T[:3, 3] + [0.0, 0.0, 0.5 * self.cfg.lift_height], T[:3, :3]))
            Q = cartesian_line(self.model, self.q, half, self.planner_cfg)
        return None if Q is None else (Q, exclude)

    def _start_fine(self, task: TaskRun, label):
        found = self._fine_configs(task, label)
        if found is None:
            raise PlanningFailure(f"no straight {label} motion")
        Q, exclude = found
        world = self.control_world(exclude)
        checker = SegmentChecker(self.model, world, self.planner_cfg.resolution)
        if not checker.path_free(Q):
            raise PlanningFailure(f"{label} motion collides")
        P = np.array([end_effector_transform(self.model, qq)[:3, 3] for qq in Q])
        lengths = np.linalg.norm(np.diff(P, axis=0), axis=1)
        self.fine = _Fine(Q, lengths, 0.0, label, exclude)

    def _plan(self, task: TaskRun):
        cfg = replace(self.planner_cfg, seed=self.sc.seed * 1000 + self.plans)
        self.plans += 1
        world = self.control_world()
        fns = {"single": (plan,), "two-stage": (plan_two_stage,), "fallback": (plan, plan_two_stage)}
        for fn in fns[self.cfg.planner_mode]:
            try:
                res = fn(self.model, world, self.q, self.goal, cfg)
                break
            except PlanningFailure as e:
                err = e
        else:
            raise err
        checker = SegmentChecker(self.model, world, cfg.resolution, cfg.clearance)
        path = smooth(res.path, checker, budget=self.cfg.smoothing_budget, seed=cfg.seed)
        self.band = ElasticBand.from_path(path.configs, self.model, world, self.weights, self.cfg.band)
        self._event(f"plan:{len(path.configs)}:{path.length():.3f}")

    def _run_instant_phases(self, task: TaskRun):
        """Execute phases that take no motion until a moving phase (or the end) is reached."""
        while task.phase < len(task.phases):
            ph = task.phases[task.phase]
            kind = ph[0]
            if kind == "goal":
                if task.spec.kind in ("place", "handover") and self.carrying is None:
                    self._fail(task, "nothing-to-release")
                    return
                self.goal = self._goal_pose(task, ph[1])
                task.state = PLAN
                task.phase += 1
                return
            if kind == "move":
                return
            if kind == "sense":
                try:
                    self._sense_grasp(task)
                except (InsufficientData, DegenerateCluster, Ungraspable) as e:
                    self._fail(task, f"perception:{type(e).__name__}")
                    return
                task.phase += 1
                continue
            if kind == "fine":
                if ph[1] == "descend":
                    self.world = mark_object(self.world, task.spec.object, HANDLED)
                try:
                    self._start_fine(task, ph[1])
                except PlanningFailure as e:
                    self._fail(task, str(e).replace(" ", "-"))
                    return
                task.state = ACT
                return
            if kind == "attach":
                oid = task.spec.object
                T = link_transforms(self.model, self.q)
                self.world = attach_object(self.world, oid, self.ee_link, T[self.ee_link])
                self.carrying, self._grasped = oid, oid
                tcp = end_effector_transform(self.model, self.q)
                self.grasp_offset = tcp[:3, 3] - self.world.get(oid).center
                self.grasp_rotation = tcp[:3, :3].copy()
                self._event(f"attach:{oid}")
                task.phase += 1
                continue
            if kind == "release":
                oid = self.carrying
                pos = attached_position(self.model, self.q, self.world.get(oid))
                self.world = mark_object(release_object(self.world, oid, pos), oid, HANDLED)
                self._released, self.carrying = oid, None
                self._event(f"release:{oid}")
                task.phase += 1
                continue
            if kind == "settle":
                self.world = mark_object(self.world, self._released, ph[1])
                task.phase += 1
                continue
        task.state = DONE
        self._event(f"task-done:{self.current}")
        self.current += 1
        self.band = self.fine = self.goal = None
        self.stopped, self.since_attempt = 0.0, math.inf

    # ------------------------------------------------------------ motion

    def _predicted(self, configs, speed_per_length):
        tracks = self.tracker.moving_tracks()
        if not tracks or len(configs) == 0:
            return math.inf
        configs = np.asarray(configs)
        if len(configs) > 1:
            seg = np.array([weighted_distance(a, b, self.weights) for a, b in zip(configs[:-1], configs[1:])])
            times = np.concatenate([[0.0], np.cumsum(seg)]) / speed_per_length
            keep = np.concatenate([[True], np.diff(times) > 0])
            configs, times = configs[keep], times[keep]
        else:
            times = np.zeros(1)
        return predicted_min_distance(
            self.model, configs, times, tracks, self.cfg.prediction_horizon, 0.1, self.cfg.tracking, 2.0, self.world
        )

    def _commit(self, q_next, scale, world):
        """Move only if the sensed clearance and the control world allow it."""
        d_s = self.sensed_distance(q_next)
        if d_s < self.cfg.speed.d_stop or min_distance(self.model, q_next, world).d <= 0:
            return 0.0
        self.q = q_next
        return scale

    def _move_tick(self, task: TaskRun, out):
        cfg = self.cfg
        world = self.control_world()
        band = self.band
        bubbles = list(band.bubbles)
        bubbles[0] = make_bubble(self.model, self.q, world, cfg.band.d_cap)
        band = replace(band, bubbles=tuple(bubbles))
        band = step(maintain(band, self.model, world), self.model, world)
        self.band = band
        status = check_execution(band, 0, cfg.stop_window, self._band_speed)
        configs = band.configs
        d_now = self.sensed_distance(self.q)
        d_pred = self._predicted(configs, cfg.nominal_speed)
        scale = 0.0 if status == STOP else compute_speed_scale(d_now, d_pred, cfg.speed)
        out.update(status=status, d_pred=d_pred)
        if scale > 0:
            lengths = np.array([weighted_distance(a, b, self.weights) for a, b in zip(configs[:-1], configs[1:])])
            q_next, k = _advance(configs, lengths, scale * cfg.nominal_speed * cfg.tick)
            scale = self._commit(q_next, scale, world)
            if scale > 0:
                first = make_bubble(self.model, self.q, world, cfg.band.d_cap)
                self.band = replace(band, bubbles=(first, *band.bubbles[k + 1 :]))
        if len(self.band.bubbles) == 1 or (
            scale > 0 and weighted_distance(self.q, self.band.bubbles[-1].q, self.weights) < 1e-9
        ):
            self._event("arrived")
            self.band = None
            task.phase += 1
        return scale

    def _fine_tick(self, task: TaskRun, out):
        cfg, f = self.cfg, self.fine
        world = self.control_world(f.exclude)
        Q = f.configs
        d_now = self.sensed_distance(self.q)
        cum = np.concatenate([[0.0], np.cumsum(f.lengths)])
        k = int(np.searchsorted(cum, f.s, side="right")) - 1
        rest = np.concatenate([[self.q], Q[min(k + 1, len(Q) - 1) :]])
        d_pred = self._predicted(rest, cfg.fine_speed * 2.0)
        out.update(status=f.label, d_pred=d_pred)
        scale = compute_speed_scale(d_now, d_pred, cfg.speed)
        if scale > 0:
            s = min(f.total, f.s + scale * cfg.fine_speed * cfg.tick)
            q_next, _ = _advance(Q, f.lengths, s)
            scale = self._commit(q_next, scale, world)
            if scale > 0:
                f.s = s
        if f.s >= f.total:
            self.fine = None
            task.phase += 1
            task.state = ACT
        return scale

    # ------------------------------------------------------------ tick

    def tick(self) -> TraceRecord:
        cfg = self.cfg
        t = self.time
        self.events = []
        if self.k % cfg.perception_period == 0:
            self.perceive(t)
        out = {"status": "none", "d_pred": math.inf}
        scale = 0.0
        task = self.tasks[self.current] if self.current < len(self.tasks) else None
        moving = False
        if task is not None:
            if task.state == IDLE:
                task.phases = self._phases(task.spec)
                self._event(f"task-start:{self.current}:{task.spec.kind}")
                self._run_instant_phases(task)
            elif task.state == ACT and self.fine is None:
                self._run_instant_phases(task)
        task = self.tasks[self.current] if self.current < len(self.tasks) else None
        if task is not None and task.state == PLAN:
            moving = True
            if self.since_attempt >= cfg.replan_after:
                self.since_attempt = 0.0
                out["planned"] = True
                try:
                    self._plan(task)
                    task.state = MOVE
                except (PlanningFailure, InvalidStart) as e:
                    self._event(f"plan-failed:{type(e).__name__}")
        elif task is not None and task.state == MOVE:
            moving = True
            scale = self._move_tick(task, out)
            if self.band is None:
                task.state = ACT
                self._run_instant_phases(task)
            elif scale == 0 and self.since_attempt >= cfg.replan_after and self.stopped >= cfg.replan_after:
                self.since_attempt = 0.0
                self._event("replan")
                try:
                    self._plan(task)
                except (PlanningFailure, InvalidStart) as e:
                    self._event(f"plan-failed:{type(e).__name__}")
        elif task is not None and task.state == ACT and self.fine is not None:
            moving = True
            scale = self._fine_tick(task, out)
            if self.fine is None:
                self._run_instant_phases(task)
        self.since_attempt += cfg.tick
        if moving and scale == 0:
            self.stopped += cfg.tick
            if self.stopped > cfg.stop_timeout and task is not None and task.state not in (DONE, FAILED):
                self._fail(task, "stopped-too-long")
        else:
            self.stopped = 0.0
        self.k += 1
        return self._record(scale, out, task)

    def _record(self, scale, out, task) -> TraceRecord:
        t = self.time
        band = self.band
        d_sensed = self.sensed_distance(self.q)
        idx = min(self.current, len(self.tasks) - 1) if self.tasks else -1
        state = self.tasks[idx].state if idx >= 0 else IDLE
        if self.fine is not None and state == ACT:
            state = f"act-{self.fine.label}"
        if out.get("planned"):
            state = PLAN
        tracks = ";".join(
            f"{o.id}:{_f(o.position[0])}:{_f(o.position[1])}:{_f(o.velocity[0])}:{_f(o.velocity[1])}"
            for o in self.tracker.tracks
        )
        obs = []
        for o in self.truth(t).obstacles:
            if o.cls == ATTACHED:
                p = attached_position(self.model, self.q, o)
                obs.append(f"{o.id}:att:{_f(p[0])}:{_f(p[1])}:{_f(o.half[0])}:{_f(o.half[1])}")
            elif o.kind == BOX:
                obs.append(f"{o.id}:box:{_f(o.center[0])}:{_f(o.center[1])}:{_f(o.half[0])}:{_f(o.half[1])}")
            else:
                kind = "cap" if o.kind == CAPSULE else "sph"
                obs.append(f"{o.id}:{kind}:{_f(o.center[0])}:{_f(o.center[1])}:{_f(o.radius)}:{_f(o.radius)}")
        band_xy = ""
        if band is not None:
            pts = []
            for b in band.bubbles:
                xy = b.q[:2] if self._base_xy else end_effector_transform(self.model, b.q)[:2, 3]
                pts.append(f"{_f(xy[0])}:{_f(xy[1])}")
            band_xy = ";".join(pts)
        return TraceRecord(
            tick=self.k - 1,
            time=t,
            q=self.q.copy(),
            speed_scale=scale,
            min_distance=d_sensed,
            predicted_min_distance=out["d_pred"],
            human_distance=self.human_distance(self.q, t),
            band_status=out["status"],
            band_bubbles=0 if band is None else len(band.bubbles),
            band_min_d=math.inf if band is None else band.min_clearance(),
            task=idx,
            task_state=state,
            tracks=tracks,
            obstacles=";".join(obs),
            band_xy=band_xy,
            event="|".join(self.events),
        )

    @property
    def finished(self):
        return self.current >= len(self.tasks)


def run_scenario(scenario: Scenario, ticks: Optional[int] = None, trace=None, progress=None) -> RunResult:
    """Run until all tasks end or the duration (or ``ticks``) runs out.

    Exit code 0 if every task succeeded, 2 if any failed or did not finish.
    ``trace`` is an open text stream receiving the CSV trace as it is produced.
    """
    sim = Simulator(scenario)
    n = scenario.ticks if ticks is None else int(ticks)
    if n < 0:
        raise InvalidArgument("tick count must be non-negative")
    writer = None
    if trace is not None:
        writer = csv.writer(trace, lineterminator="\n")
        writer.writerow(trace_header(scenario.model.dof))
    records = []
    t0 = time.perf_counter()
    for _ in range(n):
        if sim.finished:
            break
        rec = sim.tick()
        records.append(rec)
        if writer is not None:
            writer.writerow(rec.row())
        if progress is not None:
            progress(rec)
    for i in range(sim.current, len(sim.tasks)):
        if sim.tasks[i].state != DONE:
            sim.tasks[i].state, sim.tasks[i].reason = FAILED, sim.tasks[i].reason or "not-finished"
    ok = all(t.state == DONE for t in sim.tasks)
    return RunResult(EXIT_OK if ok else EXIT_TASK_FAILED, records, sim.tasks, time.perf_counter() - t0, scenario.name)


# ------------------------------------------------------------------ traces


def read_trace(path_or_text) -> list:
    """Rows of a trace file as dicts (strings)."""
    if isinstance(path_or_text, str) and "\n" in path_or_text:
        f = io.StringIO(path_or_text)
        return list(csv.DictReader(f))
    with open(path_or_text, newline="") as f:
        return list(csv.DictReader(f))


def _q_of(row):
    keys = sorted((k for k in row if k.startswith("q") and k[1:].isdigit()), key=lambda k: int(k[1:]))
    return np.array([float(row[k]) for k in keys])


def compute_metrics(rows) -> dict:
    """Path length, makespan, clearances and stop-time fraction of a trace.

    Accepts trace rows (dicts of strings) or :class:`TraceRecord` objects.
    Path length is the summed Euclidean joint-space step between rows;
    the stop fraction counts ticks with zero speed among ticks in which a
    task was moving (transport or fine motion); planning ticks are excluded.
    """
    if rows and isinstance(rows[0], TraceRecord):
        rows = [dict(zip(trace_header(len(r.q)), r.row())) for r in rows]
    if not rows:
        return {"ticks": 0, "makespan": 0.0, "path_length": 0.0, "base_path_length": 0.0,
                "min_clearance": math.inf, "min_motion_clearance": math.inf,
                "min_human_distance": math.inf, "stop_ticks": 0, "stop_fraction": 0.0, "failed_tasks": 0}
    Q = np.array([_q_of(r) for r in rows])
    steps = np.linalg.norm(np.diff(Q, axis=0), axis=1) if len(Q) > 1 else np.zeros(0)
    base = np.linalg.norm(np.diff(Q[:, :2], axis=0), axis=1) if len(Q) > 1 and Q.shape[1] >= 2 else np.zeros(0)
    scale = np.array([float(r["speed_scale"]) for r in rows])
    dmin = np.array([float(r["min_distance"]) for r in rows])
    dh = np.array([float(r["human_distance"]) for r in rows])
    active = np.array([r["task_state"] == MOVE or r["task_state"].startswith("act-") for r in rows])
    moving = scale > 0
    failed = sum(e.startswith("task-failed") for r in rows for e in r["event"].split("|") if e)
    return {
        "ticks": len(rows),
        "makespan": float(rows[-1]["time"]),
        "path_length": float(steps.sum()),
        "base_path_length": float(base.sum()),
        "min_clearance": float(dmin.min()),
        "min_motion_clearance": float(dmin[moving].min()) if moving.any() else math.inf,
        "min_human_distance": float(dh.min()),
        "stop_ticks": int(np.sum(scale[active] == 0)),
        "stop_fraction": float(np.mean(scale[active] == 0)) if active.any() else 0.0,
        "failed_tasks": int(failed),
    }
