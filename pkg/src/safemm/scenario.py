"""Scenario files: robot, sensors, obstacles, scripted people and the task list (JSON)."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import robots
from .collision_world import DYNAMIC, STATIC, Obstacle, SpeedConfig
from .elastic_band import BandConfig
from .errors import ConfigError, InvalidArgument
from .kinematics import RobotModel, load_model, rotation_about, transform
from .planner_rrt import PlannerConfig
from .sensor_sim import DEPTH, DepthSensorSpec
from .tracking import TrackingConfig

BUILTIN_ROBOTS = {
    "mobile_manipulator": robots.mobile_manipulator,
    "planar_base_arm": robots.planar_base_arm,
}
TASK_KINDS = ("pick", "place", "handover", "goto")


@dataclass(frozen=True)
class HumanScript:
    """A person walking a piecewise-linear route ``(t, x, y)``, modelled as a vertical capsule."""

    id: str
    waypoints: np.ndarray
    radius: float = 0.25
    height: float = 1.8
    remove_at: Optional[float] = None

    def present(self, t) -> bool:
        return self.remove_at is None or t < self.remove_at

    def position(self, t):
        w = self.waypoints
        return np.array([np.interp(t, w[:, 0], w[:, 1]), np.interp(t, w[:, 0], w[:, 2])])

    def obstacle(self, t) -> Obstacle:
        x, y = self.position(t)
        r = self.radius
        return Obstacle.capsule(self.id, (x, y, r), (x, y, self.height - r), r, DYNAMIC)


@dataclass(frozen=True)
class TaskSpec:
    kind: str
    object: Optional[str] = None
    position: Optional[np.ndarray] = None
    yaw: float = 0.0


@dataclass(frozen=True)
class SimConfig:
    tick: float = 0.05
    duration: float = 60.0
    nominal_speed: float = 0.5  # weighted configuration-space units per second
    fine_speed: float = 0.1  # metres per second for straight approach and lift motions
    speed: SpeedConfig = field(default_factory=lambda: SpeedConfig(0.1, 0.6))
    # a tight cap keeps the per-tick band update cheap when it presses against an obstacle
    band: BandConfig = field(default_factory=lambda: BandConfig(max_depth=6, max_bubbles=80))
    planner: PlannerConfig = field(
        default_factory=lambda: PlannerConfig(
            max_iterations=400, time_budget=1e9, step=0.5, trigger=1.0, goal_bias=0.3, resolution=0.05
        )
    )
    # "single", "two-stage", or "fallback" (single-stage first, two-stage if it fails)
    planner_mode: str = "fallback"
    tracking: TrackingConfig = field(default_factory=TrackingConfig)
    octree_size: float = 4.0
    octree_depth: int = 5
    octree_z: float = 1.0
    perception_period: int = 2
    prediction_horizon: float = 1.5
    stop_window: int = 3
    replan_after: float = 2.0
    stop_timeout: float = 15.0
    approach_height: float = 0.3
    lift_height: float = 0.25
    retreat_distance: float = 0.3  # platform back-off after a handover
    grasp_depth: float = 0.03  # fingertips this far below the top of the part
    max_aperture: float = 0.08
    finger_clearance: float = 0.01
    filter_margin: float = 0.05
    floor: float = 0.05
    ceiling: float = 2.2
    smoothing_budget: int = 60

    def __post_init__(self):
        if self.tick <= 0 or self.duration <= 0 or self.nominal_speed <= 0 or self.fine_speed <= 0:
            raise InvalidArgument("tick, duration and speeds must be positive")
        if self.planner_mode not in ("single", "two-stage", "fallback"):
            raise InvalidArgument(f"unknown planner mode {self.planner_mode!r}")
        if self.perception_period < 1 or self.stop_window < 0:
            raise InvalidArgument("perception period must be >= 1 and stop window >= 0")


@dataclass
class Scenario:
    name: str
    model: RobotModel
    robot: str
    start: np.ndarray
    sensors: list
    static: list
    objects: list
    humans: list
    tasks: list
    config: SimConfig
    seed: int = 0
    workspace_lo: np.ndarray = field(default_factory=lambda: np.array([-5.0, -5.0]))
    workspace_hi: np.ndarray = field(default_factory=lambda: np.array([5.0, 5.0]))
    hand_camera: Optional[DepthSensorSpec] = None
    approx: dict = field(default_factory=dict)
    support: dict = field(default_factory=dict)
    source: Optional[Path] = None

    @property
    def ticks(self) -> int:
        return int(math.floor(self.config.duration / self.config.tick + 1e-9))


def _vec(d, key, n=None, default=None):
    if key not in d:
        if default is None:
            raise ConfigError(f"missing field {key!r}")
        return np.asarray(default, float)
    try:
        v = np.asarray(d[key], float)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"field {key!r} must be numeric") from e
    if n is not None and v.shape != (n,):
        raise ConfigError(f"field {key!r} needs {n} numbers")
    if not np.all(np.isfinite(v)):
        raise ConfigError(f"field {key!r} must be finite")
    return v


def _rotation_rpy(rpy_deg):
    r, p, y = np.radians(rpy_deg)
    return rotation_about((0, 0, 1), y) @ rotation_about((0, 1, 0), p) @ rotation_about((1, 0, 0), r)


def _sensor(d) -> DepthSensorSpec:
    try:
        pose = transform(_vec(d, "position", 3), _rotation_rpy(_vec(d, "rpy_deg", 3, (0, 0, 0))))
        return DepthSensorSpec(
            str(d["id"]),
            pose,
            math.radians(float(d.get("h_fov_deg", 90))),
            math.radians(float(d.get("v_fov_deg", 60))),
            int(d.get("h_rays", 32)),
            int(d.get("v_rays", 24)),
            float(d.get("max_range", 4.0)),
            float(d.get("noise_sigma", 0.0)),
            d.get("kind", DEPTH),
            d.get("link"),
        )
    except KeyError as e:
        raise ConfigError(f"sensor is missing field {e}") from e
    except InvalidArgument as e:
        raise ConfigError(f"invalid sensor: {e}") from e


def _obstacle(d, klass=STATIC) -> Obstacle:
    kind = d.get("type")
    oid = d.get("id")
    if oid is None:
        raise ConfigError("obstacle without id")
    try:
        if kind == "box":
            return Obstacle.box(str(oid), _vec(d, "lo", 3), _vec(d, "hi", 3), klass)
        if kind == "sphere":
            return Obstacle.sphere(str(oid), _vec(d, "center", 3), float(d["radius"]), klass)
        if kind == "capsule":
            return Obstacle.capsule(str(oid), _vec(d, "p0", 3), _vec(d, "p1", 3), float(d["radius"]), klass)
    except (InvalidArgument, KeyError) as e:
        raise ConfigError(f"obstacle {oid!r}: {e}") from e
    raise ConfigError(f"obstacle {oid!r} has unknown type {kind!r}")


def _human(d) -> HumanScript:
    w = np.asarray(d.get("waypoints", []), float)
    if w.ndim != 2 or w.shape[1] != 3 or len(w) < 1:
        raise ConfigError(f"human {d.get('id')!r} needs waypoints [[t, x, y], ...]")
    if np.any(np.diff(w[:, 0]) <= 0):
        raise ConfigError(f"human {d.get('id')!r}: waypoint times must be strictly increasing")
    r, h = float(d.get("radius", 0.25)), float(d.get("height", 1.8))
    if r <= 0 or h <= 2 * r:
        raise ConfigError("human radius must be positive and height above two radii")
    rm = d.get("remove_at")
    return HumanScript(str(d["id"]), w, r, h, None if rm is None else float(rm))


def _task(d) -> TaskSpec:
    kind = d.get("type")
    if kind not in TASK_KINDS:
        raise ConfigError(f"unknown task type {kind!r}")
    if kind == "pick":
        if "object" not in d:
            raise ConfigError("pick task needs an object")
        return TaskSpec(kind, object=str(d["object"]))
    return TaskSpec(kind, position=_vec(d, "position", 3), yaw=math.radians(float(d.get("yaw_deg", 0.0))))


def _merge(cls, base, overrides, name):
    if not overrides:
        return base
    known = {f.name for f in fields(cls)}
    bad = set(overrides) - known
    if bad:
        raise ConfigError(f"unknown {name} settings: {sorted(bad)}")
    vals = {k: tuple(v) if isinstance(v, list) else v for k, v in overrides.items()}
    try:
        return replace(base, **vals)
    except (InvalidArgument, TypeError, ValueError) as e:
        raise ConfigError(f"invalid {name} settings: {e}") from e


def _config(d) -> SimConfig:
    d = dict(d or {})
    base = SimConfig()
    nested = {
        "speed": (SpeedConfig, base.speed),
        "band": (BandConfig, base.band),
        "planner": (PlannerConfig, base.planner),
        "tracking": (TrackingConfig, base.tracking),
    }
    vals = {}
    for key, (cls, default) in nested.items():
        vals[key] = _merge(cls, default, d.pop(key, None), key)
    cfg = replace(base, **vals)
    return _merge(SimConfig, cfg, d, "simulation")


def scenario_from_dict(data: dict, base_dir: Optional[Path] = None, seed: Optional[int] = None) -> Scenario:
    """Validate and build a :class:`Scenario`; every problem raises :class:`ConfigError`."""
    if not isinstance(data, dict):
        raise ConfigError("scenario must be a JSON object")
    base_dir = Path(base_dir or ".")
    robot = data.get("robot", "mobile_manipulator")
    if robot in BUILTIN_ROBOTS:
        model = BUILTIN_ROBOTS[robot]()
    else:
        path = base_dir / str(robot)
        if not path.is_file():
            raise ConfigError(f"robot model {robot!r} is neither built in nor a readable file")
        try:
            model = load_model(path)
        except (ValueError, KeyError, InvalidArgument) as e:
            raise ConfigError(f"robot model {robot!r}: {e}") from e
    cfg_data = dict(data.get("config", {}))
    for key in ("tick", "duration"):
        if key in data:
            cfg_data[key] = data[key]
    cfg = _config(cfg_data)
    start = _vec(data, "start", model.dof, np.zeros(model.dof))
    if not model.within_limits(start):
        raise ConfigError("start configuration violates joint limits")
    statics = [_obstacle(o) for o in data.get("static_obstacles", [])]
    objects, approx, support = [], {}, {}
    for o in data.get("objects", []):
        ob = _obstacle(o)
        objects.append(ob)
        approx[ob.id] = _vec(o, "approx", 3, ob.center)
        if "support" in o:
            support[ob.id] = str(o["support"])
    humans = [_human(h) for h in data.get("humans", [])]
    ids = [o.id for o in statics + objects] + [h.id for h in humans]
    if len(set(ids)) != len(ids):
        raise ConfigError("obstacle, object and human ids must be unique")
    for oid, sup in support.items():
        if sup not in ids:
            raise ConfigError(f"object {oid!r} rests on unknown support {sup!r}")
    tasks = [_task(t) for t in data.get("tasks", [])]
    for t in tasks:
        if t.kind == "pick" and t.object not in approx:
            raise ConfigError(f"pick task refers to unknown object {t.object!r}")
    sensors = [_sensor(s) for s in data.get("sensors", [])]
    for s in sensors:
        if s.link is not None and not 0 <= s.link < len(model.joints):
            raise ConfigError(f"sensor {s.id!r} is mounted on a missing link")
    hand = data.get("hand_camera")
    hand_spec = None
    if hand is not None:
        hand = dict(hand)
        hand.setdefault("id", "hand")
        hand_spec = _sensor(hand)
    ws = data.get("workspace", {})
    lo = _vec(ws, "lo", 2, (-5.0, -5.0))
    hi = _vec(ws, "hi", 2, (5.0, 5.0))
    if np.any(hi <= lo):
        raise ConfigError("workspace hi must exceed lo")
    return Scenario(
        name=str(data.get("name", "scenario")),
        model=model,
        robot=str(robot),
        start=start,
        sensors=sensors,
        static=statics,
        objects=objects,
        humans=humans,
        tasks=tasks,
        config=cfg,
        seed=int(data.get("seed", 0) if seed is None else seed),
        workspace_lo=lo,
        workspace_hi=hi,
        hand_camera=hand_spec,
        approx=approx,
        support=support,
        source=None,
    )


def load_scenario(path, seed: Optional[int] = None) -> Scenario:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except OSError as e:
        raise ConfigError(f"cannot read scenario {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"scenario {path} is not valid JSON: {e}") from e
    sc = scenario_from_dict(data, path.parent, seed)
    sc.source = path
    return sc
