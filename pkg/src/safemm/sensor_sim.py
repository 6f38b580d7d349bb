"""Synthetic depth sensors: ray casting against scene and robot geometry, robot-point filtering."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import geometry
from .collision_world import ATTACHED, BOX, CAPSULE, SPHERE, VOXELS, WorldSnapshot
from .errors import InvalidArgument
from .kinematics import RobotModel, link_transforms, world_shapes

LINESCAN = "2D-linescan"
DEPTH = "3D-depth"

OBSTACLE, ROBOT, MAX_RANGE = 0, 1, 2
CLASS_NAMES = {OBSTACLE: "obstacle", ROBOT: "robot", MAX_RANGE: "max-range"}


@dataclass(frozen=True)
class DepthSensorSpec:
    """Ray-based depth sensor. The sensor looks along its local +x axis; +z is up.

    If ``link`` is set, ``pose`` is relative to that robot link.
    """

    id: str
    pose: np.ndarray = field(default_factory=lambda: np.eye(4))
    h_fov: float = math.radians(90)
    v_fov: float = math.radians(60)
    h_rays: int = 32
    v_rays: int = 24
    max_range: float = 4.0
    noise_sigma: float = 0.0
    kind: str = DEPTH
    link: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "pose", np.asarray(self.pose, float))
        if not 0 < self.h_fov <= 2 * math.pi + 1e-12 or not 0 <= self.v_fov <= 2 * math.pi + 1e-12:
            raise InvalidArgument("field of view must lie in (0, 2*pi]")
        if self.h_rays < 1 or self.v_rays < 1:
            raise InvalidArgument("ray counts must be >= 1")
        if self.noise_sigma < 0 or self.max_range <= 0:
            raise InvalidArgument("noise must be >= 0 and range > 0")
        if self.kind not in (LINESCAN, DEPTH):
            raise InvalidArgument(f"unknown sensor kind {self.kind!r}")
        if self.kind == LINESCAN and self.v_rays != 1:
            raise InvalidArgument("a 2D linescan has exactly one vertical ray")

    @property
    def is_3d(self):
        return self.kind == DEPTH

    def world_pose(self, model=None, q=None):
        if self.link is None:
            return self.pose
        return link_transforms(model, q)[self.link] @ self.pose


def _angles(fov, n):
    if n == 1:
        return np.zeros(1)
    if fov >= 2 * math.pi - 1e-9:
        return np.linspace(-math.pi, math.pi, n, endpoint=False)
    return np.linspace(-fov / 2, fov / 2, n)


def sensor_fov_rays(spec: DepthSensorSpec) -> np.ndarray:
    """Unit ray directions in the sensor frame, azimuth-major, shape (h_rays * v_rays, 3)."""
    az = _angles(spec.h_fov, spec.h_rays)
    el = _angles(spec.v_fov, spec.v_rays)
    A, E = np.meshgrid(az, el, indexing="ij")
    A, E = A.ravel(), E.ravel()
    return np.column_stack([np.cos(E) * np.cos(A), np.cos(E) * np.sin(A), np.sin(E)])


@dataclass(frozen=True)
class PointCloud:
    """One return per ray. ``labels`` are OBSTACLE/ROBOT/MAX_RANGE."""

    origin: np.ndarray
    points: np.ndarray
    labels: np.ndarray
    sensor_id: str = ""
    max_range: float = math.inf

    def measured(self):
        return self.points[self.labels != MAX_RANGE]

    def relabeled(self, labels):
        return PointCloud(self.origin, self.points, np.asarray(labels, int), self.sensor_id, self.max_range)


def _scene_hits(origins, dirs, obstacles):
    t = np.full(len(dirs), np.inf)
    caps0, caps1, crad, lo, hi = [], [], [], [], []
    for o in obstacles:
        if o.cls == ATTACHED:
            continue
        c = np.asarray(o.center)
        if o.kind == SPHERE:
            caps0.append(c), caps1.append(c), crad.append(o.radius)
        elif o.kind == CAPSULE:
            h = np.asarray(o.half)
            caps0.append(c - h), caps1.append(c + h), crad.append(o.radius)
        elif o.kind == BOX:
            lo.append(o.lo), hi.append(o.hi)
        elif o.kind == VOXELS:
            lo.extend(o.boxes[:, 0]), hi.extend(o.boxes[:, 1])
    if caps0:
        t = np.minimum(t, geometry.ray_capsule(origins, dirs, np.array(caps0), np.array(caps1), crad).min(axis=1))
    if lo:
        t = np.minimum(t, geometry.ray_box(origins, dirs, np.array(lo), np.array(hi)).min(axis=1))
    return t


def render_depth(world: WorldSnapshot, model: Optional[RobotModel], q, spec: DepthSensorSpec, seed=0) -> PointCloud:
    """Cast the sensor's rays against the world obstacles and the robot (with attachments).

    Per ray the first hit wins; noise is Gaussian along the ray truncated at
    three sigma and deterministic for a given seed.
    """
    T = spec.world_pose(model, q)
    dirs = sensor_fov_rays(spec) @ T[:3, :3].T
    origin = T[:3, 3].copy()
    origins = np.broadcast_to(origin, dirs.shape)
    t_scene = _scene_hits(origins, dirs, world.obstacles)
    t_robot = np.full(len(dirs), np.inf)
    if model is not None:
        rmodel = world.robot_model(model)
        p0, p1, rad, _ = world_shapes(rmodel, link_transforms(rmodel, q))
        if len(rad):
            t_robot = geometry.ray_capsule(origins, dirs, p0, p1, rad).min(axis=1)
    t = np.minimum(t_scene, t_robot)
    labels = np.where(t_robot < t_scene, ROBOT, OBSTACLE)
    if spec.noise_sigma > 0:
        rng = np.random.default_rng(seed)
        noise = np.clip(rng.normal(0.0, spec.noise_sigma, len(t)), -3 * spec.noise_sigma, 3 * spec.noise_sigma)
        t = np.where(np.isfinite(t), np.maximum(t + noise, 0.0), t)
    labels = np.where(t >= spec.max_range, MAX_RANGE, labels)
    t = np.minimum(t, spec.max_range)
    return PointCloud(origin, origin + t[:, None] * dirs, labels, spec.id, spec.max_range)


def robot_point_mask(points, model: RobotModel, q, margin=0.03, world: Optional[WorldSnapshot] = None):
    """Boolean mask: point within ``margin`` of any robot collision shape at ``q``."""
    if margin < 0:
        raise InvalidArgument("margin must be non-negative")
    if world is not None:
        model = world.robot_model(model)
    pts = np.asarray(points, float).reshape(-1, 3)
    p0, p1, rad, _ = world_shapes(model, link_transforms(model, q))
    if len(rad) == 0 or len(pts) == 0:
        return np.zeros(len(pts), bool)
    d, _ = geometry.point_segment(pts[:, None, :], p0[None], p1[None])
    return np.any(d - rad[None, :] <= margin, axis=1)


def filter_robot_points(cloud, model: RobotModel, q, margin=0.03, world=None, extra=()):
    """Partition measurements into robot and obstacle points.

    With a :class:`PointCloud`, returns a relabeled cloud (max-range returns
    keep their label); with a plain array, returns ``(robot_points,
    obstacle_points)``. ``extra`` lists obstacles (e.g. the object about to be
    grasped) whose nearby points are treated like robot points.
    """
    if isinstance(cloud, PointCloud):
        mask = robot_point_mask(cloud.points, model, q, margin, world)
        for o in extra:
            mask |= _near_obstacle(cloud.points, o, margin)
        labels = np.where(cloud.labels == MAX_RANGE, MAX_RANGE, np.where(mask, ROBOT, OBSTACLE))
        return cloud.relabeled(labels)
    pts = np.asarray(cloud, float).reshape(-1, 3)
    mask = robot_point_mask(pts, model, q, margin, world)
    return pts[mask], pts[~mask]


def _near_obstacle(points, o, margin):
    c = np.asarray(o.center)
    if o.kind == SPHERE:
        return np.linalg.norm(points - c, axis=1) - o.radius <= margin
    if o.kind == CAPSULE:
        h = np.asarray(o.half)
        d, _ = geometry.point_segment(points, c - h, c + h)
        return d - o.radius <= margin
    if o.kind == BOX:
        d, _ = geometry.point_box(points, o.lo, o.hi)
        return d <= margin
    return np.zeros(len(points), bool)


def save_cloud(cloud: PointCloud, path) -> None:
    """Text format: one ``x y z class`` line per point, class in {obstacle, robot, max-range}."""
    lines = [f"# sensor {cloud.sensor_id} origin {cloud.origin[0]:.9g} {cloud.origin[1]:.9g} {cloud.origin[2]:.9g}"]
    for p, c in zip(cloud.points, cloud.labels):
        lines.append(f"{p[0]:.9g} {p[1]:.9g} {p[2]:.9g} {CLASS_NAMES[int(c)]}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_cloud(path) -> PointCloud:
    names = {v: k for k, v in CLASS_NAMES.items()}
    origin, sid, pts, labels = np.zeros(3), "", [], []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            parts = line[1:].split()
            if "origin" in parts:
                k = parts.index("origin")
                origin = np.array([float(v) for v in parts[k + 1 : k + 4]])
            if "sensor" in parts:
                sid = parts[parts.index("sensor") + 1]
            continue
        if not line.strip():
            continue
        x, y, z, c = line.split()
        pts.append((float(x), float(y), float(z)))
        labels.append(names[c])
    return PointCloud(origin, np.array(pts, float).reshape(-1, 3), np.array(labels, int), sid)
