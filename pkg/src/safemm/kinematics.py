"""Serial-chain robot model: forward kinematics, Jacobian, swept radii, pose distance."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, InvalidArgument

REVOLUTE = "revolute"
TRANS_X = "planar-translation-x"
TRANS_Y = "planar-translation-y"
FIXED = "fixed"
JOINT_KINDS = (REVOLUTE, TRANS_X, TRANS_Y, FIXED)

DEFAULT_W_ROT = 0.5


# ------------------------------------------------------------------ rotations


def rotation_about(axis, angle):
    """Rodrigues rotation matrix; ``angle`` may be an array (returns (..., 3, 3))."""
    axis = np.asarray(axis, float)
    angle = np.asarray(angle, float)
    x, y, z = axis
    c = np.cos(angle)
    s = np.sin(angle)
    C = 1.0 - c
    R = np.empty(angle.shape + (3, 3))
    R[..., 0, 0] = c + x * x * C
    R[..., 0, 1] = x * y * C - z * s
    R[..., 0, 2] = x * z * C + y * s
    R[..., 1, 0] = y * x * C + z * s
    R[..., 1, 1] = c + y * y * C
    R[..., 1, 2] = y * z * C - x * s
    R[..., 2, 0] = z * x * C - y * s
    R[..., 2, 1] = z * y * C + x * s
    R[..., 2, 2] = c + z * z * C
    return R


def quat_from_matrix(R):
    """Unit quaternion (w, x, y, z) with w >= 0 from a rotation matrix."""
    R = np.asarray(R, float)
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    if tr > 0.0:
        s = 2.0 * math.sqrt(tr + 1.0)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = 2.0 * math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    q = np.array(q)
    q /= np.linalg.norm(q)
    return q if q[0] >= 0 else -q


def matrix_from_quat(q):
    w, x, y, z = np.asarray(q, float) / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def transform(position=(0.0, 0.0, 0.0), rotation=None):
    T = np.eye(4)
    T[:3, 3] = position
    if rotation is not None:
        T[:3, :3] = rotation
    return T


def rotation_log(R):
    """Axis-angle vector of a rotation matrix (robust near 0 and pi)."""
    q = quat_from_matrix(R)
    v = q[1:]
    s = np.linalg.norm(v)
    if s < 1e-12:
        return np.zeros(3)
    angle = 2.0 * math.atan2(s, q[0])
    return v / s * angle


@dataclass(frozen=True)
class Pose:
    position: np.ndarray
    orientation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, float).reshape(3))
        q = np.asarray(self.orientation, float).reshape(4)
        n = np.linalg.norm(q)
        if not np.isfinite(n) or n < 1e-12:
            raise InvalidArgument("orientation quaternion must be non-zero")
        object.__setattr__(self, "orientation", q / n)

    @classmethod
    def from_matrix(cls, T):
        T = np.asarray(T, float)
        return cls(T[:3, 3].copy(), quat_from_matrix(T[:3, :3]))

    def matrix(self):
        return transform(self.position, matrix_from_quat(self.orientation))


def cartesian_distance(p1: Pose, p2: Pose, w_rot: float = DEFAULT_W_ROT) -> float:
    """Position distance plus ``w_rot`` times the geodesic rotation angle."""
    if w_rot < 0:
        raise InvalidArgument("w_rot must be non-negative")
    dot = abs(float(np.dot(p1.orientation, p2.orientation)))
    angle = 2.0 * math.acos(min(1.0, dot))
    return float(np.linalg.norm(p1.position - p2.position)) + w_rot * angle


# ---------------------------------------------------------------- model types


@dataclass(frozen=True)
class Capsule:
    """Segment ``p0-p1`` inflated by ``radius``, in link coordinates."""

    p0: tuple
    p1: tuple
    radius: float


def Sphere(center, radius) -> Capsule:
    return Capsule(tuple(center), tuple(center), radius)


@dataclass(frozen=True)
class JointSpec:
    kind: str
    axis: tuple = (0.0, 0.0, 1.0)
    origin: np.ndarray = field(default_factory=lambda: np.eye(4))
    limits: tuple = (-math.pi, math.pi)
    name: str = ""

    def __post_init__(self):
        if self.kind not in JOINT_KINDS:
            raise InvalidArgument(f"unknown joint kind {self.kind!r}")
        axis = np.asarray(self.axis, float)
        if self.kind == REVOLUTE and abs(np.linalg.norm(axis) - 1.0) > 1e-9:
            raise InvalidArgument("revolute axis must have unit norm")
        lo, hi = self.limits
        if lo > hi:
            raise InvalidArgument("joint limits must satisfy lo <= hi")
        object.__setattr__(self, "origin", np.asarray(self.origin, float))


class RobotModel:
    """Ordered chain of joints; ``links[i]`` holds the collision shapes moved by joint ``i``."""

    def __init__(self, joints, links=None, end_effector=None, name="robot"):
        joints = list(joints)
        if not joints:
            raise InvalidArgument("a robot needs at least one joint")
        seen_revolute = False
        for jt in joints:
            if jt.kind in (TRANS_X, TRANS_Y) and seen_revolute:
                raise InvalidArgument("planar translation joints must precede all revolute joints")
            seen_revolute |= jt.kind == REVOLUTE
        self.joints = tuple(joints)
        links = list(links) if links is not None else [[] for _ in joints]
        if len(links) != len(joints):
            raise InvalidArgument("one shape list per joint is required")
        self.links = tuple(tuple(s) for s in links)
        self.end_effector = np.eye(4) if end_effector is None else np.asarray(end_effector, float)
        self.name = name

        self.active = np.array([i for i, j in enumerate(self.joints) if j.kind != FIXED], dtype=int)
        self.dof = len(self.active)
        kinds = [self.joints[i].kind for i in self.active]
        self.revolute_mask = np.array([k == REVOLUTE for k in kinds], dtype=bool)
        self.lower = np.array([self.joints[i].limits[0] for i in self.active], float)
        self.upper = np.array([self.joints[i].limits[1] for i in self.active], float)
        # flattened collision geometry for batched distance queries
        p0, p1, rad, owner = [], [], [], []
        for li, shapes in enumerate(self.links):
            for s in shapes:
                p0.append(s.p0)
                p1.append(s.p1)
                rad.append(s.radius)
                owner.append(li)
        self.shape_p0 = np.array(p0, float).reshape(-1, 3)
        self.shape_p1 = np.array(p1, float).reshape(-1, 3)
        self.shape_radius = np.array(rad, float)
        self.shape_link = np.array(owner, dtype=int)
        self._axes = np.array([np.asarray(j.axis, float) for j in self.joints])
        self._origins = np.array([j.origin for j in self.joints])
        # joint index of each configuration entry, and configuration index per joint
        self.q_index = np.full(len(self.joints), -1, dtype=int)
        self.q_index[self.active] = np.arange(self.dof)

    def __repr__(self):
        return f"RobotModel({self.name!r}, dof={self.dof}, links={len(self.links)})"

    def with_link_shapes(self, extra):
        """Copy of the model with additional shapes: ``extra`` maps link index -> shapes."""
        links = [list(s) for s in self.links]
        for li, shapes in extra.items():
            links[li].extend(shapes)
        return RobotModel(self.joints, links, self.end_effector, self.name)

    def clamp(self, q):
        return np.minimum(np.maximum(q, self.lower), self.upper)

    def within_limits(self, q, tol=1e-12):
        q = np.asarray(q, float)
        return bool(np.all(q >= self.lower - tol) and np.all(q <= self.upper + tol))

    def check(self, q):
        q = np.asarray(q, float)
        if q.shape != (self.dof,):
            raise InvalidArgument(f"expected configuration of length {self.dof}, got shape {q.shape}")
        if not np.all(np.isfinite(q)):
            raise InvalidArgument("configuration must be finite")
        return q


# ------------------------------------------------------------- kinematics


def link_transforms(model: RobotModel, q) -> np.ndarray:
    """World transforms of every link frame, shape (n_joints, 4, 4)."""
    q = model.check(q)
    return link_transforms_batch(model, q[None, :])[0]


def _joint_terms(model: RobotModel):
    """Per joint, matrices with origin @ motion(q) = A + cos(q) C + sin(q) S (revolute) or A + q S (translation)."""
    terms = model.__dict__.get("_terms")
    if terms is None:
        terms = []
        for i, jt in enumerate(model.joints):
            O = model._origins[i]
            A, C, S = O.copy(), np.zeros((4, 4)), np.zeros((4, 4))
            if jt.kind == REVOLUTE:
                a = model._axes[i] / np.linalg.norm(model._axes[i])
                aa = np.outer(a, a)
                K = np.array([[0.0, -a[2], a[1]], [a[2], 0.0, -a[0]], [-a[1], a[0], 0.0]])
                M0, M1, M2 = np.zeros((4, 4)), np.zeros((4, 4)), np.zeros((4, 4))
                M0[:3, :3], M0[3, 3] = aa, 1.0
                M1[:3, :3] = np.eye(3) - aa
                M2[:3, :3] = K
                A, C, S = O @ M0, O @ M1, O @ M2
            elif jt.kind in (TRANS_X, TRANS_Y):
                E = np.zeros((4, 4))
                E[0 if jt.kind == TRANS_X else 1, 3] = 1.0
                S = O @ E
            terms.append((jt.kind, A, C, S))
        model.__dict__["_terms"] = terms
    return terms


def link_transforms_batch(model: RobotModel, Q) -> np.ndarray:
    """Link transforms for a batch of configurations, shape (B, n_joints, 4, 4)."""
    Q = np.atleast_2d(np.asarray(Q, float))
    B = Q.shape[0]
    out = np.empty((B, len(model.joints), 4, 4))
    T = None
    for i, (kind, A, C, S) in enumerate(_joint_terms(model)):
        if kind == REVOLUTE:
            x = Q[:, model.q_index[i], None, None]
            M = A + np.cos(x) * C + np.sin(x) * S
        elif kind == FIXED:
            M = np.broadcast_to(A, (B, 4, 4))
        else:
            M = A + Q[:, model.q_index[i], None, None] * S
        T = M if T is None else T @ M
        out[:, i] = T
    return out


def end_effector_transform(model: RobotModel, q) -> np.ndarray:
    return link_transforms(model, q)[-1] @ model.end_effector


def forward_kinematics(model: RobotModel, q):
    """Link poses and end-effector pose for configuration ``q``."""
    Ts = link_transforms(model, q)
    return [Pose.from_matrix(T) for T in Ts], Pose.from_matrix(Ts[-1] @ model.end_effector)


def end_effector_pose(model: RobotModel, q) -> Pose:
    return Pose.from_matrix(end_effector_transform(model, q))


def _joint_frames(model, Ts):
    """Frame in which each joint acts (parent transform composed with the joint origin)."""
    prev = np.concatenate([np.eye(4)[None], Ts[:-1]], axis=0)
    return prev @ model._origins


def _world_axes(model, frames):
    """Joint axes and axis points in world coordinates, one row per joint."""
    return np.einsum("nij,nj->ni", frames[:, :3, :3], model._axes), frames[:, :3, 3]


def jacobian(model: RobotModel, q) -> np.ndarray:
    """6 x DoF geometric Jacobian (linear rows first) of the end-effector frame."""
    Ts = link_transforms(model, q)
    p_ee = (Ts[-1] @ model.end_effector)[:3, 3]
    frames = _joint_frames(model, Ts)
    axes, origins = _world_axes(model, frames)
    act = model.active
    J = np.zeros((6, model.dof))
    rev = model.revolute_mask
    ra = act[rev]
    J[:3, rev] = np.cross(axes[ra], p_ee - origins[ra]).T
    J[3:, rev] = axes[ra].T
    for c in np.flatnonzero(~rev):
        i = act[c]
        J[:3, c] = frames[i][:3, 0] if model.joints[i].kind == TRANS_X else frames[i][:3, 1]
    return J


def world_shapes(model: RobotModel, Ts):
    """Collision capsules in world coordinates: (p0, p1, radius, link index)."""
    if len(model.shape_radius) == 0:
        e = np.zeros((0, 3))
        return e, e, model.shape_radius, model.shape_link
    R = Ts[model.shape_link, :3, :3]
    t = Ts[model.shape_link, :3, 3]
    p0 = np.einsum("nij,nj->ni", R, model.shape_p0) + t
    p1 = np.einsum("nij,nj->ni", R, model.shape_p1) + t
    return p0, p1, model.shape_radius, model.shape_link


def world_shapes_batch(model: RobotModel, Ts_batch):
    """Batched variant: arrays of shape (B, n_shapes, 3)."""
    T = Ts_batch[:, model.shape_link]
    R, t = T[..., :3, :3], T[..., :3, 3]
    p0 = np.einsum("bnij,nj->bni", R, model.shape_p0) + t
    p1 = np.einsum("bnij,nj->bni", R, model.shape_p1) + t
    return p0, p1


def swept_radii(model: RobotModel, q, Ts=None) -> np.ndarray:
    """Per-DoF swept radius: revolute entries as in :func:`swept_radius`, translations 0.

    Distance to a line is convex along a segment, so the farthest capsule
    point from a joint axis is an endpoint plus the capsule radius (exact).
    """
    if Ts is None:
        Ts = link_transforms(model, q)
    frames = _joint_frames(model, Ts)
    axes, origins = _world_axes(model, frames)
    p0, p1, rad, owner = world_shapes(model, Ts)
    r = np.zeros(model.dof)
    if len(rad) == 0:
        return r
    # distance of every shape endpoint to every joint axis, (joints, shapes)
    d0 = np.linalg.norm(np.cross(p0[None] - origins[:, None], axes[:, None]), axis=-1)
    d1 = np.linalg.norm(np.cross(p1[None] - origins[:, None], axes[:, None]), axis=-1)
    reach = np.maximum(d0, d1) + rad[None]
    distal = owner[None, :] >= np.arange(len(model.joints))[:, None]
    reach = np.where(distal, reach, -np.inf).max(axis=1)
    for c, i in enumerate(model.active):
        if model.joints[i].kind == REVOLUTE and np.isfinite(reach[i]):
            r[c] = float(reach[i])
    return r


def swept_radius(model: RobotModel, q, j: int) -> float:
    """Radius of the smallest cylinder about joint ``j``'s axis containing all distal shapes.

    ``j`` indexes ``model.joints``.
    """
    if not 0 <= j < len(model.joints) or model.joints[j].kind != REVOLUTE:
        raise InvalidArgument(f"joint {j} is not revolute")
    return float(swept_radii(model, q)[model.q_index[j]])


def bubble_measure(dq, radii, revolute_mask):
    """Upper bound on the Cartesian motion of any robot point for displacement ``dq``."""
    dq = np.asarray(dq, float)
    rot = np.sum(radii[revolute_mask] * np.abs(dq[..., revolute_mask]), axis=-1)
    return rot + np.sqrt(np.sum(dq[..., ~revolute_mask] ** 2, axis=-1))


def reach_bounds(model: RobotModel) -> np.ndarray:
    """Configuration-independent upper bound of every swept radius.

    Distal joint-origin offsets are summed along the chain, plus the farthest
    shape point of each distal link measured from its own frame.
    """
    offs = [float(np.linalg.norm(j.origin[:3, 3])) for j in model.joints]
    ext = np.full(len(model.joints), -np.inf)
    for li, shapes in enumerate(model.links):
        for s in shapes:
            ext[li] = max(ext[li], max(np.linalg.norm(s.p0), np.linalg.norm(s.p1)) + s.radius)
    r = np.zeros(model.dof)
    for c, i in enumerate(model.active):
        if model.joints[i].kind != REVOLUTE:
            continue
        chain = 0.0
        best = 0.0
        for k in range(i, len(model.joints)):
            if k > i:
                chain += offs[k]
            best = max(best, chain + ext[k])
        r[c] = best
    return r


# ------------------------------------------------------------------ file I/O


def model_to_dict(model: RobotModel) -> dict:
    def shp(s):
        if s.p0 == s.p1:
            return {"type": "sphere", "center": list(s.p0), "radius": s.radius}
        return {"type": "capsule", "p0": list(s.p0), "p1": list(s.p1), "radius": s.radius}

    return {
        "name": model.name,
        "joints": [
            {
                "name": j.name,
                "kind": j.kind,
                "axis": list(map(float, j.axis)),
                "origin": {"xyz": j.origin[:3, 3].tolist(), "quat": quat_from_matrix(j.origin[:3, :3]).tolist()},
                "limits": list(j.limits),
                "shapes": [shp(s) for s in model.links[i]],
            }
            for i, j in enumerate(model.joints)
        ],
        "end_effector": {
            "xyz": model.end_effector[:3, 3].tolist(),
            "quat": quat_from_matrix(model.end_effector[:3, :3]).tolist(),
        },
    }


def _frame(d):
    if d is None:
        return np.eye(4)
    R = matrix_from_quat(d.get("quat", [1, 0, 0, 0]))
    return transform(d.get("xyz", [0, 0, 0]), R)


def model_from_dict(data: dict) -> RobotModel:
    try:
        joints, links = [], []
        for jd in data["joints"]:
            joints.append(
                JointSpec(
                    kind=jd["kind"],
                    axis=tuple(jd.get("axis", (0.0, 0.0, 1.0))),
                    origin=_frame(jd.get("origin")),
                    limits=tuple(jd.get("limits", (-math.pi, math.pi))),
                    name=jd.get("name", ""),
                )
            )
            shapes = []
            for sd in jd.get("shapes", []):
                if sd["type"] == "sphere":
                    shapes.append(Sphere(sd["center"], float(sd["radius"])))
                elif sd["type"] == "capsule":
                    shapes.append(Capsule(tuple(sd["p0"]), tuple(sd["p1"]), float(sd["radius"])))
                else:
                    raise ConfigError(f"unknown shape type {sd['type']!r}")
            links.append(shapes)
        return RobotModel(joints, links, _frame(data.get("end_effector")), data.get("name", "robot"))
    except (KeyError, TypeError, InvalidArgument) as exc:
        raise ConfigError(f"malformed robot model: {exc}") from exc


def load_model(path) -> RobotModel:
    return model_from_dict(json.loads(Path(path).read_text()))


def save_model(model: RobotModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=2))


__all__ = [
    "Capsule",
    "JointSpec",
    "Pose",
    "RobotModel",
    "Sphere",
    "cartesian_distance",
    "end_effector_pose",
    "forward_kinematics",
    "jacobian",
    "link_transforms",
    "load_model",
    "swept_radius",
    "swept_radii",
]
