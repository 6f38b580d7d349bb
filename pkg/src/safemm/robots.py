"""Ready-made robot models used by tests, benchmarks and scenarios."""
from __future__ import annotations

import math

import numpy as np

from .kinematics import FIXED, REVOLUTE, TRANS_X, TRANS_Y, Capsule, JointSpec, RobotModel, Sphere, transform


def planar_arm(n=3, link_length=0.5, radius=0.05, base_z=0.0, limit=math.pi):
    """``n`` revolute joints about z, links along x, base at the world origin."""
    joints, links = [], []
    for k in range(n):
        origin = transform((0.0, 0.0, base_z)) if k == 0 else transform((link_length, 0.0, 0.0))
        joints.append(JointSpec(REVOLUTE, (0.0, 0.0, 1.0), origin, (-limit, limit), f"j{k}"))
        links.append([Capsule((0.0, 0.0, 0.0), (link_length, 0.0, 0.0), radius)])
    return RobotModel(joints, links, transform((link_length, 0.0, 0.0)), f"planar{n}")


def point_robot_arm(length=0.3):
    """Single revolute joint whose only geometry is a point at ``length`` on its x axis."""
    j = JointSpec(REVOLUTE, (0.0, 0.0, 1.0), np.eye(4), (-math.pi, math.pi), "j0")
    return RobotModel([j], [[Sphere((length, 0.0, 0.0), 0.0)]], transform((length, 0.0, 0.0)), "point-arm")


PLATFORM_SHAPES = [
    Capsule((-0.3, 0.15, 0.25), (0.3, 0.15, 0.25), 0.2),
    Capsule((-0.3, -0.15, 0.25), (0.3, -0.15, 0.25), 0.2),
]

# (axis, origin offset along z, capsule length, radius, limit)
_ARM = [
    ("z", 0.0, 0.31, 0.07, math.radians(170)),
    ("y", 0.31, 0.20, 0.07, math.radians(120)),
    ("z", 0.20, 0.20, 0.065, math.radians(170)),
    ("y", 0.20, 0.20, 0.065, math.radians(120)),
    ("z", 0.20, 0.19, 0.06, math.radians(170)),
    ("y", 0.19, 0.0, 0.06, math.radians(120)),
    ("z", 0.078, 0.12, 0.045, math.radians(170)),
]
_AXES = {"x": (1.0, 0.0, 0.0), "y": (0.0, 1.0, 0.0), "z": (0.0, 0.0, 1.0)}


def mobile_manipulator(workspace=5.0, arm_mount=(0.25, 0.0, 0.45)):
    """10-DoF omnidirectional platform (x, y, yaw) carrying a 7-DoF lightweight arm.

    The arm stands upright at the zero configuration; the tool frame sits
    0.15 m beyond the last wrist joint.
    """
    joints = [
        JointSpec(TRANS_X, limits=(-workspace, workspace), name="base_x"),
        JointSpec(TRANS_Y, limits=(-workspace, workspace), name="base_y"),
        JointSpec(REVOLUTE, (0.0, 0.0, 1.0), np.eye(4), (-math.pi, math.pi), "base_yaw"),
    ]
    links = [[], [], list(PLATFORM_SHAPES)]
    for k, (ax, dz, length, rad, lim) in enumerate(_ARM):
        origin = transform(arm_mount) if k == 0 else transform((0.0, 0.0, dz))
        joints.append(JointSpec(REVOLUTE, _AXES[ax], origin, (-lim, lim), f"arm_{k + 1}"))
        shapes = [Capsule((0.0, 0.0, 0.0), (0.0, 0.0, length), rad)] if length > 0 else [Sphere((0, 0, 0), rad)]
        links.append(shapes)
    return RobotModel(joints, links, transform((0.0, 0.0, 0.15)), "mobile-manipulator")


def fixed_mount_demo():
    """Tiny chain with a fixed joint, used to exercise DoF bookkeeping."""
    joints = [
        JointSpec(FIXED, origin=transform((0.0, 0.0, 0.2)), name="mount"),
        JointSpec(REVOLUTE, (0.0, 0.0, 1.0), np.eye(4), (-math.pi, math.pi), "j1"),
        JointSpec(FIXED, origin=transform((0.3, 0.0, 0.0)), name="flange"),
        JointSpec(REVOLUTE, (0.0, 1.0, 0.0), np.eye(4), (-math.pi, math.pi), "j2"),
    ]
    links = [[], [Capsule((0, 0, 0), (0.3, 0, 0), 0.03)], [], [Capsule((0, 0, 0), (0.2, 0, 0), 0.03)]]
    return RobotModel(joints, links, transform((0.2, 0.0, 0.0)), "fixed-demo")


def planar_base_arm(n_arm=2, link_length=0.4):
    """Planar mobile base (x, y) with an ``n_arm`` planar arm; all motion in the ground plane."""
    joints = [JointSpec(TRANS_X, limits=(-3.0, 3.0), name="x"), JointSpec(TRANS_Y, limits=(-3.0, 3.0), name="y")]
    links = [[], [Sphere((0.0, 0.0, 0.0), 0.15)]]
    for k in range(n_arm):
        origin = np.eye(4) if k == 0 else transform((link_length, 0.0, 0.0))
        joints.append(JointSpec(REVOLUTE, (0.0, 0.0, 1.0), origin, (-math.pi, math.pi), f"a{k}"))
        links.append([Capsule((0, 0, 0), (link_length, 0, 0), 0.04)])
    return RobotModel(joints, links, transform((link_length, 0.0, 0.0)), "planar-base-arm")
