import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from safemm.errors import ConfigError, InvalidArgument
from safemm.kinematics import (
    JointSpec,
    Pose,
    RobotModel,
    Sphere,
    cartesian_distance,
    end_effector_pose,
    forward_kinematics,
    jacobian,
    link_transforms,
    load_model,
    model_from_dict,
    model_to_dict,
    reach_bounds,
    save_model,
    swept_radius,
    transform,
)
from safemm.robots import fixed_mount_demo, mobile_manipulator, planar_arm, point_robot_arm


def random_q(model, rng):
    lo = np.maximum(model.lower, -3.0)
    hi = np.minimum(model.upper, 3.0)
    return rng.uniform(lo, hi)


def chain_oracle(model, q):
    """Independent homogeneous chain built from scipy rotations."""
    T = np.eye(4)
    out = []
    k = 0
    for jt in model.joints:
        T = T @ jt.origin
        M = np.eye(4)
        if jt.kind == "revolute":
            M[:3, :3] = Rotation.from_rotvec(np.asarray(jt.axis) * q[k]).as_matrix()
            k += 1
        elif jt.kind == "planar-translation-x":
            M[0, 3] = q[k]
            k += 1
        elif jt.kind == "planar-translation-y":
            M[1, 3] = q[k]
            k += 1
        T = T @ M
        out.append(T.copy())
    return out


def pose_vec(model, q):
    T = link_transforms(model, q)[-1] @ model.end_effector
    return T


class TestForwardKinematics:
    def test_zero_configuration_is_origin_composition(self):
        model = mobile_manipulator()
        Ts = link_transforms(model, np.zeros(model.dof))
        T = np.eye(4)
        for i, jt in enumerate(model.joints):
            T = T @ jt.origin
            np.testing.assert_allclose(Ts[i], T, atol=1e-12)

    def test_quarter_turn_maps_x_to_y(self):
        model = planar_arm(1)
        poses, _ = forward_kinematics(model, np.array([math.pi / 2]))
        R = poses[0].matrix()[:3, :3]
        np.testing.assert_allclose(R @ [1, 0, 0], [0, 1, 0], atol=1e-12)

    def test_matches_chain_oracle_10dof(self):
        model = mobile_manipulator()
        rng = np.random.default_rng(0)
        for _ in range(20):
            q = random_q(model, rng)
            Ts = link_transforms(model, q)
            for T, T_ref in zip(Ts, chain_oracle(model, q)):
                np.testing.assert_allclose(T, T_ref, atol=1e-9)

    def test_dimension_mismatch(self):
        with pytest.raises(InvalidArgument):
            link_transforms(planar_arm(3), np.zeros(2))
        with pytest.raises(InvalidArgument):
            link_transforms(planar_arm(3), np.array([0.0, np.nan, 0.0]))

    def test_continuity(self):
        model = mobile_manipulator()
        rng = np.random.default_rng(1)
        q = random_q(model, rng)
        d = rng.normal(size=model.dof)
        base = end_effector_pose(model, q).position
        prev = np.inf
        for eps in [1e-1, 1e-2, 1e-3, 1e-4, 1e-5]:
            moved = np.linalg.norm(end_effector_pose(model, q + eps * d).position - base)
            assert moved < prev
            prev = moved
        assert prev < 1e-3

    def test_fixed_joints_carry_no_dof(self):
        model = fixed_mount_demo()
        assert model.dof == 2
        assert jacobian(model, np.zeros(2)).shape == (6, 2)


class TestJacobian:
    @staticmethod
    def fd_jacobian(model, q, h=1e-6):
        J = np.zeros((6, model.dof))
        for c in range(model.dof):
            dq = np.zeros(model.dof)
            dq[c] = h
            Tp, Tm = pose_vec(model, q + dq), pose_vec(model, q - dq)
            J[:3, c] = (Tp[:3, 3] - Tm[:3, 3]) / (2 * h)
            dR = (Tp[:3, :3] - Tm[:3, :3]) / (2 * h)
            W = dR @ pose_vec(model, q)[:3, :3].T
            J[3:, c] = [W[2, 1], W[0, 2], W[1, 0]]
        return J

    def test_finite_differences_100_configs(self):
        model = mobile_manipulator()
        rng = np.random.default_rng(2)
        worst = 0.0
        for _ in range(100):
            q = random_q(model, rng)
            J = jacobian(model, q)
            Jfd = self.fd_jacobian(model, q)
            scale = max(1.0, np.abs(J).max())
            worst = max(worst, np.abs(J - Jfd).max() / scale)
        assert worst < 1e-5

    def test_planar_translation_column(self):
        model = mobile_manipulator()
        J = jacobian(model, np.zeros(model.dof))
        np.testing.assert_allclose(J[:, 0], [1, 0, 0, 0, 0, 0], atol=1e-12)
        np.testing.assert_allclose(J[:, 1], [0, 1, 0, 0, 0, 0], atol=1e-12)


class TestSweptRadius:
    def test_sphere_offset_from_last_axis(self):
        j = JointSpec("revolute", (0, 0, 1), np.eye(4), (-3, 3))
        model = RobotModel([j], [[Sphere((0.3, 0.0, 0.0), 0.05)]])
        assert swept_radius(model, np.zeros(1), 0) == pytest.approx(0.35)

    def test_no_distal_geometry(self):
        j0 = JointSpec("revolute", (0, 0, 1), np.eye(4), (-3, 3))
        j1 = JointSpec("revolute", (0, 0, 1), transform((0.5, 0, 0)), (-3, 3))
        model = RobotModel([j0, j1], [[Sphere((0.2, 0, 0), 0.1)], []])
        assert swept_radius(model, np.zeros(2), 1) == 0.0
        assert swept_radius(model, np.zeros(2), 0) == pytest.approx(0.3)

    def test_non_revolute_rejected(self):
        model = mobile_manipulator()
        with pytest.raises(InvalidArgument):
            swept_radius(model, np.zeros(model.dof), 0)

    def test_bounds_sampled_surface_points(self):
        model = mobile_manipulator()
        rng = np.random.default_rng(3)
        from safemm.kinematics import _joint_frames, world_shapes

        for _ in range(5):
            q = random_q(model, rng)
            Ts = link_transforms(model, q)
            p0, p1, rad, owner = world_shapes(model, Ts)
            frames = _joint_frames(model, Ts)
            for j in range(2, len(model.joints)):
                r = swept_radius(model, q, j)
                sel = np.flatnonzero(owner >= j)
                k = rng.choice(sel, size=10_000)
                t = rng.uniform(size=10_000)[:, None]
                dirs = rng.normal(size=(10_000, 3))
                dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
                pts = p0[k] + t * (p1[k] - p0[k]) + rad[k][:, None] * dirs
                a = frames[j][:3, :3] @ np.asarray(model.joints[j].axis)
                dist = np.linalg.norm(np.cross(pts - frames[j][:3, 3], a), axis=1)
                assert dist.max() <= r + 1e-12
                assert reach_bounds(model)[model.q_index[j]] >= r - 1e-12


def random_pose(rng):
    return Pose(rng.normal(size=3), rng.normal(size=4))


class TestCartesianDistance:
    def test_trivial_cases(self):
        p = Pose([1, 2, 3], [0.3, 0.1, 0.2, 0.9])
        assert cartesian_distance(p, p) == pytest.approx(0.0, abs=1e-7)
        q = Pose([2, 2, 3], p.orientation)
        assert cartesian_distance(p, q, 0.7) == pytest.approx(1.0)
        rz = Pose([0, 0, 0], [0, 0, 0, 1])
        assert cartesian_distance(Pose([0, 0, 0]), rz, 0.5) == pytest.approx(0.5 * math.pi)

    def test_negative_weight(self):
        with pytest.raises(InvalidArgument):
            cartesian_distance(Pose([0, 0, 0]), Pose([0, 0, 0]), -1.0)

    @settings(max_examples=200, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_symmetry_and_triangle(self, seed):
        rng = np.random.default_rng(seed)
        a, b, c = random_pose(rng), random_pose(rng), random_pose(rng)
        assert cartesian_distance(a, b) == pytest.approx(cartesian_distance(b, a), abs=1e-12)
        assert cartesian_distance(a, c) <= cartesian_distance(a, b) + cartesian_distance(b, c) + 1e-9


def test_model_file_roundtrip(tmp_path):
    model = mobile_manipulator()
    path = tmp_path / "robot.json"
    save_model(model, path)
    loaded = load_model(path)
    q = random_q(model, np.random.default_rng(4))
    np.testing.assert_allclose(link_transforms(loaded, q), link_transforms(model, q), atol=1e-12)
    assert loaded.dof == 10


def test_model_validation():
    with pytest.raises(InvalidArgument):
        JointSpec("revolute", (0, 0, 2))
    with pytest.raises(InvalidArgument):
        JointSpec("revolute", limits=(1, 0))
    with pytest.raises(InvalidArgument):
        RobotModel([])
    bad = model_to_dict(planar_arm(2))
    bad["joints"][0]["kind"] = "prismatic-z"
    with pytest.raises(ConfigError):
        model_from_dict(bad)
    with pytest.raises(InvalidArgument):
        RobotModel([JointSpec("revolute"), JointSpec("planar-translation-x")])


def test_point_robot_pose():
    model = point_robot_arm(0.3)
    p = end_effector_pose(model, np.array([math.pi / 2]))
    np.testing.assert_allclose(p.position, [0, 0.3, 0], atol=1e-12)
