import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from safemm import geometry
from safemm.collision_world import (
    ATTACHED,
    DYNAMIC,
    HANDLED,
    Obstacle,
    SpeedConfig,
    WorldSnapshot,
    attach_object,
    compute_speed_scale,
    is_collision_free,
    mark_object,
    min_distance,
    min_distance_batch,
    predicted_min_distance,
    release_object,
)
from safemm.errors import InvalidArgument, NotFound
from safemm.kinematics import link_transforms, world_shapes
from safemm.robots import mobile_manipulator, planar_arm, point_robot_arm
from safemm.tracking import Track, TrackingConfig


def point_world(*obstacles):
    return WorldSnapshot(tuple(obstacles))


class TestMinDistance:
    def test_sphere_vs_point_link(self):
        model = point_robot_arm(0.3)
        world = point_world(Obstacle.sphere("s", (0.8, 0.0, 0.0), 0.1))
        res = min_distance(model, np.zeros(1), world)
        assert res.d == pytest.approx(0.4)
        e = res.links[0]
        np.testing.assert_allclose(e.robot_point, [0.3, 0, 0], atol=1e-12)
        np.testing.assert_allclose(e.obstacle_point, [0.7, 0, 0], atol=1e-12)

    def test_empty_world_is_infinite(self):
        model = planar_arm(3)
        assert min_distance(model, np.zeros(3), WorldSnapshot()).d == math.inf
        assert is_collision_free(model, np.zeros(3), WorldSnapshot())

    def test_attached_obstacle_excluded(self):
        model = point_robot_arm(0.3)
        world = point_world(Obstacle.sphere("near", (0.5, 0, 0), 0.1), Obstacle.sphere("far", (0, 2.0, 0), 0.1))
        assert min_distance(model, np.zeros(1), world).d == pytest.approx(0.1)
        T = link_transforms(model, np.zeros(1))[0]
        attached = attach_object(world, "near", 0, T)
        assert attached.get("near").cls == ATTACHED
        # remaining obstacle only; attached sphere (r=0.1 at 0.5 m) now part of the robot
        res = min_distance(model, np.zeros(1), attached)
        via_link = math.hypot(0.3, 2.0) - 0.1
        via_held = math.hypot(0.5, 2.0) - 0.2
        assert res.d == pytest.approx(min(via_link, via_held))
        assert res.links[0].obstacle_id == "far"
        # original snapshot untouched
        assert world.get("near").cls == "static"

    def test_attach_release_roundtrip(self):
        world = point_world(Obstacle.box("b", (1, 1, 0), (1.2, 1.2, 0.2)), Obstacle.sphere("s", (0, 3, 0), 0.2))
        a = attach_object(world, "b", 0, np.eye(4))
        assert attach_object(a, "b", 0, np.eye(4)) is a  # idempotent
        r = release_object(a, "b", (1.1, 1.1, 0.1))
        assert len(r.obstacles) == len(world.obstacles)
        assert r.get("b").cls == DYNAMIC
        np.testing.assert_allclose(r.get("b").lo, [1, 1, 0])
        model = point_robot_arm(0.3)
        assert min_distance(model, np.zeros(1), r).links[0].obstacle_id == "b"
        with pytest.raises(NotFound):
            attach_object(world, "nope", 0)

    def test_attached_object_moves_with_link(self):
        model = point_robot_arm(1.0)
        world = point_world(Obstacle.sphere("held", (1.0, 0, 0), 0.1), Obstacle.sphere("wall", (0, 1.5, 0), 0.1))
        T = link_transforms(model, np.zeros(1))[0]
        world = attach_object(world, "held", 0, T)
        d = min_distance(model, np.array([math.pi / 2]), world).d
        # point link and held sphere now at (0, 1, 0)
        assert d == pytest.approx(0.3)

    def test_handled_object_ignored(self):
        model = point_robot_arm(0.3)
        world = point_world(Obstacle.sphere("obj", (0.35, 0, 0), 0.01))
        assert min_distance(model, np.zeros(1), mark_object(world, "obj", HANDLED)).d == math.inf

    def test_octree_boxes_count(self):
        model = point_robot_arm(0.3)
        world = WorldSnapshot((), np.array([[[0.5, -0.05, -0.05], [0.6, 0.05, 0.05]]]))
        res = min_distance(model, np.zeros(1), world)
        assert res.d == pytest.approx(0.2)
        assert res.links[0].obstacle_id == "octree"

    def test_capsule_box_scenes_vs_monte_carlo(self):
        rng = np.random.default_rng(11)
        model = planar_arm(3, 0.4, 0.05)
        for _ in range(10):
            q = rng.uniform(-math.pi, math.pi, 3)
            lo = rng.uniform(-1.2, 1.2, 3) * [1, 1, 0.2]
            world = point_world(Obstacle.box("b", lo, lo + rng.uniform(0.1, 0.4, 3)))
            res = min_distance(model, q, world)
            p0, p1, rad, _ = world_shapes(model, link_transforms(model, q))
            n = 100_000
            k = rng.integers(0, len(rad), n)
            t = rng.uniform(size=(n, 1))
            u = rng.normal(size=(n, 3))
            u /= np.linalg.norm(u, axis=1, keepdims=True)
            pts = p0[k] + t * (p1[k] - p0[k]) + rad[k][:, None] * u
            ob = world.obstacles[0]
            sampled = np.linalg.norm(pts - np.clip(pts, ob.lo, ob.hi), axis=1).min()
            assert res.d <= sampled + 1e-9
            assert sampled - res.d < 0.02
            for e in res.links:
                assert np.all(e.obstacle_point >= ob.lo - 1e-6) and np.all(e.obstacle_point <= ob.hi + 1e-6)
                assert abs(np.linalg.norm(e.robot_point - e.obstacle_point) - e.distance) < 1e-6

    def test_batch_matches_single(self):
        model = mobile_manipulator()
        rng = np.random.default_rng(3)
        world = point_world(
            Obstacle.box("table", (1, -0.5, 0), (1.8, 0.5, 0.75)), Obstacle.capsule("h", (0, 1.5, 0), (0, 1.5, 1.8), 0.25)
        )
        Q = rng.uniform(-1, 1, (8, model.dof))
        batch = min_distance_batch(model, Q, world)
        for q, d in zip(Q, batch):
            assert d == pytest.approx(min_distance(model, q, world).d, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_adding_obstacle_never_increases_distance(seed):
    rng = np.random.default_rng(seed)
    model = planar_arm(3)
    q = rng.uniform(-3, 3, 3)
    world = point_world(Obstacle.sphere("a", rng.uniform(-2, 2, 3), 0.1))
    d0 = min_distance(model, q, world).d
    lo = rng.uniform(-2, 2, 3)
    d1 = min_distance(model, q, world.added(Obstacle.box("b", lo, lo + 0.2))).d
    assert d1 <= d0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_primitive_distance_symmetry(seed):
    rng = np.random.default_rng(seed)
    a0, a1, b0, b1 = rng.uniform(-1, 1, (4, 3))
    ra, rb = rng.uniform(0, 0.3, 2)
    d1, _, _ = geometry.capsule_capsule(a0, a1, ra, b0, b1, rb)
    d2, _, _ = geometry.capsule_capsule(b0, b1, rb, a0, a1, ra)
    assert float(d1) == pytest.approx(float(d2), abs=1e-12)


def test_is_collision_free_cases():
    model = point_robot_arm(0.25)
    touching = point_world(Obstacle.sphere("s", (0.5, 0, 0), 0.25))
    assert not is_collision_free(model, np.zeros(1), touching, 0.0)
    near = point_world(Obstacle.sphere("s", (0.4, 0, 0), 0.1))
    assert is_collision_free(model, np.zeros(1), near, 0.04)


class TestSpeedScale:
    def test_cases(self):
        cfg = SpeedConfig(0.05, 0.5)
        assert compute_speed_scale(0.01, math.inf, cfg) == 0.0
        assert compute_speed_scale(0.6, 0.7, cfg) == 1.0
        assert compute_speed_scale(0.275, math.inf, cfg) == pytest.approx(0.5)
        assert compute_speed_scale(1.0, 0.275, cfg) == pytest.approx(0.5)

    def test_invalid(self):
        with pytest.raises(InvalidArgument):
            SpeedConfig(0.5, 0.1)

    def test_monotone_continuous(self):
        ds = np.linspace(0, 1, 2001)
        s = np.array([compute_speed_scale(d) for d in ds])
        assert np.all(np.diff(s) >= 0)
        assert np.max(np.abs(np.diff(s))) < 0.01


def walker(x, y, vx, vy):
    return Track(1, np.array([x, y, vx, vy], float), np.zeros((4, 4)), 0.0)


class TestPredictedDistance:
    cfg = TrackingConfig(base_radius=0.0, accel_noise=0.0)

    def test_approaching_obstacle(self):
        model = point_robot_arm(0.0)
        d = predicted_min_distance(model, [np.zeros(1)], [0.0], [walker(2.0, 0, -1.0, 0)], 1.0, tracking_cfg=self.cfg)
        assert d == pytest.approx(1.0, abs=1e-9)

    def test_no_tracks(self):
        assert predicted_min_distance(point_robot_arm(), [np.zeros(1)], [0.0], [], 1.0) == math.inf

    def test_scripted_crossings_vs_dense_oracle(self):
        model = planar_arm(2, 0.5, 0.05)
        rng = np.random.default_rng(9)
        cfg = TrackingConfig(base_radius=0.25, accel_noise=0.0)
        for _ in range(5):
            configs = rng.uniform(-2, 2, (3, 2))
            times = np.array([0.0, 0.7, 1.5])
            tracks = [walker(*rng.uniform(-2, 2, 2), *rng.uniform(-1.5, 1.5, 2))]
            d = predicted_min_distance(model, configs, times, tracks, 2.0, 0.05, cfg)
            dense = predicted_min_distance(model, configs, times, tracks, 2.0, 0.001, cfg)
            assert d >= dense - 1e-12
            assert d - dense < 0.02


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(33, 120))
def test_sparse_box_culling_keeps_each_capsules_nearest_box(seed, n_boxes):
    from safemm.collision_world import _sparse_capsule_box

    rng = np.random.default_rng(seed)
    c = rng.uniform(-2, 2, (n_boxes, 3))
    h = rng.uniform(0.01, 0.3, (n_boxes, 3))
    lo, hi = c - h, c + h
    p0 = rng.uniform(-2.5, 2.5, (4, 6, 3))
    p1 = p0 + rng.normal(0, 0.4, (4, 6, 3))
    rad = rng.uniform(0.0, 0.2, 6)
    d, x, o = _sparse_capsule_box(p0, p1, rad, lo, hi)
    ref, _, _ = geometry.capsule_box(p0[..., None, :], p1[..., None, :], rad[:, None], lo, hi)
    assert d.shape == ref.shape
    np.testing.assert_allclose(d.min(axis=-1), ref.min(axis=-1), atol=1e-12)
    kept = np.isfinite(d)
    np.testing.assert_allclose(d[kept], ref[kept], atol=1e-12)
    assert np.all(np.isnan(x[~kept]))
