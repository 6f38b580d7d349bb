import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from safemm.collision_world import Obstacle, WorldSnapshot
from safemm.errors import InvalidArgument
from safemm.path_smoothing import (
    BINARY_INTERVAL,
    RANDOM_PAIR,
    SINGLE_VERTEX,
    flatten_extrema,
    initial_timing,
    insert_center_connections,
    interleave_timing,
    shortcut,
    smooth,
)
from safemm.paths import Path, SegmentChecker, weighted_distance
from safemm.kinematics import TRANS_X, TRANS_Y, JointSpec, RobotModel, Sphere
from safemm.robots import planar_arm

W2 = np.ones(2)


def point_robot():
    """Configuration space equals the plane: a point moved by two translations."""
    joints = [JointSpec(TRANS_X, limits=(-5, 5)), JointSpec(TRANS_Y, limits=(-5, 5))]
    return RobotModel(joints, [[], [Sphere((0, 0, 0), 0.0)]])


def disc_checker(*discs):
    world = WorldSnapshot(tuple(Obstacle.sphere(f"o{k}", (x, y, 0.0), r) for k, (x, y, r) in enumerate(discs)))
    return SegmentChecker(point_robot(), world, 0.02)


def random_walk_path(rng, checker, n=12, step=0.5):
    q = [np.zeros(checker.model.dof)]
    while len(q) < n:
        cand = q[-1] + rng.normal(0, step, checker.model.dof)
        if checker.segment_free(q[-1], cand):
            q.append(cand)
    return Path(np.array(q), np.ones(checker.model.dof))


def scene_checker(seed):
    rng = np.random.default_rng(seed)
    discs = []
    while len(discs) < 4:
        c = rng.uniform(-1.5, 1.5, 2)
        if np.linalg.norm(c) > 0.5:  # keep the start free
            discs.append((c[0], c[1], 0.25))
    return disc_checker(*discs)


# a detour around a disc at the origin
DETOUR = np.array([[-1.0, 0.0], [0.0, 1.0], [1.0, 0.0]])


def visibility_optimum(path, checker):
    """Shortest path through a subsequence of the vertices (exhaustive pairwise visibility)."""
    q, w = path.configs, path.weights
    n = len(q)
    best = np.full(n, math.inf)
    best[0] = 0.0
    for j in range(1, n):
        for i in range(j):
            if best[i] < math.inf and (j == i + 1 or checker.segment_free(q[i], q[j])):
                best[j] = min(best[j], best[i] + float(weighted_distance(q[i], q[j], w)))
    return best[-1]


class TestShortcut:
    def test_collinear_middle_removed(self):
        p = Path(np.array([[0, 0], [1, 1], [2, 2.0]]), W2)
        for s in (SINGLE_VERTEX, BINARY_INTERVAL, RANDOM_PAIR):
            out = shortcut(p, None, s, budget=50)
            assert len(out) == 2

    def test_blocked_vertex_retained(self):
        checker = disc_checker((0.0, 0.0, 0.5))
        p = Path(DETOUR, W2)
        assert checker.path_free(p.configs)
        for strat in (SINGLE_VERTEX, BINARY_INTERVAL, RANDOM_PAIR):
            assert len(shortcut(p, checker, strat, budget=50)) == 3

    def test_unknown_strategy(self):
        with pytest.raises(InvalidArgument):
            shortcut(Path(np.zeros((2, 2)) + [[0, 0], [1, 0]], W2), None, "magic")

    @pytest.mark.parametrize("seed", range(6))
    def test_close_to_exhaustive_optimum(self, seed):
        checker = scene_checker(seed)
        p = random_walk_path(np.random.default_rng(seed), checker)
        opt = visibility_optimum(p, checker)
        out = shortcut(p, checker, None, budget=1000, seed=seed)
        assert out.length() <= p.length()
        assert out.length() <= 1.05 * opt + 1e-12
        np.testing.assert_array_equal(out.start, p.start)
        np.testing.assert_array_equal(out.end, p.end)
        assert checker.path_free(out.configs)


class TestFlatten:
    def test_equal_neighbours(self):
        p = Path(np.array([[0.0, 0.3], [1.0, 0.7], [2.0, 0.3]]), W2)
        out = flatten_extrema(p, None)
        assert out.configs[1, 1] == 0.3
        assert out.configs[1, 0] == 1.0

    def test_monotone_unchanged(self):
        p = Path(np.array([[0.0, 0.1], [1.0, 0.5], [2.0, 0.9]]), W2)
        np.testing.assert_array_equal(flatten_extrema(p, None).configs, p.configs)

    def test_blocked_unchanged(self):
        # the y coordinate peaks at the middle vertex; flattening would cross the disc
        checker = disc_checker((0.0, 0.0, 0.5))
        p = Path(DETOUR, W2)
        np.testing.assert_array_equal(flatten_extrema(p, checker).configs, p.configs)
        assert flatten_extrema(p, None).configs[1, 1] == 0.0

    def test_value_minimizes_length(self):
        rng = np.random.default_rng(3)
        w = np.array([0.7, 1.3, 0.4])
        for _ in range(50):
            q = rng.uniform(-1, 1, (3, 3))
            q[1, 1] = max(q[0, 1], q[2, 1]) + 0.5  # strict maximum in joint 1
            out = flatten_extrema(Path(q, w), None, max_passes=1)
            xs = np.linspace(min(q[0, 1], q[2, 1]), max(q[0, 1], q[2, 1]), 20001)
            C = np.repeat(q[1][None], len(xs), axis=0)
            C[:, 1] = xs
            lengths = weighted_distance(q[0], C, w) + weighted_distance(C, q[2], w)
            got = out.configs[1]
            mine = weighted_distance(q[0], got, w) + weighted_distance(got, q[2], w)
            assert mine <= min(lengths) + 1e-12

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_idempotent_in_free_space(self, seed):
        rng = np.random.default_rng(seed)
        p = Path(rng.uniform(-2, 2, (8, 3)), np.array([1.0, 0.5, 2.0]))
        once = flatten_extrema(p, None)
        twice = flatten_extrema(once, None)
        np.testing.assert_array_equal(once.configs, twice.configs)
        assert once.length() <= p.length()


class TestCenterConnections:
    def test_right_angle(self):
        L = 1.0
        p = Path(np.array([[0.0, 0.0], [L, 0.0], [L, L]]), W2)
        out = insert_center_connections(p, None, 0.2, max_depth=1)
        assert len(out) == 4
        assert p.length() - out.length() == pytest.approx((2 - math.sqrt(2)) * L / 2, abs=1e-12)

    def test_collinear_skipped(self):
        p = Path(np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]]), W2)
        np.testing.assert_array_equal(insert_center_connections(p, None).configs, p.configs)

    def test_near_obstacle_skipped(self):
        # midpoints (-0.5, 0.5) and (0.5, 0.5) connect through a disc just below the corner
        checker = disc_checker((0.0, 0.55, 0.1))
        p = Path(np.array([[-1.0, 0.0], [0.0, 1.0], [1.0, 0.0]]), W2)
        assert checker.path_free(p.configs)
        out = insert_center_connections(p, checker, 0.2, 1)
        np.testing.assert_array_equal(out.configs, p.configs)

    def test_min_length_validated(self):
        with pytest.raises(InvalidArgument):
            insert_center_connections(Path(np.array([[0.0], [1.0]]), np.ones(1)), None, 0.0)


class TestTiming:
    def test_single_joint(self):
        p = Path(np.array([[0.0], [1.0], [1.5], [2.0]]), np.ones(1))
        t = interleave_timing(p, [2.0])
        assert t.total == pytest.approx(2.0 / 2.0)
        np.testing.assert_array_equal(t.path.configs, p.configs)

    def test_balanced_unchanged(self):
        p = Path(np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]]), W2)
        t = interleave_timing(p, [1.0, 1.0])
        np.testing.assert_array_equal(t.path.configs, p.configs)
        assert t.total == pytest.approx(2.0)

    def test_validation(self):
        with pytest.raises(InvalidArgument):
            interleave_timing(Path(np.array([[0.0, 0], [1, 1]]), W2), [1.0, 0.0])

    def test_two_segment_grid_oracle(self):
        rng = np.random.default_rng(8)
        for _ in range(30):
            q = rng.uniform(-1, 1, (3, 2))
            v = rng.uniform(0.5, 2.0, 2)
            got = interleave_timing(Path(q, W2), v)
            f = np.linspace(0, 1, 101)
            F1, F2 = np.meshgrid(f, f, indexing="ij")
            mid0 = q[0, 0] + F1 * (q[2, 0] - q[0, 0])
            mid1 = q[0, 1] + F2 * (q[2, 1] - q[0, 1])
            s1 = np.maximum(np.abs(mid0 - q[0, 0]) / v[0], np.abs(mid1 - q[0, 1]) / v[1])
            s2 = np.maximum(np.abs(q[2, 0] - mid0) / v[0], np.abs(q[2, 1] - mid1) / v[1])
            grid = float((s1 + s2).min())
            assert got.total <= grid + 1e-9
            step = 0.01 * np.max(np.abs(q[2] - q[0]) / v)
            assert got.total >= grid - 2 * step
            assert got.total <= initial_timing(Path(q, W2), v).total + 1e-12

    def test_critical_joint_shift(self):
        # joint A alone moves in segment 1, joint B alone in segment 2: overlapping halves the time
        p = Path(np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]]), W2)
        t = interleave_timing(p, [1.0, 1.0])
        assert t.total == pytest.approx(1.0)
        assert initial_timing(p, [1.0, 1.0]).total == pytest.approx(2.0)

    def test_velocity_limits_respected(self):
        rng = np.random.default_rng(5)
        p = Path(rng.uniform(-2, 2, (7, 4)), np.ones(4))
        v = rng.uniform(0.3, 2, 4)
        t = interleave_timing(p, v)
        assert np.all(np.abs(t.motions) <= v * t.durations[:, None] + 1e-12)
        np.testing.assert_array_equal(t.path.start, p.start)
        np.testing.assert_array_equal(t.path.end, p.end)
        assert t.total <= initial_timing(p, v).total + 1e-12

    def test_checker_rejects_colliding_shift(self):
        # interleaving would cut the corner through the disc
        checker = disc_checker((0.55, 0.45, 0.1))
        p = Path(np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]]), W2)
        free = interleave_timing(p, [1.0, 1.0])
        assert not checker.path_free(free.path.configs)
        t = interleave_timing(p, [1.0, 1.0], checker)
        assert checker.path_free(t.path.configs)
        assert t.total <= 2.0


@pytest.mark.parametrize("seed", range(4))
def test_every_operation_is_monotone(seed):
    checker = scene_checker(seed + 10)
    p = random_walk_path(np.random.default_rng(seed), checker, n=15)
    for op in (
        lambda x: shortcut(x, checker, SINGLE_VERTEX),
        lambda x: shortcut(x, checker, BINARY_INTERVAL),
        lambda x: shortcut(x, checker, RANDOM_PAIR, 100, seed),
        lambda x: flatten_extrema(x, checker),
        lambda x: insert_center_connections(x, checker),
        lambda x: smooth(x, checker, seed=seed),
    ):
        out = op(p)
        assert out.length() <= p.length()
        np.testing.assert_array_equal(out.start, p.start)
        np.testing.assert_array_equal(out.end, p.end)
        assert checker.path_free(out.configs)


def test_path_text_roundtrip(tmp_path):
    p = Path(np.array([[0.1, 0.2], [0.3, 0.4]]), W2)
    p.save(tmp_path / "p.txt")
    back = Path.load(tmp_path / "p.txt")
    np.testing.assert_allclose(back.configs, p.configs)


def test_duplicates_removed():
    p = Path(np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 0.0]]), W2)
    assert len(p) == 2
