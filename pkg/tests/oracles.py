"""Independent reference computations shared by several test modules."""
import numpy as np

from safemm.collision_world import Obstacle, WorldSnapshot, min_distance
from safemm.kinematics import TRANS_X, TRANS_Y, JointSpec, RobotModel, Sphere
from safemm.octree_fusion import FREE, OCCLUDED, POINT, ROBOT_STATE
from safemm.sensor_sim import MAX_RANGE, OBSTACLE


def point_robot(limit=5.0):
    """Configuration space equals the plane: a point moved by two translations."""
    joints = [JointSpec(TRANS_X, limits=(-limit, limit)), JointSpec(TRANS_Y, limits=(-limit, limit))]
    return RobotModel(joints, [[], [Sphere((0, 0, 0), 0.0)]])


def sample_in_bubble(rng, q, d, radii, revolute_mask, n):
    """Uniform samples of {q + dq : sum r_j |dq_j| + |dq_trans| < d}.

    Draws from the density exp(-measure(dq)), which factorizes into Laplace
    variables per revolute joint and a Gamma-radius isotropic vector for the
    translations, then rescales to the unit sphere of the measure and by
    U^(1/dim). Any density that depends on the measure only gives a uniform
    ball this way.
    """
    q = np.asarray(q, float)
    rev = np.asarray(revolute_mask, bool)
    dim = len(q)
    x = np.zeros((n, dim))
    r = np.asarray(radii, float)[rev]
    if rev.any():
        x[:, rev] = rng.laplace(0.0, 1.0, (n, rev.sum())) / r
    nt = int((~rev).sum())
    if nt:
        u = rng.normal(size=(n, nt))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        x[:, ~rev] = u * rng.gamma(nt, 1.0, (n, 1))
    meas = np.sum(r * np.abs(x[:, rev]), axis=1) + np.linalg.norm(x[:, ~rev], axis=1)
    scale = d * rng.uniform(0, 1, n) ** (1.0 / dim) / meas
    return q + x * scale[:, None]


def distal_distance(model, q, world, joint):
    """Minimum distance over the links moved by ``joint`` (exact, via per-link nearest pairs)."""
    res = min_distance(model, q, world)
    ds = [e.distance for e in res.links if e.link >= joint]
    return min(ds) if ds else np.inf


def random_sphere_world(rng, n, lo, hi, rmin=0.02, rmax=0.15):
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    obs = [Obstacle.sphere(f"s{k}", rng.uniform(lo, hi), rng.uniform(rmin, rmax)) for k in range(n)]
    return WorldSnapshot(tuple(obs))


def slab_params(spec, a, b):
    """Per-voxel entry/exit parameters of segment a->b (all voxels, brute force).

    Works in grid units with half-open voxels, matching the floor convention of keys.
    """
    n = spec.n
    idx = np.stack(np.meshgrid(np.arange(n), np.arange(n), np.arange(n), indexing="ij"), -1).reshape(-1, 3)
    ga = (np.asarray(a, float) - spec.lo) / spec.leaf
    d = (np.asarray(b, float) - np.asarray(a, float)) / spec.leaf
    with np.errstate(divide="ignore", invalid="ignore"):
        ta = (idx - ga) / d
        tb = (idx + 1 - ga) / d
    par = d == 0
    inside = (ga >= idx) & (ga < idx + 1)
    tmin = np.where(par, np.where(inside, -np.inf, np.inf), np.minimum(ta, tb)).max(axis=1)
    tmax = np.where(par, np.where(inside, np.inf, -np.inf), np.maximum(ta, tb)).min(axis=1)
    return idx, np.maximum(tmin, 0.0), np.minimum(tmax, 1.0)


def _axis_slabs(spec, a, d):
    """Per-axis entry/exit parameters for every cell index: (R, 3, n) arrays."""
    n = spec.n
    i = np.arange(n)[None, None, :]
    ga = ((a - spec.lo) / spec.leaf)[:, :, None]
    d = d[:, :, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        ta = (i - ga) / d
        tb = (i + 1 - ga) / d
    par = d == 0
    inside = (ga >= i) & (ga < i + 1)
    lo = np.where(par, np.where(inside, -np.inf, np.inf), np.minimum(ta, tb))
    hi = np.where(par, np.where(inside, np.inf, -np.inf), np.maximum(ta, tb))
    return lo, hi


def brute_force_view(cloud, spec, chunk=16):
    """Voxel-by-voxel classification using exhaustive ray membership (slab tests).

    Every voxel is tested against every ray; the slab intervals are separable
    per axis, which lets a chunk of rays be evaluated on the full grid at once.
    """
    n = spec.n
    O, R, V = (np.zeros((n, n, n), bool) for _ in range(3))
    vec = cloud.points - cloud.origin
    r = np.linalg.norm(vec, axis=1)
    ends = cloud.origin + vec / r[:, None] * cloud.max_range
    for s in range(0, len(vec), chunk):
        sl = slice(s, s + chunk)
        a = np.broadcast_to(cloud.origin, ends[sl].shape)
        lo, hi = _axis_slabs(spec, a, (ends[sl] - a) / spec.leaf)
        t_in = np.maximum(np.maximum(lo[:, 0, :, None, None], lo[:, 1, None, :, None]), lo[:, 2, None, None, :])
        t_out = np.minimum(np.minimum(hi[:, 0, :, None, None], hi[:, 1, None, :, None]), hi[:, 2, None, None, :])
        t_in, t_out = np.maximum(t_in, 0.0), np.minimum(t_out, 1.0)
        hit = t_out > t_in
        V |= hit.any(axis=0)
        behind = hit & (t_out > (r[sl] / cloud.max_range)[:, None, None, None])
        lab = cloud.labels[sl]
        O |= behind[lab == OBSTACLE].any(axis=0)
        R |= behind[(lab != OBSTACLE) & (lab != MAX_RANGE)].any(axis=0)
    P = np.zeros((n, n, n), bool)
    hk = spec.key_of(cloud.points[cloud.labels == OBSTACLE])
    hk = hk[spec.contains_key(hk)]
    P[tuple(hk.T)] = True
    return P, O | P, R, V | O | P


def brute_force_fuse(views):
    """Per-voxel evaluation of the fusion rule."""
    n = views[0][0].shape[0]
    states = np.zeros((n,) * 3, np.uint8)
    for key in np.ndindex(n, n, n):
        F = [v[3][key] and not (v[1][key] or v[2][key]) for v in views]
        point = any(v[0][key] for v in views)
        occluded = any(v[1][key] and not any(F[j] for j in range(len(views)) if j != i) for i, v in enumerate(views))
        robot = any(v[2][key] for v in views)
        if point:
            states[key] = POINT
        elif occluded:
            states[key] = OCCLUDED
        elif robot:
            states[key] = ROBOT_STATE
        elif any(F):
            states[key] = FREE
    return states
