"""Table-top object perception on point clouds: support plane, object clusters, boxes, grasps."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import ConvexHull, cKDTree
from scipy.spatial import QhullError

from .errors import DegenerateCluster, InsufficientData, InvalidArgument, Ungraspable


@dataclass(frozen=True)
class PlaneModel:
    """Points p with ``normal . p == offset``; the normal points to the side objects stand on."""

    normal: np.ndarray
    offset: float
    inliers: np.ndarray
    rms: float
    threshold: float

    def height(self, points) -> np.ndarray:
        return np.asarray(points, float) @ self.normal - self.offset

    def basis(self):
        """Two in-plane unit vectors ``u, v`` with ``u x v = normal``; yaw is measured from ``u``."""
        n = self.normal
        ref = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        u = ref - (ref @ n) * n
        u /= np.linalg.norm(u)
        return u, np.cross(n, u)


@dataclass(frozen=True)
class ObjectBox:
    center: np.ndarray
    yaw: float
    # length along the yaw direction, across it, and height above the plane
    extents: np.ndarray
    size: int
    normal: np.ndarray
    axes: np.ndarray  # rows: yaw direction, across direction, normal

    def local(self, points) -> np.ndarray:
        return (np.asarray(points, float) - self.center) @ self.axes.T

    def contains(self, points, tol=0.0) -> np.ndarray:
        return np.all(np.abs(self.local(points)) <= self.extents / 2 + tol, axis=-1)


@dataclass(frozen=True)
class GraspSpec:
    contacts: np.ndarray  # (2, 3) centres of the two gripped faces
    approach: np.ndarray  # direction the hand moves in, against the plane normal
    closing: np.ndarray  # unit vector from the first contact to the second
    aperture: float
    yaw: float

    @property
    def center(self) -> np.ndarray:
        return self.contacts.mean(axis=0)

    def tool_rotation(self) -> np.ndarray:
        """Tool frame with z along the approach and x along the closing direction."""
        z = self.approach / np.linalg.norm(self.approach)
        x = self.closing - (self.closing @ z) * z
        x /= np.linalg.norm(x)
        return np.column_stack([x, np.cross(z, x), z])


def _orient(normal, up):
    return -normal if normal @ up < 0 else normal


def fit_plane(points, threshold=0.01, iterations=200, seed=0, up=(0.0, 0.0, 1.0)) -> PlaneModel:
    """Random-consensus plane with the most inliers, refined by least squares on them.

    Triples are drawn from a seeded generator, so the result is
    deterministic. The normal is flipped to point along ``up``.
    """
    pts = np.asarray(points, float).reshape(-1, 3)
    if len(pts) < 3:
        raise InsufficientData("plane fitting needs at least 3 points")
    if threshold <= 0 or iterations < 1:
        raise InvalidArgument("threshold and iterations must be positive")
    up = np.asarray(up, float)
    rng = np.random.default_rng(seed)
    best_n, best_c, best_count = None, 0.0, -1
    for _ in range(iterations):
        a, b, c = pts[rng.choice(len(pts), 3, replace=False)]
        n = np.cross(b - a, c - a)
        norm = np.linalg.norm(n)
        if norm < 1e-12:
            continue
        n /= norm
        count = int(np.sum(np.abs(pts @ n - n @ a) <= threshold))
        if count > best_count:
            best_n, best_c, best_count = n, float(n @ a), count
    if best_n is None:
        raise InsufficientData("all sampled point triples are collinear")
    inl = np.flatnonzero(np.abs(pts @ best_n - best_c) <= threshold)
    n, c = best_n, best_c
    if len(inl) >= 3:
        centroid = pts[inl].mean(axis=0)
        _, _, vt = np.linalg.svd(pts[inl] - centroid)
        rn = vt[-1] / np.linalg.norm(vt[-1])
        rinl = np.flatnonzero(np.abs(pts @ rn - rn @ centroid) <= threshold)
        if len(rinl) >= len(inl):
            n, c, inl = rn, float(rn @ centroid), rinl
    if n @ up < 0:
        n, c = -n, -c
    resid = pts[inl] @ n - c
    return PlaneModel(n, c, inl, float(np.sqrt(np.mean(resid**2))), float(threshold))


def segment_objects(points, plane: PlaneModel, min_height=0.01, cluster_radius=0.05) -> list:
    """Clusters of points at least ``min_height`` above the plane.

    Points closer than ``cluster_radius`` share a cluster (single linkage),
    so touching objects merge. Clusters come largest first, ties by first
    point index.
    """
    if min_height < 0 or cluster_radius <= 0:
        raise InvalidArgument("min_height must be >= 0 and cluster_radius positive")
    pts = np.asarray(points, float).reshape(-1, 3)
    above = pts[plane.height(pts) >= min_height]
    if len(above) == 0:
        return []
    pairs = cKDTree(above).query_pairs(cluster_radius, output_type="ndarray")
    g = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(len(above), len(above)))
    _, labels = connected_components(g, directed=False)
    groups = [np.flatnonzero(labels == k) for k in np.unique(labels)]
    groups.sort(key=lambda idx: (-len(idx), idx[0]))
    return [above[idx] for idx in groups]


def _min_area_rectangle(xy):
    """Minimum-area enclosing rectangle: (yaw in [0, pi/2), centre, extents along yaw and across)."""
    try:
        hull = xy[ConvexHull(xy).vertices]
    except (QhullError, ValueError) as e:
        raise DegenerateCluster("cluster footprint has no area") from e
    edges = np.roll(hull, -1, axis=0) - hull
    angles = np.mod(np.arctan2(edges[:, 1], edges[:, 0]), math.pi / 2)
    best = None
    for th in np.unique(angles):
        d = np.array([math.cos(th), math.sin(th)])
        p = np.array([-d[1], d[0]])
        a, b = hull @ d, hull @ p
        area = (a.max() - a.min()) * (b.max() - b.min())
        # candidates are sorted by angle; a later one must be clearly smaller to win
        if best is None or area < best[0] * (1 - 1e-9):
            ctr = 0.5 * (a.max() + a.min()) * d + 0.5 * (b.max() + b.min()) * p
            best = (area, float(th), ctr, np.array([a.max() - a.min(), b.max() - b.min()]))
    return best[1], best[2], best[3]


def fit_bounding_box(cluster, plane: PlaneModel) -> ObjectBox:
    """Box standing on the plane: minimum-area footprint rectangle, height from the highest point."""
    pts = np.asarray(cluster, float).reshape(-1, 3)
    if len(pts) < 3:
        raise DegenerateCluster("a box needs at least 3 points")
    u, v = plane.basis()
    n = plane.normal
    xy = np.column_stack([pts @ u, pts @ v])
    yaw, ctr, ext = _min_area_rectangle(xy)
    h = float(plane.height(pts).max())
    if h <= 0:
        raise DegenerateCluster("cluster does not rise above the plane")
    d = math.cos(yaw) * u + math.sin(yaw) * v
    center = ctr[0] * u + ctr[1] * v + (plane.offset + 0.5 * h) * n
    axes = np.array([d, np.cross(n, d), n])
    return ObjectBox(center, yaw, np.array([ext[0], ext[1], h]), len(pts), n.copy(), axes)


def select_grasp(box: ObjectBox, max_aperture=0.08, finger_clearance=0.01) -> GraspSpec:
    """Grasp across the shortest horizontal side that fits the open hand.

    A side fits when its extent plus ``finger_clearance`` is at most
    ``max_aperture``. Equal sides go to the one at the lower yaw, i.e. the
    box's yaw direction. Contacts sit at the centres of the two faces; the
    hand comes down against the plane normal.
    """
    if max_aperture <= 0 or finger_clearance < 0:
        raise InvalidArgument("max_aperture must be positive and finger_clearance non-negative")
    options = [(box.extents[k], k) for k in (0, 1) if box.extents[k] + finger_clearance <= max_aperture]
    if not options:
        raise Ungraspable(f"both sides exceed the aperture {max_aperture}")
    width, k = min(options)
    closing = box.axes[k]
    yaw = box.yaw + (0.0 if k == 0 else math.pi / 2)
    half = 0.5 * width * closing
    contacts = np.array([box.center - half, box.center + half])
    return GraspSpec(contacts, -box.normal, closing.copy(), float(width), float(yaw))


def perceive(points, threshold=0.01, min_height=0.01, cluster_radius=0.05, seed=0):
    """Plane, clusters and boxes for a cloud (clusters too small for a box are skipped)."""
    plane = fit_plane(points, threshold, seed=seed)
    boxes = []
    for c in segment_objects(points, plane, min_height, cluster_radius):
        try:
            boxes.append(fit_bounding_box(c, plane))
        except DegenerateCluster:
            continue
    return plane, boxes


__all__ = [
    "GraspSpec",
    "ObjectBox",
    "PlaneModel",
    "fit_bounding_box",
    "fit_plane",
    "perceive",
    "segment_objects",
    "select_grasp",
]
