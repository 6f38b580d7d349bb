"""Obstacle tracking on a 2.5D ground grid: clustering, association, Kalman filtering, prediction."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy import ndimage
from scipy.optimize import linear_sum_assignment

from .errors import InvalidArgument


@dataclass(frozen=True)
class TrackingConfig:
    cell: float = 0.1
    gate: float = 1.0
    max_misses: int = 5
    # association distance weights; features are normalized by their scale
    w_pos: float = 1.0
    w_density: float = 0.1
    density_scale: float = 10.0
    w_height: float = 0.3
    height_scale: float = 1.0
    feature_blend: float = 0.5
    # white-acceleration process noise (m^2/s^3) and position measurement noise (m)
    accel_noise: float = 0.005
    meas_noise: float = 0.05
    init_vel_var: float = 1.0
    # prediction
    base_radius: float = 0.3
    k_sigma: float = 2.0
    # motion detection: |v| > moving_speed + moving_k * sigma_v
    moving_speed: float = 0.15
    moving_k: float = 2.0
    min_points: int = 1


class Grid25D:
    """Ground-plane grid with per-sensor point densities and max height above floor."""

    def __init__(self, origin, shape, cell=0.1):
        self.origin = np.asarray(origin, float).reshape(2)
        self.shape = (int(shape[0]), int(shape[1]))
        self.cell = float(cell)
        self.density: dict = {}
        self.height = np.full(self.shape, np.nan)
        self.sensors_3d: set = set()

    @classmethod
    def covering(cls, lo, hi, cell=0.1):
        lo, hi = np.asarray(lo, float), np.asarray(hi, float)
        n = np.ceil((hi - lo) / cell).astype(int)
        return cls(lo, n, cell)

    def copy(self):
        g = Grid25D(self.origin, self.shape, self.cell)
        g.density = {k: v.copy() for k, v in self.density.items()}
        g.height = self.height.copy()
        g.sensors_3d = set(self.sensors_3d)
        return g

    def cell_of(self, xy):
        return np.floor((np.asarray(xy, float) - self.origin) / self.cell).astype(int)

    def cell_center(self, ij):
        return self.origin + (np.asarray(ij, float) + 0.5) * self.cell

    def occupancy(self, min_points=1):
        occ = np.zeros(self.shape, bool)
        for d in self.density.values():
            occ |= d >= min_points
        return occ


def insert_points(grid: Grid25D, points, floor, ceiling, sensor_id, is_3d=False) -> Grid25D:
    """New grid with the points of one sensor added.

    Points outside ``[floor, ceiling]`` in z or outside the grid are ignored.
    Heights are recorded for 3D sensors only.
    """
    if not floor < ceiling:
        raise InvalidArgument("floor must be below ceiling")
    g = grid.copy()
    pts = np.asarray(points, float).reshape(-1, 3)
    pts = pts[(pts[:, 2] >= floor) & (pts[:, 2] <= ceiling)]
    ij = g.cell_of(pts[:, :2])
    inside = np.all((ij >= 0) & (ij < np.array(g.shape)), axis=1)
    ij, pts = ij[inside], pts[inside]
    dens = g.density.setdefault(sensor_id, np.zeros(g.shape))
    np.add.at(dens, (ij[:, 0], ij[:, 1]), 1.0)
    if is_3d:
        g.sensors_3d.add(sensor_id)
        h = np.full(g.shape, -np.inf)
        np.maximum.at(h, (ij[:, 0], ij[:, 1]), pts[:, 2] - floor)
        have = np.isfinite(h)
        g.height[have] = np.fmax(g.height[have], h[have])
    return g


@dataclass(frozen=True)
class Hypothesis:
    centroid: np.ndarray
    cells: tuple
    density: dict
    height: Optional[float]
    sensors: frozenset
    time: float = 0.0

    @property
    def cell_count(self):
        return len(self.cells)


def cluster(grid: Grid25D, time=0.0, min_points=1):
    """8-connected components of occupied cells, each as a :class:`Hypothesis`."""
    occ = grid.occupancy(min_points)
    labels, n = ndimage.label(occ, structure=np.ones((3, 3), int))
    hyps = []
    for lab in range(1, n + 1):
        ij = np.argwhere(labels == lab)
        centers = grid.cell_center(ij)
        density, sensors = {}, set()
        for sid, d in grid.density.items():
            vals = d[ij[:, 0], ij[:, 1]]
            if np.any(vals > 0):
                density[sid] = float(vals[vals > 0].mean())
                sensors.add(sid)
        hs = grid.height[ij[:, 0], ij[:, 1]]
        height = float(np.nanmax(hs)) if np.any(np.isfinite(hs)) else None
        hyps.append(
            Hypothesis(centers.mean(axis=0), tuple(map(tuple, ij)), density, height, frozenset(sensors), time)
        )
    return hyps


_track_ids = itertools.count(1)


@dataclass(frozen=True)
class Track:
    id: int
    state: np.ndarray  # x, y, vx, vy
    cov: np.ndarray
    time: float
    density: dict = field(default_factory=dict)
    height: Optional[float] = None
    age: int = 1
    misses: int = 0

    @property
    def position(self):
        return self.state[:2]

    @property
    def velocity(self):
        return self.state[2:]


def new_track(h: Hypothesis, cfg: TrackingConfig = TrackingConfig(), track_id=None) -> Track:
    P = np.diag([cfg.meas_noise**2] * 2 + [cfg.init_vel_var] * 2)
    tid = next(_track_ids) if track_id is None else track_id
    x = np.array([h.centroid[0], h.centroid[1], 0.0, 0.0])
    return Track(tid, x, P, h.time, dict(h.density), h.height)


def _transition(dt, q):
    F = np.eye(4)
    F[0, 2] = F[1, 3] = dt
    Q1 = q * np.array([[dt**3 / 3, dt**2 / 2], [dt**2 / 2, dt]])
    Q = np.zeros((4, 4))
    Q[np.ix_([0, 2], [0, 2])] = Q1
    Q[np.ix_([1, 3], [1, 3])] = Q1
    return F, Q


def kalman_predict(track: Track, dt, cfg: TrackingConfig = TrackingConfig()) -> Track:
    """Constant-velocity prediction by ``dt`` seconds."""
    if dt <= 0:
        raise InvalidArgument("dt must be positive")
    F, Q = _transition(dt, cfg.accel_noise)
    P = F @ track.cov @ F.T + Q
    return replace(track, state=F @ track.state, cov=0.5 * (P + P.T), time=track.time + dt)


def kalman_update(track: Track, h: Hypothesis, cfg: TrackingConfig = TrackingConfig()) -> Track:
    """Position-only measurement update with the hypothesis centroid (Joseph form)."""
    H = np.zeros((2, 4))
    H[0, 0] = H[1, 1] = 1.0
    R = np.eye(2) * cfg.meas_noise**2
    P = track.cov
    S = H @ P @ H.T + R
    K = P @ H.T @ np.linalg.inv(S)
    x = track.state + K @ (np.asarray(h.centroid, float) - H @ track.state)
    IKH = np.eye(4) - K @ H
    P = IKH @ P @ IKH.T + K @ R @ K.T
    a = cfg.feature_blend
    density = dict(track.density)
    for sid, v in h.density.items():
        density[sid] = (1 - a) * density[sid] + a * v if sid in density else v
    height = track.height
    if h.height is not None:
        height = h.height if height is None else (1 - a) * height + a * h.height
    return replace(track, state=x, cov=0.5 * (P + P.T), density=density, height=height, age=track.age + 1, misses=0)


def predicted_position(track: Track, t):
    return track.state[:2] + track.state[2:] * (t - track.time)


def association_distance(h: Hypothesis, o: Track, t=None, cfg: TrackingConfig = TrackingConfig()) -> float:
    """Spatial distance to the track's prediction plus feature dissimilarities.

    Densities are compared per sensor present in both; height only if both
    carry a 3D height.
    """
    t = h.time if t is None else t
    d = cfg.w_pos * float(np.linalg.norm(np.asarray(h.centroid) - predicted_position(o, t)))
    for sid in h.density.keys() & o.density.keys():
        d += cfg.w_density * abs(h.density[sid] - o.density[sid]) / cfg.density_scale
    if h.height is not None and o.height is not None:
        d += cfg.w_height * abs(h.height - o.height) / cfg.height_scale
    return d


@dataclass
class Association:
    matches: list
    unmatched_hypotheses: list
    unmatched_tracks: list


def associate(hypotheses, tracks, t=None, cfg: TrackingConfig = TrackingConfig()) -> Association:
    """Global-nearest-neighbour assignment minimizing total distance within the gate."""
    nh, nt = len(hypotheses), len(tracks)
    if nh == 0 or nt == 0:
        return Association([], list(range(nh)), list(range(nt)))
    C = np.array([[association_distance(h, o, t, cfg) for o in tracks] for h in hypotheses])
    big = cfg.gate * 10.0 + C.max() * 10.0 + 1.0
    gated = np.where(C <= cfg.gate, C, big)
    rows, cols = linear_sum_assignment(gated)
    matches = [(int(r), int(c)) for r, c in zip(rows, cols) if C[r, c] <= cfg.gate]
    mh = {r for r, _ in matches}
    mt = {c for _, c in matches}
    return Association(matches, [i for i in range(nh) if i not in mh], [j for j in range(nt) if j not in mt])


def predict_occupancy(track: Track, horizon, steps=20, cfg: TrackingConfig = TrackingConfig()):
    """Predicted discs ``(t, (x, y), radius)`` at ``steps + 1`` times over ``[0, horizon]``.

    Radius = base radius + k * sqrt(largest eigenvalue of the position
    covariance), made non-decreasing along the horizon.
    """
    if horizon <= 0:
        raise InvalidArgument("horizon must be positive")
    out = []
    r_prev = 0.0
    for t in np.linspace(0.0, horizon, steps + 1):
        if t > 0:
            F, Q = _transition(t, cfg.accel_noise)
            x, P = F @ track.state, F @ track.cov @ F.T + Q
        else:
            x, P = track.state, track.cov
        lam = max(0.0, float(np.linalg.eigvalsh(P[:2, :2])[-1]))
        r_prev = max(r_prev, cfg.base_radius + cfg.k_sigma * math.sqrt(lam))
        out.append((float(t), (float(x[0]), float(x[1])), r_prev))
    return out


def is_moving(track: Track, cfg: TrackingConfig = TrackingConfig()) -> bool:
    sigma_v = math.sqrt(max(0.0, float(np.linalg.eigvalsh(track.cov[2:, 2:])[-1])))
    return float(np.linalg.norm(track.velocity)) > cfg.moving_speed + cfg.moving_k * sigma_v


class Tracker:
    """Per-tick tracking loop: predict, associate, update, spawn and drop tracks."""

    def __init__(self, cfg: TrackingConfig = TrackingConfig()):
        self.cfg = cfg
        self.tracks: list = []
        self._ids = itertools.count(1)

    def step(self, hypotheses, t):
        cfg = self.cfg
        tracks = [kalman_predict(o, t - o.time, cfg) if t > o.time else o for o in self.tracks]
        assoc = associate(hypotheses, tracks, t, cfg)
        updated = []
        for hi, ti in assoc.matches:
            updated.append(kalman_update(tracks[ti], hypotheses[hi], cfg))
        for ti in assoc.unmatched_tracks:
            o = tracks[ti]
            if o.misses + 1 <= cfg.max_misses:
                updated.append(replace(o, misses=o.misses + 1, age=o.age + 1))
        for hi in assoc.unmatched_hypotheses:
            updated.append(new_track(hypotheses[hi], cfg, next(self._ids)))
        self.tracks = sorted(updated, key=lambda o: o.id)
        return self.tracks

    def moving_tracks(self):
        return [o for o in self.tracks if o.misses == 0 and is_moving(o, self.cfg)]
