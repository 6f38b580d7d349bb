"""Configuration-space paths, the weighted metric, and certified segment collision checks."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path as FilePath
from typing import Optional

import numpy as np

from .collision_world import WorldSnapshot, min_distance_batch
from .errors import InvalidArgument
from .kinematics import RobotModel, bubble_measure, reach_bounds, swept_radii


def default_weights(model: RobotModel) -> np.ndarray:
    """Swept radius at the zero configuration for revolute joints, 1 for translations.

    One metric unit then roughly equals one metre of worst-case link motion.
    Joints without distal geometry get a small positive weight so the metric
    stays a norm.
    """
    q0 = model.clamp(np.zeros(model.dof))
    w = swept_radii(model, q0)
    w[~model.revolute_mask] = 1.0
    return np.maximum(w, 0.05)


def weighted_distance(a, b, weights):
    return np.sqrt(np.sum((weights * (np.asarray(b) - np.asarray(a))) ** 2, axis=-1))


@dataclass
class Path:
    """Ordered configurations; adjacent entries are distinct."""

    configs: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.configs = np.atleast_2d(np.asarray(self.configs, float)).copy()
        self.weights = np.asarray(self.weights, float)
        if len(self.configs) == 0:
            raise InvalidArgument("a path needs at least one configuration")
        keep = [0] + [i for i in range(1, len(self.configs)) if np.any(self.configs[i] != self.configs[i - 1])]
        self.configs = self.configs[keep]

    def __len__(self):
        return len(self.configs)

    @property
    def start(self):
        return self.configs[0]

    @property
    def end(self):
        return self.configs[-1]

    def segment_lengths(self):
        return weighted_distance(self.configs[:-1], self.configs[1:], self.weights)

    def length(self) -> float:
        return float(np.sum(self.segment_lengths()))

    def replaced(self, configs):
        return Path(configs, self.weights)

    def save(self, path) -> None:
        """Text format: one configuration per line, space separated."""
        lines = [" ".join(f"{v:.9g}" for v in q) for q in self.configs]
        FilePath(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path, weights=None):
        rows = [[float(v) for v in line.split()] for line in FilePath(path).read_text().splitlines() if line.strip()]
        q = np.array(rows, float)
        return cls(q, np.ones(q.shape[1]) if weights is None else weights)


@dataclass
class TimedPath:
    path: Path
    durations: np.ndarray
    vmax: np.ndarray
    # per-segment joint displacements actually executed (rows may differ from the raw path after interleaving)
    motions: Optional[np.ndarray] = None

    @property
    def total(self) -> float:
        return float(np.sum(self.durations))


class SegmentChecker:
    """Collision checks with a clearance certificate.

    A straight segment is sampled so consecutive samples differ by at most
    ``resolution`` in the bubble measure (using configuration-independent
    reach bounds); requiring clearance above ``resolution / 2`` at every
    sample then certifies the whole segment, because every intermediate
    configuration moves no robot point farther than that from a sample.
    """

    def __init__(self, model: RobotModel, world: WorldSnapshot, resolution=0.025, clearance=0.0):
        if resolution <= 0 or clearance < 0:
            raise InvalidArgument("resolution must be positive and clearance non-negative")
        self.model = model
        self.world = world
        self.resolution = float(resolution)
        self.margin = max(float(clearance), 0.5 * self.resolution)
        self.reach = reach_bounds(world.robot_model(model))
        self.checks = 0

    def steps(self, qa, qb) -> int:
        rho = float(bubble_measure(np.asarray(qb) - np.asarray(qa), self.reach, self.model.revolute_mask))
        return max(1, int(math.ceil(rho / self.resolution)))

    def configs_free(self, Q) -> np.ndarray:
        Q = np.atleast_2d(Q)
        self.checks += len(Q)
        return min_distance_batch(self.model, Q, self.world) > self.margin

    def config_free(self, q) -> bool:
        return bool(self.configs_free(q)[0])

    def segment_free(self, qa, qb, include_start=False, chunk=64) -> bool:
        qa, qb = np.asarray(qa, float), np.asarray(qb, float)
        n = self.steps(qa, qb)
        ts = np.arange(0 if include_start else 1, n + 1) / n
        for k in range(0, len(ts), chunk):
            t = ts[k : k + chunk, None]
            if not np.all(self.configs_free(qa + t * (qb - qa))):
                return False
        return True

    def last_free(self, qa, qb):
        """Farthest sample of the segment reachable from ``qa`` without a failed check (or None)."""
        qa, qb = np.asarray(qa, float), np.asarray(qb, float)
        n = self.steps(qa, qb)
        ts = np.arange(1, n + 1) / n
        ok = self.configs_free(qa + ts[:, None] * (qb - qa))
        bad = np.flatnonzero(~ok)
        k = n if len(bad) == 0 else bad[0]
        return None if k == 0 else qa + ts[k - 1] * (qb - qa)

    def path_free(self, configs) -> bool:
        configs = np.atleast_2d(configs)
        if not self.config_free(configs[0]):
            return False
        return all(self.segment_free(a, b) for a, b in zip(configs[:-1], configs[1:]))
