"""Obstacle placement along a trajectory curve.

Obstacles are discs on the ground plane. Placement anchors each disc at a
curvature peak and pushes it along the inward normal of that turn; straight
lines (no peaks) fall back to random positions beside the line. Rejection
sampling guarantees the trajectory itself clears every disc.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .curves import (
    ParamCurve,
    _perp,
    curvature_profile,
    curve_end,
    curve_start,
    detect_curvature_peaks,
    inward_normal,
    param_at_arclength,
    sample_curve,
)
from .errors import PlacementFailed

SAFETY_RADIUS_RANGE = (0.3, 0.5)
OFFSET_MARGIN_RANGE = (0.1, 0.5)
# Trajectory must clear each disc by at least the safety radius; the extra
# slack keeps ground-truth motions clear even after f32 file round-trips.
CLEARANCE_SLACK = 0.02
LEVEL_COUNT_RANGE = {1: (1, 3), 2: (1, 3), 3: (3, 5)}
PROFILE_SAMPLES = 512
CLEARANCE_SAMPLES = 10_000
MAX_ATTEMPTS = 100


@dataclass
class Obstacle:
    center: np.ndarray  # (2,) XZ meters
    safety_radius: float
    # Curve parameter of the anchoring curvature peak; None for the
    # straight-line fallback, which has no turn to be inside of.
    anchor_param: float | None = None

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64).reshape(2)
        self.safety_radius = float(self.safety_radius)


@dataclass
class ObstacleScene:
    curve: ParamCurve
    obstacles: list[Obstacle]
    start: np.ndarray
    goal: np.ndarray
    level: int = 0

    def __post_init__(self):
        self.start = np.asarray(self.start, dtype=np.float64).reshape(2)
        self.goal = np.asarray(self.goal, dtype=np.float64).reshape(2)


def min_distance_to_curve(c: ParamCurve, point: np.ndarray, n: int = CLEARANCE_SAMPLES) -> float:
    """Brute-force min distance from a point to n dense curve samples."""
    pts = sample_curve(c, n)
    return float(np.min(np.linalg.norm(pts - point, axis=-1)))


def clearance_ok(c: ParamCurve, obstacles: list[Obstacle], n: int = CLEARANCE_SAMPLES) -> bool:
    """True when every obstacle clears every dense sample by >= safety_radius."""
    pts = sample_curve(c, n)
    for ob in obstacles:
        if np.min(np.linalg.norm(pts - ob.center, axis=-1)) < ob.safety_radius:
            return False
    return True


def place_obstacles(c: ParamCurve, level: int, rng: np.random.Generator) -> ObstacleScene:
    """Place level-appropriate obstacles beside a canonical curve.

    Count: uniform 1-3 for levels 1-2, 3-5 for level 3. Each obstacle sits at
    distance in [safety_radius + 0.1, safety_radius + 0.5] from its anchor
    point, on the inward side of the turn; every candidate is rejected unless
    the whole trajectory keeps >= safety_radius + slack distance. After
    MAX_ATTEMPTS rejections per obstacle, PlacementFailed.
    """
    if level not in LEVEL_COUNT_RANGE:
        raise ValueError(f"level must be 1, 2, or 3, got {level}")
    lo, hi = LEVEL_COUNT_RANGE[level]
    count = int(rng.integers(lo, hi + 1))
    profile = curvature_profile(c, PROFILE_SAMPLES)
    peaks = detect_curvature_peaks(profile)
    dense = sample_curve(c, CLEARANCE_SAMPLES)

    obstacles: list[Obstacle] = []
    for _ in range(count):
        placed = None
        for _attempt in range(MAX_ATTEMPTS):
            radius = float(rng.uniform(*SAFETY_RADIUS_RANGE))
            dist = radius + float(rng.uniform(*OFFSET_MARGIN_RANGE))
            if peaks:
                idx, _kappa = peaks[int(rng.integers(len(peaks)))]
                t_anchor = idx / (PROFILE_SAMPLES - 1)
                anchor = np.asarray(c.point(t_anchor), dtype=np.float64).reshape(2)
                normal = np.asarray(inward_normal(c, t_anchor), dtype=np.float64).reshape(2)
                center = anchor + dist * normal
                candidate = Obstacle(center, radius, anchor_param=float(t_anchor))
            else:
                # Straight-line fallback: random arc-length position, random side.
                from .curves import arc_length

                s = float(rng.uniform(0.0, arc_length(c)))
                t_anchor = float(param_at_arclength(c, s))
                anchor = np.asarray(c.point(t_anchor), dtype=np.float64).reshape(2)
                vel = np.asarray(c.velocity(t_anchor), dtype=np.float64).reshape(2)
                lateral = _perp(vel / np.linalg.norm(vel))
                side = 1.0 if rng.random() < 0.5 else -1.0
                center = anchor + side * dist * lateral
                candidate = Obstacle(center, radius, anchor_param=None)
            gap = np.min(np.linalg.norm(dense - candidate.center, axis=-1))
            if gap >= radius + CLEARANCE_SLACK:
                placed = candidate
                break
        if placed is None:
            raise PlacementFailed(
                f"no valid placement after {MAX_ATTEMPTS} attempts (level {level})"
            )
        obstacles.append(placed)
    return ObstacleScene(c, obstacles, curve_start(c), curve_end(c), level)
