"""Planar parametric curves on the XZ ground plane.

A curve point is (x, z) in meters; world Y is up and never appears here.
Five families, in increasing difficulty:

    level 1: Linear
    level 2: Arc
    level 3: QuadBezier, CubicBezier, Sinusoid

All curves are parameterized over t in [0, 1]. Signed curvature follows the
(x, z) orientation convention: kappa = (x'z'' - z'x'') / |v|^3, which makes a
counter-clockwise arc (theta increasing in point = center + r(cos t, sin t))
have kappa = +1/r. The inward normal of a turn is sign(kappa) * (-z', x')/|v|.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import DegenerateTangent, ShapeMismatch

_GL_PANELS = 24
_GL_DEGREE = 10
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(_GL_DEGREE)

_TANGENT_EPS = 1e-8


def _vec2(p) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64).reshape(-1)
    if p.shape != (2,):
        raise ShapeMismatch(f"expected a 2-vector, got shape {p.shape}")
    return p.copy()


def _perp(v: np.ndarray) -> np.ndarray:
    """Rotate a 2-vector by +90 degrees in the (x, z) orientation."""
    return np.stack([-v[..., 1], v[..., 0]], axis=-1)


# ------------------------------------------------------------- curve families


@dataclass
class Linear:
    start: np.ndarray
    end: np.ndarray
    speed: float  # m/s, carried for the prompt; geometry ignores it

    def __post_init__(self):
        self.start = _vec2(self.start)
        self.end = _vec2(self.end)
        self.speed = float(self.speed)

    def point(self, t):
        t = np.asarray(t, dtype=np.float64)[..., None]
        return self.start + t * (self.end - self.start)

    def velocity(self, t):
        t = np.asarray(t, dtype=np.float64)
        return np.broadcast_to(self.end - self.start, t.shape + (2,)).copy()

    def acceleration(self, t):
        t = np.asarray(t, dtype=np.float64)
        return np.zeros(t.shape + (2,))


@dataclass
class Arc:
    """Circular arc: point(t) = center + r * (cos theta(t), sin theta(t)).

    theta runs from the start angle through `angle` radians, increasing for
    direction "ccw" and decreasing for "cw". `end` is kept consistent with
    (center, radius, angle, direction); factories enforce this.
    """

    start: np.ndarray
    end: np.ndarray
    center: np.ndarray
    radius: float
    angle: float  # swept angle in radians, positive
    direction: str  # "ccw" | "cw"

    def __post_init__(self):
        self.start = _vec2(self.start)
        self.end = _vec2(self.end)
        self.center = _vec2(self.center)
        self.radius = float(self.radius)
        self.angle = float(self.angle)
        if self.direction not in ("ccw", "cw"):
            raise ValueError(f"direction must be 'ccw' or 'cw', got {self.direction!r}")

    @property
    def _theta0(self) -> float:
        d = self.start - self.center
        return math.atan2(d[1], d[0])

    @property
    def _sign(self) -> float:
        return 1.0 if self.direction == "ccw" else -1.0

    def _theta(self, t):
        t = np.asarray(t, dtype=np.float64)
        return self._theta0 + self._sign * self.angle * t

    def point(self, t):
        th = self._theta(t)
        return self.center + self.radius * np.stack([np.cos(th), np.sin(th)], axis=-1)

    def velocity(self, t):
        th = self._theta(t)
        w = self._sign * self.angle
        return self.radius * w * np.stack([-np.sin(th), np.cos(th)], axis=-1)

    def acceleration(self, t):
        th = self._theta(t)
        w = self._sign * self.angle
        return -self.radius * w * w * np.stack([np.cos(th), np.sin(th)], axis=-1)


@dataclass
class QuadBezier:
    p0: np.ndarray
    p1: np.ndarray
    p2: np.ndarray

    def __post_init__(self):
        self.p0, self.p1, self.p2 = _vec2(self.p0), _vec2(self.p1), _vec2(self.p2)

    def point(self, t):
        t = np.asarray(t, dtype=np.float64)[..., None]
        u = 1.0 - t
        return u * u * self.p0 + 2.0 * u * t * self.p1 + t * t * self.p2

    def velocity(self, t):
        t = np.asarray(t, dtype=np.float64)[..., None]
        return 2.0 * (1.0 - t) * (self.p1 - self.p0) + 2.0 * t * (self.p2 - self.p1)

    def acceleration(self, t):
        t = np.asarray(t, dtype=np.float64)
        a = 2.0 * (self.p2 - 2.0 * self.p1 + self.p0)
        return np.broadcast_to(a, t.shape + (2,)).copy()


@dataclass
class CubicBezier:
    p0: np.ndarray
    p1: np.ndarray
    p2: np.ndarray
    p3: np.ndarray

    def __post_init__(self):
        self.p0, self.p1 = _vec2(self.p0), _vec2(self.p1)
        self.p2, self.p3 = _vec2(self.p2), _vec2(self.p3)

    def point(self, t):
        t = np.asarray(t, dtype=np.float64)[..., None]
        u = 1.0 - t
        return (
            u * u * u * self.p0
            + 3.0 * u * u * t * self.p1
            + 3.0 * u * t * t * self.p2
            + t * t * t * self.p3
        )

    def velocity(self, t):
        t = np.asarray(t, dtype=np.float64)[..., None]
        u = 1.0 - t
        return (
            3.0 * u * u * (self.p1 - self.p0)
            + 6.0 * u * t * (self.p2 - self.p1)
            + 3.0 * t * t * (self.p3 - self.p2)
        )

    def acceleration(self, t):
        t = np.asarray(t, dtype=np.float64)[..., None]
        u = 1.0 - t
        return 6.0 * u * (self.p2 - 2.0 * self.p1 + self.p0) + 6.0 * t * (
            self.p3 - 2.0 * self.p2 + self.p1
        )


@dataclass
class Sinusoid:
    """Chord start->end plus a perpendicular offset A * sin(2 pi f t).

    f counts cycles over the parameter range; curve(1) == end requires
    sin(2 pi f) == 0, i.e. 2f integral. validate() enforces that.
    """

    start: np.ndarray
    end: np.ndarray
    amplitude: float
    frequency: float

    def __post_init__(self):
        self.start = _vec2(self.start)
        self.end = _vec2(self.end)
        self.amplitude = float(self.amplitude)
        self.frequency = float(self.frequency)

    @property
    def _normal(self) -> np.ndarray:
        d = self.end - self.start
        n = np.linalg.norm(d)
        if n < _TANGENT_EPS:
            raise DegenerateTangent("sinusoid chord has near-zero length")
        return _perp(d) / n

    def point(self, t):
        t = np.asarray(t, dtype=np.float64)
        chord = self.start + t[..., None] * (self.end - self.start)
        w = 2.0 * math.pi * self.frequency
        return chord + (self.amplitude * np.sin(w * t))[..., None] * self._normal

    def velocity(self, t):
        t = np.asarray(t, dtype=np.float64)
        w = 2.0 * math.pi * self.frequency
        lat = (self.amplitude * w * np.cos(w * t))[..., None] * self._normal
        return (self.end - self.start) + lat

    def acceleration(self, t):
        t = np.asarray(t, dtype=np.float64)
        w = 2.0 * math.pi * self.frequency
        return (-self.amplitude * w * w * np.sin(w * t))[..., None] * self._normal

    def validate(self) -> None:
        if abs(math.sin(2.0 * math.pi * self.frequency)) > 1e-9:
            raise ValueError("sinusoid frequency must be a multiple of 0.5")


ParamCurve = Linear | Arc | QuadBezier | CubicBezier | Sinusoid

CURVE_TYPE_TAGS: dict[type, str] = {
    Linear: "linear",
    Arc: "arc",
    QuadBezier: "quad_bezier",
    CubicBezier: "cubic_bezier",
    Sinusoid: "sinusoidal",
}


def curve_start(c: ParamCurve) -> np.ndarray:
    return c.p0.copy() if isinstance(c, (QuadBezier, CubicBezier)) else c.start.copy()


def curve_end(c: ParamCurve) -> np.ndarray:
    if isinstance(c, QuadBezier):
        return c.p2.copy()
    if isinstance(c, CubicBezier):
        return c.p3.copy()
    return c.end.copy()


# ------------------------------------------------------------------ factories


def make_arc(center, radius: float, theta0: float, angle: float, direction: str) -> Arc:
    """Build an arc from its circle and sweep; start/end derived consistently."""
    center = _vec2(center)
    sign = 1.0 if direction == "ccw" else -1.0
    start = center + radius * np.array([math.cos(theta0), math.sin(theta0)])
    theta1 = theta0 + sign * angle
    end = center + radius * np.array([math.cos(theta1), math.sin(theta1)])
    return Arc(start, end, center, radius, angle, direction)


def canonical_arc(radius: float, angle: float, direction: str) -> Arc:
    """Arc starting at the origin with initial tangent +Z."""
    if direction == "ccw":
        return make_arc(np.array([-radius, 0.0]), radius, 0.0, angle, "ccw")
    return make_arc(np.array([radius, 0.0]), radius, math.pi, angle, "cw")


def arc_from_endpoints(start, end, center, direction: str) -> Arc:
    """Recover an arc from start/end/center (the serialized form).

    The radius comes from |start - center|; the swept angle is the rotation
    from start to end going around `direction`. The stored end is recomputed
    so point(1) == end holds exactly even for quantized inputs.
    """
    start, end, center = _vec2(start), _vec2(end), _vec2(center)
    radius = float(np.linalg.norm(start - center))
    if radius < _TANGENT_EPS:
        raise DegenerateTangent("arc start coincides with center")
    ts = math.atan2(start[1] - center[1], start[0] - center[0])
    te = math.atan2(end[1] - center[1], end[0] - center[0])
    if direction == "ccw":
        sweep = (te - ts) % (2.0 * math.pi)
    else:
        sweep = (ts - te) % (2.0 * math.pi)
    return make_arc(center, radius, ts, sweep, direction)


# ------------------------------------------------------------------- sampling


def sample_curve(c: ParamCurve, n: int) -> np.ndarray:
    """n points at uniform parameter spacing, endpoints included. n >= 2."""
    if n < 2:
        raise ValueError("need at least 2 samples")
    return c.point(np.linspace(0.0, 1.0, n))


def initial_tangent(c: ParamCurve) -> np.ndarray:
    """Unit tangent at t=0; DegenerateTangent if the velocity is near zero."""
    v = np.asarray(c.velocity(0.0), dtype=np.float64).reshape(2)
    n = np.linalg.norm(v)
    if n < _TANGENT_EPS:
        raise DegenerateTangent("velocity at t=0 is near zero")
    return v / n


def speed_profile(c: ParamCurve, t) -> np.ndarray:
    return np.linalg.norm(c.velocity(t), axis=-1)


# ----------------------------------------------------------------- arc length


def arc_length(c: ParamCurve) -> float:
    """Total length in meters; closed-form where available, quadrature otherwise."""
    return float(arclength_upto(c, np.array(1.0)))


def arclength_upto(c: ParamCurve, t) -> np.ndarray:
    """Arc length from 0 to each t, composite Gauss-Legendre on smooth families."""
    t = np.asarray(t, dtype=np.float64)
    if isinstance(c, Linear):
        return t * np.linalg.norm(c.end - c.start)
    if isinstance(c, Arc):
        return t * (c.radius * c.angle)
    edges = np.linspace(0.0, 1.0, _GL_PANELS + 1) * t[..., None]
    lo, hi = edges[..., :-1], edges[..., 1:]
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    # nodes: t-shape x panels x degree
    pts = mid[..., None] + half[..., None] * _GL_NODES
    speeds = speed_profile(c, pts)
    return np.sum(np.sum(speeds * _GL_WEIGHTS, axis=-1) * half, axis=-1)


def param_at_arclength(c: ParamCurve, s) -> np.ndarray:
    """Invert the arc-length map: parameter t with arclength_upto(t) == s.

    Newton iteration with clamping (the map is strictly increasing); falls
    back to bisection for any element that fails to converge.
    """
    s = np.asarray(s, dtype=np.float64)
    total = arc_length(c)
    if isinstance(c, (Linear, Arc)):
        return np.clip(s / total, 0.0, 1.0)
    t = np.clip(s / total, 0.0, 1.0)
    target = np.clip(s, 0.0, total)
    for _ in range(50):
        resid = arclength_upto(c, t) - target
        if np.all(np.abs(resid) < 1e-12 * max(total, 1.0)):
            break
        spd = np.maximum(speed_profile(c, t), _TANGENT_EPS)
        t = np.clip(t - resid / spd, 0.0, 1.0)
    else:
        t = _bisect_arclength(c, target)
    return t


def _bisect_arclength(c: ParamCurve, target: np.ndarray) -> np.ndarray:
    lo = np.zeros_like(target)
    hi = np.ones_like(target)
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        below = arclength_upto(c, mid) < target
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return 0.5 * (lo + hi)


# ------------------------------------------------------------------ curvature


def curvature(c: ParamCurve, t) -> np.ndarray:
    """Signed planar curvature (x'z'' - z'x'') / |v|^3 at each t."""
    v = c.velocity(t)
    a = c.acceleration(t)
    spd = np.linalg.norm(v, axis=-1)
    if np.any(spd < _TANGENT_EPS):
        raise DegenerateTangent("curvature undefined where speed vanishes")
    cross = v[..., 0] * a[..., 1] - v[..., 1] * a[..., 0]
    return cross / spd**3


def curvature_profile(c: ParamCurve, n: int) -> np.ndarray:
    """Signed curvature at n uniform parameters (endpoints included)."""
    if n < 3:
        raise ValueError("need at least 3 samples")
    return curvature(c, np.linspace(0.0, 1.0, n))


def inward_normal(c: ParamCurve, t) -> np.ndarray:
    """Unit normal pointing into the turn: sign(kappa) * (-z', x') / |v|."""
    v = c.velocity(t)
    spd = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(spd < _TANGENT_EPS):
        raise DegenerateTangent("normal undefined where speed vanishes")
    k = curvature(c, t)
    return np.sign(k)[..., None] * _perp(v) / spd


def detect_curvature_peaks(
    kappa: np.ndarray, kappa_min: float = 0.1, window_frac: float = 0.10
) -> list[tuple[int, float]]:
    """Local maxima of |kappa| above kappa_min, non-max-suppressed.

    Plateaus (runs of equal |kappa|) yield a single representative peak at the
    run midpoint, so a constant-curvature arc reports exactly one peak at its
    angular midpoint. Suppression removes any peak within window_frac * n
    samples of a stronger one. Returns (index, signed kappa) sorted by |kappa|
    descending.
    """
    kappa = np.asarray(kappa, dtype=np.float64)
    n = kappa.shape[0]
    mag = np.abs(kappa)

    def same(a: float, b: float) -> bool:
        # Plateau equality up to float noise (constant-curvature arcs jitter
        # in the last few ulps).
        return abs(a - b) <= 1e-9 * max(1.0, abs(a), abs(b))

    candidates: list[tuple[int, float]] = []
    i = 0
    while i < n:
        j = i
        while j + 1 < n and same(mag[j + 1], mag[i]):
            j += 1
        left_lower = i == 0 or mag[i - 1] < mag[i]
        right_lower = j == n - 1 or mag[j + 1] < mag[i]
        if left_lower and right_lower and mag[i] > kappa_min:
            rep = (i + j) // 2
            candidates.append((rep, float(kappa[rep])))
        i = j + 1
    candidates.sort(key=lambda p: abs(p[1]), reverse=True)
    window = max(1, round(window_frac * n))
    kept: list[tuple[int, float]] = []
    for idx, val in candidates:
        if all(abs(idx - k_idx) >= window for k_idx, _ in kept):
            kept.append((idx, val))
    return kept


# -------------------------------------------------------------- canonical form


def canonicalize(c: ParamCurve) -> ParamCurve:
    """Translate the start to the origin, rotate the initial tangent onto +Z.

    Rotation happens about world Y, i.e. a proper rotation of the (x, z)
    plane, so curve shape, arc length, and curvature are preserved exactly.
    """
    tan = initial_tangent(c)
    start = curve_start(c)
    # R maps tan -> (0, 1): R = [[tz, -tx], [tx, tz]].
    rot = np.array([[tan[1], -tan[0]], [tan[0], tan[1]]])

    def xf(p: np.ndarray) -> np.ndarray:
        return rot @ (np.asarray(p, dtype=np.float64) - start)

    if isinstance(c, Linear):
        return Linear(xf(c.start), xf(c.end), c.speed)
    if isinstance(c, Arc):
        return Arc(xf(c.start), xf(c.end), xf(c.center), c.radius, c.angle, c.direction)
    if isinstance(c, QuadBezier):
        return QuadBezier(xf(c.p0), xf(c.p1), xf(c.p2))
    if isinstance(c, CubicBezier):
        return CubicBezier(xf(c.p0), xf(c.p1), xf(c.p2), xf(c.p3))
    if isinstance(c, Sinusoid):
        return Sinusoid(xf(c.start), xf(c.end), c.amplitude, c.frequency)
    raise TypeError(f"unknown curve type {type(c)!r}")


def translate_curve(c: ParamCurve, offset) -> ParamCurve:
    """Shift a curve by a 2-vector (used to pose canonical curves in a scene)."""
    offset = _vec2(offset)

    def xf(p):
        return np.asarray(p, dtype=np.float64) + offset

    if isinstance(c, Linear):
        return replace(c, start=xf(c.start), end=xf(c.end))
    if isinstance(c, Arc):
        return replace(c, start=xf(c.start), end=xf(c.end), center=xf(c.center))
    if isinstance(c, QuadBezier):
        return QuadBezier(xf(c.p0), xf(c.p1), xf(c.p2))
    if isinstance(c, CubicBezier):
        return CubicBezier(xf(c.p0), xf(c.p1), xf(c.p2), xf(c.p3))
    if isinstance(c, Sinusoid):
        return replace(c, start=xf(c.start), end=xf(c.end))
    raise TypeError(f"unknown curve type {type(c)!r}")
