"""Curvature-aware sampling-based planning over a disc-obstacle world.

The tree planner augments the usual Euclidean nearest-neighbor metric with
the difference between the turning angle a new edge would create and the
turning angle already stored at the tree node, and rejects extensions whose
turning angle exceeds a bound. Setting the angle weight to zero and the
bound to pi reduces it exactly to a vanilla RRT, which serves as the
comparison baseline.

Waypoint paths are smoothed by piecewise Bezier curves with exact C1 joins;
the smoothed curve is re-checked against the inflated obstacles and pulled
back toward the (collision-free) polyline by midpoint insertion wherever it
cuts a corner too tightly.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import rotation, vec2


class NoPathError(RuntimeError):
    """Planner exhausted its iteration budget without reaching the goal."""


@dataclass
class World:
    """Rectangular arena with disc obstacles and a clearance margin [um]."""

    bounds: tuple = (0.0, 0.0, 512.0, 512.0)
    obstacles: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    clearance: float = 2.0

    def __post_init__(self):
        self.obstacles = np.asarray(self.obstacles, dtype=float).reshape(-1, 3)
        if np.any(self.obstacles[:, 2] <= 0):
            raise ValueError("obstacle radii must be positive")

    @property
    def diagonal(self) -> float:
        xmin, ymin, xmax, ymax = self.bounds
        return math.hypot(xmax - xmin, ymax - ymin)

    def point_free(self, p) -> bool:
        p = np.asarray(p, dtype=float)
        xmin, ymin, xmax, ymax = self.bounds
        if not (xmin <= p[0] <= xmax and ymin <= p[1] <= ymax):
            return False
        if self.obstacles.shape[0] == 0:
            return True
        d = np.hypot(self.obstacles[:, 0] - p[0], self.obstacles[:, 1] - p[1])
        return bool(np.all(d >= self.obstacles[:, 2] + self.clearance))

    def segment_free(self, a, b) -> bool:
        """Exact point-to-segment clearance test against every inflated disc."""
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        if not (self.point_free(a) and self.point_free(b)):
            return False
        if self.obstacles.shape[0] == 0:
            return True
        seg = b - a
        len2 = float(seg @ seg)
        centers = self.obstacles[:, :2]
        if len2 < 1e-18:
            d = np.linalg.norm(centers - a, axis=1)
        else:
            t = np.clip((centers - a) @ seg / len2, 0.0, 1.0)
            proj = a + t[:, None] * seg
            d = np.linalg.norm(centers - proj, axis=1)
        return bool(np.all(d >= self.obstacles[:, 2] + self.clearance))

    def polyline_free(self, points, spacing: float = 1.0) -> bool:
        """Collision check a dense sampling of a polyline at the given spacing."""
        points = np.asarray(points, dtype=float)
        for a, b in zip(points[:-1], points[1:]):
            n = max(2, int(math.ceil(np.linalg.norm(b - a) / spacing)) + 1)
            for t in np.linspace(0.0, 1.0, n):
                if not self.point_free(a + t * (b - a)):
                    return False
        return True


def save_world(path, world: World) -> None:
    doc = {"bounds": list(world.bounds), "clearance": world.clearance,
           "obstacles": [list(map(float, row)) for row in world.obstacles]}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_world(path) -> World:
    with open(path) as fh:
        doc = json.load(fh)
    return World(tuple(doc["bounds"]), np.array(doc["obstacles"], dtype=float).reshape(-1, 3),
                 float(doc["clearance"]))


@dataclass
class RrtParams:
    step: float = 10.0
    max_iters: int = 4000
    goal_bias: float = 0.1
    theta_max: float = math.radians(30.0)
    w_theta: float | None = None  # um per radian; None picks diagonal / pi
    seed: int = 0


def turning_angle(parent_dir, new_dir) -> float:
    """Angle between consecutive edge directions, in [0, pi]."""
    a = np.asarray(parent_dir, dtype=float)
    b = np.asarray(new_dir, dtype=float)
    na = float(np.hypot(a[0], a[1]))
    nb = float(np.hypot(b[0], b[1]))
    if na == 0.0 or nb == 0.0:
        raise ValueError("turning angle undefined for zero-length directions")
    return float(np.arccos(np.clip((a @ b) / (na * nb), -1.0, 1.0)))


def rotation_angle_distance(theta_a: float, theta_b: float) -> float:
    """Angle between two planar rotations, via the trace identity.

    Equals the wrapped absolute difference |theta_a - theta_b| for angles in
    [0, pi].
    """
    r = rotation(theta_a).T @ rotation(theta_b)
    return float(abs(np.arccos(np.clip(0.5 * np.trace(r), -1.0, 1.0))))


def co_rrt_distance(sample_xy, sample_theta, node_xy, node_theta, w_theta: float) -> float:
    """Orientation-difference-weighted distance between a sample and a node."""
    d = np.asarray(sample_xy, dtype=float) - np.asarray(node_xy, dtype=float)
    return w_theta * rotation_angle_distance(sample_theta, node_theta) + float(np.hypot(d[0], d[1]))


def plan_co_rrt(world: World, start, goal, params: RrtParams) -> np.ndarray:
    """Grow the turning-angle-aware tree from start to goal.

    Returns the waypoint array including both endpoints. Deterministic given
    the seed; raises NoPathError when the iteration budget runs out.
    """
    start = np.asarray(start, dtype=float)
    goal = np.asarray(goal, dtype=float)
    if not world.point_free(start) or not world.point_free(goal):
        raise ValueError("start and goal must be collision-free")
    w_theta = params.w_theta if params.w_theta is not None else world.diagonal / math.pi
    rng = np.random.default_rng(params.seed)
    xmin, ymin, xmax, ymax = world.bounds

    pos = [start]
    parent = [-1]
    edge_dir = [vec2(0.0, 0.0)]
    has_dir = [False]
    turn = [0.0]

    for _ in range(params.max_iters):
        if rng.random() < params.goal_bias:
            sample = goal.copy()
        else:
            sample = np.array([rng.uniform(xmin, xmax), rng.uniform(ymin, ymax)])
        p_arr = np.asarray(pos)
        diff = sample - p_arr
        dist = np.hypot(diff[:, 0], diff[:, 1])
        ok = dist > 1e-9
        if not np.any(ok):
            continue
        dirs = np.zeros_like(diff)
        dirs[ok] = diff[ok] / dist[ok, None]
        dots = np.einsum("ij,ij->i", np.asarray(edge_dir), dirs)
        cand_theta = np.where(has_dir, np.arccos(np.clip(dots, -1.0, 1.0)), 0.0)
        metric = w_theta * np.abs(cand_theta - np.asarray(turn)) + dist
        metric[~ok] = np.inf
        i = int(np.argmin(metric))
        if cand_theta[i] > params.theta_max:
            continue
        hop = min(params.step, dist[i])
        new = p_arr[i] + hop * dirs[i]
        if not world.segment_free(p_arr[i], new):
            continue
        pos.append(new)
        parent.append(i)
        edge_dir.append(dirs[i].copy())
        has_dir.append(True)
        turn.append(float(cand_theta[i]))
        gap = goal - new
        gd = float(np.hypot(gap[0], gap[1]))
        if gd <= params.step:
            if gd <= 1e-9:
                return _extract_path(pos, parent, len(pos) - 1)
            gdir = gap / gd
            if turning_angle(dirs[i], gdir) <= params.theta_max and world.segment_free(new, goal):
                pos.append(goal.copy())
                parent.append(len(pos) - 2)
                return _extract_path(pos, parent, len(pos) - 1)
    raise NoPathError(f"no path found in {params.max_iters} iterations")


def plan_rrt(world: World, start, goal, params: RrtParams) -> np.ndarray:
    """Vanilla baseline: same machinery with the angle metric and bound disabled."""
    return plan_co_rrt(world, start, goal, replace(params, theta_max=math.pi, w_theta=0.0))


def _extract_path(pos, parent, leaf: int) -> np.ndarray:
    chain = []
    i = leaf
    while i >= 0:
        chain.append(pos[i])
        i = parent[i]
    chain.reverse()
    out = [chain[0]]
    for p in chain[1:]:
        if float(np.hypot(*(p - out[-1]))) > 1e-12:
            out.append(p)
    return np.asarray(out)


# ----------------------------------------------------------------------
# Bezier smoothing
# ----------------------------------------------------------------------

def bernstein(i: int, q: int, t):
    """Bezier basis polynomial of degree q."""
    t = np.asarray(t, dtype=float)
    return math.comb(q, i) * (1.0 - t) ** (q - i) * t ** i


def _decasteljau(ctrl: np.ndarray, t: float) -> np.ndarray:
    b = ctrl.copy()
    n = b.shape[0]
    for j in range(1, n):
        b[: n - j] = (1.0 - t) * b[: n - j] + t * b[1 : n - j + 1]
    return b[0]


def _elevate(ctrl: np.ndarray) -> np.ndarray:
    """Exact degree elevation of one Bezier segment."""
    n = ctrl.shape[0]
    out = np.empty((n + 1, 2))
    out[0] = ctrl[0]
    out[n] = ctrl[-1]
    for i in range(1, n):
        out[i] = (i / n) * ctrl[i - 1] + (1.0 - i / n) * ctrl[i]
    return out


class BezierPath:
    """Piecewise Bezier curve with a uniform global parameter on [0, 1]."""

    def __init__(self, segments: list[np.ndarray]):
        if not segments:
            raise ValueError("need at least one segment")
        self.segments = [np.asarray(s, dtype=float) for s in segments]

    @property
    def degree(self) -> int:
        return self.segments[0].shape[0] - 1

    def _locate(self, t: float) -> tuple[int, float]:
        n = len(self.segments)
        t = min(max(float(t), 0.0), 1.0)
        k = min(int(t * n), n - 1)
        return k, t * n - k

    def point(self, t: float) -> np.ndarray:
        k, s = self._locate(t)
        return _decasteljau(self.segments[k], s)

    def velocity(self, t: float) -> np.ndarray:
        """First derivative with respect to the global parameter."""
        k, s = self._locate(t)
        c = self.segments[k]
        q = c.shape[0] - 1
        d = q * (c[1:] - c[:-1])
        return len(self.segments) * _decasteljau(d, s)

    def acceleration(self, t: float) -> np.ndarray:
        k, s = self._locate(t)
        c = self.segments[k]
        q = c.shape[0] - 1
        d = q * (c[1:] - c[:-1])
        dd = (q - 1) * (d[1:] - d[:-1])
        return (len(self.segments) ** 2) * _decasteljau(dd, s)

    def sample(self, n: int) -> np.ndarray:
        return np.array([self.point(t) for t in np.linspace(0.0, 1.0, n)])

    def curvature(self, t: float) -> float:
        v = self.velocity(t)
        a = self.acceleration(t)
        speed = float(np.hypot(v[0], v[1]))
        if speed < 1e-12:
            return 0.0
        return abs(float(v[0] * a[1] - v[1] * a[0])) / speed ** 3


def _hermite_tangents(waypoints: np.ndarray, scale: float) -> np.ndarray:
    deltas = waypoints[1:] - waypoints[:-1]
    lens = np.linalg.norm(deltas, axis=1)
    safe = np.where(lens > 1e-12, lens, 1.0)
    dirs = deltas / safe[:, None]
    n = waypoints.shape[0]
    tangents = np.zeros((n, 2))
    tangents[0] = dirs[0] * lens[0] * scale
    tangents[-1] = dirs[-1] * lens[-1] * scale
    for i in range(1, n - 1):
        blend = dirs[i - 1] + dirs[i]
        bn = float(np.hypot(blend[0], blend[1]))
        if bn < 1e-12:
            continue  # full reversal, leave a zero tangent (cusp keeps C1 trivially)
        mag = 0.5 * (lens[i - 1] + lens[i]) * scale
        tangents[i] = (blend / bn) * mag
    return tangents


def _piecewise_cubic(waypoints: np.ndarray, tangent_scale: float) -> list[np.ndarray]:
    v = _hermite_tangents(waypoints, tangent_scale)
    segs = []
    for i in range(waypoints.shape[0] - 1):
        p0, p3 = waypoints[i], waypoints[i + 1]
        segs.append(np.array([p0, p0 + v[i] / 3.0, p3 - v[i + 1] / 3.0, p3]))
    return segs


def _piecewise_quadratic(waypoints: np.ndarray) -> list[np.ndarray]:
    """Midpoint-knot quadratic pieces: C1 and endpoint-exact.

    Interior waypoints become control points rather than interpolation
    points, so corners are rounded instead of hit.
    """
    w = waypoints
    n = w.shape[0]
    if n == 2:
        return [np.array([w[0], 0.5 * (w[0] + w[1]), w[1]])]
    if n == 3:
        return [np.array([w[0], w[1], w[2]])]
    mids = [0.5 * (w[i] + w[i + 1]) for i in range(1, n - 2)]
    segs = [np.array([w[0], w[1], mids[0]])]
    for i in range(1, len(mids)):
        segs.append(np.array([mids[i - 1], w[i + 1], mids[i]]))
    segs.append(np.array([mids[-1], w[n - 2], w[n - 1]]))
    return segs


def bezier_smooth(waypoints, q: int = 3, world: World | None = None,
                  mode: str = "piecewise", tangent_scale: float = 1.0,
                  max_rounds: int = 12) -> BezierPath:
    """Smooth a waypoint polyline into a C1 piecewise Bezier curve.

    mode "piecewise" (default) interpolates every waypoint with cubic
    segments, degree-elevated to q when q > 3; mode "global" returns the
    single Bezier whose control points are the waypoints themselves (its
    degree is the waypoint count minus one, and it interpolates only the
    endpoints). When a world is given the curve is re-checked against the
    inflated obstacles at 1 um sampling, and any offending span is subdivided
    by inserting the midpoint of its waypoints until the curve is clean.
    """
    w = np.asarray(waypoints, dtype=float)
    if w.ndim != 2 or w.shape[0] < 2:
        raise ValueError("need at least two waypoints")
    if q < 2:
        raise ValueError("degree must be at least 2")
    if mode == "global":
        return BezierPath([w.copy()])
    if mode != "piecewise":
        raise ValueError("mode must be 'piecewise' or 'global'")

    def build(points: np.ndarray) -> BezierPath:
        if q == 2:
            segs = _piecewise_quadratic(points)
        else:
            segs = _piecewise_cubic(points, tangent_scale)
            for _ in range(q - 3):
                segs = [_elevate(s) for s in segs]
        return BezierPath(segs)

    curve = build(w)
    if world is None:
        return curve
    for _ in range(max_rounds):
        bad = _first_colliding_span(curve, w, world)
        if bad is None:
            return curve
        mid = 0.5 * (w[bad] + w[bad + 1])
        w = np.insert(w, bad + 1, mid, axis=0)
        curve = build(w)
    raise RuntimeError("smoothing could not be made collision-free")


def _first_colliding_span(curve: BezierPath, waypoints: np.ndarray, world: World,
                          spacing: float = 1.0):
    """Index of the first waypoint span whose curve piece hits an obstacle."""
    n_spans = waypoints.shape[0] - 1
    segs_per_span = max(1, len(curve.segments) // n_spans)
    for span in range(n_spans):
        length = float(np.linalg.norm(waypoints[span + 1] - waypoints[span]))
        n = max(4, int(math.ceil(length / spacing)) + 1)
        lo = span * segs_per_span / len(curve.segments)
        hi = (span + 1) * segs_per_span / len(curve.segments)
        for t in np.linspace(lo, hi, n):
            if not world.point_free(curve.point(t)):
                return span
    return None


def max_curvature_polyline(points) -> float:
    """Largest circumscribed-circle curvature over consecutive point triples.

    Collinear (or repeated) triples contribute zero.
    """
    pts = np.asarray(points, dtype=float)
    if pts.shape[0] < 3:
        raise ValueError("need at least three points")
    best = 0.0
    for a, b, c in zip(pts[:-2], pts[1:-1], pts[2:]):
        ab = b - a
        bc = c - b
        ca = a - c
        area2 = abs(float(ab[0] * bc[1] - ab[1] * bc[0]))  # twice the triangle area
        la, lb, lc = (float(np.hypot(*v)) for v in (ab, bc, ca))
        denom = la * lb * lc
        if denom < 1e-12 or area2 < 1e-12 * denom:
            continue
        best = max(best, 2.0 * area2 / denom)
    return best


def max_curvature_curve(curve: BezierPath, samples: int = 1000) -> float:
    ts = np.linspace(0.0, 1.0, samples)
    return max(curve.curvature(t) for t in ts)


def max_curvature(path_or_curve, samples: int = 1000) -> float:
    """Dispatch on polylines (point arrays) versus smooth curves."""
    if isinstance(path_or_curve, BezierPath):
        return max_curvature_curve(path_or_curve, samples)
    return max_curvature_polyline(path_or_curve)


@dataclass
class PlannedPath:
    waypoints: np.ndarray
    curve: BezierPath | None
    max_curvature: float


def plan_path(world: World, start, goal, params: RrtParams, smooth: bool = True,
              q: int = 3) -> PlannedPath:
    """Plan with the turning-angle tree and optionally smooth the result."""
    wps = plan_co_rrt(world, start, goal, params)
    if not smooth:
        return PlannedPath(wps, None, max_curvature_polyline(wps))
    curve = bezier_smooth(wps, q=q, world=world)
    return PlannedPath(wps, curve, max_curvature_curve(curve))


def save_waypoints(path, waypoints) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y"])
        for p in np.asarray(waypoints, dtype=float):
            w.writerow([repr(float(p[0])), repr(float(p[1]))])


def save_curve(path, curve: BezierPath, samples: int = 500) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x", "y", "curvature"])
        for t in np.linspace(0.0, 1.0, samples):
            p = curve.point(t)
            w.writerow([repr(float(t)), repr(float(p[0])), repr(float(p[1])),
                        repr(float(curve.curvature(t)))])
