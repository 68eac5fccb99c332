"""Closed-loop adaptive optimal tracking.

Each control step turns the current setpoint into task errors and ideal
velocities, builds a small dense convex program for the field command, and
solves it exactly by enumerating the stationary points of every active-set
case (interior, command-ball boundary, distance half-plane boundary, and
their intersection). After actuation the weight matrices of the learned
model are nudged by the online update law.

Safety is handled by one linear inequality on the command: when the pair is
at or inside the minimum working distance the commanded relative velocity
must not shrink the gap (projection onto the center line non-negative), and
symmetrically at the maximum working distance.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import CONTACT_S_R, SystemState, local_frame, vec2
from .plant import Plant
from .rbfn import RbfnModel, activation, predict_g, predict_velocity

TWO_PI = 2.0 * math.pi


@dataclass
class ControllerParams:
    """Gains, command bound, working-distance band, and update rates.

    x_r_avg is the desired center distance while pushing [um]; eps the
    setpoint advance tolerance [um]; dt the control period [s].
    """

    alpha_gain: float = 1.0
    lam: float = 2.0
    u_max: float = TWO_PI
    s_r_min: float = 2.25
    s_r_max: float = 4.0
    tau1: float = 0.1
    tau2: float = 0.1
    x_r_avg: float = 30.0
    eps: float = 1.0
    dt: float = 0.05
    lookahead: float = 8.0  # um; commanded point sits at least this far ahead

    def __post_init__(self):
        for name in ("alpha_gain", "lam", "u_max", "s_r_min", "s_r_max",
                     "tau1", "tau2", "x_r_avg", "eps", "dt", "lookahead"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")
        if self.s_r_min >= self.s_r_max:
            raise ValueError("s_r_min must be below s_r_max")


@dataclass
class TaskErrors:
    dx_u: np.ndarray
    dx_r: np.ndarray
    x_r_des: np.ndarray


def task_errors(state: SystemState, x_u_des, params: ControllerParams,
                prev_x_r_des=None) -> TaskErrors:
    """Object and relative-position task errors for the current setpoint.

    The desired relative position points from the object toward the goal
    with magnitude x_r_avg, which places the robot behind the object. When
    the object sits exactly at the setpoint the direction is undefined and
    the previous desired relative position is held.
    """
    x_u_des = np.asarray(x_u_des, dtype=float)
    dx_u = state.x_u - x_u_des
    dist = float(np.hypot(dx_u[0], dx_u[1]))
    if dist > 0.0:
        x_r_des = -params.x_r_avg * dx_u / dist
    elif prev_x_r_des is not None:
        x_r_des = np.asarray(prev_x_r_des, dtype=float)
    else:
        x_r_des = state.x_r.copy()
    return TaskErrors(dx_u, state.x_r - x_r_des, x_r_des)


def ideal_velocities(dx_u, dx_r, params: ControllerParams) -> tuple[np.ndarray, np.ndarray]:
    """Commanded velocities opposite the task errors."""
    return -params.alpha_gain * np.asarray(dx_u, dtype=float), \
           -params.alpha_gain * np.asarray(dx_r, dtype=float)


@dataclass
class QpProblem:
    """min 1/2 u'Hu - f'u over the command ball, with an optional half-plane.

    The half-plane is a'u >= 0 (sense "ge") or a'u <= 0 ("le"); at most one
    is ever active because the working-distance band has positive width.
    """

    h: np.ndarray
    f: np.ndarray
    u_max: float
    constraint_normal: np.ndarray | None = None
    constraint_sense: str | None = None

    def feasible(self, u, tol: float = 1e-9) -> bool:
        if float(np.hypot(u[0], u[1])) > self.u_max + tol:
            return False
        if self.constraint_normal is not None:
            val = float(self.constraint_normal @ u)
            if self.constraint_sense == "ge" and val < -tol:
                return False
            if self.constraint_sense == "le" and val > tol:
                return False
        return True

    def cost(self, u) -> float:
        u = np.asarray(u, dtype=float)
        return float(0.5 * u @ self.h @ u - self.f @ u)


def build_qp(state: SystemState, model: RbfnModel, v_u_ide, v_r_ide,
             params: ControllerParams) -> QpProblem:
    """Assemble the tracking program at the current state.

    A tiny ridge keeps the Hessian positive definite in the far field where
    both estimated maps can lose rank. The distance constraint keeps the
    estimated gap growth non-negative at the lower bound of the working band
    (and non-positive at the upper bound): a'u with a = g_r' x_r equals the
    predicted rate of change of |x_r|^2 / 2.
    """
    g_u = predict_g(model, state.x_r, "u", state.r_a, state.r_u)
    g_r = predict_g(model, state.x_r, "r", state.r_a, state.r_u)
    h = g_u.T @ g_u + params.lam * (g_r.T @ g_r)
    h += (1e-8 * max(np.trace(h) / 2.0, 1e-12)) * np.eye(2)
    f = g_u.T @ np.asarray(v_u_ide, dtype=float) + params.lam * (g_r.T @ np.asarray(v_r_ide, dtype=float))
    s_r = state.s_r
    normal = None
    sense = None
    if s_r <= params.s_r_min:
        normal = g_r.T @ state.x_r
        sense = "ge"
    elif s_r >= params.s_r_max:
        normal = g_r.T @ state.x_r
        sense = "le"
    return QpProblem(h, f, params.u_max, normal, sense)


def _circle_stationary_points(h: np.ndarray, f: np.ndarray, radius: float) -> list[np.ndarray]:
    """All stationary points of the cost on the circle |u| = radius.

    The stationarity condition is a trigonometric polynomial; the Weierstrass
    substitution turns it into a quartic whose real roots give the angles.
    """
    h11, h12, h22 = h[0, 0], h[0, 1], h[1, 1]
    a = 0.5 * radius * radius * (h22 - h11)
    b = radius * radius * h12
    c = radius * f[0]
    d = -radius * f[1]
    coeffs = np.array([b - d, -4.0 * a + 2.0 * c, -6.0 * b, 4.0 * a + 2.0 * c, b + d])
    points = [radius * np.array([-1.0, 0.0])]  # theta = pi, excluded by the substitution
    scale = float(np.max(np.abs(coeffs)))
    if scale > 0.0:
        nz = np.nonzero(np.abs(coeffs) > 1e-14 * scale)[0]
        if nz.size:
            roots = np.roots(coeffs[nz[0]:])
            for r in roots:
                if abs(r.imag) < 1e-9 * (1.0 + abs(r.real)):
                    theta = 2.0 * math.atan(r.real)
                    points.append(radius * np.array([math.cos(theta), math.sin(theta)]))
    else:
        points.append(radius * np.array([1.0, 0.0]))
    return points


def solve_qp(qp: QpProblem) -> np.ndarray:
    """Global minimizer over the command ball intersected with the half-plane.

    Candidates: the unconstrained minimizer, every stationary point on the
    ball, the minimizer restricted to the half-plane boundary line (clamped
    to the ball), the two ball/line intersection points, and zero, which is
    always feasible. The cheapest feasible candidate is exact because the
    true optimum must be one of these KKT points.
    """
    candidates = [np.zeros(2)]
    try:
        u0 = np.linalg.solve(qp.h, qp.f)
        candidates.append(u0)
    except np.linalg.LinAlgError:
        pass
    candidates.extend(_circle_stationary_points(qp.h, qp.f, qp.u_max))
    if qp.constraint_normal is not None:
        a = qp.constraint_normal
        an = float(np.hypot(a[0], a[1]))
        if an > 0.0:
            d = np.array([-a[1], a[0]]) / an
            denom = float(d @ qp.h @ d)
            if denom > 0.0:
                t = float(np.clip((qp.f @ d) / denom, -qp.u_max, qp.u_max))
                candidates.append(t * d)
            candidates.append(qp.u_max * d)
            candidates.append(-qp.u_max * d)
    best = None
    best_cost = math.inf
    for u in candidates:
        if not np.all(np.isfinite(u)) or not qp.feasible(u, 1e-12):
            continue
        c = qp.cost(u)
        if c < best_cost:
            best, best_cost = u, c
    return np.asarray(best, dtype=float)


def online_update(model: RbfnModel, state: SystemState, u, dx_u, dx_r, e_u, e_r,
                  params: ControllerParams, dt: float) -> tuple[RbfnModel, bool]:
    """One explicit-Euler step of the weight adaptation law.

    Row i of each weight matrix moves along phi(s_r) scaled by the local
    command component and a blend of the task error (rate tau1) and the
    velocity prediction error (rate tau2); the relative map uses the extra
    factor lam. With tau1 = 0 the direction is gradient descent on the
    squared prediction error.

    The raw step is normalized per row by 1 + (R u)_i^2 |phi|^2 (the
    normalized-gradient construction). Trained multiquadric activations have
    norms in the thousands, so the unnormalized law would need rates several
    orders of magnitude below the working defaults; normalization makes the
    update contractive for any dt * lam_k * tau2 < 2 without changing its
    direction or fixed points.

    Non-finite inputs skip the update (returns applied False) so a bad
    measurement cannot poison the weights.
    """
    pieces = [np.asarray(x, dtype=float) for x in (u, dx_u, dx_r, e_u, e_r)]
    if not all(np.all(np.isfinite(p)) for p in pieces) or dt <= 0 or not np.isfinite(dt):
        return model, False
    u, dx_u, dx_r, e_u, e_r = pieces
    rot = local_frame(state.x_r)
    phi = activation(state.s_r, model)
    phi2 = float(phi @ phi)
    ru = rot @ u
    out = model.copy()
    for which, w, dx, e, lam_k in (("u", out.w_u, dx_u, e_u, 1.0),
                                   ("r", out.w_r, dx_r, e_r, params.lam)):
        drive = rot @ (params.tau1 * dx + params.tau2 * e)
        for i in range(2):
            den = 1.0 + ru[i] * ru[i] * phi2
            w[i] += dt * lam_k * drive[i] * ru[i] * phi / den
    return out, True


def p_controller_baseline(state: SystemState, x_u_des, gain: float,
                          u_max: float = TWO_PI) -> np.ndarray:
    """Model-free baseline: point the field straight at the goal direction.

    No coupling model and no distance constraint; the command saturates at
    u_max for far goals and vanishes at the goal.
    """
    u = gain * (np.asarray(x_u_des, dtype=float) - state.x_u)
    n = float(np.hypot(u[0], u[1]))
    if n > u_max:
        u = u * (u_max / n)
    return u


@dataclass
class TrackLog:
    """Per-step history of one tracking run plus summary fields."""

    t: np.ndarray
    x_u: np.ndarray
    x_a: np.ndarray
    s_r: np.ndarray
    u: np.ndarray
    setpoint_index: np.ndarray
    err_u: np.ndarray
    contact_flag: np.ndarray
    failed: bool
    completed: bool
    faults: int
    reference: np.ndarray
    constraint_margins: np.ndarray  # signed satisfaction of the active constraint, nan when inactive

    @property
    def contacts(self) -> int:
        return int(np.sum(self.contact_flag))

    @property
    def mean_err(self) -> float:
        return float(np.mean(self.err_u)) if self.err_u.size else math.nan

    @property
    def max_err(self) -> float:
        return float(np.max(self.err_u)) if self.err_u.size else math.nan

    def path_errors(self) -> np.ndarray:
        """Distance from each logged object position to the reference polyline."""
        return _polyline_distances(self.x_u, self.reference)

    def save(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x_u_x", "x_u_y", "x_a_x", "x_a_y", "s_r",
                        "u_x", "u_y", "setpoint_index", "err_u", "contact_flag"])
            for i in range(self.t.size):
                row = [self.t[i], self.x_u[i, 0], self.x_u[i, 1],
                       self.x_a[i, 0], self.x_a[i, 1], self.s_r[i],
                       self.u[i, 0], self.u[i, 1]]
                w.writerow([repr(float(v)) for v in row]
                           + [str(int(self.setpoint_index[i]))]
                           + [repr(float(self.err_u[i])), str(int(self.contact_flag[i]))])


def _polyline_distances(points: np.ndarray, poly: np.ndarray) -> np.ndarray:
    if poly.shape[0] == 1:
        return np.linalg.norm(points - poly[0], axis=1)
    a = poly[:-1]
    seg = poly[1:] - a
    seg_len2 = np.maximum(np.sum(seg ** 2, axis=1), 1e-18)
    out = np.empty(points.shape[0])
    for i, p in enumerate(points):
        t = np.clip(np.sum((p - a) * seg, axis=1) / seg_len2, 0.0, 1.0)
        proj = a + t[:, None] * seg
        out[i] = float(np.min(np.linalg.norm(proj - p, axis=1)))
    return out


def track(trajectory, state0: SystemState, model: RbfnModel, params: ControllerParams,
          plant: Plant, law: str = "qp", adapt: bool = True, baseline_gain: float = 1.0,
          max_steps: int = 40000) -> TrackLog:
    """Run the closed loop along a waypoint trajectory.

    A waypoint counts as visited once the object is within eps of it, or
    once the object is closer to the following waypoint (it was passed). The
    commanded point is the first waypoint at least params.lookahead beyond
    the object (at least one point past the visit front), which keeps the
    task-error direction, and with it the desired relative position, well
    conditioned against position wobble; only the final point requires the
    eps-accurate approach. A contact ends the run immediately and marks it
    failed. Weight norms are clamped at 1e3 times their initial size as a
    blow-up guard on the adaptation.
    """
    traj = np.asarray(trajectory, dtype=float)
    if traj.ndim != 2 or traj.shape[0] < 1:
        raise ValueError("trajectory must be a non-empty list of points")
    if law not in ("qp", "p"):
        raise ValueError("law must be 'qp' or 'p'")
    n_pts = traj.shape[0]
    state = state0.copy()
    plant.state = state.copy()
    model = model.copy()
    w_cap = 1e3 * max(np.linalg.norm(model.w_u), np.linalg.norm(model.w_r), 1e-9)

    rows = {k: [] for k in ("t", "x_u", "x_a", "s_r", "u", "idx", "err", "contact", "margin")}
    visited = 0
    x_r_des_prev = None
    faults = 0
    failed = False
    completed = False
    t = 0.0
    for _ in range(max_steps):
        x_u = state.x_u
        while visited < n_pts:
            d_cur = float(np.linalg.norm(x_u - traj[visited]))
            if d_cur < params.eps:
                visited += 1
                continue
            if visited + 1 < n_pts and float(np.linalg.norm(x_u - traj[visited + 1])) < d_cur:
                visited += 1
                continue
            break
        if visited >= n_pts:
            completed = True
            break
        cmd_idx = min(visited + 1, n_pts - 1)
        while (cmd_idx < n_pts - 1
               and float(np.linalg.norm(traj[cmd_idx] - x_u)) < params.lookahead):
            cmd_idx += 1
        x_u_des = traj[cmd_idx]
        te = task_errors(state, x_u_des, params, x_r_des_prev)
        x_r_des_prev = te.x_r_des
        if law == "qp":
            v_u_ide, v_r_ide = ideal_velocities(te.dx_u, te.dx_r, params)
            qp = build_qp(state, model, v_u_ide, v_r_ide, params)
            u = solve_qp(qp)
            margin = math.nan
            if qp.constraint_normal is not None:
                val = float(qp.constraint_normal @ u)
                margin = val if qp.constraint_sense == "ge" else -val
        else:
            u = p_controller_baseline(state, x_u_des, baseline_gain, params.u_max)
            margin = math.nan

        before = state
        state, contact = plant.step(u)

        if law == "qp" and adapt:
            v_u_meas = (state.x_u - before.x_u) / plant.cfg.dt
            v_r_meas = (state.x_r - before.x_r) / plant.cfg.dt
            e_u = v_u_meas - predict_velocity(model, before.x_r, u, "u", before.r_a, before.r_u)
            e_r = v_r_meas - predict_velocity(model, before.x_r, u, "r", before.r_a, before.r_u)
            model, applied = online_update(model, before, u, te.dx_u, te.dx_r,
                                           e_u, e_r, params, plant.cfg.dt)
            if not applied:
                faults += 1
            for w in (model.w_u, model.w_r):
                nw = float(np.linalg.norm(w))
                if nw > w_cap:
                    w *= w_cap / nw

        rows["t"].append(t)
        rows["x_u"].append(before.x_u.copy())
        rows["x_a"].append(before.x_a.copy())
        rows["s_r"].append(before.s_r)
        rows["u"].append(np.asarray(u, dtype=float))
        rows["idx"].append(cmd_idx)
        rows["err"].append(float(np.linalg.norm(te.dx_u)))
        rows["contact"].append(int(contact))
        rows["margin"].append(margin)
        t += plant.cfg.dt
        if contact:
            failed = True
            break

    return TrackLog(
        t=np.array(rows["t"]),
        x_u=np.array(rows["x_u"]).reshape(-1, 2),
        x_a=np.array(rows["x_a"]).reshape(-1, 2),
        s_r=np.array(rows["s_r"]),
        u=np.array(rows["u"]).reshape(-1, 2),
        setpoint_index=np.array(rows["idx"], dtype=int),
        err_u=np.array(rows["err"]),
        contact_flag=np.array(rows["contact"], dtype=int),
        failed=failed,
        completed=completed,
        faults=faults,
        reference=traj,
        constraint_margins=np.array(rows["margin"]),
    )


def pushing_state(first_point, second_point, params: ControllerParams,
                  r_a: float = 5.0, r_u: float = 5.0) -> SystemState:
    """Initial pair placement: object on the start, robot behind it.

    The desired relative position points along the direction of travel, so
    the robot starts x_r_avg behind the first waypoint.
    """
    first = np.asarray(first_point, dtype=float)
    second = np.asarray(second_point, dtype=float)
    d = second - first
    n = float(np.hypot(d[0], d[1]))
    direction = d / n if n > 0 else vec2(1.0, 0.0)
    return SystemState(first.copy(), first - params.x_r_avg * direction, r_a, r_u)
