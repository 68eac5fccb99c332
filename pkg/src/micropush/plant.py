"""Synthetic ground-truth plant for the non-contact pushing system.

Three layers:
  * a 1-D steady-state solver for the rolling robot (torque balance,
    drag balance, rolling relation, matched speeds),
  * a planar control-affine dynamics x_dot = g(x_r) u with additive
    Brownian position noise, integrated with Euler-Maruyama,
  * a scripted excitation policy that collects training tuples over a
    broad range of relative distances.

The mobility curves are an explicit stand-in for the unknown fluid
coupling: smooth, monotone decays in the normalized distance, with the
tangential coupling weaker and shorter-ranged than the normal one.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import CONTACT_S_R, SystemState, local_frame, normalized_distance, vec2

TWO_PI = 2.0 * math.pi

# Calibrated so that one-step finite-difference velocities carry noise of
# roughly a fifth of the typical commanded object speed, which puts the
# held-out model error of a well-trained network near 20%.
DEFAULT_SIGMA_B = 0.035  # um / sqrt(s)


class DegenerateParametersError(ValueError):
    """Parameter combination makes the steady-state system singular."""


def sigma_b_for_mean_displacement(mean_um_per_s: float) -> float:
    """Brownian intensity whose mean one-second displacement is the given value.

    Planar Brownian displacement over one second has magnitude
    Rayleigh(sigma_b), hence mean sigma_b * sqrt(pi / 2).
    """
    return mean_um_per_s * math.sqrt(2.0 / math.pi)


@dataclass
class RollingParams:
    """Physical constants of the rolling robot in SI units.

    m: magnetic moment [A m^2], field_amp: field amplitude [T],
    c_m_r: viscous moment coefficient [N m s], c_d_r / c_d_o: robot / object
    drag coefficients [N s/m], r: robot radius [m], a: slip ratio v_r/omega_r [m].
    """

    m: float
    field_amp: float
    c_m_r: float
    c_d_r: float
    c_d_o: float
    r: float
    a: float

    def __post_init__(self):
        for name in ("m", "field_amp", "c_m_r", "c_d_r", "c_d_o", "r", "a"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")
        if self.a > self.r:
            raise ValueError("slip ratio a cannot exceed the radius (pure rolling)")


@dataclass
class SteadyState1d:
    omega_r: float
    v_r: float
    v_o: float
    drag: float


def steady_state_1d(p: RollingParams, phi: float) -> SteadyState1d:
    """Steady rolling solution for a phase lag phi in (0, pi).

    Solves the torque balance tau - c_m_r*omega - F*r = 0 together with the
    drag balance F - c_d_r*v_r - c_d_o*v_o = 0 under the rolling relation
    v_r = a*omega and the matched-speed condition v_o = v_r.
    """
    if not 0.0 < phi < math.pi:
        raise ValueError("phase lag must lie in (0, pi)")
    tau = p.m * p.field_amp * math.sin(phi)
    # Unknowns (omega_r, F): rows are the torque and drag balances.
    a_mat = np.array([[p.c_m_r, p.r], [-(p.c_d_r + p.c_d_o) * p.a, 1.0]])
    det = float(np.linalg.det(a_mat))
    if det <= 0.0:
        raise DegenerateParametersError("steady-state system is singular")
    omega, drag = np.linalg.solve(a_mat, np.array([tau, 0.0]))
    v = p.a * omega
    return SteadyState1d(float(omega), float(v), float(v), float(drag))


@dataclass
class MobilityCurve:
    """Distance-dependent coupling gains, in um per radian of field rotation.

    normal(s) = amp_normal * exp(-decay_normal * (s - cutoff)) for s >= cutoff,
    clamped flat inside the cutoff; same shape for the tangential gain. The
    normal amplitude must exceed the robot translation gain so the gap where
    pushed-object and robot speeds match (cutoff + ln(amp/gain)) lies inside
    the controller's working band; 2.0 puts it at 2.69 for a unit gain.
    """

    amp_normal: float = 2.0
    amp_tangential: float = 0.5
    decay_normal: float = 1.0
    decay_tangential: float = 1.5
    cutoff: float = CONTACT_S_R

    def normal(self, s_r):
        s = np.maximum(np.asarray(s_r, dtype=float), self.cutoff)
        return self.amp_normal * np.exp(-self.decay_normal * (s - self.cutoff))

    def tangential(self, s_r):
        s = np.maximum(np.asarray(s_r, dtype=float), self.cutoff)
        return self.amp_tangential * np.exp(-self.decay_tangential * (s - self.cutoff))


@dataclass
class PlantConfig:
    """Simulation constants for the planar plant.

    robot_gain is the robot translation per radian of field rotation
    (distance independent under a uniform field); sigma_b the Brownian
    intensity in um/sqrt(s); arena a rectangle (xmin, ymin, xmax, ymax).
    """

    mobility: MobilityCurve = field(default_factory=MobilityCurve)
    robot_gain: float = 1.0
    sigma_b: float = DEFAULT_SIGMA_B
    dt: float = 0.05
    seed: int = 0
    arena: tuple = (0.0, 0.0, 512.0, 512.0)
    r_a: float = 5.0
    r_u: float = 5.0
    contact_s_r: float = CONTACT_S_R

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.sigma_b < 0:
            raise ValueError("sigma_b must be non-negative")


def ground_truth_g(x_r, cfg: PlantConfig) -> tuple[np.ndarray, np.ndarray]:
    """True coupling matrices (g_u, g_r) at the given relative position.

    g_u maps the field command to the object velocity; the robot map is
    robot_gain * I, and g_r = g_u - g_a governs the relative position.
    """
    x_r = np.asarray(x_r, dtype=float)
    rot = local_frame(x_r)  # raises on zero x_r
    s_r = normalized_distance(x_r, cfg.r_a, cfg.r_u)
    gains = np.array([float(cfg.mobility.normal(s_r)), float(cfg.mobility.tangential(s_r))])
    g_u = rot.T @ np.diag(gains) @ rot
    g_r = g_u - cfg.robot_gain * np.eye(2)
    return g_u, g_r


def robot_map(cfg: PlantConfig) -> np.ndarray:
    """Robot velocity map g_a (isotropic under a uniform field)."""
    return cfg.robot_gain * np.eye(2)


class Plant:
    """Owns the integration state and the noise stream for one run.

    Independent instances (distinct seeds) may run in parallel; a single
    instance is strictly sequential. Noise draw order per step: two values
    for the object, then two for the robot.
    """

    def __init__(self, cfg: PlantConfig, state: SystemState | None = None):
        self.cfg = cfg
        self.rng = np.random.default_rng(cfg.seed)
        if state is None:
            cx = 0.5 * (cfg.arena[0] + cfg.arena[2])
            cy = 0.5 * (cfg.arena[1] + cfg.arena[3])
            state = SystemState(vec2(cx + 30.0, cy), vec2(cx, cy), cfg.r_a, cfg.r_u)
        self.state = state.copy()

    def step(self, u) -> tuple[SystemState, bool]:
        """Advance one dt under the command u; returns (state, contact_flag).

        Contact (s_r at or below the touching threshold) is reported, not
        raised, so experiments can record failed runs.
        """
        cfg = self.cfg
        u = np.asarray(u, dtype=float)
        g_u, _ = ground_truth_g(self.state.x_r, cfg)
        noise = cfg.sigma_b * math.sqrt(cfg.dt) * self.rng.standard_normal(4)
        x_u = self.state.x_u + g_u @ u * cfg.dt + noise[:2]
        x_a = self.state.x_a + cfg.robot_gain * u * cfg.dt + noise[2:]
        self.state = SystemState(x_u, x_a, cfg.r_a, cfg.r_u)
        return self.state, self.state.s_r <= cfg.contact_s_r

    def in_bounds(self, margin: float = 0.0) -> bool:
        xmin, ymin, xmax, ymax = self.cfg.arena
        for p in (self.state.x_u, self.state.x_a):
            if not (xmin + margin <= p[0] <= xmax - margin and xmin + margin <= p[1] <= ymax - margin):
                return False
        return True


@dataclass
class DataTuple:
    """One training sample: relative position, measured velocities, command."""

    x_r: np.ndarray
    v_u: np.ndarray
    v_r: np.ndarray
    u: np.ndarray


class SweepPolicy:
    """Scripted excitation that sweeps the relative distance across a range.

    A triangle-wave target on s_r is tracked by a proportional command along
    the center line; a slowly alternating tangential component rotates the
    pair geometry, and occasional random bursts diversify the command
    directions. Deterministic given the generator passed in.
    """

    def __init__(self, rng: np.random.Generator, u_max: float = TWO_PI,
                 s_range: tuple[float, float] = (2.0, 6.0), period: int = 500):
        self.rng = rng
        self.u_max = u_max
        self.s_lo, self.s_hi = s_range
        self.period = period
        self.phase = rng.uniform(0.0, TWO_PI)
        self.burst_prob = 0.12

    def target(self, i: int) -> float:
        # Overshoot the ends a little; the achieved distance lags the wave.
        lo = self.s_lo
        hi = self.s_hi + 0.08 * (self.s_hi - self.s_lo)
        frac = (i % self.period) / self.period
        tri = 2.0 * frac if frac < 0.5 else 2.0 * (1.0 - frac)
        return lo + (hi - lo) * tri

    def __call__(self, state: SystemState, i: int) -> np.ndarray:
        if self.rng.random() < self.burst_prob:
            ang = self.rng.uniform(0.0, TWO_PI)
            mag = self.rng.uniform(0.3, 1.0) * self.u_max
            return mag * np.array([math.cos(ang), math.sin(ang)])
        rot = local_frame(state.x_r)
        u_n = float(np.clip(10.0 * (state.s_r - self.target(i)), -0.85 * self.u_max, 0.85 * self.u_max))
        # One precession direction per wave period, so the center line sweeps
        # a wide angular range instead of dithering in place.
        sign = 1.0 if (i // self.period) % 2 == 0 else -1.0
        u_t = sign * 0.55 * self.u_max * (0.35 + 0.65 * abs(math.sin(TWO_PI * i / 53.0 + self.phase)))
        u = rot.T @ np.array([u_n, u_t])
        norm = float(np.hypot(u[0], u[1]))
        if norm > self.u_max:
            u *= self.u_max / norm
        return u


def collect_dataset(n: int, cfg: PlantConfig, policy=None, u_max: float = TWO_PI,
                    s_range: tuple[float, float] = (2.0, 6.0)) -> list[DataTuple]:
    """Collect n tuples from a fresh plant under the excitation policy.

    Velocities are one-step finite differences paired with the step-start
    relative position, which matches the Euler integrator exactly in the
    noiseless case. Samples that would leave the arena are rejected and the
    pair is steered back toward the center before collection resumes.
    """
    if n <= 0:
        raise ValueError("need a positive sample count")
    plant = Plant(cfg)
    rng = np.random.default_rng((cfg.seed, 1))
    if policy is None:
        policy = SweepPolicy(rng, u_max=u_max, s_range=s_range)
    # Random initial bearing so the center line is not axis-locked.
    ang = rng.uniform(0.0, TWO_PI)
    cx = 0.5 * (cfg.arena[0] + cfg.arena[2])
    cy = 0.5 * (cfg.arena[1] + cfg.arena[3])
    d0 = 3.0 * (cfg.r_a + cfg.r_u)
    plant.state = SystemState(vec2(cx + d0 * math.cos(ang), cy + d0 * math.sin(ang)),
                              vec2(cx, cy), cfg.r_a, cfg.r_u)

    margin = 4.0 * max(cfg.r_a, cfg.r_u)
    tuples: list[DataTuple] = []
    i = 0
    guard = 0
    while len(tuples) < n:
        guard += 1
        if guard > 200 * n + 1000:
            raise RuntimeError("excitation policy failed to stay in the arena")
        before = plant.state
        u = policy(before, i)
        after, _ = plant.step(u)
        i += 1
        if not plant.in_bounds(margin):
            # Rejected: steer back toward the arena center, unrecorded.
            for _ in range(12):
                back = vec2(cx, cy) - plant.state.x_a
                bn = float(np.hypot(back[0], back[1]))
                if bn > 1e-9:
                    plant.step(0.5 * u_max * back / bn)
            continue
        v_u = (after.x_u - before.x_u) / cfg.dt
        v_r = (after.x_r - before.x_r) / cfg.dt
        tuples.append(DataTuple(before.x_r.copy(), v_u, v_r, np.asarray(u, dtype=float)))
    return tuples


def s_r_values(data: list[DataTuple], cfg_or_radii) -> np.ndarray:
    """Normalized distances of a dataset, given a PlantConfig or (r_a, r_u)."""
    if isinstance(cfg_or_radii, PlantConfig):
        r_a, r_u = cfg_or_radii.r_a, cfg_or_radii.r_u
    else:
        r_a, r_u = cfg_or_radii
    return np.array([normalized_distance(t.x_r, r_a, r_u) for t in data])


def coverage_fraction(s_vals: np.ndarray, s_range=(2.0, 6.0), bins: int = 20) -> float:
    """Fraction of equal-width bins of the range hit by at least one sample."""
    hist, _ = np.histogram(s_vals, bins=bins, range=s_range)
    return float(np.count_nonzero(hist)) / bins


def mean_relative_distance(data: list[DataTuple], v_lo: float = 0.5, v_hi: float = math.inf) -> float:
    """Mean center distance over samples whose object speed is in [v_lo, v_hi].

    Used to size the desired relative position for the controller.
    """
    dists = [float(np.hypot(t.x_r[0], t.x_r[1])) for t in data
             if v_lo <= float(np.hypot(t.v_u[0], t.v_u[1])) <= v_hi]
    if not dists:
        raise ValueError("no samples in the requested speed band")
    return float(np.mean(dists))


DATASET_COLUMNS = ["x_r_x", "x_r_y", "v_u_x", "v_u_y", "v_r_x", "v_r_y", "u_x", "u_y"]


def save_dataset(path, data: list[DataTuple]) -> None:
    """Write tuples as CSV: header row plus one full-precision record per sample."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(DATASET_COLUMNS)
        for t in data:
            row = [*t.x_r, *t.v_u, *t.v_r, *t.u]
            w.writerow([repr(float(v)) for v in row])


def load_dataset(path) -> list[DataTuple]:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        if header != DATASET_COLUMNS:
            raise ValueError(f"unexpected dataset header: {header}")
        out = []
        for row in r:
            vals = [float(v) for v in row]
            out.append(DataTuple(np.array(vals[0:2]), np.array(vals[2:4]),
                                 np.array(vals[4:6]), np.array(vals[6:8])))
    return out
