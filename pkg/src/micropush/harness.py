"""Experiment orchestration: canned scenarios, reports, and SVG plots.

Every experiment is deterministic given its config and seed list. Pass/fail
thresholds live in the config dictionary (DEFAULT_THRESHOLDS provides the
defaults), so acceptance levels are data rather than code.
"""

from __future__ import annotations

import json
import math
import statistics
from dataclasses import asdict, dataclass, field

import numpy as np

from . import planner, rbfn, trajectories
from .controller import ControllerParams, TrackLog, pushing_state, track
from .geometry import vec2
from .plant import (Plant, PlantConfig, collect_dataset, coverage_fraction,
                    mean_relative_distance, s_r_values)

DEFAULT_THRESHOLDS = {
    "circle75_mean_rel_err": 0.05,
    "model_err_low": 0.10,
    "model_err_high": 0.30,
    "max_contacts_qp": 0,
    "min_contacts_baseline": 1,
    "coverage_fraction": 0.8,
}


def load_config(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def merged(base: dict, override: dict | None) -> dict:
    """Shallow-merge override into base section by section."""
    out = {k: dict(v) if isinstance(v, dict) else v for k, v in base.items()}
    for k, v in (override or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k].update(v)
        else:
            out[k] = v
    return out


def plant_config_from(section: dict | None, seed: int | None = None) -> PlantConfig:
    section = dict(section or {})
    if seed is not None:
        section["seed"] = seed
    mobility = section.pop("mobility", None)
    cfg = PlantConfig(**section)
    if mobility:
        from .plant import MobilityCurve
        cfg.mobility = MobilityCurve(**mobility)
    return cfg


def controller_params_from(section: dict | None) -> ControllerParams:
    return ControllerParams(**(section or {}))


def make_trajectory(spec: str, arena=(0.0, 0.0, 512.0, 512.0)) -> np.ndarray:
    """Parse a trajectory spec: letter:A, circle:75, s-curve[:r], file:way.csv."""
    cx = 0.5 * (arena[0] + arena[2])
    cy = 0.5 * (arena[1] + arena[3])
    kind, _, arg = spec.partition(":")
    kind = kind.strip().lower()
    if kind == "letter":
        if not arg:
            raise ValueError("letter spec needs a name, e.g. letter:A")
        return trajectories.letter(arg, origin=(cx - 60.0, cy - 75.0))
    if kind == "circle":
        radius = float(arg) if arg else 75.0
        return trajectories.circle(radius, center=(cx, cy))
    if kind in ("s-curve", "scurve", "s"):
        radius = float(arg) if arg else 28.0
        return trajectories.s_curve(radius, origin=(cx, cy - 2.0 * (float(arg) if arg else 28.0)))
    if kind == "file":
        return trajectories.load_waypoints_csv(arg)
    raise ValueError(f"unknown trajectory spec {spec!r}")


def run_tracking(model: rbfn.RbfnModel, traj: np.ndarray, params: ControllerParams,
                 plant_cfg: PlantConfig, law: str = "qp", adapt: bool = True,
                 baseline_gain: float = 1.0, max_steps: int = 40000) -> TrackLog:
    """One closed-loop run starting from the canonical pushing placement."""
    second = traj[1] if traj.shape[0] > 1 else traj[0] + vec2(1.0, 0.0)
    state0 = pushing_state(traj[0], second, params, plant_cfg.r_a, plant_cfg.r_u)
    plant = Plant(plant_cfg, state0)
    return run_tracking_from(model, traj, params, plant, law, adapt, baseline_gain, max_steps)


def run_tracking_from(model, traj, params, plant, law="qp", adapt=True,
                      baseline_gain: float = 1.0, max_steps: int = 40000) -> TrackLog:
    return track(traj, plant.state, model, params, plant, law=law, adapt=adapt,
                 baseline_gain=baseline_gain, max_steps=max_steps)


def tracking_report(log: TrackLog, scale: float | None = None) -> dict:
    """Summary metrics for one run; scale normalizes path errors (e.g. radius)."""
    path_err = log.path_errors()
    rep = {
        "steps": int(log.t.size),
        "completed": bool(log.completed),
        "failed": bool(log.failed),
        "contacts": int(log.contacts),
        "faults": int(log.faults),
        "mean_setpoint_err_um": float(np.mean(log.err_u)) if log.err_u.size else math.nan,
        "mean_path_err_um": float(np.mean(path_err)) if path_err.size else math.nan,
        "max_path_err_um": float(np.max(path_err)) if path_err.size else math.nan,
        "mean_speed_rad_s": float(np.mean(np.linalg.norm(log.u, axis=1))) if log.u.size else math.nan,
        "min_s_r": float(np.min(log.s_r)) if log.s_r.size else math.nan,
    }
    if log.u.size:
        rep["max_u_norm"] = float(np.max(np.linalg.norm(log.u, axis=1)))
    if scale:
        rep["mean_rel_err"] = rep["mean_path_err_um"] / scale
        rep["max_rel_err"] = rep["max_path_err_um"] / scale
    return rep


def train_model_for(plant_cfg: PlantConfig, n: int = 800, p: int = 32,
                    kind: str = "multiquadric", train_cfg: rbfn.TrainConfig | None = None):
    """Collect a dataset and fit the standard model; returns (model, data)."""
    data = collect_dataset(n, plant_cfg)
    model = rbfn.train_offline(data, p, kind, train_cfg, plant_cfg.r_a, plant_cfg.r_u)
    return model, data


# ----------------------------------------------------------------------
# Canned experiments
# ----------------------------------------------------------------------

def thin(data, n: int):
    """Evenly thinned subset of size n, modeling a shorter collection session."""
    if n >= len(data):
        return list(data)
    idx = np.linspace(0, len(data) - 1, n).round().astype(int)
    return [data[i] for i in idx]


def data_efficiency_experiment(sizes=(100, 200, 400, 800), seeds=range(10),
                               plant_section: dict | None = None, p: int = 32,
                               kind: str = "multiquadric", n_test: int = 400) -> dict:
    """Held-out error versus training size, median over seeds."""
    per_seed = {n: [] for n in sizes}
    for seed in seeds:
        cfg = plant_config_from(plant_section, seed=1000 + seed)
        data = collect_dataset(max(sizes), cfg)
        test_cfg = plant_config_from(plant_section, seed=5000 + seed)
        test = collect_dataset(n_test, test_cfg)
        for n in sizes:
            model = rbfn.train_offline(thin(data, n), p, kind, None, cfg.r_a, cfg.r_u)
            per_seed[n].append(rbfn.test_error(model, test, "u", r_a=cfg.r_a, r_u=cfg.r_u))
    medians = {n: float(statistics.median(v)) for n, v in per_seed.items()}
    return {"sizes": list(sizes), "medians": medians,
            "per_seed": {n: list(map(float, v)) for n, v in per_seed.items()}}


def decoupling_experiment(n: int = 400, seeds=range(10), plant_section: dict | None = None,
                          p: int = 32, kind: str = "multiquadric", n_test: int = 400) -> dict:
    """Local-frame decoupled model versus the unstructured global ablation."""
    local_err, global_err = [], []
    for seed in seeds:
        cfg = plant_config_from(plant_section, seed=1000 + seed)
        data = collect_dataset(n, cfg)
        test = collect_dataset(n_test, plant_config_from(plant_section, seed=5000 + seed))
        model = rbfn.train_offline(data, p, kind, None, cfg.r_a, cfg.r_u)
        local_err.append(rbfn.test_error(model, test, "u", r_a=cfg.r_a, r_u=cfg.r_u))
        ablation = rbfn.train_global(data, p, kind)
        global_err.append(rbfn.test_error_global(ablation, test, "u"))
    return {
        "n": n,
        "decoupled_median": float(statistics.median(local_err)),
        "global_median": float(statistics.median(global_err)),
        "decoupled": list(map(float, local_err)),
        "global": list(map(float, global_err)),
    }


def activation_sweep(train_data, test_data, ps=(8, 16, 32, 64),
                     kinds=("multiquadric", "gaussian"), r_a=5.0, r_u=5.0) -> dict:
    """Neuron-count / activation grid of held-out errors for both maps."""
    grid = {}
    for kind in kinds:
        for p in ps:
            try:
                model = rbfn.train_offline(train_data, p, kind, None, r_a, r_u)
                e_u = rbfn.test_error(model, test_data, "u", r_a=r_a, r_u=r_u)
                e_r = rbfn.test_error(model, test_data, "r", r_a=r_a, r_u=r_u)
                grid[(kind, p)] = {"e_u": float(e_u), "e_r": float(e_r)}
            except rbfn.TrainingDivergedError:
                grid[(kind, p)] = {"e_u": math.nan, "e_r": math.nan, "diverged": True}
    return grid


def circle_sweep(radii=(25.0, 50.0, 75.0), lams=(1.0, 2.0, 5.0), seeds=range(5),
                 plant_section: dict | None = None,
                 controller_section: dict | None = None) -> dict:
    """Tracking error (relative to radius) over the radius/lambda grid."""
    results = {(r, lam): [] for r in radii for lam in lams}
    for seed in seeds:
        train_cfg = plant_config_from(plant_section, seed=2000 + seed)
        model, data = train_model_for(train_cfg)
        x_avg = mean_relative_distance(data)
        for radius in radii:
            for lam in lams:
                base = controller_params_from(controller_section)
                params = ControllerParams(**{**asdict(base), "lam": lam, "x_r_avg": x_avg})
                run_cfg = plant_config_from(plant_section, seed=3000 + seed)
                traj = make_trajectory(f"circle:{radius}", run_cfg.arena)
                log = run_tracking(model, traj, params, run_cfg)
                rep = tracking_report(log, scale=radius)
                results[(radius, lam)].append(rep)
    medians = {}
    for key, reps in results.items():
        medians[key] = {
            "mean_rel_err": float(statistics.median(r["mean_rel_err"] for r in reps)),
            "contacts": int(sum(r["contacts"] for r in reps)),
            "completed": all(r["completed"] for r in reps),
        }
    return {"medians": medians, "per_seed": results}


def controller_comparison(seeds=range(5), plant_section: dict | None = None,
                          controller_section: dict | None = None,
                          scenario: str = "s-curve") -> dict:
    """QP controller versus the naive proportional baseline on one scenario."""
    rows = []
    for seed in seeds:
        train_cfg = plant_config_from(plant_section, seed=2000 + seed)
        model, data = train_model_for(train_cfg)
        x_avg = mean_relative_distance(data)
        base = controller_params_from(controller_section)
        params = ControllerParams(**{**asdict(base), "x_r_avg": x_avg})
        run_cfg = plant_config_from(plant_section, seed=3000 + seed)
        traj = make_trajectory(scenario, run_cfg.arena)
        log_qp = run_tracking(model, traj, params, run_cfg)
        rep_qp = tracking_report(log_qp)
        run_cfg2 = plant_config_from(plant_section, seed=3000 + seed)
        gain = max(rep_qp["mean_speed_rad_s"], 0.5)  # match mean command magnitude
        log_p = run_tracking(model, traj, params, run_cfg2, law="p", baseline_gain=gain)
        rep_p = tracking_report(log_p)
        rows.append({"seed": int(seed), "qp": rep_qp, "baseline": rep_p,
                     "baseline_gain": float(gain)})
    return {
        "scenario": scenario,
        "qp_contacts_total": int(sum(r["qp"]["contacts"] for r in rows)),
        "baseline_contact_runs": int(sum(1 for r in rows if r["baseline"]["contacts"] > 0)),
        "runs": rows,
    }


def canned_world() -> planner.World:
    """Cluttered arena used by the planner comparison."""
    obstacles = np.array([
        [150.0, 120.0, 35.0],
        [320.0, 90.0, 30.0],
        [110.0, 300.0, 32.0],
        [250.0, 250.0, 40.0],
        [400.0, 330.0, 35.0],
        [180.0, 430.0, 30.0],
        [430.0, 150.0, 28.0],
    ])
    return planner.World((0.0, 0.0, 512.0, 512.0), obstacles, clearance=4.0)


def planner_comparison(world: planner.World | None = None, start=(40.0, 40.0),
                       goal=(470.0, 470.0), seeds=range(20),
                       params: planner.RrtParams | None = None) -> dict:
    """Max-curvature medians for smoothed, unsmoothed, and vanilla planning."""
    if world is None:
        world = canned_world()
    if params is None:
        params = planner.RrtParams()
    rows = []
    failures = {"co-rrt": 0, "rrt": 0}
    for seed in seeds:
        p = planner.RrtParams(**{**asdict(params), "seed": int(seed)})
        row = {"seed": int(seed)}
        try:
            wps = planner.plan_co_rrt(world, start, goal, p)
            curve = planner.bezier_smooth(wps, world=world)
            row["co_rrt_smooth"] = planner.max_curvature_curve(curve)
            row["co_rrt_raw"] = planner.max_curvature_polyline(wps)
            row["co_rrt_free"] = bool(world.polyline_free(curve.sample(800)))
        except planner.NoPathError:
            failures["co-rrt"] += 1
        try:
            wps_v = planner.plan_rrt(world, start, goal, p)
            row["rrt_raw"] = planner.max_curvature_polyline(wps_v)
            row["rrt_free"] = bool(world.polyline_free(wps_v))
        except planner.NoPathError:
            failures["rrt"] += 1
        rows.append(row)

    def med(key):
        vals = [r[key] for r in rows if key in r]
        return float(statistics.median(vals)) if vals else math.nan

    return {
        "median_smoothed": med("co_rrt_smooth"),
        "median_nosmooth": med("co_rrt_raw"),
        "median_rrt": med("rrt_raw"),
        "all_free": all(r.get("co_rrt_free", True) and r.get("rrt_free", True) for r in rows),
        "failures": failures,
        "rows": rows,
    }


def adaptation_experiment(seeds=range(10), plant_section: dict | None = None,
                          amp_factor: float = 1.3, radius: float = 50.0) -> dict:
    """Steady tracking error with and without online adaptation on a perturbed plant."""
    with_up, without = [], []
    for seed in seeds:
        train_cfg = plant_config_from(plant_section, seed=2000 + seed)
        model, data = train_model_for(train_cfg)
        x_avg = mean_relative_distance(data)
        params = ControllerParams(x_r_avg=x_avg)
        for adapt, sink in ((True, with_up), (False, without)):
            cfg = plant_config_from(plant_section, seed=3000 + seed)
            cfg.mobility.amp_normal *= amp_factor
            cfg.mobility.amp_tangential *= amp_factor
            traj = make_trajectory(f"circle:{radius}", cfg.arena)
            log = run_tracking(model, traj, params, cfg, adapt=adapt)
            errs = log.path_errors()
            tail = errs[errs.size // 3:] if errs.size >= 3 else errs
            sink.append(float(np.mean(tail)))
    return {
        "adapted_median": float(statistics.median(with_up)),
        "fixed_median": float(statistics.median(without)),
        "adapted": with_up,
        "fixed": without,
    }


# ----------------------------------------------------------------------
# SVG output
# ----------------------------------------------------------------------

def _fmt(v: float) -> str:
    return f"{v:.3f}"


def _svg_polyline(points, color, width=1.2, dashed=False) -> str:
    pts = " ".join(f"{_fmt(p[0])},{_fmt(p[1])}" for p in points)
    dash = ' stroke-dasharray="4,3"' if dashed else ""
    return (f'<polyline points="{pts}" fill="none" stroke="{color}" '
            f'stroke-width="{width}"{dash}/>')


def tracking_svg(path, log: TrackLog, world: planner.World | None = None,
                 r_a: float = 5.0, r_u: float = 5.0) -> None:
    """Reference (blue) and actual (orange) paths with the final pair drawn.

    Object circle in green, robot circle in red, matching the usual figure
    convention.
    """
    ref = log.reference
    allpts = np.vstack([ref, log.x_u, log.x_a]) if log.x_u.size else ref
    lo = allpts.min(axis=0) - 20.0
    hi = allpts.max(axis=0) + 20.0
    w, h = hi - lo

    def tx(p):
        return (p[0] - lo[0], hi[1] - p[1])  # flip y for image coordinates

    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_fmt(w)}" height="{_fmt(h)}" '
        f'viewBox="0 0 {_fmt(w)} {_fmt(h)}">',
        '<rect width="100%" height="100%" fill="white"/>',
    ]
    if world is not None:
        for cx, cy, r in world.obstacles:
            x, y = tx((cx, cy))
            parts.append(f'<circle cx="{_fmt(x)}" cy="{_fmt(y)}" r="{_fmt(r)}" '
                         'fill="#d0d0d0" stroke="#707070"/>')
    parts.append(_svg_polyline([tx(p) for p in ref], "blue", dashed=True))
    if log.x_u.size:
        parts.append(_svg_polyline([tx(p) for p in log.x_u], "orange"))
        ox, oy = tx(log.x_u[-1])
        rx, ry = tx(log.x_a[-1])
        parts.append(f'<circle cx="{_fmt(ox)}" cy="{_fmt(oy)}" r="{_fmt(r_u)}" '
                     'fill="none" stroke="green" stroke-width="1.5"/>')
        parts.append(f'<circle cx="{_fmt(rx)}" cy="{_fmt(ry)}" r="{_fmt(r_a)}" '
                     'fill="none" stroke="red" stroke-width="1.5"/>')
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")


def save_report(path, report: dict) -> None:
    with open(path, "w") as fh:
        json.dump(report, fh, indent=1, default=float)
        fh.write("\n")


@dataclass
class ExperimentReport:
    """Aggregated pass/fail record for a batch of runs."""

    name: str
    metrics: dict = field(default_factory=dict)
    thresholds: dict = field(default_factory=dict)
    passes: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(self.passes.values()) and not self.failures

    def to_dict(self) -> dict:
        return {"name": self.name, "metrics": self.metrics, "thresholds": self.thresholds,
                "passes": self.passes, "failures": self.failures, "ok": self.ok}
