"""Command-line front end.

Subcommands: collect, train, track, compare-controllers, plan, report.
The output root comes from --out, the MICROPUSH_OUT environment variable,
or ./out, in that order. Exit codes: 0 success, 2 usage, 3 task failure
(contact or no path), 4 numeric divergence.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import pathlib
import sys

import numpy as np

from . import harness, planner, rbfn
from .plant import (collect_dataset, coverage_fraction, load_dataset,
                    mean_relative_distance, s_r_values, save_dataset)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_TASK_FAILURE = 3
EXIT_DIVERGED = 4


def _out_dir(args) -> pathlib.Path:
    root = args.out or os.environ.get("MICROPUSH_OUT", "out")
    p = pathlib.Path(root)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _config(args) -> dict:
    return harness.load_config(args.config) if getattr(args, "config", None) else {}


def cmd_collect(args) -> int:
    cfg_doc = _config(args)
    section = dict(cfg_doc.get("plant", {}))
    if args.sigma_b is not None:
        section["sigma_b"] = args.sigma_b
    if args.dt is not None:
        section["dt"] = args.dt
    cfg = harness.plant_config_from(section, seed=args.seed)
    data = collect_dataset(args.n, cfg)
    out = _out_dir(args) / (args.name or "dataset.csv")
    save_dataset(out, data)
    s_vals = s_r_values(data, cfg)
    hist, edges = np.histogram(s_vals, bins=20, range=(2.0, 6.0))
    print(f"wrote {out} ({len(data)} tuples)")
    print(f"s_r coverage: {coverage_fraction(s_vals):.0%} of bins in [2, 6]")
    for h, lo, hi in zip(hist, edges[:-1], edges[1:]):
        print(f"  [{lo:4.1f},{hi:4.1f})  {'#' * min(h, 60)}{h:>5d}")
    return EXIT_OK


def cmd_train(args) -> int:
    data = load_dataset(args.dataset)
    out = _out_dir(args)
    if args.test_dataset:
        test = load_dataset(args.test_dataset)
        train = data
    else:
        # Deterministic 3:1 split: every fourth sample held out.
        test = data[3::4]
        train = [t for i, t in enumerate(data) if i % 4 != 3]
    cfg = rbfn.TrainConfig(epochs=args.epochs, seed=args.seed)
    if args.sweep:
        grid = harness.activation_sweep(train, test)
        path = out / "sweep.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["kind", "neurons", "e_u", "e_r"])
            for (kind, p), cell in sorted(grid.items()):
                w.writerow([kind, p, repr(cell["e_u"]), repr(cell["e_r"])])
        print(f"wrote {path}")
        for (kind, p), cell in sorted(grid.items()):
            print(f"  {kind:<13} p={p:<3d} e_u={cell['e_u']:.3f} e_r={cell['e_r']:.3f}")
        return EXIT_OK
    try:
        model, history = rbfn.train_offline(train, args.neurons, args.kind, cfg,
                                            return_history=True)
    except rbfn.TrainingDivergedError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    model_path = out / (args.name or "model.json")
    rbfn.save_model(model_path, model)
    curve_path = out / "training_curve.csv"
    with open(curve_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "loss"])
        for i, loss in enumerate(history):
            w.writerow([i, repr(float(loss))])
    e_u = rbfn.test_error(model, test, "u")
    e_r = rbfn.test_error(model, test, "r")
    print(f"wrote {model_path} and {curve_path}")
    print(f"held-out e_u={e_u:.3f} e_r={e_r:.3f}  (x_r_avg={mean_relative_distance(data):.1f} um)")
    return EXIT_OK


def cmd_track(args) -> int:
    cfg_doc = _config(args)
    model = rbfn.load_model(args.model)
    plant_section = dict(cfg_doc.get("plant", {}))
    plant_cfg = harness.plant_config_from(plant_section, seed=args.seed)
    ctrl_section = dict(cfg_doc.get("controller", {}))
    for key, val in (("lam", args.lam), ("alpha_gain", args.alpha), ("x_r_avg", args.x_r_avg)):
        if val is not None:
            ctrl_section[key] = val
    params = harness.controller_params_from(ctrl_section)
    try:
        traj = harness.make_trajectory(args.trajectory, plant_cfg.arena)
    except (ValueError, KeyError) as exc:
        print(f"bad trajectory spec: {exc}", file=sys.stderr)
        return EXIT_USAGE
    log = harness.run_tracking(model, traj, params, plant_cfg)
    out = _out_dir(args)
    stem = args.name or "track"
    log.save(out / f"{stem}_log.csv")
    scale = None
    if args.trajectory.startswith("circle"):
        scale = float(args.trajectory.split(":")[1]) if ":" in args.trajectory else 75.0
    report = harness.tracking_report(log, scale=scale)
    harness.save_report(out / f"{stem}_report.json", report)
    harness.tracking_svg(out / f"{stem}.svg", log, r_a=plant_cfg.r_a, r_u=plant_cfg.r_u)
    print(f"wrote {out / (stem + '_log.csv')}, report, and SVG")
    print(f"mean path error {report['mean_path_err_um']:.2f} um, "
          f"max {report['max_path_err_um']:.2f} um, contacts {report['contacts']}")
    if log.failed:
        print("run FAILED (contact)", file=sys.stderr)
        return EXIT_TASK_FAILURE
    return EXIT_OK


def cmd_compare_controllers(args) -> int:
    cfg_doc = _config(args)
    seeds = range(args.seeds)
    result = harness.controller_comparison(seeds, cfg_doc.get("plant"),
                                           cfg_doc.get("controller"),
                                           scenario=args.scenario)
    out = _out_dir(args)
    harness.save_report(out / "controller_comparison.json", result)
    print(f"QP contacts: {result['qp_contacts_total']}  "
          f"baseline runs with contact: {result['baseline_contact_runs']}/{args.seeds}")
    for row in result["runs"]:
        q, b = row["qp"], row["baseline"]
        print(f"  seed {row['seed']}: qp err {q['mean_path_err_um']:.2f} um "
              f"(contacts {q['contacts']}), baseline err {b['mean_path_err_um']:.2f} um "
              f"(contacts {b['contacts']})")
    return EXIT_OK


def cmd_plan(args) -> int:
    world = planner.load_world(args.world) if args.world else harness.canned_world()
    start = (args.start[0], args.start[1])
    goal = (args.goal[0], args.goal[1])
    out = _out_dir(args)
    params = planner.RrtParams(seed=args.seed, step=args.step, max_iters=args.max_iters)
    if args.method == "compare":
        result = harness.planner_comparison(world, start, goal, range(args.seeds), params)
        harness.save_report(out / "planner_comparison.json", result)
        print(f"median max curvature [1/um]: smoothed {result['median_smoothed']:.5f}, "
              f"raw {result['median_nosmooth']:.5f}, vanilla {result['median_rrt']:.5f}")
        ok = (result["median_smoothed"] < result["median_nosmooth"] < result["median_rrt"]
              and result["all_free"])
        print("ordering " + ("holds" if ok else "VIOLATED"))
        return EXIT_OK
    try:
        if args.method == "rrt":
            wps = planner.plan_rrt(world, start, goal, params)
            curve = None
        else:
            wps = planner.plan_co_rrt(world, start, goal, params)
            curve = None if args.method == "co-rrt-nosmooth" else \
                planner.bezier_smooth(wps, world=world)
    except planner.NoPathError as exc:
        print(f"planning failed: {exc}", file=sys.stderr)
        return EXIT_TASK_FAILURE
    planner.save_waypoints(out / "waypoints.csv", wps)
    report = {"method": args.method, "waypoints": int(wps.shape[0]),
              "max_curvature_polyline": planner.max_curvature_polyline(wps)}
    if curve is not None:
        planner.save_curve(out / "curve.csv", curve)
        report["max_curvature_smoothed"] = planner.max_curvature_curve(curve)
    harness.save_report(out / "plan_report.json", report)
    print(f"wrote waypoints ({wps.shape[0]} points)"
          + (", smoothed curve" if curve is not None else ""))
    return EXIT_OK


def cmd_report(args) -> int:
    root = pathlib.Path(args.dir)
    if not root.is_dir():
        print(f"not a directory: {root}", file=sys.stderr)
        return EXIT_USAGE
    reports = sorted(root.glob("*.json"))
    if not reports:
        print("no report files found", file=sys.stderr)
        return EXIT_USAGE
    failures = 0
    for path in reports:
        with open(path) as fh:
            doc = json.load(fh)
        status = "ok"
        if isinstance(doc, dict):
            if doc.get("failed") or doc.get("contacts", 0) > 0:
                status = "FAILED"
                failures += 1
            elif doc.get("ok") is False:
                status = "FAILED"
                failures += 1
        print(f"  {path.name:<40} {status}")
    print(f"{len(reports)} reports, {failures} failures")
    return EXIT_OK if failures == 0 else EXIT_TASK_FAILURE


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="micropush",
                                 description="Non-contact pushing simulator and experiments")
    ap.add_argument("--out", help="output root (default $MICROPUSH_OUT or ./out)")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("collect", help="collect a training dataset from the plant")
    p.add_argument("--n", type=int, default=800)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sigma-b", type=float, dest="sigma_b")
    p.add_argument("--dt", type=float)
    p.add_argument("--name", help="output file name")
    p.add_argument("--config")
    p.set_defaults(func=cmd_collect)

    p = sub.add_parser("train", help="fit the coupling model to a dataset")
    p.add_argument("dataset")
    p.add_argument("--neurons", "-p", type=int, default=32)
    p.add_argument("--kind", choices=rbfn.ACTIVATION_KINDS, default="multiquadric")
    p.add_argument("--epochs", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--test-dataset")
    p.add_argument("--sweep", action="store_true",
                   help="run the neuron/activation grid instead of one fit")
    p.add_argument("--name")
    p.add_argument("--config")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("track", help="closed-loop tracking with the learned model")
    p.add_argument("model")
    p.add_argument("--trajectory", default="circle:75",
                   help="letter:A | circle:75 | s-curve[:r] | file:way.csv")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lam", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--x-r-avg", type=float, dest="x_r_avg")
    p.add_argument("--name")
    p.add_argument("--config")
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("compare-controllers",
                       help="QP controller versus the proportional baseline")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--scenario", default="s-curve")
    p.add_argument("--config")
    p.set_defaults(func=cmd_compare_controllers)

    p = sub.add_parser("plan", help="plan through a cluttered world")
    p.add_argument("--world", help="world JSON file (default: bundled cluttered world)")
    p.add_argument("--start", type=float, nargs=2, default=[40.0, 40.0])
    p.add_argument("--goal", type=float, nargs=2, default=[470.0, 470.0])
    p.add_argument("--method", choices=["co-rrt", "rrt", "co-rrt-nosmooth", "compare"],
                   default="co-rrt")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seeds", type=int, default=20, help="seed count in compare mode")
    p.add_argument("--step", type=float, default=10.0)
    p.add_argument("--max-iters", type=int, default=4000, dest="max_iters")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("report", help="summarize report files in a directory")
    p.add_argument("dir")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"missing file: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
