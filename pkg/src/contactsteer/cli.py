"""Batch front door: certify, plan, simulate, lift, and scan; files out.

Every subcommand writes delimited data (CSV/JSON) into the output directory
and, unless ``--no-plots`` is given, renders matplotlib figures alongside.
Exit codes: 0 when all requested certificates and tolerances are met, 1 on a
tolerance failure, 2 on bad input or a failed structural certificate.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import models
from .controls import load_control, save_control, validate
from .dynamics import solve, trajectory_to_csv, verify_inclusion
from .errors import (
    BudgetExceeded,
    ContactSteerError,
    ControlFormatError,
    LiftFailure,
    Step2Violation,
)
from .geometry import compute_constants, get_patch, verify_step2
from .homotopy import circle_scenario, lift_homotopy, lift_loop, lp_continuity_probe
from .planner import bch_residual, plan, rank_margin, rank_margin_floor

SCHEMA_VERSION = "contactsteer-report/1"

EXIT_OK = 0
EXIT_TOLERANCE = 1
EXIT_INPUT = 2


@dataclass
class RunConfig:
    model: str = "torus"
    tol: float = 1e-8
    steps: int = 200
    p: float = 2.0
    seed: int = 0
    grid: int = 17
    out: Path = Path("contactsteer-out")
    plots: bool = True

    def validate(self):
        if self.tol <= 0 or self.steps <= 0 or self.grid <= 1:
            raise ControlFormatError("tolerances, steps and grid must be positive")
        if self.p < 1:
            raise ControlFormatError("exponent p must be >= 1")


def _load_config(args) -> RunConfig:
    cfg = RunConfig()
    file_values = {}
    if args.config:
        try:
            with open(args.config, "r", encoding="utf-8") as fh:
                file_values = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ControlFormatError(f"cannot read config: {exc}") from exc
    for key in ("model", "tol", "steps", "p", "seed", "grid", "out"):
        if key in file_values:
            setattr(cfg, key, file_values[key])
    if args.model:
        cfg.model = args.model
    if args.tol is not None:
        cfg.tol = args.tol
    if args.steps is not None:
        cfg.steps = args.steps
    if args.p is not None:
        cfg.p = args.p
    if args.seed is not None:
        cfg.seed = args.seed
    if getattr(args, "grid", None) is not None:
        cfg.grid = args.grid
    out = args.out or file_values.get("out") or os.environ.get("CONTACTSTEER_OUT")
    cfg.out = Path(out) if out else Path("contactsteer-out")
    cfg.plots = not args.no_plots
    cfg.tol = float(cfg.tol)
    cfg.steps = int(cfg.steps)
    cfg.p = float(cfg.p)
    cfg.seed = int(cfg.seed)
    cfg.grid = int(cfg.grid)
    cfg.validate()
    cfg.out.mkdir(parents=True, exist_ok=True)
    return cfg


def _structure(cfg: RunConfig):
    if cfg.model.endswith(".json"):
        return models.from_config(cfg.model)
    return models.by_name(cfg.model)


def _parse_point(text: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.split(",")], dtype=float)
    except ValueError as exc:
        raise ControlFormatError(f"cannot parse point '{text}'") from exc


def _write_json(path: Path, payload: dict):
    payload = {"schema": SCHEMA_VERSION, **payload}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
    return path


# -- subcommands ---------------------------------------------------------------


def cmd_constants(cfg: RunConfig) -> int:
    structure = _structure(cfg)
    step2 = verify_step2(structure, resolution=min(cfg.grid, 9))
    constants = compute_constants(structure, {"resolution": cfg.grid})
    report = dict(structure.constants_report or {})
    rng = np.random.default_rng(cfg.seed)
    margins = [
        rank_margin(structure, p) for p in structure.sample_points(50, rng)
    ]
    payload = {
        "model": structure.name,
        "Omega": constants.Omega,
        "lambda_raw": constants.lambda_raw,
        "K": constants.K,
        "lambda_rescaled": constants.lambda_rescaled,
        "grid_estimates": report,
        "rank_margin_min": float(np.min(margins)),
        "rank_margin_floor": rank_margin_floor(structure),
        "step2_min_wedge": step2["min_wedge"],
    }
    _write_json(cfg.out / "constants.json", payload)
    print(f"model        : {structure.name}")
    print(f"Omega        : {constants.Omega:.12g}  (grid {report.get('Omega_grid'):.12g})")
    print(f"lambda_raw   : {constants.lambda_raw:.12g}  (grid {report.get('lambda_raw_grid'):.12g})")
    print(f"K            : {constants.K:.12g}  (grid {report.get('K_grid'):.12g})")
    print(f"rank margin  : min {payload['rank_margin_min']:.6g} "
          f"(floor {payload['rank_margin_floor']:.6g})")
    print(f"step-2 wedge : min {step2['min_wedge']:.6g}")
    ok = payload["rank_margin_min"] >= payload["rank_margin_floor"] - 1e-6
    return EXIT_OK if ok else EXIT_TOLERANCE


def cmd_plan(cfg: RunConfig, source: str, target: str) -> int:
    structure = _structure(cfg)
    x = _parse_point(source)
    y = _parse_point(target)
    lo, hi = structure.domain
    for p in (x, y):
        if p.size != structure.m:
            raise ControlFormatError("point dimension mismatch")
        if structure.periods is None and (np.any(p < lo - 1e-9) or np.any(p > hi + 1e-9)):
            raise ControlFormatError(f"point {p.tolist()} outside model domain")
    control, report = plan(structure, x, y, tol=cfg.tol, seed=cfg.seed)
    validate(control)
    traj = solve(structure, x, control, steps_per_piece=max(cfg.steps // 2, 48))
    residual = structure.distance(traj.endpoint_wrapped, y)
    budgeted = report.legs * 10.0 * cfg.tol
    control.meta["endpoint_residual"] = residual
    save_control(control, cfg.out / "control.txt")
    trajectory_to_csv(traj, cfg.out / "trajectory.csv",
                      {"start": x.tolist(), "target": y.tolist(), "tol": cfg.tol})
    _write_json(cfg.out / "planner.json", {
        "model": structure.name,
        "start": x.tolist(),
        "target": y.tolist(),
        "endpoint": traj.endpoint_wrapped.tolist(),
        "endpoint_residual": residual,
        "tolerance_budget": budgeted,
        **report.as_dict(),
    })
    if cfg.plots:
        from .plots import plot_path_projection, plot_trajectory
        plot_trajectory(traj, cfg.out / "plan.png",
                        title=f"{structure.name}: planned trajectory")
        plot_path_projection(traj, cfg.out / "plan_path.png",
                             title="planned chart path")
    print(f"legs={report.legs} residual={residual:.3e} budget={budgeted:.3e}")
    return EXIT_OK if residual <= max(budgeted, 1e-12) else EXIT_TOLERANCE


def cmd_simulate(cfg: RunConfig, control_path: str, start: str) -> int:
    structure = _structure(cfg)
    control = load_control(control_path)
    x = _parse_point(start)
    traj = solve(structure, x, control, steps_per_piece=cfg.steps)
    report = verify_inclusion(structure, traj)
    trajectory_to_csv(traj, cfg.out / "trajectory.csv",
                      {"start": x.tolist(), "control": str(control_path)})
    payload = {"model": structure.name, "inclusion": report.as_dict(),
               "endpoint": traj.endpoint_wrapped.tolist()}
    roundtrip_ok = True
    if "target" in control.meta:
        target = np.asarray(control.meta["target"], dtype=float)
        gap = structure.distance(traj.endpoint_wrapped, target)
        payload["target"] = target.tolist()
        payload["target_residual"] = gap
        roundtrip_ok = gap <= max(100.0 * cfg.tol, 1e-6)
    _write_json(cfg.out / "inclusion.json", payload)
    if cfg.plots:
        from .plots import plot_trajectory
        plot_trajectory(traj, cfg.out / "simulate.png",
                        title=f"{structure.name}: simulated control")
    print(f"endpoint={traj.endpoint_wrapped.tolist()} "
          f"inclusion={'pass' if report.passed else 'FAIL'}")
    return EXIT_OK if (report.passed and roundtrip_ok) else EXIT_TOLERANCE


def _load_loop(path: str):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ControlFormatError(f"cannot read loop file: {exc}") from exc
    if path.endswith(".json"):
        data = json.loads(text)
        pts = np.asarray(data["points"], dtype=float)
        base = np.asarray(data.get("basepoint", pts[0]), dtype=float)
        return base, pts
    rows = [r for r in csv.reader(text.splitlines()) if r and not r[0].startswith("#")]
    if rows and not _is_float(rows[0][0]):
        rows = rows[1:]
    try:
        pts = np.array([[float(v) for v in row] for row in rows])
    except ValueError as exc:
        raise ControlFormatError(f"malformed loop file: {exc}") from exc
    return pts[0], pts


def _is_float(token: str) -> bool:
    try:
        float(token)
        return True
    except ValueError:
        return False


def cmd_lift_loop(cfg: RunConfig, loop_path: str) -> int:
    structure = _structure(cfg)
    base, pts = _load_loop(loop_path)
    control, report = lift_loop(structure, base, pts, tol=cfg.tol, seed=cfg.seed)
    validate(control)
    traj = solve(structure, base, control,
                 steps_per_piece=max(cfg.steps // 4, 24))
    closure = structure.distance(traj.endpoint_wrapped, base)
    displacement = traj.displacement()
    winding = [
        (round(displacement[i] / structure.periods[i])
         if structure.periods is not None and np.isfinite(structure.periods[i])
         else 0)
        for i in range(structure.m)
    ]
    save_control(control, cfg.out / "loop_control.txt")
    _write_json(cfg.out / "winding.json", {
        "model": structure.name,
        "basepoint": structure.wrap(base).tolist(),
        "displacement": displacement.tolist(),
        "winding": winding,
        "closure": closure,
        **report,
    })
    if cfg.plots:
        from .plots import plot_path_projection
        plot_path_projection(traj, cfg.out / "loop.png", loop_points=pts,
                             title="lifted loop")
    budget = report["legs"] * 10.0 * cfg.tol
    print(f"winding={winding} closure={closure:.3e} legs={report['legs']} "
          f"refinements={report['refinements']}")
    return EXIT_OK if closure <= max(budget, 1e-9) else EXIT_TOLERANCE


def cmd_homotopy(cfg: RunConfig, scenario_path: str) -> int:
    structure = _structure(cfg)
    try:
        with open(scenario_path, "r", encoding="utf-8") as fh:
            scenario = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ControlFormatError(f"cannot read scenario: {exc}") from exc
    bph = circle_scenario(
        structure,
        center=scenario.get("center", (structure.domain[0] + structure.domain[1]) / 2),
        radius=float(scenario.get("radius", 0.01)),
        plane=tuple(scenario.get("plane", (1, 2))),
        zeta_count=int(scenario.get("zetas", 8)),
        motion=float(scenario.get("motion", 1.0)),
    )
    s_steps = int(scenario.get("s_steps", 16))
    closure_tol = float(scenario.get("closure_tol", 1e-5))
    s_grid = np.linspace(0.0, 1.0, s_steps)
    traj_dir = cfg.out / "trajectories"
    traj_dir.mkdir(exist_ok=True)
    try:
        result = lift_homotopy(structure, bph, s_grid=s_grid, tol=cfg.tol,
                               closure_tol=closure_tol)
    except LiftFailure as exc:
        _write_json(cfg.out / "homotopy.json",
                    {"model": structure.name, "passed": False, "error": str(exc)})
        print(f"lift failure: {exc}", file=sys.stderr)
        return EXIT_TOLERANCE
    lp_rows = []
    s_seq = [2.0 ** -k for k in range(1, 9)]
    for p in sorted({1.0, float(cfg.p)}):
        lp_rows += lp_continuity_probe(structure, bph, bph.zetas[0], p, s_seq,
                                       tol=cfg.tol)
    for (zi, si), ctrl in result.controls.items():
        x_s = bph.point(bph.zetas[zi], float(s_grid[si]))
        traj = solve(structure, x_s, ctrl, steps_per_piece=48)
        trajectory_to_csv(traj, traj_dir / f"node_z{zi}_s{si}.csv")
    _write_json(cfg.out / "homotopy.json", {
        "model": structure.name,
        "passed": True,
        "max_closure": result.max_closure,
        "closure_tol": closure_tol,
        "grid": result.rows,
        "lp_table": lp_rows,
    })
    if cfg.plots:
        from .plots import plot_homotopy_grid, plot_lp_table
        plot_homotopy_grid(result.rows, cfg.out / "homotopy_grid.png")
        plot_lp_table(lp_rows, cfg.out / "homotopy_lp.png")
    print(f"nodes={len(result.rows)} max closure={result.max_closure:.3e}")
    final = [r["residual"] for r in lp_rows if r["s"] == s_seq[-1]]
    ok = result.max_closure <= closure_tol and all(v <= 1e-3 for v in final)
    return EXIT_OK if ok else EXIT_TOLERANCE


def cmd_bch_scan(cfg: RunConfig) -> int:
    structure = _structure(cfg)
    x = structure.wrap((structure.domain[0] + structure.domain[1]) / 2.0)
    patch = get_patch(structure, x)
    scales = np.geomspace(1e-3, 1e-1, 9)
    rows = [{"scale": 0.0, "residual": bch_residual(structure, x, 0.0, 0.0, patch)}]
    for s in scales:
        rows.append({"scale": float(s),
                     "residual": bch_residual(structure, x, float(s), float(s), patch)})
    fit_pts = [(math.log(r["scale"]), math.log(r["residual"]))
               for r in rows if r["scale"] > 0 and r["residual"] > 1e-14]
    if len(fit_pts) >= 2:
        slope = float(np.polyfit([a for a, _ in fit_pts],
                                 [b for _, b in fit_pts], 1)[0])
    else:
        slope = float("nan")
    max_residual = max(r["residual"] for r in rows)
    with open(cfg.out / "bch.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scale", "residual"])
        for r in rows:
            writer.writerow([repr(r["scale"]), repr(r["residual"])])
    _write_json(cfg.out / "bch.json", {
        "model": structure.name,
        "slope": slope,
        "max_residual": max_residual,
        "at_noise_floor": bool(max_residual <= 1e-9),
    })
    if cfg.plots:
        from .plots import plot_bch_scan
        plot_bch_scan(rows, slope if math.isfinite(slope) else 0.0,
                      cfg.out / "bch.png")
    print(f"slope={slope:.3f} max residual={max_residual:.3e}")
    ok = (math.isfinite(slope) and slope >= 2.5) or max_residual <= 1e-9
    return EXIT_OK if ok else EXIT_TOLERANCE


# -- entry point ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="contactsteer",
        description="Synthesize and verify inclusion-compatible controls on "
                    "corank-one step-two structures.",
    )
    parser.add_argument("--model", "-m", help="built-in model name or config JSON")
    parser.add_argument("--config", help="run configuration JSON")
    parser.add_argument("--tol", type=float, help="solver tolerance")
    parser.add_argument("--steps", type=int, help="integrator substeps per piece")
    parser.add_argument("--p", type=float, help="metric exponent")
    parser.add_argument("--seed", type=int, help="random seed")
    parser.add_argument("--grid", type=int, help="sampling grid resolution")
    parser.add_argument("--out", help="output directory (CONTACTSTEER_OUT overrides default)")
    parser.add_argument("--no-plots", action="store_true", help="skip figure rendering")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("constants", help="certify structure and report scale constants")
    p = sub.add_parser("plan", help="steer between two chart points")
    p.add_argument("--from", dest="source", required=True, help="start point a,b,c")
    p.add_argument("--to", dest="target", required=True, help="target point a,b,c")
    p = sub.add_parser("simulate", help="solve a control file and verify the inclusion")
    p.add_argument("--control", required=True)
    p.add_argument("--start", required=True)
    p = sub.add_parser("lift-loop", help="lift a sampled chart loop")
    p.add_argument("--loop", required=True)
    p = sub.add_parser("homotopy", help="run a grid lifting scenario")
    p.add_argument("--scenario", required=True)
    sub.add_parser("bch-scan", help="scan the commutator word residual")
    return parser


def main(argv: Optional[list] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load_config(args)
        if args.command == "constants":
            return cmd_constants(cfg)
        if args.command == "plan":
            return cmd_plan(cfg, args.source, args.target)
        if args.command == "simulate":
            return cmd_simulate(cfg, args.control, args.start)
        if args.command == "lift-loop":
            return cmd_lift_loop(cfg, args.loop)
        if args.command == "homotopy":
            return cmd_homotopy(cfg, args.scenario)
        if args.command == "bch-scan":
            return cmd_bch_scan(cfg)
        raise ControlFormatError(f"unknown command {args.command}")
    except (ControlFormatError, Step2Violation) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (BudgetExceeded, ContactSteerError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TOLERANCE


if __name__ == "__main__":
    sys.exit(main())
