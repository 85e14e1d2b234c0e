"""Explicit homotopy constructions: loop completions, reparametrization
lifts, grid lifting checks, and loop lifting by section chaining."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .controls import (
    AdmissibleControl,
    PiecewiseAffineMap,
    concatenate,
    lp_distance,
    reparametrize,
    star_chain,
)
from .dynamics import solve
from .errors import LiftFailure, OutsideLocality
from .geometry import SubRiemannianStructure, as_point, get_patch
from .planner import locality_radius, section

MAX_LOOP_SAMPLES = 1024


@dataclass
class BasePointHomotopy:
    """Finite family of base-point paths inside one patch with initial lifts.

    ``path(zeta, s)`` gives the moving point; ``initial_lift(zeta)`` the
    control lifting the s = 0 slice.  For loop scenarios the lift is a loop
    control at path(zeta, 0); for based scenarios ``base_point`` is set and
    the lift steers base_point -> path(zeta, 0).
    """

    structure: SubRiemannianStructure
    zetas: Sequence
    path: Callable
    initial_lift: Callable
    base_point: Optional[np.ndarray] = None

    def point(self, zeta, s: float) -> np.ndarray:
        return as_point(self.path(zeta, s), self.structure.m)


def circle_scenario(
    structure: SubRiemannianStructure,
    center,
    radius: float,
    plane: tuple = (1, 2),
    zeta_count: int = 8,
    motion: float = 1.0,
) -> BasePointHomotopy:
    """Base points on a chart circle; each strand slides along the circle by
    ``motion`` slots as s runs over [0, 1].  Initial lifts are zero controls
    (constant loops)."""
    center = as_point(center, structure.m)
    K = structure.ensure_constants().K
    i, j = plane

    def path(zeta, s):
        angle = 2.0 * math.pi * (zeta + motion * s) / zeta_count
        p = center.copy()
        p[i] += radius * math.cos(angle)
        p[j] += radius * math.sin(angle)
        return p

    def initial_lift(zeta):
        return AdmissibleControl.zero(structure.d, K)

    return BasePointHomotopy(
        structure=structure,
        zetas=list(range(zeta_count)),
        path=path,
        initial_lift=initial_lift,
    )


def loop_control(
    structure: SubRiemannianStructure,
    bph: BasePointHomotopy,
    zeta,
    s: float,
    tol: float = 1e-8,
) -> AdmissibleControl:
    """Loop at path(zeta, s): outbound section to the anchor, the initial
    loop lift, then the section back."""
    x_s = bph.point(zeta, s)
    x_0 = bph.point(zeta, 0.0)
    out = section(structure, x_s, x_0, tol=tol)
    back = section(structure, x_0, x_s, tol=tol)
    return concatenate(concatenate(out, bph.initial_lift(zeta)), back)


def outbound_time_change(s: float) -> PiecewiseAffineMap:
    """Three-branch time change collapsing the flanking quarters as s -> 0."""
    if s <= 0.0:
        return PiecewiseAffineMap.affine(0.25, 0.5)
    if s >= 1.0:
        return PiecewiseAffineMap((0.0, 0.25, 0.5, 1.0), (0.0, 0.25, 0.5, 1.0))
    return PiecewiseAffineMap(
        (0.0, s / 4.0, 1.0 - s / 2.0, 1.0),
        (0.0, 0.25, 0.5, 1.0),
    )


def based_time_change(s: float) -> PiecewiseAffineMap:
    """Two-branch time change collapsing the closing half as s -> 0."""
    if s <= 0.0:
        return PiecewiseAffineMap.affine(0.0, 0.5)
    if s >= 1.0:
        return PiecewiseAffineMap((0.0, 0.5, 1.0), (0.0, 0.5, 1.0))
    return PiecewiseAffineMap((0.0, 1.0 - s / 2.0, 1.0), (0.0, 0.5, 1.0))


def reparam_lift(
    structure: SubRiemannianStructure,
    bph: BasePointHomotopy,
    zeta,
    s: float,
    tol: float = 1e-8,
    control: Optional[AdmissibleControl] = None,
) -> AdmissibleControl:
    """Time-changed loop control; at s = 0 this is the initial lift itself
    (middle-quarter extraction), at s = 1 the loop control unchanged."""
    c = control if control is not None else loop_control(structure, bph, zeta, s, tol=tol)
    return reparametrize(c, outbound_time_change(s))


def based_lift(
    structure: SubRiemannianStructure,
    bph: BasePointHomotopy,
    zeta,
    s: float,
    tol: float = 1e-8,
) -> AdmissibleControl:
    """Initial lift extended by the section tracking the moving target, under
    the two-branch time change; s = 0 reduces to the initial lift."""
    if bph.base_point is None:
        raise ValueError("based lift needs a scenario with a base point")
    x_0 = bph.point(zeta, 0.0)
    x_s = bph.point(zeta, s)
    tail = section(structure, x_0, x_s, tol=tol)
    c = concatenate(bph.initial_lift(zeta), tail)
    return reparametrize(c, based_time_change(s))


@dataclass
class LiftResult:
    rows: list          # dicts: zeta, s, closure, lp residuals
    controls: dict      # (zeta index, s index) -> control
    max_closure: float
    passed: bool

    def as_rows(self):
        return self.rows


def lift_homotopy(
    structure: SubRiemannianStructure,
    bph: BasePointHomotopy,
    s_grid: Optional[Sequence[float]] = None,
    tol: float = 1e-8,
    closure_tol: float = 1e-5,
    steps_per_piece: int = 96,
) -> LiftResult:
    """Lift the whole grid and verify the endpoint identity node by node.

    Each node stores the lifted control; closure is the wrapped distance from
    the trajectory endpoint back to the moving base point.  Raises
    LiftFailure listing offending nodes when any closure exceeds tolerance;
    the s = 0 column must reproduce the initial lifts at the data level.
    """
    from .controls import controls_equal

    if s_grid is None:
        s_grid = np.linspace(0.0, 1.0, 16)
    from .errors import NoConvergence, PatchEscape
    rows = []
    controls = {}
    offenders = []
    max_closure = 0.0
    for zi, zeta in enumerate(bph.zetas):
        anchor_controls = {}
        for si, s in enumerate(s_grid):
            try:
                ctrl = reparam_lift(structure, bph, zeta, float(s), tol=tol)
            except (PatchEscape, OutsideLocality, NoConvergence) as exc:
                offenders.append((zi, float(s), math.inf))
                rows.append({"zeta": zi, "s": float(s), "closure": math.inf,
                             "error": str(exc)})
                continue
            controls[(zi, si)] = ctrl
            x_s = bph.point(zeta, float(s))
            traj = solve(structure, x_s, ctrl, steps_per_piece=steps_per_piece)
            closure = structure.distance(traj.endpoint_wrapped, x_s)
            max_closure = max(max_closure, closure)
            rows.append({"zeta": zi, "s": float(s), "closure": closure})
            if closure > closure_tol:
                offenders.append((zi, float(s), closure))
            anchor_controls[si] = ctrl
        if 0.0 in np.asarray(s_grid):
            si0 = int(np.argmin(np.abs(np.asarray(s_grid))))
            if si0 in anchor_controls and not controls_equal(
                anchor_controls[si0], bph.initial_lift(zeta), atol=1e-12
            ):
                offenders.append((zi, float(s_grid[si0]), math.inf))
    if offenders:
        raise LiftFailure(
            f"{len(offenders)} grid nodes failed: " +
            ", ".join(f"(zeta={z}, s={s:.4g}, closure={c:.3e})"
                      for z, s, c in offenders[:8])
        )
    return LiftResult(rows=rows, controls=controls, max_closure=max_closure,
                      passed=True)


def lp_continuity_probe(
    structure: SubRiemannianStructure,
    bph: BasePointHomotopy,
    zeta,
    p: float,
    s_sequence: Sequence[float],
    tol: float = 1e-8,
) -> list:
    """Residual table of lp distances between the lift at s and at 0."""
    ref = reparam_lift(structure, bph, zeta, 0.0, tol=tol)
    rows = []
    for s in s_sequence:
        cand = reparam_lift(structure, bph, zeta, float(s), tol=tol)
        rows.append({"s": float(s), "p": p,
                     "residual": lp_distance(cand, ref, p)})
    return rows


def lift_loop(
    structure: SubRiemannianStructure,
    basepoint,
    loop_samples,
    tol: float = 1e-8,
    seed: int = 0,
    auto_refine: bool = True,
):
    """Chain sections along a closed sample loop into one admissible control.

    Legs longer than the calibrated radius trigger dyadic refinement of the
    sample set (chart midpoints), capped at MAX_LOOP_SAMPLES; with
    ``auto_refine`` off such legs raise OutsideLocality instead.  Returns
    (control, report) with winding and closure diagnostics left to the caller
    via the solved trajectory.
    """
    base = structure.wrap(basepoint)
    pts = [structure.wrap(p) for p in np.atleast_2d(np.asarray(loop_samples, dtype=float))]
    if structure.distance(pts[0], base) > 1e-9:
        pts = [base] + pts
    if structure.distance(pts[-1], base) > 1e-9:
        pts = pts + [base]

    # One calibration at the basepoint sizes every leg; individual solves
    # still guard against local failures.
    radius = locality_radius(structure, get_patch(structure, base), seed=seed,
                             tol=tol)
    refinements = 0
    while True:
        too_long = any(
            structure.distance(a, b) > radius
            for a, b in zip(pts[:-1], pts[1:])
        )
        if not too_long:
            break
        if not auto_refine or 2 * (len(pts) - 1) + 1 > MAX_LOOP_SAMPLES:
            raise OutsideLocality(
                f"loop legs exceed the locality radius {radius:.3g} at "
                f"{len(pts) - 1} samples; resample finer"
            )
        refined = []
        for a, b in zip(pts[:-1], pts[1:]):
            refined.append(a)
            refined.append(structure.wrap(a + 0.5 * structure.delta(a, b)))
        refined.append(pts[-1])
        pts = refined
        refinements += 1

    legs = [
        section(structure, a, b, tol=tol) for a, b in zip(pts[:-1], pts[1:])
    ]
    nonzero = [leg for leg in legs if not leg.is_zero()]
    if not nonzero:
        control = AdmissibleControl.zero(structure.d, structure.ensure_constants().K)
    else:
        control = star_chain(legs)
    control.meta = {
        "kind": "loop-lift",
        "basepoint": base.tolist(),
        "samples": len(pts) - 1,
        "refinements": refinements,
    }
    report = {
        "samples": len(pts) - 1,
        "refinements": refinements,
        "legs": len(legs),
    }
    return control, report
