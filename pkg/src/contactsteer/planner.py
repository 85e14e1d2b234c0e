"""Flow-word steering: the composite-flow map, its quasi-Newton inversion,
the induced cross-section of the endpoint map, and local motion planning."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, List, Optional

import numpy as np

from .controls import AdmissibleControl, ControlPiece, star_chain, validate
from .errors import (
    BlowUp,
    BudgetExceeded,
    NoConvergence,
    OutsideLocality,
    PatchEscape,
)
from .geometry import (
    FramePatch,
    SubRiemannianStructure,
    as_point,
    drift_field,
    get_patch,
)

WORD_STEPS = 32
SECTION_SAMPLES = 64
LOCALITY_PROBES = 20


@dataclass(frozen=True)
class WordSegment:
    """One unit-time leg: flow of (xi^2 X0 + sign * xi * Y_slot) / (m+3)."""

    xi: float
    slot: int
    sign: float


@dataclass(frozen=True)
class FlowWord:
    """The ordered m+3 segments realizing a parameter vector.

    The first m-1 segments carry the straight frame directions; the last four
    realize the commutator direction with signs (-Y1, -Y2, +Y1, +Y2) and
    parameters (e*sqrt|psi_m|, sqrt|psi_m|, e*sqrt|psi_m|, sqrt|psi_m|) where
    e is the sign of psi_m.
    """

    segments: tuple
    m: int

    @classmethod
    def from_psi(cls, psi, m: int) -> "FlowWord":
        psi = as_point(psi, m)
        segs = [WordSegment(float(psi[j]), j, 1.0) for j in range(m - 1)]
        eps = math.copysign(1.0, psi[m - 1]) if psi[m - 1] != 0.0 else 0.0
        root = math.sqrt(abs(psi[m - 1]))
        segs += [
            WordSegment(eps * root, 0, -1.0),
            WordSegment(root, 1, -1.0),
            WordSegment(eps * root, 0, 1.0),
            WordSegment(root, 1, 1.0),
        ]
        return cls(tuple(segs), m)

    def __len__(self):
        return len(self.segments)


def _segment_field(structure, patch, seg: WordSegment) -> Callable:
    scale = 1.0 / (structure.m + 3)
    u0 = scale * seg.xi * seg.xi
    coeff = scale * seg.sign * seg.xi
    drift_at = structure.drift_at
    if patch.mode == "frame":
        col = patch.perm[seg.slot]
        weight = coeff * patch.scale * patch.signs[seg.slot]
        frame = structure._frame

        def fld(y):
            v = u0 * drift_at(y)
            if weight != 0.0:
                v = v + weight * frame(y)[:, col]
            return v

        return fld

    def fld(y):
        v = u0 * drift_at(y)
        if coeff != 0.0:
            v = v + coeff * patch.section_at(y, seg.slot)
        return v

    return fld


def _rk4_unit_flow(fld, y0, steps, on_node=None, state_bound=1e9):
    h = 1.0 / steps
    y = y0
    for k in range(steps):
        k1 = fld(y)
        k2 = fld(y + (h / 2) * k1)
        k3 = fld(y + (h / 2) * k2)
        k4 = fld(y + h * k3)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(y)) or np.max(np.abs(y)) > state_bound:
            raise BlowUp(f"flow state diverged at local time {(k + 1) * h:.4f}")
        if on_node is not None:
            on_node((k + 1) * h, y)
    return y


def flow_word_endpoint(
    structure: SubRiemannianStructure,
    x,
    psi,
    patch: Optional[FramePatch] = None,
    steps: int = WORD_STEPS,
    record: bool = False,
    check_patch: bool = True,
):
    """Compose the m+3 unit-time flows from x.

    With ``record`` returns (endpoint, per-segment list of (local time, state)
    node pairs); intermediate nodes leaving the patch raise PatchEscape.
    """
    x = as_point(x, structure.m)
    patch = patch or get_patch(structure, x)
    word = FlowWord.from_psi(psi, structure.m)
    if all(s.xi == 0.0 for s in word.segments):
        return (x.copy(), [[] for _ in word.segments]) if record else x.copy()
    path: List[list] = []
    y = x.copy()
    for seg in word.segments:
        nodes = [(0.0, y.copy())]

        def on_node(t, state, nodes=nodes):
            if check_patch and not patch.contains(state):
                raise PatchEscape(
                    f"state {structure.wrap(state)} left patch at {patch.center}"
                )
            nodes.append((t, state.copy()))

        if seg.xi == 0.0:
            nodes.append((1.0, y.copy()))
        else:
            y = _rk4_unit_flow(_segment_field(structure, patch, seg), y, steps,
                               on_node=on_node)
        path.append(nodes)
    return (y, path) if record else y


@dataclass
class SectionParams:
    """Solved parameters for steering base -> target inside one patch."""

    psi: np.ndarray
    base: np.ndarray
    target: np.ndarray
    eps_m: float
    residual: float
    iterations: int
    patch: FramePatch

    def as_dict(self) -> dict:
        return {
            "psi": [float(v) for v in self.psi],
            "base": [float(v) for v in self.base],
            "target": [float(v) for v in self.target],
            "eps_m": self.eps_m,
            "residual": self.residual,
            "iterations": self.iterations,
        }


def _initial_jacobian(structure, patch, x, branch: float) -> np.ndarray:
    """One-sided derivative of the word map at psi = 0.

    Straight columns are the scaled patch sections; the last column is the
    branch-dependent pencil element 4 X0/(m+3) +/- bracket/(m+3)^2.
    """
    m = structure.m
    S = patch.sections_at(x)
    J = np.empty((m, m))
    J[:, : m - 1] = S / (m + 3)
    drift_col = 4.0 * drift_field(structure, x) / (m + 3)
    brk = patch.pair_bracket(x) / (m + 3) ** 2
    if branch >= 0.0:
        J[:, m - 1] = drift_col + brk
    else:
        J[:, m - 1] = -drift_col + brk
    return J


def _fd_jacobian(structure, patch, x, psi, target, steps, h=1e-6):
    """Forward-difference Jacobian, one-sided across the nonsmooth last axis."""
    m = structure.m
    base = structure.delta(target, flow_word_endpoint(structure, x, psi, patch,
                                                      steps=steps,
                                                      check_patch=False))
    J = np.empty((m, m))
    for j in range(m):
        step = h
        if j == m - 1 and psi[j] < 0.0:
            step = -h
        probe = psi.copy()
        probe[j] += step
        val = structure.delta(
            target,
            flow_word_endpoint(structure, x, probe, patch, steps=steps,
                               check_patch=False),
        )
        J[:, j] = (val - base) / step
    return J


def solve_psi(
    structure: SubRiemannianStructure,
    x,
    y,
    patch: Optional[FramePatch] = None,
    tol: float = 1e-8,
    max_iter: int = 60,
    steps: int = WORD_STEPS,
) -> SectionParams:
    """Damped quasi-Newton inversion of the word map for psi(x, y).

    Starts at psi = 0 with the analytic one-sided Jacobian; rank-one updates
    with a backtracking line search; on stall the Jacobian is refreshed by
    one-sided forward differences (the last axis is differenced on its own
    sign's branch) and a sign flip of the last coordinate is probed.
    Intermediate iterates run unmonitored; the solved word is certified to
    stay inside the patch before returning.
    """
    x = structure.wrap(x)
    y = structure.wrap(y)
    patch = patch or get_patch(structure, x)
    m = structure.m

    def residual(psi):
        return structure.delta(y, flow_word_endpoint(structure, x, psi, patch,
                                                     steps=steps,
                                                     check_patch=False))

    psi = np.zeros(m)
    r = structure.delta(y, x)
    rn = float(np.linalg.norm(r))
    if rn <= tol:
        return SectionParams(psi, x, y, 0.0, rn, 0, patch)

    J = _initial_jacobian(structure, patch, x, branch=1.0)
    stalls = 0
    for iteration in range(1, max_iter + 1):
        try:
            step = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError:
            J = _fd_jacobian(structure, patch, x, psi, y, steps)
            step = np.linalg.lstsq(J, -r, rcond=None)[0]
        accepted = False
        lam = 1.0
        for _ in range(25):
            cand = psi + lam * step
            r_new = residual(cand)
            rn_new = float(np.linalg.norm(r_new))
            if rn_new < rn * (1.0 - 1e-4 * lam) or rn_new < tol:
                dpsi = cand - psi
                dr = r_new - r
                denom = float(dpsi @ dpsi)
                if denom > 0:
                    J = J + np.outer((dr - J @ dpsi) / denom, dpsi)
                psi, r, rn = cand, r_new, rn_new
                accepted = True
                stalls = 0
                break
            lam *= 0.5
        if rn <= tol:
            try:
                flow_word_endpoint(structure, x, psi, patch, steps=steps)
            except PatchEscape as exc:
                # Solvable, but the realized word leaves the patch: the
                # target sits beyond what this patch certifies.
                raise OutsideLocality(
                    f"word for {x} -> {y} leaves the patch: {exc}"
                ) from exc
            eps_m = math.copysign(1.0, psi[m - 1]) if psi[m - 1] != 0.0 else 0.0
            return SectionParams(psi, x, y, eps_m, rn, iteration, patch)
        if not accepted:
            stalls += 1
            if psi[m - 1] != 0.0:
                flipped = psi.copy()
                flipped[m - 1] = -flipped[m - 1]
                r_flip = residual(flipped)
                if float(np.linalg.norm(r_flip)) < rn:
                    psi, r = flipped, r_flip
                    rn = float(np.linalg.norm(r))
                    J = _fd_jacobian(structure, patch, x, psi, y, steps)
                    continue
            if stalls >= 3:
                raise OutsideLocality(
                    f"line search collapsed {stalls} times steering "
                    f"{x} -> {y} (residual {rn:.3e})"
                )
            J = _fd_jacobian(structure, patch, x, psi, y, steps)
    raise NoConvergence(
        f"no convergence after {max_iter} iterations steering {x} -> {y} "
        f"(residual {rn:.3e})"
    )


def _segment_alpha(structure, patch, seg: WordSegment, nodes, n_samples):
    """Frame coefficients of the signed patch section along a recorded leg."""
    d = structure.d
    if not nodes:
        return np.zeros((max(n_samples, 2), d))
    if patch.mode == "frame":
        # Coefficients are position-independent for orthonormal model frames.
        row = seg.sign * patch.coefficients_at(nodes[0][1], seg.slot)
        return np.tile(row, (n_samples, 1))
    rows = np.empty((n_samples, d))
    ts = np.array([t for t, _ in nodes])
    states = np.stack([s for _, s in nodes])
    for k, t in enumerate(np.linspace(0.0, 1.0, n_samples)):
        state = np.array(
            [np.interp(t, ts, states[:, j]) for j in range(structure.m)]
        )
        rows[k] = seg.sign * patch.coefficients_at(state, seg.slot)
    return rows


def section(
    structure: SubRiemannianStructure,
    x,
    y,
    patch: Optional[FramePatch] = None,
    tol: float = 1e-8,
    steps: int = WORD_STEPS,
    samples_per_piece: int = SECTION_SAMPLES,
    params: Optional[SectionParams] = None,
) -> AdmissibleControl:
    """Admissible control realizing the solved word on m+3 equal pieces.

    Straight pieces carry xi = |psi_j| with alpha the signed frame
    coefficients of the leading patch sections along the realized curve; the
    last four pieces carry xi = sqrt|psi_m| with the alternating sign
    pattern.  The zero solve returns the zero control exactly.
    """
    if params is None:
        params = solve_psi(structure, x, y, patch=patch, tol=tol, steps=steps)
    patch = params.patch
    m = structure.m
    K = structure.ensure_constants().K
    meta = {"kind": "section", **params.as_dict()}
    if not np.any(params.psi):
        ctrl = AdmissibleControl.zero(structure.d, K)
        ctrl.meta = meta
        return ctrl
    _, path = flow_word_endpoint(
        structure, params.base, params.psi, patch, steps=steps, record=True
    )
    word = FlowWord.from_psi(params.psi, m)
    n_pieces = m + 3
    pieces = []
    for i, seg in enumerate(word.segments):
        t0, t1 = i / n_pieces, (i + 1) / n_pieces
        if seg.xi == 0.0:
            pieces.append(ControlPiece(t0, t1, 0.0,
                                       np.zeros((2, structure.d))))
            continue
        alpha = _segment_alpha(structure, patch, seg, path[i], samples_per_piece)
        pieces.append(ControlPiece(t0, t1, abs(seg.xi),
                                   math.copysign(1.0, seg.xi) * alpha))
    pieces[-1].t1 = 1.0
    ctrl = AdmissibleControl(pieces, K, structure.d, meta=meta)
    validate(ctrl)
    return ctrl


# -- certificates ------------------------------------------------------------


def rank_margin(structure: SubRiemannianStructure, x, rescale: bool = True,
                patch: Optional[FramePatch] = None) -> float:
    """Pairing of the form with 4 X0/(m+3) minus the scaled pair bracket.

    Positive exactly when the one-sided word derivatives stay transversal on
    the whole interpolating pencil; the rescaled frame guarantees the floor
    (lambda - 4 (m+3) Omega) / (m+3)^2.
    """
    x = structure.wrap(x)
    if patch is None:
        patch = get_patch(structure, x, rescale=rescale)
    m = structure.m
    w = structure.omega_at(x)
    vec = 4.0 * drift_field(structure, x) / (m + 3) - patch.pair_bracket(x) / (m + 3) ** 2
    return float(w @ vec)


def rank_margin_floor(structure: SubRiemannianStructure) -> float:
    c = structure.ensure_constants()
    m = structure.m
    return (c.lambda_rescaled - 4.0 * (m + 3) * c.Omega) / (m + 3) ** 2


def bch_residual(
    structure: SubRiemannianStructure,
    x,
    xi1: float,
    xi2: float,
    patch: Optional[FramePatch] = None,
    steps: int = 64,
) -> float:
    """Chart distance between the four-factor commutator word and the single
    flow of 2 (xi1^2 + xi2^2) X0/(m+3) + xi1 xi2 [Y1, Y2]/(m+3)^2."""
    x = structure.wrap(x)
    patch = patch or get_patch(structure, x)
    m = structure.m
    if xi1 == 0.0 and xi2 == 0.0:
        return 0.0
    segs = [
        WordSegment(xi1, 0, -1.0),
        WordSegment(xi2, 1, -1.0),
        WordSegment(xi1, 0, 1.0),
        WordSegment(xi2, 1, 1.0),
    ]
    y = as_point(x, m).copy()
    for seg in segs:
        if seg.xi != 0.0:
            y = _rk4_unit_flow(_segment_field(structure, patch, seg), y, steps)
    drift_coeff = 2.0 * (xi1 * xi1 + xi2 * xi2) / (m + 3)
    brk_coeff = xi1 * xi2 / (m + 3) ** 2

    def fld(z):
        return drift_coeff * drift_field(structure, z) + brk_coeff * patch.pair_bracket(z)

    z = _rk4_unit_flow(fld, as_point(x, m).copy(), steps)
    return float(np.linalg.norm(structure.delta(z, y)))


# -- locality calibration ------------------------------------------------------


def locality_radius(
    structure: SubRiemannianStructure,
    patch: FramePatch,
    seed: int = 0,
    probes: int = LOCALITY_PROBES,
    tol: float = 1e-8,
) -> float:
    """Largest probed radius from which the solver converges for ``probes``
    seeded random targets; cached on the patch (single writer)."""
    if patch.locality is not None:
        return patch.locality
    with structure._patch_lock:
        if patch.locality is not None:
            return patch.locality
        rng = np.random.default_rng(
            seed + int(abs(hash(tuple(np.round(patch.center, 6)))) % 2 ** 16)
        )
        dirs = rng.normal(size=(probes, structure.m))
        dirs /= np.linalg.norm(dirs, axis=1)[:, None]
        r = 0.5 * patch.radius
        floor = 1e-4 * patch.radius
        while r > floor:
            ok = True
            for unit in dirs:
                target = structure.wrap(patch.center + r * unit)
                try:
                    solve_psi(structure, patch.center, target, patch=patch,
                              tol=tol, max_iter=40, steps=24)
                except Exception:
                    ok = False
                    break
            if ok:
                patch.locality = r
                return r
            r *= 0.6
        patch.locality = floor
        return floor


# -- planning -----------------------------------------------------------------


@dataclass
class PlanReport:
    waypoints: list
    leg_details: list  # per leg: psi, residual, iterations, endpoint
    depth: int

    @property
    def legs(self) -> int:
        return len(self.leg_details)

    @property
    def leg_residuals(self) -> list:
        return [d["residual"] for d in self.leg_details]

    def as_dict(self) -> dict:
        return {
            "legs": self.legs,
            "depth": self.depth,
            "waypoints": self.waypoints,
            "leg_details": self.leg_details,
        }


def plan(
    structure: SubRiemannianStructure,
    x,
    y,
    budget: int = 12,
    tol: float = 1e-8,
    seed: int = 0,
):
    """Bisect the connecting chart segment until legs are locally steerable,
    build a section per leg, and splice them.  Returns (control, report).

    Locality is calibrated once at the start point and reused as the leg
    sizing prior; a leg whose solve still fails is bisected further.
    """
    x = structure.wrap(x)
    y = structure.wrap(y)
    radius = locality_radius(structure, get_patch(structure, x), seed=seed, tol=tol)

    legs: List[AdmissibleControl] = []
    waypoints = [x.tolist()]
    details: List[dict] = []
    max_depth = 0

    def recurse(a, b, depth):
        nonlocal max_depth
        max_depth = max(max_depth, depth)
        dist = structure.distance(a, b)
        if dist <= radius:
            try:
                patch = get_patch(structure, a)
                params = solve_psi(structure, a, b, patch=patch, tol=tol)
                legs.append(section(structure, a, b, params=params, tol=tol))
                waypoints.append(structure.wrap(b).tolist())
                details.append(
                    {
                        "psi": [float(v) for v in params.psi],
                        "residual": params.residual,
                        "iterations": params.iterations,
                        "endpoint": structure.wrap(b).tolist(),
                    }
                )
                return
            except (NoConvergence, OutsideLocality, PatchEscape):
                pass
        if depth >= budget:
            raise BudgetExceeded(
                f"bisection depth {depth} reached steering {a} -> {b} "
                f"(distance {dist:.3g}, locality {radius:.3g})"
            )
        mid = structure.wrap(a + 0.5 * structure.delta(a, b))
        recurse(a, mid, depth + 1)
        recurse(mid, b, depth + 1)

    recurse(x, y, 0)
    control = star_chain(legs)
    control.meta = {
        "kind": "plan",
        "base": x.tolist(),
        "target": y.tolist(),
        "legs": len(legs),
    }
    return control, PlanReport(waypoints, details, max_depth)
