"""Trajectories of admissible controls: fixed-step solver, endpoint map,
inclusion verification, and minimal-control recovery."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .controls import AdmissibleControl, _GAUSS_NODES, _GAUSS_WEIGHTS
from .errors import AccuracyLoss, BlowUp, NotHorizontal
from .geometry import SubRiemannianStructure, drift_field, minimal_coefficients

DEFAULT_STEPS_PER_PIECE = 200


@dataclass
class Trajectory:
    """Sampled state/control path. States are kept on the universal cover of
    periodic coordinates; wrap only for endpoint comparison."""

    structure: SubRiemannianStructure
    times: np.ndarray
    states: np.ndarray          # (N, m), unwrapped
    control_samples: np.ndarray  # (N, d+1), rate-dilated values driving the flow
    omega_pairings: np.ndarray   # (N,), omega(gamma_dot) per sample
    error_estimate: Optional[float] = None
    piece_spans: Optional[list] = None  # (start, end) sample index per piece

    @property
    def start(self) -> np.ndarray:
        return self.states[0]

    @property
    def endpoint(self) -> np.ndarray:
        return self.states[-1]

    @property
    def endpoint_wrapped(self) -> np.ndarray:
        return self.structure.wrap(self.states[-1])

    def displacement(self) -> np.ndarray:
        """Unwrapped total displacement (winding diagnostic on periodic models)."""
        return self.states[-1] - self.states[0]

    def resampled_states(self, times: np.ndarray) -> np.ndarray:
        out = np.empty((times.size, self.states.shape[1]))
        for j in range(self.states.shape[1]):
            out[:, j] = np.interp(times, self.times, self.states[:, j])
        return out


def _piece_field(structure, piece):
    """Rate-dilated right-hand side for one control piece (hot path)."""
    u0 = piece.rate * piece.xi * piece.xi
    xi_rate = piece.rate * piece.xi
    drift_at = structure.drift_at
    frame = structure._frame
    alpha_at = piece.alpha_at

    def fld(t, y):
        v = u0 * drift_at(y)
        if xi_rate != 0.0:
            v = v + frame(y) @ (xi_rate * alpha_at(t))
        return v

    return fld


def solve(
    structure: SubRiemannianStructure,
    x,
    u: AdmissibleControl,
    steps_per_piece: int = DEFAULT_STEPS_PER_PIECE,
    error_estimate: bool = False,
    state_bound: float = 1e6,
    accuracy_tol: Optional[float] = None,
) -> Trajectory:
    """Integrate the control system from x with classical fixed-step RK4.

    Substeps never cross piece boundaries.  With ``error_estimate`` each piece
    is re-integrated at half the step and the Richardson difference published;
    AccuracyLoss fires when the estimate exceeds ``accuracy_tol``.
    """
    x = structure.wrap(x)
    times: List[float] = [0.0]
    states: List[np.ndarray] = [x.copy()]
    samples: List[np.ndarray] = []
    pairings: List[float] = []
    est_total = 0.0

    def integrate_piece(y0, piece, fld, steps):
        h = piece.duration / steps
        y = y0.copy()
        nodes = []
        for k in range(steps):
            t = piece.t0 + k * h
            k1 = fld(t, y)
            k2 = fld(t + h / 2, y + (h / 2) * k1)
            k3 = fld(t + h / 2, y + (h / 2) * k2)
            k4 = fld(t + h, y + h * k3)
            y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if not np.all(np.isfinite(y)) or np.linalg.norm(y) > state_bound:
                raise BlowUp(f"state norm exceeded {state_bound:g} at t={t + h:.6f}")
            nodes.append((t + h, y.copy()))
        return nodes

    spans = []
    for piece in u.pieces:
        y0 = states[-1]
        spans.append(len(times) - 1)
        fld = _piece_field(structure, piece)
        if piece.xi == 0.0:
            # Zero piece: the flow pauses; record constant samples.
            n = max(2, steps_per_piece // 8)
            ts = np.linspace(piece.t0, piece.t1, n + 1)[1:]
            nodes = [(t, y0.copy()) for t in ts]
        else:
            nodes = integrate_piece(y0, piece, fld, steps_per_piece)
            if error_estimate:
                fine = integrate_piece(y0, piece, fld, 2 * steps_per_piece)
                est_total += float(np.linalg.norm(fine[-1][1] - nodes[-1][1])) / 15.0
        # Boundary nodes carry the control of the piece on their right
        # (pieces are left-closed), matching the evaluation convention.
        samples.append(piece.rate * piece.value_at(piece.t0))
        pairings.append(float(structure.omega_at(y0) @ fld(piece.t0, y0)))
        for t, y in nodes[:-1]:
            times.append(t)
            states.append(y)
            samples.append(piece.rate * piece.value_at(t))
            pairings.append(float(structure.omega_at(y) @ fld(t, y)))
        times.append(nodes[-1][0])
        states.append(nodes[-1][1])
    # Final node belongs to the last piece (closed on the right).
    last = u.pieces[-1]
    fld = _piece_field(structure, last)
    samples.append(last.rate * last.value_at(1.0))
    pairings.append(float(structure.omega_at(states[-1]) @ fld(1.0, states[-1])))

    if accuracy_tol is not None and error_estimate and est_total > accuracy_tol:
        raise AccuracyLoss(
            f"step-halving estimate {est_total:.3e} exceeds {accuracy_tol:.1e}"
        )
    span_pairs = [
        (start, spans[k + 1] if k + 1 < len(spans) else len(times) - 1)
        for k, start in enumerate(spans)
    ]
    return Trajectory(
        structure=structure,
        times=np.array(times),
        states=np.stack(states, axis=0),
        control_samples=np.stack(samples, axis=0),
        omega_pairings=np.array(pairings),
        error_estimate=est_total if error_estimate else None,
        piece_spans=span_pairs,
    )


def endpoint(structure: SubRiemannianStructure, x, u: AdmissibleControl,
             **kwargs) -> tuple:
    """(start, terminal point) of the solved trajectory."""
    traj = solve(structure, x, u, **kwargs)
    return (structure.wrap(x), traj.endpoint_wrapped)


@dataclass
class InclusionReport:
    passed: bool
    max_pairing: float
    max_relative_deviation: float
    worst: list

    def as_dict(self) -> dict:
        return {
            "passed": bool(self.passed),
            "max_omega_pairing": self.max_pairing,
            "max_relative_deviation": self.max_relative_deviation,
            "worst": self.worst,
        }


def _state_derivatives(traj: Trajectory) -> np.ndarray:
    """Central differences of the states, one-sided at boundaries.

    Differencing restarts at every piece boundary when spans are known, so
    control jumps between pieces do not smear into neighbouring samples.
    """
    if not traj.piece_spans:
        return np.gradient(traj.states, traj.times, axis=0, edge_order=2)
    out = np.empty_like(traj.states)
    for start, end in traj.piece_spans:
        if end - start < 2:
            seg = (traj.states[end] - traj.states[start]) / max(
                traj.times[end] - traj.times[start], 1e-300
            )
            out[start:end + 1] = seg
            continue
        out[start:end + 1] = np.gradient(
            traj.states[start:end + 1], traj.times[start:end + 1],
            axis=0, edge_order=2,
        )
    return out


def verify_inclusion(
    structure: SubRiemannianStructure,
    traj: Trajectory,
    pairing_tol: float = 1e-8,
    relative_tol: float = 1e-6,
    from_states: bool = False,
) -> InclusionReport:
    """Check omega(gamma_dot) = -u0 |omega| <= 0 at every sample.

    The velocity comes from the recorded control samples unless
    ``from_states`` forces finite differences of the states (the only option
    for hand-built curves without consistent control data).
    """
    n = traj.times.size
    use_controls = traj.control_samples is not None and not from_states
    if use_controls:
        pairings = traj.omega_pairings
        u0s = traj.control_samples[:, 0]
    else:
        vel = _state_derivatives(traj)
        pairings = np.array(
            [float(structure.omega_at(traj.states[k]) @ vel[k]) for k in range(n)]
        )
        u0s = np.array(
            [
                structure.inner(
                    traj.states[k], vel[k], drift_field(structure, traj.states[k])
                )
                for k in range(n)
            ]
        )
    worst = []
    max_pairing = float(np.max(pairings))
    max_rel = 0.0
    for k in range(n):
        nrm = structure.omega_norm(traj.states[k])
        expected = -u0s[k] * nrm
        scale = max(abs(expected), 1e-12)
        rel = abs(pairings[k] - expected) / scale
        max_rel = max(max_rel, rel)
        ok = pairings[k] <= pairing_tol and rel <= relative_tol
        if not ok:
            worst.append(
                {
                    "t": float(traj.times[k]),
                    "omega_pairing": float(pairings[k]),
                    "expected": float(expected),
                }
            )
    worst.sort(key=lambda r: -abs(r["omega_pairing"] - r["expected"]))
    return InclusionReport(
        passed=not worst,
        max_pairing=max_pairing,
        max_relative_deviation=float(max_rel),
        worst=worst[:10],
    )


def recover_control(
    structure: SubRiemannianStructure,
    traj: Trajectory,
    tol: float = 1e-4,
) -> np.ndarray:
    """Minimal control samples from finite-differenced states.

    Per sample: drift channel u0 = g0(gamma_dot, X0), frame channels the
    least-norm coefficients of the tangential remainder.  NotHorizontal when
    the remainder leaves the drift+frame span or u0 dips negative.
    """
    vel = _state_derivatives(traj)
    n = traj.times.size
    out = np.empty((n, traj.structure.d + 1))
    for k in range(n):
        x = traj.states[k]
        v = vel[k]
        x0 = drift_field(structure, x)
        u0 = structure.inner(x, v, x0)
        speed = math.sqrt(max(structure.inner(x, v, v), 0.0))
        if u0 < -tol * max(1.0, speed):
            raise NotHorizontal(
                f"sample {k}: drift channel {u0:.3e} negative beyond tolerance"
            )
        rem = v - u0 * x0
        try:
            coeff = minimal_coefficients(structure, x, rem, tol=max(tol, 1e-6))
        except NotHorizontal as exc:
            raise NotHorizontal(f"sample {k}: {exc}") from exc
        recon = u0 * x0 + structure.frame_at(x) @ coeff
        if np.linalg.norm(recon - v) > tol * max(1.0, speed):
            raise NotHorizontal(
                f"sample {k}: projection residual exceeds {tol:.1e}"
            )
        out[k, 0] = u0
        out[k, 1:] = coeff
    return out


# -- distances ---------------------------------------------------------------


def _union_times(t1: Trajectory, t2: Trajectory) -> np.ndarray:
    return np.unique(np.concatenate([t1.times, t2.times]))


def uniform_distance(t1: Trajectory, t2: Trajectory) -> float:
    """Sup norm of the state difference on the union grid."""
    times = _union_times(t1, t2)
    a = t1.resampled_states(times)
    b = t2.resampled_states(times)
    return float(np.max(np.linalg.norm(a - b, axis=1)))


def w1p_distance(t1: Trajectory, t2: Trajectory, p: float) -> float:
    """(|gamma1-gamma2|_p^p + |d gamma1 - d gamma2|_p^p)^(1/p) by quadrature."""
    if p < 1.0:
        raise ValueError("exponent must be >= 1")
    times = _union_times(t1, t2)
    a = t1.resampled_states(times)
    b = t2.resampled_states(times)
    diff = a - b
    total = 0.0
    for k in range(times.size - 1):
        dt = times[k + 1] - times[k]
        if dt <= 0:
            continue
        # States are affine per cell: Gauss nodes on the difference.
        for node, weight in zip(_GAUSS_NODES, _GAUSS_WEIGHTS):
            w = 0.5 * (node + 1.0)
            val = (1.0 - w) * diff[k] + w * diff[k + 1]
            total += weight * 0.5 * dt * float(np.linalg.norm(val)) ** p
        dvel = (diff[k + 1] - diff[k]) / dt
        total += dt * float(np.linalg.norm(dvel)) ** p
    return total ** (1.0 / p)


# -- export -------------------------------------------------------------------


def trajectory_to_csv(traj: Trajectory, path, metadata: Optional[dict] = None) -> None:
    """CSV columns t, x_1..x_m, u_0..u_d, omega_dot, plus a JSON sidecar."""
    m = traj.states.shape[1]
    d = traj.control_samples.shape[1] - 1
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["t"]
            + [f"x{i + 1}" for i in range(m)]
            + [f"u{i}" for i in range(d + 1)]
            + ["omega_dot"]
        )
        for k in range(traj.times.size):
            writer.writerow(
                [repr(float(traj.times[k]))]
                + [repr(float(v)) for v in traj.states[k]]
                + [repr(float(v)) for v in traj.control_samples[k]]
                + [repr(float(traj.omega_pairings[k]))]
            )
    if metadata is not None:
        meta_path = str(path) + ".meta.json"
        payload = {"schema": "contactsteer-trajectory/1",
                   "model": traj.structure.name, **metadata}
        with open(meta_path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
