"""Admissible piecewise controls: evaluation, splicing, metrics, time changes.

A control on [0, 1] is a partition with one (xi, alpha) pair per piece: the
drift channel is xi^2 (constant per piece) and the frame channels are
xi * alpha(t), with alpha stored as uniform samples under linear
interpolation and sup |alpha|^2 bounded by the owning structure's squared
frame scale.  Pieces also carry a positive ``rate``: a time dilation applied
by the trajectory solver only, so spliced controls trace their legs at
native speed while the stored data keeps satisfying the class bound.
"""

from __future__ import annotations

import bisect
import json
import math
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence

import numpy as np

from .errors import (
    AdmissibilityViolation,
    BoundMismatch,
    ControlFormatError,
    NonMonotone,
    OutOfDomain,
)

DEFAULT_SAMPLES = 64
_GAUSS_NODES, _GAUSS_WEIGHTS = np.polynomial.legendre.leggauss(8)


@dataclass(frozen=True)
class Partition:
    """Strictly increasing breakpoints 0 = t_0 < ... < t_n = 1."""

    breakpoints: tuple

    def __post_init__(self):
        b = self.breakpoints
        if len(b) < 2 or b[0] != 0.0 or b[-1] != 1.0:
            raise AdmissibilityViolation("partition must span [0, 1]")
        if any(b[i + 1] <= b[i] for i in range(len(b) - 1)):
            raise AdmissibilityViolation("partition breakpoints must increase")

    def __len__(self):
        return len(self.breakpoints) - 1


@dataclass
class ControlPiece:
    t0: float
    t1: float
    xi: float
    alpha: np.ndarray  # (n_samples, d)
    rate: float = 1.0

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=float)
        if self.alpha.ndim != 2 or self.alpha.shape[0] < 2:
            raise AdmissibilityViolation("alpha needs at least two sample rows")

    @property
    def duration(self) -> float:
        return self.t1 - self.t0

    def alpha_at(self, t: float) -> np.ndarray:
        """Linear interpolation of the samples at absolute time t."""
        n = self.alpha.shape[0]
        s = (t - self.t0) / self.duration
        s = min(max(s, 0.0), 1.0)
        pos = s * (n - 1)
        k = min(int(pos), n - 2)
        w = pos - k
        return (1.0 - w) * self.alpha[k] + w * self.alpha[k + 1]

    def value_at(self, t: float) -> np.ndarray:
        out = np.empty(self.alpha.shape[1] + 1)
        out[0] = self.xi * self.xi
        out[1:] = self.xi * self.alpha_at(t)
        return out


def _zero_piece(t0: float, t1: float, d: int, rate: float = 1.0) -> ControlPiece:
    return ControlPiece(t0, t1, 0.0, np.zeros((2, d)), rate)


class AdmissibleControl:
    """Piecewise control with a shared frame bound.

    ``meta`` carries optional provenance (base point, target, solver data)
    used by reports and file round-trips; it does not affect evaluation.
    """

    def __init__(self, pieces: Sequence[ControlPiece], K_bound: float, d: int,
                 meta: Optional[dict] = None):
        if not pieces:
            raise AdmissibilityViolation("control needs at least one piece")
        self.pieces: List[ControlPiece] = list(pieces)
        self.K_bound = float(K_bound)
        self.d = int(d)
        self.meta = dict(meta or {})

    # -- construction ------------------------------------------------------

    @classmethod
    def zero(cls, d: int, K_bound: float) -> "AdmissibleControl":
        return cls([_zero_piece(0.0, 1.0, d)], K_bound, d)

    @classmethod
    def constant(cls, xi: float, alpha_vec, K_bound: float,
                 n_samples: int = DEFAULT_SAMPLES) -> "AdmissibleControl":
        alpha_vec = np.asarray(alpha_vec, dtype=float)
        alpha = np.tile(alpha_vec, (max(n_samples, 2), 1))
        return cls([ControlPiece(0.0, 1.0, xi, alpha)], K_bound, alpha_vec.size)

    # -- basic queries -------------------------------------------------------

    @property
    def breakpoints(self) -> np.ndarray:
        return np.array([p.t0 for p in self.pieces] + [self.pieces[-1].t1])

    @property
    def partition(self) -> Partition:
        return Partition(tuple(self.breakpoints))

    def piece_index(self, t: float) -> int:
        """Left-closed/right-open pieces; the last piece is closed at 1."""
        if t < -1e-12 or t > 1.0 + 1e-12:
            raise OutOfDomain(f"time {t} outside [0, 1]")
        t = min(max(t, 0.0), 1.0)
        starts = [p.t0 for p in self.pieces]
        k = bisect.bisect_right(starts, t) - 1
        return min(max(k, 0), len(self.pieces) - 1)

    def is_zero(self) -> bool:
        return all(p.xi == 0.0 for p in self.pieces)

    def copy(self) -> "AdmissibleControl":
        return AdmissibleControl(
            [replace(p, alpha=p.alpha.copy()) for p in self.pieces],
            self.K_bound,
            self.d,
            dict(self.meta),
        )


def evaluate(u: AdmissibleControl, t: float) -> np.ndarray:
    """Stored control value (xi^2, xi * alpha(t)) at time t."""
    return u.pieces[u.piece_index(t)].value_at(t)


def evaluate_effective(u: AdmissibleControl, t: float) -> np.ndarray:
    """Rate-dilated value actually applied by the trajectory solver."""
    p = u.pieces[u.piece_index(t)]
    return p.rate * p.value_at(t)


def validate(u: AdmissibleControl, tol: float = 1e-9) -> None:
    """Raise AdmissibilityViolation unless the class invariants hold."""
    u.partition  # breakpoint checks
    bound = u.K_bound ** 2 * (1.0 + tol)
    for i, p in enumerate(u.pieces):
        if p.xi < 0.0:
            raise AdmissibilityViolation(f"piece {i}: xi = {p.xi} < 0")
        if p.rate <= 0.0:
            raise AdmissibilityViolation(f"piece {i}: rate = {p.rate} <= 0")
        if p.alpha.shape[1] != u.d:
            raise AdmissibilityViolation(f"piece {i}: alpha width != {u.d}")
        if not np.all(np.isfinite(p.alpha)):
            raise AdmissibilityViolation(f"piece {i}: non-finite alpha")
        if p.xi > 0.0:
            worst = float(np.max(np.sum(p.alpha ** 2, axis=1)))
            if worst > bound:
                raise AdmissibilityViolation(
                    f"piece {i}: sup |alpha|^2 = {worst:.12g} exceeds "
                    f"K^2 = {u.K_bound ** 2:.12g}"
                )


def concatenate(u: AdmissibleControl, v: AdmissibleControl) -> AdmissibleControl:
    """Splice two controls into [0, 1]: intervals halve, rates double.

    Stored values are carried over unchanged, so the spliced control still
    satisfies the class bound; the doubled rates make the solver traverse
    each half at its native speed.
    """
    if u.d != v.d:
        raise BoundMismatch("controls have different frame sizes")
    if not math.isclose(u.K_bound, v.K_bound, rel_tol=1e-12, abs_tol=0.0):
        raise BoundMismatch(
            f"frame bounds differ: {u.K_bound!r} vs {v.K_bound!r}"
        )
    pieces = [
        ControlPiece(p.t0 * 0.5, p.t1 * 0.5, p.xi, p.alpha.copy(), p.rate * 2.0)
        for p in u.pieces
    ]
    pieces += [
        ControlPiece(0.5 + p.t0 * 0.5, 0.5 + p.t1 * 0.5, p.xi, p.alpha.copy(),
                     p.rate * 2.0)
        for p in v.pieces
    ]
    pieces[-1].t1 = 1.0
    return AdmissibleControl(pieces, u.K_bound, u.d)


def star_chain(controls: Sequence[AdmissibleControl]) -> AdmissibleControl:
    """Balanced splice of a list of controls."""
    items = list(controls)
    if not items:
        raise ValueError("nothing to splice")
    while len(items) > 1:
        items = [
            concatenate(items[k], items[k + 1]) if k + 1 < len(items) else items[k]
            for k in range(0, len(items), 2)
        ]
    return items[0]


def _vector_norm(delta: np.ndarray, norm: str) -> float:
    if norm == "one":
        return float(np.sum(np.abs(delta)))
    return float(np.linalg.norm(delta))


def _union_grid(u: AdmissibleControl, v: AdmissibleControl) -> np.ndarray:
    nodes = set()
    for ctrl in (u, v):
        for p in ctrl.pieces:
            n = p.alpha.shape[0]
            ts = p.t0 + (p.t1 - p.t0) * np.arange(n) / (n - 1)
            nodes.update(ts.tolist())
    nodes.update([0.0, 1.0])
    return np.array(sorted(nodes))


def lp_distance(u: AdmissibleControl, v: AdmissibleControl, p: float,
                norm: str = "euclidean") -> float:
    """(integral of |u - v|^p)^(1/p) on the union of both sample grids.

    Composite Gauss quadrature per cell; exact for piecewise-constant alpha.
    """
    if p < 1.0:
        raise ValueError("exponent must be >= 1")
    grid = _union_grid(u, v)
    total = 0.0
    for a, b in zip(grid[:-1], grid[1:]):
        if b - a <= 1e-15:
            continue
        mid, half = 0.5 * (a + b), 0.5 * (b - a)
        for node, weight in zip(_GAUSS_NODES, _GAUSS_WEIGHTS):
            t = mid + half * node
            diff = evaluate(u, t) - evaluate(v, t)
            total += weight * half * _vector_norm(diff, norm) ** p
    return total ** (1.0 / p)


def lp_norm(u: AdmissibleControl, p: float, norm: str = "euclidean") -> float:
    return lp_distance(u, AdmissibleControl.zero(u.d, u.K_bound), p, norm)


def truncation_homotopy(u: AdmissibleControl, s: float) -> AdmissibleControl:
    """Keep the control on [0, 1-s] and switch it off afterwards."""
    if s < 0.0 or s > 1.0:
        raise OutOfDomain(f"homotopy parameter {s} outside [0, 1]")
    if s == 0.0:
        return u.copy()
    if s == 1.0:
        return AdmissibleControl.zero(u.d, u.K_bound)
    cut = 1.0 - s
    pieces: List[ControlPiece] = []
    for piece in u.pieces:
        if piece.t1 <= cut:
            pieces.append(replace(piece, alpha=piece.alpha.copy()))
        elif piece.t0 < cut:
            n = piece.alpha.shape[0]
            ts = piece.t0 + (cut - piece.t0) * np.arange(n) / (n - 1)
            alpha = np.stack([piece.alpha_at(t) for t in ts])
            pieces.append(ControlPiece(piece.t0, cut, piece.xi, alpha, piece.rate))
    pieces.append(_zero_piece(cut, 1.0, u.d))
    return AdmissibleControl(pieces, u.K_bound, u.d)


@dataclass(frozen=True)
class PiecewiseAffineMap:
    """Nondecreasing piecewise-affine time change on [0, 1]."""

    nodes_t: tuple
    nodes_tau: tuple

    def __post_init__(self):
        t, tau = self.nodes_t, self.nodes_tau
        if len(t) != len(tau) or len(t) < 2:
            raise ValueError("need matching node lists with >= 2 entries")
        if t[0] != 0.0 or t[-1] != 1.0:
            raise ValueError("domain nodes must span [0, 1]")
        if any(t[i + 1] <= t[i] for i in range(len(t) - 1)):
            raise ValueError("domain nodes must strictly increase")
        if any(tau[i + 1] < tau[i] - 1e-15 for i in range(len(tau) - 1)):
            raise NonMonotone("time change decreases on a segment")
        if min(tau) < -1e-12 or max(tau) > 1.0 + 1e-12:
            raise ValueError("image must stay within [0, 1]")

    @classmethod
    def identity(cls) -> "PiecewiseAffineMap":
        return cls((0.0, 1.0), (0.0, 1.0))

    @classmethod
    def affine(cls, tau0: float, tau1: float) -> "PiecewiseAffineMap":
        return cls((0.0, 1.0), (float(tau0), float(tau1)))

    def __call__(self, t: float) -> float:
        k = bisect.bisect_right(self.nodes_t, t) - 1
        k = min(max(k, 0), len(self.nodes_t) - 2)
        t0, t1 = self.nodes_t[k], self.nodes_t[k + 1]
        tau0, tau1 = self.nodes_tau[k], self.nodes_tau[k + 1]
        return tau0 + (t - t0) * (tau1 - tau0) / (t1 - t0)

    def segments(self):
        for k in range(len(self.nodes_t) - 1):
            t0, t1 = self.nodes_t[k], self.nodes_t[k + 1]
            tau0, tau1 = self.nodes_tau[k], self.nodes_tau[k + 1]
            yield t0, t1, tau0, tau1, (tau1 - tau0) / (t1 - t0)


def reparametrize(u: AdmissibleControl, phi: PiecewiseAffineMap) -> AdmissibleControl:
    """Compose the control with a time change: result(t) = u(phi(t)).

    xi values are preserved piecewise; alpha is resampled along phi; each
    result piece's rate is the source rate times the local slope, so the
    trajectory is reparametrized rather than rescaled.  Zero-length pieces
    are dropped.
    """
    src_breaks = [p.t0 for p in u.pieces] + [1.0]
    pieces: List[ControlPiece] = []
    for t0, t1, tau0, tau1, slope in phi.segments():
        if slope < 0.0:
            raise NonMonotone("time change decreases on a segment")
        if slope == 0.0:
            piece = u.pieces[u.piece_index(tau0)]
            alpha = np.tile(piece.alpha_at(tau0), (2, 1))
            # Paused leg: stored data kept, dynamics switched off via rate -> 0+.
            pieces.append(ControlPiece(t0, t1, piece.xi, alpha, piece.rate * 1e-300))
            continue
        cuts = [t0]
        for b in src_breaks:
            if tau0 < b < tau1:
                cuts.append(t0 + (b - tau0) / slope)
        cuts.append(t1)
        cuts = sorted(set(cuts))
        for a, b in zip(cuts[:-1], cuts[1:]):
            if b - a <= 1e-15:
                continue
            tau_mid = phi(0.5 * (a + b))
            piece = u.pieces[u.piece_index(tau_mid)]
            n = piece.alpha.shape[0]
            ts = a + (b - a) * np.arange(n) / (n - 1)
            alpha = np.stack([piece.alpha_at(phi(t)) for t in ts])
            pieces.append(ControlPiece(a, b, piece.xi, alpha, piece.rate * slope))
    if not pieces:
        return AdmissibleControl.zero(u.d, u.K_bound)
    pieces[0].t0 = 0.0
    pieces[-1].t1 = 1.0
    return AdmissibleControl(pieces, u.K_bound, u.d)


def controls_equal(u: AdmissibleControl, v: AdmissibleControl,
                   atol: float = 0.0) -> bool:
    """Data-level comparison: pieces, ranges, xi, rates, and alpha samples."""
    if u.d != v.d or len(u.pieces) != len(v.pieces):
        return False
    if not math.isclose(u.K_bound, v.K_bound, rel_tol=1e-12, abs_tol=atol):
        return False
    for a, b in zip(u.pieces, v.pieces):
        if abs(a.t0 - b.t0) > atol or abs(a.t1 - b.t1) > atol:
            return False
        if abs(a.xi - b.xi) > atol or abs(a.rate - b.rate) > atol:
            return False
        if a.alpha.shape != b.alpha.shape:
            return False
        if not np.allclose(a.alpha, b.alpha, rtol=0.0, atol=atol):
            return False
    return True


# -- serialization ----------------------------------------------------------

_SCHEMA = "contactsteer-control/1"


def save_control(u: AdmissibleControl, path) -> None:
    """Columnar text format; floats printed via repr for bit-exact round-trips."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# schema={_SCHEMA}\n")
        fh.write(f"# d={u.d} K_bound={u.K_bound!r} pieces={len(u.pieces)}\n")
        if u.meta:
            fh.write(f"# meta={json.dumps(u.meta, sort_keys=True)}\n")
        fh.write("piece,t0,t1,xi,rate,sample," +
                 ",".join(f"alpha_{i + 1}" for i in range(u.d)) + "\n")
        for idx, p in enumerate(u.pieces):
            for k in range(p.alpha.shape[0]):
                row = [str(idx), repr(p.t0), repr(p.t1), repr(p.xi), repr(p.rate),
                       str(k)] + [repr(float(a)) for a in p.alpha[k]]
                fh.write(",".join(row) + "\n")


def load_control(path) -> AdmissibleControl:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise ControlFormatError(f"cannot read control file: {exc}") from exc
    header = {}
    meta = {}
    body = []
    for line in lines:
        if line.startswith("#"):
            text = line[1:].strip()
            if text.startswith("meta="):
                meta = json.loads(text[len("meta="):])
            else:
                for tokens in text.split():
                    if "=" in tokens:
                        k, v = tokens.split("=", 1)
                        header[k] = v
        elif line and not line.startswith("piece,"):
            body.append(line)
    if header.get("schema") != _SCHEMA:
        raise ControlFormatError(f"unsupported control schema {header.get('schema')!r}")
    try:
        d = int(header["d"])
        K = float(header["K_bound"])
        rows = {}
        for line in body:
            parts = line.split(",")
            idx = int(parts[0])
            entry = rows.setdefault(idx, {"t0": float(parts[1]), "t1": float(parts[2]),
                                          "xi": float(parts[3]), "rate": float(parts[4]),
                                          "samples": {}})
            entry["samples"][int(parts[5])] = [float(v) for v in parts[6:6 + d]]
        pieces = []
        for idx in sorted(rows):
            entry = rows[idx]
            n = max(entry["samples"]) + 1
            alpha = np.array([entry["samples"][k] for k in range(n)])
            pieces.append(ControlPiece(entry["t0"], entry["t1"], entry["xi"],
                                       alpha, entry["rate"]))
    except (KeyError, ValueError, IndexError) as exc:
        raise ControlFormatError(f"malformed control file: {exc}") from exc
    ctrl = AdmissibleControl(pieces, K, d, meta=meta)
    validate(ctrl)
    return ctrl
