"""Corank-one distributions on a single chart: frames, brackets, constants.

A structure is the chart-level data (one-form ``omega``, metric ``g0``,
spanning sections of the kernel distribution) together with the cached
scale constants used by the planner.  All operations are pure; structures
are immutable after their constants have been computed once.
"""

from __future__ import annotations

import itertools
import json
import math
import threading
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import (
    DegenerateForm,
    NotHorizontal,
    RankDeficiency,
    Step2Violation,
    UnboundedForm,
)

# Central-difference step for numerical Jacobians, h = cbrt(eps)*(1+|x|).
FD_STEP = float(np.cbrt(np.finfo(float).eps))

STEP2_TOL = 1e-8


def as_point(x, m: Optional[int] = None) -> np.ndarray:
    p = np.asarray(x, dtype=float).reshape(-1)
    if m is not None and p.size != m:
        raise ValueError(f"expected a point with {m} coordinates, got {p.size}")
    if not np.all(np.isfinite(p)):
        raise ValueError("point has non-finite coordinates")
    return p


@dataclass(frozen=True)
class StructureConstants:
    """Scale constants of a structure: sup of the form norm, the unit-frame
    commutator infimum, and the frame rescaling factor."""

    Omega: float
    lambda_raw: float
    K: float

    @property
    def lambda_rescaled(self) -> float:
        return self.K ** 2 * self.lambda_raw

    @staticmethod
    def from_estimates(m: int, Omega: float, lambda_raw: float) -> "StructureConstants":
        K = math.sqrt(5.0 * (m + 3) * Omega / lambda_raw)
        return StructureConstants(Omega=Omega, lambda_raw=lambda_raw, K=K)


class SubRiemannianStructure:
    """Chart dimension, one-form field, metric field and spanning sections.

    Parameters
    ----------
    m : chart dimension (>= 3).
    omega : callable point -> (m,) covector components.
    frame : callable point -> (m, d) matrix whose columns span ker(omega).
    metric : callable point -> (m, m) SPD matrix, or None for the identity.
    domega : optional callable point -> (m, m) matrix A with A[i, j] = d
        omega_j / d x_i; finite differences are used when absent.
    metric_inverse : optional callable point -> (m, m) inverse metric (fast
        path for raising the form).
    periods : optional per-coordinate periods (None entries are aperiodic).
    domain : optional ((m,), (m,)) box used for sampling grids.
    analytic_brackets : optional callable (i, j, point) -> (m,) giving the
        bracket of frame columns i and j.
    analytic_constants : optional (Omega, lambda_raw) pair for built-in
        models; grids still estimate both for certification.
    orthonormal_frame : set when the d = m-1 frame columns are known to be a
        g0-orthonormal basis of the kernel (lets patches use them directly).
    """

    def __init__(
        self,
        m: int,
        omega: Callable,
        frame: Callable,
        metric: Optional[Callable] = None,
        domega: Optional[Callable] = None,
        metric_inverse: Optional[Callable] = None,
        periods: Optional[Sequence[Optional[float]]] = None,
        domain: Optional[tuple] = None,
        analytic_brackets: Optional[Callable] = None,
        analytic_constants: Optional[tuple] = None,
        orthonormal_frame: bool = False,
        name: str = "custom",
        default_patch_radius: Optional[float] = None,
    ):
        if m < 3:
            raise ValueError("chart dimension must be at least 3")
        self.m = int(m)
        self._omega = omega
        self._frame = frame
        self._metric = metric
        self._domega = domega
        self._metric_inverse = metric_inverse
        self.analytic_brackets = analytic_brackets
        self.analytic_constants = analytic_constants
        self.orthonormal_frame = bool(orthonormal_frame)
        self.name = name
        self.d = int(np.asarray(frame(np.zeros(m) if domain is None else
                                      np.asarray(domain[0], dtype=float))).shape[1])
        if self.d < m - 1:
            raise ValueError("frame must have at least m-1 sections")
        if periods is None:
            self.periods = None
        else:
            self.periods = np.array(
                [np.nan if p is None else float(p) for p in periods], dtype=float
            )
        if domain is None:
            if self.periods is not None and np.all(np.isfinite(self.periods)):
                domain = (np.zeros(m), self.periods.copy())
            else:
                domain = (-np.ones(m), np.ones(m))
        self.domain = (as_point(domain[0], m), as_point(domain[1], m))
        if default_patch_radius is None:
            if self.periods is not None and np.any(np.isfinite(self.periods)):
                default_patch_radius = 0.2 * float(np.nanmin(self.periods))
            else:
                default_patch_radius = 0.25 * float(
                    np.min(self.domain[1] - self.domain[0])
                )
        self.default_patch_radius = float(default_patch_radius)
        self._identity_metric = metric is None and metric_inverse is None
        self._constants: Optional[StructureConstants] = None
        self._constants_report: Optional[dict] = None
        self._patch_store: dict = {}
        self._patch_lock = threading.Lock()

    # -- chart helpers ---------------------------------------------------

    def wrap(self, x) -> np.ndarray:
        """Reduce periodic coordinates into [0, period)."""
        p = as_point(x, self.m).copy()
        if self.periods is not None:
            for i, per in enumerate(self.periods):
                if np.isfinite(per):
                    p[i] = p[i] % per
        return p

    def delta(self, a, b) -> np.ndarray:
        """Shortest chart displacement from a to b (wrapped per coordinate)."""
        d = as_point(b, self.m) - as_point(a, self.m)
        if self.periods is not None:
            for i, per in enumerate(self.periods):
                if np.isfinite(per):
                    d[i] = (d[i] + per / 2.0) % per - per / 2.0
        return d

    def distance(self, a, b) -> float:
        return float(np.linalg.norm(self.delta(a, b)))

    # -- field evaluation ------------------------------------------------

    def omega_at(self, x) -> np.ndarray:
        return np.asarray(self._omega(as_point(x, self.m)), dtype=float)

    def frame_at(self, x) -> np.ndarray:
        return np.asarray(self._frame(as_point(x, self.m)), dtype=float)

    def metric_at(self, x) -> np.ndarray:
        if self._metric is None:
            return np.eye(self.m)
        return np.asarray(self._metric(as_point(x, self.m)), dtype=float)

    def inner(self, x, u, v) -> float:
        if self._metric is None:
            return float(np.dot(u, v))
        return float(u @ self.metric_at(x) @ v)

    def raise_form(self, x) -> np.ndarray:
        """Metric raise of omega at x."""
        w = self.omega_at(x)
        if self._metric_inverse is not None:
            return np.asarray(self._metric_inverse(as_point(x, self.m)), dtype=float) @ w
        if self._metric is None:
            return w
        return np.linalg.solve(self.metric_at(x), w)

    def _sharp(self, x, w) -> np.ndarray:
        """Raise without re-evaluating the form (hot path)."""
        if self._identity_metric:
            return w
        if self._metric_inverse is not None:
            return self._metric_inverse(x) @ w
        return np.linalg.solve(self._metric(x), w)

    def drift_at(self, x) -> np.ndarray:
        """Unit metric-normal, paired negatively with the form (hot path)."""
        w = self._omega(x)
        sharp = self._sharp(x, w)
        n2 = float(w @ sharp)
        if n2 < 1e-24:
            raise DegenerateForm(f"one-form norm below threshold at {x}")
        return sharp / (-math.sqrt(n2))

    def omega_norm(self, x) -> float:
        w = self.omega_at(x)
        sharp = self.raise_form(x)
        val = float(w @ sharp)
        if val < 0:
            raise DegenerateForm(f"metric raise produced negative norm at {x}")
        return math.sqrt(val)

    def domega_matrix(self, x) -> np.ndarray:
        """Matrix A with A[i, j] = d omega_j / d x_i (so the two-form value
        on (v, w) is v @ A @ w - w @ A @ v)."""
        x = as_point(x, self.m)
        if self._domega is not None:
            return np.asarray(self._domega(x), dtype=float)
        h = FD_STEP * (1.0 + float(np.linalg.norm(x)))
        A = np.empty((self.m, self.m))
        for i in range(self.m):
            e = np.zeros(self.m)
            e[i] = h
            A[i] = (self.omega_at(x + e) - self.omega_at(x - e)) / (2.0 * h)
        return A

    def domega_value(self, x, v, w) -> float:
        A = self.domega_matrix(x)
        return float(v @ A @ w - w @ A @ v)

    # -- constants -------------------------------------------------------

    @property
    def constants(self) -> StructureConstants:
        if self._constants is None:
            raise RuntimeError("constants not computed yet; call ensure_constants()")
        return self._constants

    @property
    def constants_report(self) -> Optional[dict]:
        return self._constants_report

    def ensure_constants(self) -> StructureConstants:
        if self._constants is None:
            if self.analytic_constants is not None:
                Omega, lam = self.analytic_constants
                self._constants = StructureConstants.from_estimates(self.m, Omega, lam)
            else:
                compute_constants(self)
        return self._constants

    def set_constants(self, constants: StructureConstants, report: Optional[dict] = None):
        self._constants = constants
        if report is not None:
            self._constants_report = report

    # -- sampling --------------------------------------------------------

    def sample_axis(self, i: int, resolution: int) -> np.ndarray:
        lo, hi = self.domain[0][i], self.domain[1][i]
        if self.periods is not None and np.isfinite(self.periods[i]):
            return np.linspace(0.0, self.periods[i], resolution, endpoint=False)
        return np.linspace(lo, hi, resolution)

    def sample_grid(self, resolution: int) -> np.ndarray:
        axes = [self.sample_axis(i, resolution) for i in range(self.m)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.reshape(-1) for g in mesh], axis=1)

    def sample_points(self, count: int, rng: np.random.Generator) -> np.ndarray:
        lo, hi = self.domain
        return lo + (hi - lo) * rng.random((count, self.m))


# -- basic fields ---------------------------------------------------------


def drift_field(structure: SubRiemannianStructure, x) -> np.ndarray:
    """Unit metric-normal to the kernel, paired negatively with the form."""
    x = as_point(x, structure.m)
    nrm = structure.omega_norm(x)
    if nrm < 1e-12:
        raise DegenerateForm(f"one-form norm {nrm:.3e} below threshold at {x}")
    return structure.drift_at(x)


def field_jacobian(fieldfn: Callable, x: np.ndarray) -> np.ndarray:
    """Central-difference Jacobian with columns d(field)/d(x_i)."""
    x = np.asarray(x, dtype=float)
    m = x.size
    h = FD_STEP * (1.0 + float(np.linalg.norm(x)))
    J = np.empty((m, m))
    for i in range(m):
        e = np.zeros(m)
        e[i] = h
        J[:, i] = (np.asarray(fieldfn(x + e)) - np.asarray(fieldfn(x - e))) / (2.0 * h)
    return J


def lie_bracket(structure: SubRiemannianStructure, V: Callable, W: Callable, x) -> np.ndarray:
    """[V, W](x) = DW(x) V(x) - DV(x) W(x).

    Uses the structure's analytic bracket table when both fields advertise a
    frame index (``frame_index`` attribute); otherwise central differences.
    """
    x = as_point(x, structure.m)
    i = getattr(V, "frame_index", None)
    j = getattr(W, "frame_index", None)
    if (
        structure.analytic_brackets is not None
        and i is not None
        and j is not None
    ):
        return np.asarray(structure.analytic_brackets(i, j, x), dtype=float)
    DV = field_jacobian(V, x)
    DW = field_jacobian(W, x)
    return DW @ np.asarray(V(x), dtype=float) - DV @ np.asarray(W(x), dtype=float)


def frame_column_field(structure: SubRiemannianStructure, i: int) -> Callable:
    fn = lambda x: structure.frame_at(x)[:, i]
    fn.frame_index = i
    return fn


def bracket_of_frame(structure: SubRiemannianStructure, i: int, j: int, x) -> np.ndarray:
    x = as_point(x, structure.m)
    if structure.analytic_brackets is not None:
        return np.asarray(structure.analytic_brackets(i, j, x), dtype=float)
    return lie_bracket(
        structure, frame_column_field(structure, i), frame_column_field(structure, j), x
    )


# -- kernel bases ---------------------------------------------------------


def kernel_projection(structure: SubRiemannianStructure, x, v) -> np.ndarray:
    """Metric-orthogonal projection of v onto ker(omega_x)."""
    w = structure.omega_at(x)
    sharp = structure.raise_form(x)
    nrm2 = float(w @ sharp)
    if nrm2 < 1e-24:
        raise DegenerateForm(f"one-form vanishes at {x}")
    return np.asarray(v, dtype=float) - (float(w @ v) / nrm2) * sharp


def kernel_basis(
    structure: SubRiemannianStructure, x, pivots: Optional[Sequence[int]] = None
):
    """g0-orthonormal basis of ker(omega_x) from projected coordinate fields.

    Pivoting is greedy on the residual metric norm (ties break to the lowest
    coordinate index); passing ``pivots`` freezes the order, which keeps the
    basis smooth across a patch.  Returns (basis (m, m-1), pivots).
    """
    x = as_point(x, structure.m)
    m = structure.m
    G = structure.metric_at(x)
    cols = []
    if pivots is not None:
        order = list(pivots)
        if len(order) != m - 1:
            raise ValueError("pivot list must have m-1 entries")
        for idx in order:
            e = np.zeros(m)
            e[idx] = 1.0
            u = kernel_projection(structure, x, e)
            for b in cols:
                u = u - float(u @ G @ b) * b
            n2 = float(u @ G @ u)
            if n2 < 1e-18:
                raise RankDeficiency(
                    f"frozen pivot {idx} degenerate at {x} (norm^2 {n2:.3e})"
                )
            cols.append(u / math.sqrt(n2))
        return np.stack(cols, axis=1), tuple(order)

    chosen = []
    remaining = list(range(m))
    for _ in range(m - 1):
        best_idx, best_u, best_n2 = None, None, -1.0
        for idx in remaining:
            e = np.zeros(m)
            e[idx] = 1.0
            u = kernel_projection(structure, x, e)
            for b in cols:
                u = u - float(u @ G @ b) * b
            n2 = float(u @ G @ u)
            if n2 > best_n2 * (1.0 + 1e-12):
                best_idx, best_u, best_n2 = idx, u, n2
        if best_n2 < 1e-18:
            raise RankDeficiency(f"projected coordinate fields degenerate at {x}")
        cols.append(best_u / math.sqrt(best_n2))
        chosen.append(best_idx)
        remaining.remove(best_idx)
    return np.stack(cols, axis=1), tuple(chosen)


def wedge_norm(structure: SubRiemannianStructure, x) -> float:
    """Euclidean norm of the three-form omega ^ d(omega) at x."""
    x = as_point(x, structure.m)
    w = structure.omega_at(x)
    A = structure.domega_matrix(x)
    D = A - A.T  # D[i, j] = d(omega)(e_i, e_j)
    total = 0.0
    for i, j, k in itertools.combinations(range(structure.m), 3):
        c = w[i] * D[j, k] - w[j] * D[i, k] + w[k] * D[i, j]
        total += c * c
    return math.sqrt(total)


def best_kernel_pair(structure: SubRiemannianStructure, x) -> float:
    """Largest d(omega) value over ordered pairs of an orthonormal kernel
    basis at x (the pointwise unit-frame commutator strength)."""
    B, _ = kernel_basis(structure, x)
    A = structure.domega_matrix(x)
    M = B.T @ A @ B
    M = M - M.T
    return float(np.max(M)) if M.size else 0.0


def verify_step2(structure: SubRiemannianStructure, resolution: int = 9) -> dict:
    """Grid certificate that omega ^ d(omega) is nowhere vanishing.

    Raises Step2Violation when the minimum falls below tolerance; otherwise
    returns {min_wedge, argmin}.
    """
    pts = structure.sample_grid(resolution)
    best = math.inf
    arg = None
    for p in pts:
        val = wedge_norm(structure, p)
        if val < best:
            best, arg = val, p
    if best <= STEP2_TOL:
        raise Step2Violation(
            f"min |omega ^ d(omega)| = {best:.3e} at {arg} (structure '{structure.name}')"
        )
    return {"min_wedge": best, "argmin": None if arg is None else arg.tolist()}


# -- constants ------------------------------------------------------------


def compute_constants(
    structure: SubRiemannianStructure,
    sampling_spec: Optional[dict] = None,
) -> StructureConstants:
    """Estimate the form supremum and unit-frame commutator infimum on a grid,
    derive the frame scale, and cache everything on the structure.

    One refinement level guards the supremum: growth beyond 10% raises
    UnboundedForm.  Analytic overrides supplied by built-in models become the
    cached constants; grid estimates are kept in the report either way.
    """
    spec = {"resolution": 17, "refine": True}
    if sampling_spec:
        spec.update(sampling_spec)
    res = int(spec["resolution"])

    verify_step2(structure, resolution=min(res, 9))

    def scan(resolution):
        sup_omega = 0.0
        inf_pair = math.inf
        for p in structure.sample_grid(resolution):
            sup_omega = max(sup_omega, structure.omega_norm(p))
            inf_pair = min(inf_pair, best_kernel_pair(structure, p))
        return sup_omega, inf_pair

    Omega_est, lam_est = scan(res)
    if spec["refine"]:
        # Divergence guard on the supremum alone; the fine grid only needs
        # the cheap form norm.
        Omega_fine = max(
            structure.omega_norm(p) for p in structure.sample_grid(2 * res - 1)
        )
        if Omega_fine > Omega_est * 1.10 + 1e-12:
            raise UnboundedForm(
                f"form supremum grew from {Omega_est:.6g} to {Omega_fine:.6g} "
                "under refinement"
            )
        Omega_est = max(Omega_est, Omega_fine)
    if lam_est <= STEP2_TOL:
        raise Step2Violation(
            f"unit-frame commutator infimum {lam_est:.3e} not positive"
        )

    report = {
        "Omega_grid": Omega_est,
        "lambda_raw_grid": lam_est,
        "K_grid": math.sqrt(5.0 * (structure.m + 3) * Omega_est / lam_est),
        "resolution": res,
    }
    if structure.analytic_constants is not None:
        Omega, lam = structure.analytic_constants
        constants = StructureConstants.from_estimates(structure.m, Omega, lam)
        report["Omega_analytic"] = Omega
        report["lambda_raw_analytic"] = lam
    else:
        constants = StructureConstants.from_estimates(structure.m, Omega_est, lam_est)
    structure.set_constants(constants, report)
    return constants


# -- frame patches --------------------------------------------------------

# Deterministic offsets probing a patch: center, axis points, diagonals.
def _patch_sample_offsets(m: int) -> np.ndarray:
    offs = [np.zeros(m)]
    for i in range(m):
        e = np.zeros(m)
        e[i] = 1.0
        offs.append(e)
        offs.append(-e)
    diag = np.ones(m) / math.sqrt(m)
    offs.append(diag)
    offs.append(-diag)
    return np.stack(offs, axis=0)


@dataclass
class FramePatch:
    """Local rescaled kernel frame around a center point.

    ``perm``/``signs`` reorder the underlying sections so the pair with the
    largest two-form infimum sits in slots (0, 1) with positive sign; all
    sections are multiplied by ``scale``.
    """

    structure: SubRiemannianStructure
    center: np.ndarray
    radius: float
    scale: float
    mode: str  # "frame" (model sections) or "gs" (projected coordinates)
    perm: tuple
    signs: tuple
    pivots: Optional[tuple]
    lambda_local: float  # rescaled two-form infimum over patch samples
    pair_value_unit: float
    locality: Optional[float] = None

    def sections_at(self, x) -> np.ndarray:
        if self.mode == "frame":
            F = self.structure.frame_at(x)[:, list(self.perm)]
        else:
            B, _ = kernel_basis(self.structure, x, pivots=self.pivots)
            F = B[:, list(self.perm)]
        return F * (self.scale * np.asarray(self.signs))

    def section_at(self, x, j: int) -> np.ndarray:
        if self.mode == "frame":
            return (self.scale * self.signs[j]) * self.structure._frame(x)[:, self.perm[j]]
        return self.sections_at(x)[:, j]

    def coefficients_at(self, x, j: int) -> np.ndarray:
        """Least-norm frame coefficients of section j at x.

        Sections taken directly from an orthonormal model frame have the
        constant coefficient vector scale * sign * e_perm[j]; otherwise the
        pseudoinverse route applies.
        """
        if self.mode == "frame":
            out = np.zeros(self.structure.d)
            out[self.perm[j]] = self.scale * self.signs[j]
            return out
        return minimal_coefficients(self.structure, x, self.section_at(x, j))

    def section_field(self, j: int) -> Callable:
        fn = lambda x: self.sections_at(x)[:, j]
        if self.mode == "frame":
            fn.patch_slot = j
        return fn

    def pair_bracket(self, x) -> np.ndarray:
        """Bracket of the first two rescaled sections at x."""
        if self.mode == "frame" and self.structure.analytic_brackets is not None:
            i, j = self.perm[0], self.perm[1]
            s = self.signs[0] * self.signs[1] * self.scale ** 2
            return s * bracket_of_frame(self.structure, i, j, x)
        return lie_bracket(
            self.structure, self.section_field(0), self.section_field(1), x
        )

    def contains(self, x, slack: float = 1.10) -> bool:
        return self.structure.distance(self.center, x) <= self.radius * slack


def _pair_infimum_table(structure, points, sections_at):
    """inf over points of d(omega)(Y_a, Y_b) for every ordered pair."""
    n_sections = sections_at(points[0]).shape[1]
    table = np.full((n_sections, n_sections), math.inf)
    for p in points:
        S = sections_at(p)
        A = structure.domega_matrix(p)
        M = S.T @ A @ S
        M = M - M.T
        table = np.minimum(table, M)
    return table


def _select_pair(table: np.ndarray):
    """Ordered pair with the largest infimum; ties within 1% break to the
    lowest index pair."""
    n = table.shape[0]
    candidates = [
        (a, b) for a in range(n) for b in range(n) if a != b
    ]
    best = max(table[a, b] for a, b in candidates)
    if best <= 0.0:
        return None, best
    for a, b in sorted(candidates):
        if table[a, b] >= best * 0.99:
            return (a, b), table[a, b]
    return None, best


def local_frame(
    structure: SubRiemannianStructure,
    x,
    radius: Optional[float] = None,
    rescale: bool = True,
    force_gram_schmidt: bool = False,
) -> FramePatch:
    """Build a rescaled local kernel frame around x.

    Model structures with a declared orthonormal frame contribute their own
    sections; otherwise sections come from metric orthonormalization of
    projected coordinate fields with a pivot order frozen at the center.  The
    patch radius shrinks until the pair infimum clears the structure's
    unit-frame level.
    """
    x = structure.wrap(x)
    constants = structure.ensure_constants()
    scale = constants.K if rescale else 1.0
    radius = float(radius if radius is not None else structure.default_patch_radius)

    use_model = (
        structure.orthonormal_frame
        and structure.d == structure.m - 1
        and not force_gram_schmidt
    )
    if use_model:
        mode, pivots = "frame", None
        base_sections = lambda p: structure.frame_at(p)
    else:
        mode = "gs"
        _, pivots = kernel_basis(structure, x)
        base_sections = lambda p: kernel_basis(structure, p, pivots=pivots)[0]

    offsets = _patch_sample_offsets(structure.m)
    lam_floor = constants.lambda_raw * (1.0 - 1e-6) - 1e-9
    r = radius
    last_best = -math.inf
    for _ in range(24):
        points = [structure.wrap(x + r * o) for o in offsets]
        try:
            table = _pair_infimum_table(structure, points, base_sections)
        except RankDeficiency:
            r *= 0.5
            continue
        pair, best = _select_pair(table)
        last_best = best
        if pair is not None and best >= lam_floor:
            a, b = pair
            rest = [i for i in range(table.shape[0]) if i not in (a, b)]
            perm = (a, b, *rest)
            signs = tuple(1.0 for _ in perm)
            patch = FramePatch(
                structure=structure,
                center=x,
                radius=r,
                scale=scale,
                mode=mode,
                perm=perm,
                signs=signs,
                pivots=pivots,
                lambda_local=scale ** 2 * best,
                pair_value_unit=best,
            )
            return patch
        r *= 0.5
        if r < radius * 1e-4:
            break
    raise Step2Violation(
        f"no section pair achieves a positive two-form infimum near {x} "
        f"(best {last_best:.3e})"
    )


def get_patch(
    structure: SubRiemannianStructure, x, rescale: bool = True, **kwargs
) -> FramePatch:
    """Patch cache keyed by rounded center (single-writer, then read-only)."""
    x = structure.wrap(x)
    key = (tuple(np.round(x, 9)), bool(rescale))
    store = structure._patch_store
    patch = store.get(key)
    if patch is not None:
        return patch
    with structure._patch_lock:
        patch = store.get(key)
        if patch is None:
            patch = local_frame(structure, x, rescale=rescale, **kwargs)
            store[key] = patch
    return patch


# -- minimal coefficients -------------------------------------------------


def minimal_coefficients(
    structure: SubRiemannianStructure, x, v, tol: float = 1e-8
) -> np.ndarray:
    """Least-norm frame coefficients u with frame(x) @ u = v.

    v must be tangent to the kernel up to tol relative to its norm.  The
    pseudoinverse route realizes the minimal-control property when the frame
    is metric-orthonormal.
    """
    x = as_point(x, structure.m)
    v = as_point(v, structure.m)
    w = structure.omega_at(x)
    nv = math.sqrt(max(structure.inner(x, v, v), 0.0))
    pairing = abs(float(w @ v))
    if pairing > tol * max(nv, 1e-30) and nv > 0:
        raise NotHorizontal(
            f"omega(v) = {pairing:.3e} exceeds {tol:.1e} * |v| at {x}"
        )
    F = structure.frame_at(x)
    rank = np.linalg.matrix_rank(F, tol=1e-10 * max(1.0, float(np.abs(F).max())))
    if rank < structure.m - 1:
        raise RankDeficiency(
            f"frame rank {rank} < {structure.m - 1} at {x}"
        )
    v_tan = kernel_projection(structure, x, v)
    u, residual, _, _ = np.linalg.lstsq(F, v_tan, rcond=None)
    achieved = F @ u
    if np.linalg.norm(achieved - v_tan) > max(1e-9, tol) * max(1.0, nv):
        raise RankDeficiency(f"frame does not span the kernel direction at {x}")
    return u


# -- config loading -------------------------------------------------------


def load_structure_config(source) -> dict:
    """Read a structure definition from a JSON file path, file object, or dict."""
    if isinstance(source, dict):
        return source
    if hasattr(source, "read"):
        return json.load(source)
    with open(source, "r", encoding="utf-8") as fh:
        return json.load(fh)
