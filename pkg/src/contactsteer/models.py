"""Built-in structures with analytic data, plus a grid-tabulated loader."""

from __future__ import annotations

import math

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .errors import ControlFormatError
from .geometry import SubRiemannianStructure, load_structure_config

TWO_PI = 2.0 * math.pi


def torus_contact() -> SubRiemannianStructure:
    """Unit 3-torus with a rotating contact form and the Euclidean metric."""

    def omega(x):
        return np.array([math.cos(TWO_PI * x[2]), math.sin(TWO_PI * x[2]), 0.0])

    def domega(x):
        # A[i, j] = d omega_j / d x_i; only z-derivatives are nonzero.
        A = np.zeros((3, 3))
        A[2, 0] = -TWO_PI * math.sin(TWO_PI * x[2])
        A[2, 1] = TWO_PI * math.cos(TWO_PI * x[2])
        return A

    def frame(x):
        s, c = math.sin(TWO_PI * x[2]), math.cos(TWO_PI * x[2])
        return np.array([[0.0, -s], [0.0, c], [1.0, 0.0]])

    def brackets(i, j, x):
        s, c = math.sin(TWO_PI * x[2]), math.cos(TWO_PI * x[2])
        # [Y1, Y2] = -2*pi*(cos, sin, 0); antisymmetric in (i, j).
        b = np.array([-TWO_PI * c, -TWO_PI * s, 0.0])
        if i == j:
            return np.zeros(3)
        return b if (i, j) == (0, 1) else -b

    return SubRiemannianStructure(
        m=3,
        omega=omega,
        frame=frame,
        domega=domega,
        periods=(1.0, 1.0, 1.0),
        analytic_brackets=brackets,
        analytic_constants=(1.0, TWO_PI),
        orthonormal_frame=True,
        name="torus",
        # Wrapped distances stay injective up to 0.33 with the containment
        # slack; the commutator word needs the room for its excursions.
        default_patch_radius=0.3,
    )


def heisenberg(box: float = 1.0) -> SubRiemannianStructure:
    """Heisenberg group on a box, left-invariant metric.

    The frame X1 = dx - (y/2) dz, X2 = dy + (x/2) dz together with dz is
    declared orthonormal; the compatible form is dz + (y dx - x dy)/2.
    """

    def omega(x):
        return np.array([x[1] / 2.0, -x[0] / 2.0, 1.0])

    def domega(x):
        A = np.zeros((3, 3))
        A[1, 0] = 0.5   # d omega_0 / dy
        A[0, 1] = -0.5  # d omega_1 / dx
        return A

    def frame(x):
        return np.array([[1.0, 0.0], [0.0, 1.0], [-x[1] / 2.0, x[0] / 2.0]])

    def metric(x):
        xx, yy = x[0], x[1]
        return np.array(
            [
                [1.0 + yy * yy / 4.0, -xx * yy / 4.0, yy / 2.0],
                [-xx * yy / 4.0, 1.0 + xx * xx / 4.0, -xx / 2.0],
                [yy / 2.0, -xx / 2.0, 1.0],
            ]
        )

    def metric_inverse(x):
        xx, yy = x[0], x[1]
        # E E^T for E = [[1,0,0],[0,1,0],[-y/2,x/2,1]].
        return np.array(
            [
                [1.0, 0.0, -yy / 2.0],
                [0.0, 1.0, xx / 2.0],
                [-yy / 2.0, xx / 2.0, 1.0 + (xx * xx + yy * yy) / 4.0],
            ]
        )

    def brackets(i, j, x):
        if i == j:
            return np.zeros(3)
        b = np.array([0.0, 0.0, 1.0])
        return b if (i, j) == (0, 1) else -b

    b = float(box)
    return SubRiemannianStructure(
        m=3,
        omega=omega,
        frame=frame,
        metric=metric,
        metric_inverse=metric_inverse,
        domega=domega,
        domain=(-b * np.ones(3), b * np.ones(3)),
        analytic_brackets=brackets,
        analytic_constants=(1.0, 1.0),
        orthonormal_frame=True,
        name="heisenberg",
        default_patch_radius=0.5 * b,
    )


def flat_invalid() -> SubRiemannianStructure:
    """Integrable kernel (constant form): construction succeeds, certificates fail."""

    def omega(x):
        return np.array([0.0, 0.0, 1.0])

    def frame(x):
        return np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])

    return SubRiemannianStructure(
        m=3,
        omega=omega,
        frame=frame,
        domega=lambda x: np.zeros((3, 3)),
        domain=(-np.ones(3), np.ones(3)),
        orthonormal_frame=True,
        name="flat-invalid",
    )


def tabulated_structure(config: dict) -> SubRiemannianStructure:
    """Structure from coefficient tables on a regular grid (linear interpolation).

    Expected keys: dimension, axes (list of m arrays), omega (grid + (m,)),
    optional metric (grid + (m, m)), frame (grid + (m, d)), optional periods.
    """
    try:
        m = int(config["dimension"])
        axes = [np.asarray(a, dtype=float) for a in config["axes"]]
        omega_tab = np.asarray(config["omega"], dtype=float)
        frame_tab = np.asarray(config["frame"], dtype=float)
    except KeyError as exc:
        raise ControlFormatError(f"structure config missing key: {exc}") from exc
    metric_tab = config.get("metric")
    periods = config.get("periods")

    def interp(tab):
        f = RegularGridInterpolator(axes, tab, bounds_error=False, fill_value=None)
        return lambda x: np.asarray(f(np.asarray(x)[None, :])[0], dtype=float)

    omega_fn = interp(omega_tab)
    frame_fn = interp(frame_tab)
    metric_fn = interp(np.asarray(metric_tab, dtype=float)) if metric_tab is not None else None
    lo = np.array([a[0] for a in axes])
    hi = np.array([a[-1] for a in axes])
    return SubRiemannianStructure(
        m=m,
        omega=omega_fn,
        frame=frame_fn,
        metric=metric_fn,
        periods=periods,
        domain=(lo, hi),
        orthonormal_frame=bool(config.get("orthonormal_frame", False)),
        name=str(config.get("name", "tabulated")),
    )


MODELS = {
    "torus": torus_contact,
    "heisenberg": heisenberg,
    "flat-invalid": flat_invalid,
}


def by_name(name: str, **kwargs) -> SubRiemannianStructure:
    try:
        return MODELS[name](**kwargs)
    except KeyError:
        raise ControlFormatError(
            f"unknown model '{name}' (available: {', '.join(sorted(MODELS))})"
        ) from None


def from_config(source) -> SubRiemannianStructure:
    """Model name or explicit coefficient tables from a JSON config."""
    cfg = load_structure_config(source)
    if "model" in cfg:
        return by_name(cfg["model"])
    return tabulated_structure(cfg)
