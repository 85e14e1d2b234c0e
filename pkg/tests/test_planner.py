import math

import numpy as np
import pytest

from contactsteer import (
    bch_residual,
    evaluate,
    flow_word_endpoint,
    get_patch,
    locality_radius,
    plan,
    rank_margin,
    rank_margin_floor,
    section,
    solve,
    solve_psi,
    validate,
    verify_inclusion,
)
from contactsteer.errors import (
    BudgetExceeded,
    NoConvergence,
    OutsideLocality,
    PatchEscape,
)
from contactsteer.geometry import FramePatch
from contactsteer.planner import FlowWord, WordSegment

ORIGIN = np.zeros(3)


def unit_heisenberg_patch(heis):
    """Unrescaled harness patch with sections (X2, X1)."""
    return FramePatch(
        structure=heis,
        center=ORIGIN.copy(),
        radius=2.0,
        scale=1.0,
        mode="frame",
        perm=(1, 0),
        signs=(1.0, 1.0),
        pivots=None,
        lambda_local=1.0,
        pair_value_unit=1.0,
    )


# -- flow word ----------------------------------------------------------------


def test_word_segment_pattern():
    word = FlowWord.from_psi([0.5, -0.2, -0.09], m=3)
    assert len(word) == 6
    root = math.sqrt(0.09)
    assert word.segments[0] == WordSegment(0.5, 0, 1.0)
    assert word.segments[1] == WordSegment(-0.2, 1, 1.0)
    signs = [(s.slot, s.sign) for s in word.segments[2:]]
    assert signs == [(0, -1.0), (1, -1.0), (0, 1.0), (1, 1.0)]
    xis = [s.xi for s in word.segments[2:]]
    assert np.allclose(xis, [-root, root, -root, root])


def test_word_zero_identity(torus, rng):
    for p in torus.sample_points(5, rng):
        out = flow_word_endpoint(torus, p, np.zeros(3))
        assert np.array_equal(out, p)


def test_word_heisenberg_first_segment(heis):
    patch = unit_heisenberg_patch(heis)
    for xi in (0.3, -0.4, 1.0):
        out = flow_word_endpoint(heis, ORIGIN, [xi, 0.0, 0.0], patch=patch)
        assert np.allclose(out, [0.0, xi / 6.0, -xi * xi / 6.0], atol=1e-13)


def test_word_lipschitz_probe(torus, rng):
    patch = get_patch(torus, [0.2, 0.3, 0.4])
    for _ in range(10):
        psi = rng.normal(size=3)
        psi *= 1e-3 / np.linalg.norm(psi)
        out = flow_word_endpoint(torus, patch.center, psi, patch=patch)
        assert torus.distance(out, patch.center) <= 2.0 * 1e-3


def test_word_patch_escape(torus):
    patch = get_patch(torus, ORIGIN)
    with pytest.raises(PatchEscape):
        flow_word_endpoint(torus, ORIGIN, [3.0, 0.0, 0.0], patch=patch)


# -- parameter solve ------------------------------------------------------------


def test_solve_psi_trivial(torus):
    params = solve_psi(torus, [0.1, 0.1, 0.1], [0.1, 0.1, 0.1])
    assert params.iterations == 0
    assert np.array_equal(params.psi, np.zeros(3))
    assert params.eps_m == 0.0


def test_solve_psi_vertical_displacement(torus):
    x = ORIGIN
    y = x + np.array([0.0, 0.0, 0.01])
    params = solve_psi(torus, x, y)
    assert params.residual <= 1e-8
    out = flow_word_endpoint(torus, x, params.psi, patch=params.patch)
    assert torus.distance(out, y) <= 1e-8
    # Displacement along the frame plane: leading parameters carry it.
    assert np.linalg.norm(params.psi[:2]) <= 0.1
    assert np.linalg.norm(params.psi[:2]) >= 0.001


def test_solve_psi_transversal_bisection_oracle(torus):
    # Transversal target exercises the nonsmooth last coordinate; compare
    # against bisection along that axis alone.
    x = ORIGIN
    y = x + np.array([0.01, 0.0, 0.0])
    params = solve_psi(torus, x, y)
    assert params.residual <= 1e-8
    assert params.eps_m == math.copysign(1.0, params.psi[2])

    patch = params.patch

    def axis_gap(pm):
        out = flow_word_endpoint(torus, x, [0.0, 0.0, pm], patch=patch,
                                 check_patch=False)
        return torus.delta(x, out)[0] - 0.01

    lo, hi = -0.2, 0.0
    assert axis_gap(lo) > 0 and axis_gap(hi) < 0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if axis_gap(mid) > 0:
            lo = mid
        else:
            hi = mid
    root = 0.5 * (lo + hi)
    assert abs(params.psi[2]) == pytest.approx(abs(root), rel=0.5)
    assert abs(params.psi[2]) == pytest.approx(0.01 * 6.0, rel=0.3)


def test_solve_psi_outside_locality(torus):
    with pytest.raises((OutsideLocality, NoConvergence)):
        solve_psi(torus, ORIGIN, np.array([0.35, 0.35, 0.35]), max_iter=25)


# -- section -------------------------------------------------------------------


def test_section_identity_is_zero(torus):
    ctrl = section(torus, [0.3, 0.3, 0.3], [0.3, 0.3, 0.3])
    assert ctrl.is_zero()
    assert len(ctrl.pieces) == 1


def test_section_reaches_target(torus):
    x = np.array([0.2, 0.8, 0.1])
    y = x + np.array([0.01, -0.02, 0.015])
    ctrl = section(torus, x, y)
    validate(ctrl)
    traj = solve(torus, x, ctrl)
    assert torus.distance(traj.endpoint_wrapped, y) <= 1e-7
    report = verify_inclusion(torus, traj)
    assert report.passed


def test_section_alpha_saturates_bound(torus):
    x, y = ORIGIN, np.array([0.005, 0.01, 0.02])
    ctrl = section(torus, x, y)
    K2 = torus.constants.K ** 2
    for piece in ctrl.pieces:
        if piece.xi > 0:
            sup = float(np.max(np.sum(piece.alpha ** 2, axis=1)))
            assert sup == pytest.approx(K2, rel=1e-12)


def test_section_piece_layout(torus):
    x, y = ORIGIN, np.array([0.01, 0.0, 0.01])
    ctrl = section(torus, x, y)
    assert len(ctrl.pieces) == 6
    expected = np.arange(7) / 6.0
    assert np.allclose(ctrl.breakpoints, expected, atol=1e-15)
    # Last four drift channels share the same magnitude.
    tail = [p.xi for p in ctrl.pieces[2:]]
    assert np.allclose(tail, tail[0], atol=1e-15)


def test_section_segment_consistency(torus):
    # Solving each produced piece reproduces the unit-time word flow.
    x = np.array([0.5, 0.5, 0.5])
    y = x + np.array([0.008, -0.012, 0.01])
    params = solve_psi(torus, x, y)
    ctrl = section(torus, x, y, params=params)
    _, path = flow_word_endpoint(torus, x, params.psi, patch=params.patch,
                                 record=True)
    traj = solve(torus, x, ctrl, steps_per_piece=200)
    for j in range(6):
        boundary = traj.resampled_states(np.array([(j + 1) / 6.0]))[0]
        word_end = path[j][-1][1]
        assert np.linalg.norm(boundary - word_end) <= 1e-8


# -- certificates ---------------------------------------------------------------


def test_rank_margin_torus(torus, rng):
    floor = rank_margin_floor(torus)
    assert floor == pytest.approx(1.0 / 6.0, rel=1e-9)
    for p in torus.sample_points(25, rng):
        assert rank_margin(torus, p) >= floor - 1e-6


def test_rank_margin_unit_frame_negative(torus):
    val = rank_margin(torus, [0.3, 0.6, 0.1], rescale=False)
    expected = -4.0 / 6.0 + 2.0 * math.pi / 36.0
    assert val == pytest.approx(expected, abs=1e-3)
    assert val < 0


def test_rank_margin_heisenberg(heis, rng):
    for p in heis.sample_points(25, rng):
        assert rank_margin(heis, p) >= 1.0 / 6.0 - 1e-6


def test_bch_zero(torus):
    assert bch_residual(torus, ORIGIN, 0.0, 0.0) == 0.0


def test_bch_heisenberg_noise_floor(heis):
    for s in np.geomspace(1e-3, 1e-1, 5):
        assert bch_residual(heis, ORIGIN, float(s), float(s)) <= 1e-9


def test_bch_heisenberg_telescoping(heis):
    for eps in (1e-3, 1e-2, 1e-1):
        assert bch_residual(heis, ORIGIN, eps, 0.0) <= 1e-12


def test_bch_torus_cubic_order(torus):
    scales = np.geomspace(1e-3, 1e-1, 7)
    residuals = [bch_residual(torus, ORIGIN, float(s), float(s)) for s in scales]
    slope = np.polyfit(np.log(scales), np.log(residuals), 1)[0]
    assert slope >= 2.5


def test_bch_torus_telescoping_cubic(torus):
    # One vanishing parameter: the word telescopes up to a drift-frame
    # commutator of cubic size.
    vals = [(eps, bch_residual(torus, ORIGIN, eps, 0.0))
            for eps in (1e-3, 1e-2, 5e-2)]
    for eps, val in vals:
        assert val <= 5.0 * eps ** 3


# -- locality and planning --------------------------------------------------------


def test_locality_radius_cached(torus):
    patch = get_patch(torus, [0.7, 0.2, 0.9])
    r1 = locality_radius(torus, patch, seed=3)
    r2 = locality_radius(torus, patch, seed=99)  # cached, seed ignored
    assert r1 == r2
    assert 0.0 < r1 <= patch.radius


def test_plan_identity(torus):
    ctrl, report = plan(torus, [0.4, 0.4, 0.4], [0.4, 0.4, 0.4])
    assert ctrl.is_zero()
    assert report.legs == 1


def test_plan_antipodal(torus):
    target = np.array([0.5, 0.5, 0.5])
    ctrl, report = plan(torus, ORIGIN, target, budget=12)
    validate(ctrl)
    traj = solve(torus, ORIGIN, ctrl, steps_per_piece=64)
    assert torus.distance(traj.endpoint_wrapped, target) <= 1e-5
    assert report.legs >= 2
    assert verify_inclusion(torus, traj).passed


def test_plan_budget_exceeded(torus):
    with pytest.raises(BudgetExceeded):
        plan(torus, ORIGIN, [0.5, 0.5, 0.5], budget=0)


def test_section_stored_values_match_evaluation(torus):
    x, y = ORIGIN, np.array([0.0, 0.01, 0.01])
    ctrl = section(torus, x, y)
    for piece in ctrl.pieces:
        t = 0.5 * (piece.t0 + piece.t1)
        val = evaluate(ctrl, t)
        assert val[0] == pytest.approx(piece.xi ** 2, abs=1e-15)
