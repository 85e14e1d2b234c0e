import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from contactsteer import (
    AdmissibleControl,
    ControlPiece,
    PiecewiseAffineMap,
    concatenate,
    controls_equal,
    evaluate,
    load_control,
    lp_distance,
    lp_norm,
    reparametrize,
    save_control,
    truncation_homotopy,
    validate,
)
from contactsteer.errors import (
    AdmissibilityViolation,
    BoundMismatch,
    NonMonotone,
    OutOfDomain,
)

K = 2.0
D = 2


def constant_control(xi, alpha_vec, n=8):
    return AdmissibleControl.constant(xi, alpha_vec, K, n_samples=n)


def two_piece_control():
    pieces = [
        ControlPiece(0.0, 0.5, 1.0, np.tile([1.0, 0.0], (4, 1))),
        ControlPiece(0.5, 1.0, 0.0, np.zeros((2, D))),
    ]
    return AdmissibleControl(pieces, K, D)


# -- evaluation ---------------------------------------------------------------


def test_evaluate_zero():
    u = AdmissibleControl.zero(D, K)
    for t in (0.0, 0.25, 1.0):
        assert np.array_equal(evaluate(u, t), np.zeros(D + 1))


def test_evaluate_forced_values():
    u = constant_control(2.0, [1.0, 0.0])
    assert np.allclose(evaluate(u, 0.5), [4.0, 2.0, 0.0], atol=1e-15)


def test_evaluate_boundary_right_piece():
    u = two_piece_control()
    assert np.array_equal(evaluate(u, 0.5), np.zeros(D + 1))
    assert np.allclose(evaluate(u, 0.5 - 1e-9), [1.0, 1.0, 0.0])


def test_evaluate_out_of_domain():
    u = AdmissibleControl.zero(D, K)
    with pytest.raises(OutOfDomain):
        evaluate(u, 1.5)
    with pytest.raises(OutOfDomain):
        evaluate(u, -0.2)


# -- concatenation ------------------------------------------------------------


def test_concatenate_zero_zero():
    z = AdmissibleControl.zero(D, K)
    both = concatenate(z, z)
    validate(both)
    assert both.is_zero()
    assert np.allclose(both.breakpoints, [0.0, 0.5, 1.0])


def test_concatenate_piece_counts():
    u = two_piece_control()
    v = constant_control(1.0, [0.0, 1.0])
    assert len(concatenate(u, v).pieces) == len(u.pieces) + len(v.pieces)


def test_concatenate_lp_average():
    u = constant_control(1.0, [1.0, 0.0])
    v = constant_control(0.5, [0.0, 1.5])
    for p in (1.0, 2.0, 3.0):
        lhs = lp_norm(concatenate(u, v), p) ** p
        rhs = 0.5 * (lp_norm(u, p) ** p + lp_norm(v, p) ** p)
        assert math.isclose(lhs, rhs, rel_tol=1e-12)


def test_concatenate_bound_mismatch():
    u = AdmissibleControl.zero(D, K)
    v = AdmissibleControl.zero(D, K + 1.0)
    with pytest.raises(BoundMismatch):
        concatenate(u, v)


def test_concatenate_rates_double():
    u = constant_control(1.0, [1.0, 0.0])
    both = concatenate(u, u)
    assert all(p.rate == 2.0 for p in both.pieces)


# -- metrics ------------------------------------------------------------------


def test_lp_distance_self_zero():
    u = two_piece_control()
    assert lp_distance(u, u, 2.0) == 0.0


def test_lp_distance_constant():
    u = constant_control(1.0, [0.0, 0.0])
    z = AdmissibleControl.zero(D, K)
    assert math.isclose(lp_distance(u, z, 2.0), 1.0, rel_tol=1e-12)


def test_lp_distance_truncation_one_norm():
    u = constant_control(1.0, [K, 0.0])
    v = truncation_homotopy(u, 0.5)
    val = lp_distance(u, v, 1.0, norm="one")
    assert math.isclose(val, (1.0 + K) / 2.0, rel_tol=1e-12)


def test_lp_continuity_of_concatenation():
    # u_n -> u implies u_n * v -> u * v in the L^p metric.
    v = constant_control(1.0, [0.0, 1.0])
    u = constant_control(1.0, [1.0, 0.0])
    last = math.inf
    for n in range(1, 6):
        un = constant_control(1.0, [1.0 + 2.0 ** -n, 0.0])
        dist = lp_distance(concatenate(un, v), concatenate(u, v), 2.0)
        assert dist < last
        last = dist
    assert last <= 2.0 ** -5


# -- truncation ---------------------------------------------------------------


def test_truncation_endpoints():
    u = two_piece_control()
    assert controls_equal(truncation_homotopy(u, 0.0), u)
    z = truncation_homotopy(u, 1.0)
    assert z.is_zero() and len(z.pieces) == 1


def test_truncation_tail_integral():
    u = constant_control(1.0, [1.0, 0.5])
    magnitude = float(np.linalg.norm(evaluate(u, 0.3)))
    for s in (0.25, 0.5, 0.75):
        val = lp_distance(truncation_homotopy(u, s), u, 2.0) ** 2
        assert math.isclose(val, s * magnitude ** 2, rel_tol=1e-10)


def test_truncation_monotone_vanishing():
    u = constant_control(1.0, [1.0, 0.5])
    dists = [
        lp_distance(truncation_homotopy(u, s), u, 1.0)
        for s in (0.8, 0.4, 0.2, 0.1, 0.05)
    ]
    assert all(a > b for a, b in zip(dists, dists[1:]))


# -- reparametrization --------------------------------------------------------


def test_reparametrize_identity():
    u = two_piece_control()
    out = reparametrize(u, PiecewiseAffineMap.identity())
    for t in np.linspace(0, 1, 33):
        assert np.allclose(evaluate(out, t), evaluate(u, t), atol=1e-12)


def test_reparametrize_quarter_extraction():
    # phi(t) = (t+1)/4 applied to (0*u)*0 recovers u at the data level.
    u = two_piece_control()
    z = AdmissibleControl.zero(D, K)
    wrapped = concatenate(concatenate(z, u), z)
    out = reparametrize(wrapped, PiecewiseAffineMap.affine(0.25, 0.5))
    assert controls_equal(out, u, atol=1e-12)


def test_reparametrize_left_half_zero():
    u = two_piece_control()
    z = AdmissibleControl.zero(D, K)
    out = reparametrize(concatenate(z, u), PiecewiseAffineMap.affine(0.0, 0.5))
    assert out.is_zero()


def test_reparametrize_non_monotone():
    with pytest.raises(NonMonotone):
        PiecewiseAffineMap((0.0, 0.5, 1.0), (0.0, 0.8, 0.4))


def test_reparametrize_rate_slope_product():
    u = constant_control(1.0, [1.0, 0.0])
    out = reparametrize(u, PiecewiseAffineMap.affine(0.0, 0.5))
    assert all(math.isclose(p.rate, 0.5) for p in out.pieces)


# -- validation ---------------------------------------------------------------


def test_validator_rejects_bound_violation():
    piece = ControlPiece(0.0, 1.0, 1.0, np.tile([K + 0.1, 0.0], (2, 1)))
    with pytest.raises(AdmissibilityViolation):
        validate(AdmissibleControl([piece], K, D))


def test_validator_rejects_negative_xi():
    piece = ControlPiece(0.0, 1.0, -1.0, np.zeros((2, D)))
    with pytest.raises(AdmissibilityViolation):
        validate(AdmissibleControl([piece], K, D))


def test_frame_channel_bound():
    u = constant_control(1.5, [K / 2.0, K / 2.0])
    validate(u)
    for t in np.linspace(0, 1, 17):
        val = evaluate(u, t)
        assert np.linalg.norm(val[1:]) <= u.pieces[0].xi * K + 1e-12


@st.composite
def controls(draw):
    n_pieces = draw(st.integers(1, 3))
    breaks = sorted(
        draw(
            st.lists(
                st.floats(0.05, 0.95), min_size=n_pieces - 1, max_size=n_pieces - 1,
                unique=True,
            )
        )
    )
    edges = [0.0] + breaks + [1.0]
    pieces = []
    for k in range(n_pieces):
        xi = draw(st.floats(0.0, 1.5))
        a = draw(st.floats(-1.0, 1.0))
        b = draw(st.floats(-1.0, 1.0))
        alpha = np.tile([a, b], (3, 1))
        pieces.append(ControlPiece(edges[k], edges[k + 1], xi, alpha))
    return AdmissibleControl(pieces, K, D)


@settings(max_examples=40, deadline=None)
@given(controls(), controls(), st.floats(0.05, 0.95))
def test_operations_preserve_admissibility(u, v, s):
    validate(u)
    validate(v)
    validate(concatenate(u, v))
    validate(truncation_homotopy(u, s))
    validate(reparametrize(u, PiecewiseAffineMap((0.0, s, 1.0), (0.0, s * s, 1.0))))


# -- serialization ------------------------------------------------------------


def test_save_load_bit_exact(tmp_path):
    pieces = [
        ControlPiece(0.0, 1.0 / 3.0, math.pi / 3.0,
                     np.array([[0.1, -0.7], [1.3, 0.2], [-0.5, 0.9]]), rate=2.0),
        ControlPiece(1.0 / 3.0, 1.0, 0.0, np.zeros((2, D))),
    ]
    u = AdmissibleControl(pieces, K, D, meta={"kind": "test", "target": [0.1, 0.2, 0.3]})
    path = tmp_path / "control.txt"
    save_control(u, path)
    v = load_control(path)
    assert v.meta == u.meta
    assert controls_equal(u, v, atol=0.0)  # bit-exact round-trip
