import numpy as np
import pytest

from contactsteer import (
    AdmissibleControl,
    ControlPiece,
    Trajectory,
    concatenate,
    endpoint,
    evaluate,
    lp_distance,
    recover_control,
    solve,
    uniform_distance,
    verify_inclusion,
    w1p_distance,
)
from contactsteer.errors import AccuracyLoss, BlowUp, NotHorizontal


def constant_control(structure, xi, alpha_vec):
    return AdmissibleControl.constant(xi, alpha_vec, structure.constants.K)


# -- solve oracles -------------------------------------------------------------


def test_solve_zero_control(torus):
    x = np.array([0.2, 0.4, 0.6])
    traj = solve(torus, x, AdmissibleControl.zero(2, torus.constants.K))
    assert np.allclose(traj.states, x, atol=0.0)
    assert np.array_equal(traj.endpoint, x)


def test_solve_heisenberg_closed_form(heis):
    # u = (1, 0, 1): the field (0, 1, -1 + x/2) is affine with nilpotent
    # linear part, so the exact solution is polynomial: (0, t, -t) from 0.
    u = constant_control(heis, 1.0, [0.0, 1.0])
    traj = solve(heis, [0, 0, 0], u)
    assert np.allclose(traj.endpoint, [0.0, 1.0, -1.0], atol=1e-12)
    mid = traj.resampled_states(np.array([0.5]))[0]
    assert np.allclose(mid, [0.0, 0.5, -0.5], atol=1e-10)


def test_solve_torus_pure_drift(torus):
    u = constant_control(torus, 1.0, [0.0, 0.0])
    traj = solve(torus, [0, 0, 0], u)
    assert np.allclose(traj.endpoint, [-1.0, 0.0, 0.0], atol=1e-10)
    assert np.allclose(torus.delta(traj.endpoint_wrapped, [0, 0, 0]), 0.0, atol=1e-10)


def test_solve_determinism(torus):
    u = constant_control(torus, 0.7, [0.5, -0.3])
    a = solve(torus, [0.1, 0.2, 0.3], u)
    b = solve(torus, [0.1, 0.2, 0.3], u)
    assert np.array_equal(a.states, b.states)
    assert np.array_equal(a.control_samples, b.control_samples)


def test_solve_blowup():
    import contactsteer as cs

    s = cs.heisenberg(box=4.0)
    s.ensure_constants()
    u = AdmissibleControl.constant(2.0, [0.0, 0.0], s.constants.K)
    with pytest.raises(BlowUp):
        solve(s, [0, 0, 0], u, state_bound=1.0)


def test_solve_error_estimate(torus):
    u = constant_control(torus, 1.0, [0.5, 0.5])
    traj = solve(torus, [0, 0, 0], u, error_estimate=True)
    assert traj.error_estimate is not None and traj.error_estimate < 1e-10
    with pytest.raises(AccuracyLoss):
        solve(torus, [0, 0, 0], u, steps_per_piece=4, error_estimate=True,
              accuracy_tol=1e-16)


# -- endpoint map --------------------------------------------------------------


def test_endpoint_zero(torus):
    x = np.array([0.3, 0.1, 0.9])
    a, b = endpoint(torus, x, AdmissibleControl.zero(2, torus.constants.K))
    assert np.allclose(a, b, atol=0.0)


def test_endpoint_splice_composition(torus):
    # The spliced control traverses each leg at native speed: its endpoint is
    # the second leg's endpoint started from the first leg's endpoint.
    u = constant_control(torus, 0.8, [0.4, 0.0])
    v = constant_control(torus, 0.5, [0.0, 0.6])
    _, via = endpoint(torus, [0.1, 0.0, 0.0], u)
    _, direct = endpoint(torus, via, v)
    _, spliced = endpoint(torus, [0.1, 0.0, 0.0], concatenate(u, v))
    assert torus.distance(spliced, direct) <= 1e-9


# -- inclusion verification ------------------------------------------------------


def test_inclusion_zero_control(torus):
    traj = solve(torus, [0, 0, 0], AdmissibleControl.zero(2, torus.constants.K))
    report = verify_inclusion(torus, traj)
    assert report.passed
    assert report.max_pairing == 0.0


def test_inclusion_generated(heis):
    u = constant_control(heis, 1.2, [1.0, -0.8])
    traj = solve(heis, [0.1, -0.2, 0.0], u)
    report = verify_inclusion(heis, traj)
    assert report.passed
    assert report.max_relative_deviation <= 1e-10


def test_inclusion_flags_forward_transversal(torus):
    # Straight line along the positive form direction: pairing is positive.
    ts = np.linspace(0.0, 1.0, 33)
    states = np.stack([[0.1 * t, 0.0, 0.0] for t in ts])
    traj = Trajectory(
        structure=torus,
        times=ts,
        states=states,
        control_samples=None,
        omega_pairings=None,
    )
    report = verify_inclusion(torus, traj, from_states=True)
    assert not report.passed
    assert report.max_pairing > 0.05


# -- minimal-control recovery -----------------------------------------------------


def test_recover_zero(torus):
    traj = solve(torus, [0.5, 0.5, 0.5], AdmissibleControl.zero(2, torus.constants.K))
    rec = recover_control(torus, traj)
    assert np.allclose(rec, 0.0, atol=1e-12)


def test_recover_heisenberg_roundtrip(heis):
    u = constant_control(heis, 1.0, [0.0, 1.0])
    traj = solve(heis, [0, 0, 0], u, steps_per_piece=1000)
    rec = recover_control(heis, traj)
    expected = np.array([1.0, 0.0, 1.0])
    assert np.max(np.abs(rec - expected)) <= 1e-4


def test_recover_roundtrip_matches_evaluation(torus):
    u = constant_control(torus, 0.9, [0.7, -0.4])
    traj = solve(torus, [0.2, 0.1, 0.8], u, steps_per_piece=400)
    rec = recover_control(torus, traj)
    stored = np.stack([evaluate(u, t) for t in traj.times])
    assert np.max(np.abs(rec - stored)) <= 1e-4


def test_recover_not_horizontal(torus):
    ts = np.linspace(0.0, 1.0, 17)
    states = np.stack([[0.2 * t, 0.0, 0.0] for t in ts])
    traj = Trajectory(torus, ts, states, None, None)
    with pytest.raises(NotHorizontal):
        recover_control(torus, traj)


# -- distances ----------------------------------------------------------------


def test_distances_identical(torus):
    u = constant_control(torus, 0.5, [0.3, 0.3])
    a = solve(torus, [0, 0, 0], u)
    assert uniform_distance(a, a) == 0.0
    assert w1p_distance(a, a, 2.0) == 0.0


def test_uniform_distance_gronwall_slope(torus):
    # Perturb one frame channel; the uniform distance scales linearly.
    base = 0.5
    x = np.array([0.0, 0.0, 0.0])
    u = constant_control(torus, 1.0, [base, 0.0])
    ref = solve(torus, x, u, steps_per_piece=100)
    deltas = [2.0 ** -k for k in range(2, 7)]
    dists = []
    for d in deltas:
        traj = solve(torus, x, constant_control(torus, 1.0, [base + d, 0.0]),
                     steps_per_piece=100)
        dists.append(uniform_distance(ref, traj))
    slope = np.polyfit(np.log(deltas), np.log(dists), 1)[0]
    assert abs(slope - 1.0) <= 0.1
    assert all(a > b for a, b in zip(dists, dists[1:]))


def test_w1p_resampling_tolerance(torus):
    # Same geometric path at different samplings: the gap is pure
    # interpolation error, first order in the step width.
    u = constant_control(torus, 0.8, [0.5, 0.2])
    gaps = []
    for steps in (100, 200, 400):
        a = solve(torus, [0, 0, 0], u, steps_per_piece=steps)
        b = solve(torus, [0, 0, 0], u, steps_per_piece=int(1.6 * steps))
        gaps.append(w1p_distance(a, b, 2.0))
    assert gaps[0] <= 0.05
    assert all(x > y for x, y in zip(gaps, gaps[1:]))
    assert gaps[-1] <= 0.6 * gaps[0]


def test_solution_operator_continuity(torus):
    # Scheduled control perturbations: trajectory distances in the
    # derivative-inclusive metric decrease along the schedule.
    x = np.array([0.1, 0.2, 0.3])
    u = constant_control(torus, 1.0, [1.0, 0.0])
    ref = solve(torus, x, u, steps_per_piece=100)
    dists = []
    for n in range(1, 8):
        un = constant_control(torus, 1.0, [1.0 + 2.0 ** -n, 0.0])
        xn = x + 2.0 ** -n * np.array([1.0, 1.0, 1.0]) / 10.0
        dists.append(w1p_distance(solve(torus, xn, un, steps_per_piece=100), ref, 2.0))
    assert all(a > b for a, b in zip(dists, dists[1:]))
    assert dists[-1] <= 0.05


# -- export --------------------------------------------------------------------


def test_trajectory_csv_roundtrip(tmp_path, torus):
    from contactsteer import trajectory_to_csv

    u = constant_control(torus, 0.6, [0.2, 0.1])
    traj = solve(torus, [0, 0, 0], u, steps_per_piece=20)
    path = tmp_path / "traj.csv"
    trajectory_to_csv(traj, path, {"tol": 1e-8})
    rows = path.read_text().splitlines()
    header = rows[0].split(",")
    assert header == ["t", "x1", "x2", "x3", "u0", "u1", "u2", "omega_dot"]
    first = [float(v) for v in rows[1].split(",")]
    assert first[0] == 0.0
    assert (path.parent / "traj.csv.meta.json").exists()
