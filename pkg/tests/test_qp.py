import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from modqp import qp
from modqp.errors import InfeasibleJointError
from modqp.kinematics import Base, Connection, ConfigurationGraph, RobotModel, build_kinematics_graph
from modqp.modules import bundled_library
from modqp.qp import StepProgram, TuningConfig, assemble, control_rows, limit_bounds, solve

from oracles import brute_force_qp, kkt_check, random_qp

LIB = bundled_library()


def program(H, f, A=None, b=None, G=None, h=None, lo=None, hi=None):
    n = len(f)
    H = np.asarray(H, dtype=float)
    f = np.asarray(f, dtype=float)
    A = np.zeros((0, n)) if A is None else np.asarray(A, dtype=float)
    b = np.zeros(0) if b is None else np.asarray(b, dtype=float)
    G = np.zeros((0, n)) if G is None else np.asarray(G, dtype=float)
    h = np.zeros(0) if h is None else np.asarray(h, dtype=float)
    lo = np.full(n, -np.inf) if lo is None else np.asarray(lo, dtype=float)
    hi = np.full(n, np.inf) if hi is None else np.asarray(hi, dtype=float)
    return StepProgram(H, f, A, b, G, h, lo, hi)


def test_unconstrained_minimum_norm_is_zero():
    sol = solve(program(np.eye(3), np.zeros(3)))
    assert sol.ok and np.allclose(sol.theta_dot, 0.0)


def test_single_equality():
    sol = solve(program(np.eye(2), [0, 0], A=[[1, 1]], b=[1]))
    assert sol.ok and np.allclose(sol.theta_dot, [0.5, 0.5])
    assert np.isclose(sol.eq_dual[0], -0.5)


def test_inequality_and_bounds():
    sol = solve(program(np.eye(2), [-2, -2], G=[[1, 1]], h=[1], hi=[0.2, 10]))
    assert sol.ok
    assert np.allclose(sol.theta_dot, [0.2, 0.8])
    assert sol.ineq_dual[0] > 0 and sol.upper_dual[0] > 0
    assert sol.kkt_residual < 1e-10


def test_minimum_norm_matches_pseudoinverse():
    rng = np.random.default_rng(1)
    J = rng.normal(size=(3, 7))
    rhs = rng.normal(size=3)
    sol = solve(program(np.eye(7), np.zeros(7), A=J, b=rhs))
    assert np.allclose(sol.theta_dot, np.linalg.pinv(J) @ rhs, atol=1e-10)


def test_matches_brute_force_enumeration():
    rng = np.random.default_rng(5)
    for _ in range(150):
        H, f, A, b, G, h, lo, hi = random_qp(rng)
        sol = solve(program(H, f, A, b, G, h, lo, hi))
        ref = brute_force_qp(H, f, A, b, G, h, lo, hi)
        assert sol.ok and ref is not None
        assert np.allclose(sol.theta_dot, ref, atol=1e-8)
        assert kkt_check(H, f, A, b, G, h, lo, hi, sol.theta_dot, sol.eq_dual, sol.ineq_dual,
                         sol.lower_dual, sol.upper_dual) < 1e-8


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.01, 100.0))
def test_objective_scaling_leaves_solution_unchanged(seed, c):
    H, f, A, b, G, h, lo, hi = random_qp(np.random.default_rng(seed))
    x1 = solve(program(H, f, A, b, G, h, lo, hi)).theta_dot
    x2 = solve(program(c * H, c * f, A, b, G, h, lo, hi)).theta_dot
    assert np.allclose(x1, x2, atol=1e-7)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_redundant_equalities_are_tolerated(seed):
    H, f, A, b, G, h, lo, hi = random_qp(np.random.default_rng(seed))
    if len(b) == 0:
        return
    A2, b2 = np.vstack([A, 2 * A[:1]]), np.append(b, 2 * b[0])
    x1 = solve(program(H, f, A, b, G, h, lo, hi)).theta_dot
    sol = solve(program(H, f, A2, b2, G, h, lo, hi))
    assert sol.ok and np.allclose(sol.theta_dot, x1, atol=1e-8)


def test_infeasible_rows_give_certificate():
    sol = solve(program(np.eye(1), [0], G=[[1], [-1]], h=[-1, -1]))
    assert sol.status == "infeasible"
    cert = sol.certificate
    assert cert["kind"] == "dependent-rows"
    assert set(cert["combination"]) | {cert["row"]} == {0, 1}


def test_inconsistent_equalities():
    sol = solve(program(np.eye(2), [0, 0], A=[[1, 0], [1, 0]], b=[1, 2]))
    assert sol.status == "infeasible"


def test_crossing_bounds_certificate():
    sol = solve(program(np.eye(2), [0, 0], lo=[0, 1], hi=[1, 0]))
    assert sol.status == "infeasible"
    assert sol.certificate == {"kind": "bound-crossing", "variable": 1, "lo": 1.0, "hi": 0.0}


def test_iteration_cap():
    rng = np.random.default_rng(2)
    G = rng.normal(size=(30, 4))
    sol = solve(program(np.eye(4), -10 * np.ones(4), G=G, h=np.full(30, 0.1)), max_iter=1)
    assert sol.status == "max-iterations"


def test_non_positive_definite_hessian():
    with pytest.raises(ValueError, match="positive definite"):
        solve(program(np.diag([1.0, -1.0]), [0, 0]))


def test_control_rows_feedback():
    vm = np.random.default_rng(0).normal(size=(1, 3, 4))
    m, rhs = control_rows(vm, np.zeros((1, 3)), [([0.1, 0, 0], np.zeros(3))], [np.eye(3)])
    assert np.allclose(rhs, [0.1, 0, 0])
    assert np.array_equal(m, vm[0])
    _, rhs = control_rows(vm, np.ones((1, 3)), [(np.ones(3), np.zeros(3))], [np.eye(3)])
    assert np.all(rhs == 0)


def test_limit_bounds():
    pos = [[-1.0, 1.0]] * 3
    vel = [[-2.0, 2.0]] * 3
    lo, hi, lo_tags, hi_tags = limit_bounds([0.0, 1.0, -0.95], pos, vel, 0.05)
    assert np.allclose(lo, [-2.0, -2.0, -1.0])
    assert np.allclose(hi, [2.0, 0.0, 2.0])
    assert lo_tags == ["joint-vel-limit", "joint-vel-limit", "joint-pos-limit"]
    assert hi_tags[1] == "joint-pos-limit"
    lo2, hi2, _, _ = limit_bounds([0.0], [[-1, 1]], [[-2, 2]], 1e-4)
    assert np.allclose([lo2[0], hi2[0]], [-2, 2])


def test_limit_bounds_out_of_range_joint():
    with pytest.raises(InfeasibleJointError) as exc:
        limit_bounds([0.0, 1.2], [[-1, 1]] * 2, [[-0.5, 0.5]] * 2, 0.05, names=["a", "b"])
    assert exc.value.joint == "b"


def two_ubar_model():
    config = ConfigurationGraph((("m1", "ckbot-ubar"), ("m2", "ckbot-ubar")),
                                (Connection("m1", "T", "m2", "B", 0),), Base("m1", "B"))
    return RobotModel(build_kinematics_graph(config, LIB), ["m2.T"])


def test_hard_mode_structure():
    model = two_ubar_model()
    state = model.evaluate([0.2, 0.3])
    desired = [(state.goal_positions[0] + [0, 0.01, 0], np.zeros(3))]
    prog = assemble(state, desired, TuningConfig(mode="hard"), model)
    assert np.array_equal(prog.H, np.eye(2))
    assert prog.A.shape == (3, 2) and prog.G.shape == (0, 2)
    assert prog.eq_tags == ["control-goal"] * 3
    assert np.allclose(prog.A, state.goal_velocity_maps[0])


def test_soft_mode_objective():
    model = two_ubar_model()
    state = model.evaluate([0.2, 0.3])
    desired = [(state.goal_positions[0] + [0, 0.01, 0], np.zeros(3))]
    tuning = TuningConfig(tracking_weight=50.0)
    prog = assemble(state, desired, tuning, model)
    m, rhs = control_rows(state.goal_velocity_maps, state.goal_positions, desired, tuning.gain_matrix)
    assert np.allclose(prog.H, np.eye(2) + 100.0 * m.T @ m)
    assert np.allclose(prog.f, -100.0 * m.T @ rhs)
    assert prog.A.shape == (0, 2)


def test_soft_approaches_hard_for_large_weight():
    model = two_ubar_model()
    # away from the straight singularity so the tracking rows are well conditioned
    state = model.evaluate([0.5, 1.2])
    desired = [(state.goal_positions[0] + [0, 0.01, 0.002], np.zeros(3))]
    hard = solve(assemble(state, desired, TuningConfig(mode="hard"), model))
    soft = solve(assemble(state, desired, TuningConfig(tracking_weight=1e6), model))
    assert hard.ok and soft.ok
    assert np.linalg.norm(soft.theta_dot - hard.theta_dot) < 1e-3
    lighter = solve(assemble(state, desired, TuningConfig(tracking_weight=1e3), model))
    assert np.linalg.norm(lighter.theta_dot - hard.theta_dot) > np.linalg.norm(soft.theta_dot - hard.theta_dot)


def test_boundary_and_obstacle_rows_are_tagged():
    from modqp.environment import BoundaryPolyhedron
    model = two_ubar_model()
    state = model.evaluate([0.2, 0.3])
    desired = [(state.goal_positions[0], np.zeros(3))]
    poly = BoundaryPolyhedron.from_aabb([-1, -1, -1], [1, 1, 1])
    p2 = state.module_positions[1]
    centers = np.array([p2 + [0, 0.2, 0], p2 + [0, 0, 0.035 + 0.02 + 0.002]])
    kept = [(np.zeros(0, int), np.zeros((0, 3)), np.zeros(0)), (np.array([0, 1]), centers, np.array([0.02, 0.02]))]
    prog = assemble(state, desired, TuningConfig(), model, boundary=poly, kept=kept,
                    prev_theta_dot=np.array([1.0, 1.0]))
    # m1 has no upstream joint and m2 moves in the y-z plane, so only four faces give non-zero rows
    assert prog.ineq_tags.count("boundary") == 4
    assert all(info[0] == "m2" for info in prog.ineq_info)
    assert prog.ineq_tags[-2:] == ["obstacle", "repulsive"]
    assert prog.h[-1] < 0


def test_proximity_penalty_is_rank_one():
    model = two_ubar_model()
    state = model.evaluate([0.2, 0.3])
    desired = [(state.goal_positions[0], np.zeros(3))]
    p2 = state.module_positions[1]
    tuning = TuningConfig()
    d_min = 2 * 0.035
    center = p2 + [0, 0.035 + 0.02 + d_min - 0.01, 0]
    kept = [(np.zeros(0, int), np.zeros((0, 3)), np.zeros(0)), (np.array([0]), center[None], np.array([0.02]))]
    with_sphere = assemble(state, desired, tuning, model, kept=kept)
    without = assemble(state, desired, tuning, model)
    a = np.array([0, 1.0, 0]) @ state.module_velocity_maps[1]
    assert np.allclose(with_sphere.H - without.H, 2 * tuning.proximity_weight * np.outer(a, a))
    hard = TuningConfig(mode="hard")
    assert np.allclose(assemble(state, desired, hard, model, kept=kept).H, np.eye(2))


def test_repulsive_row_is_effective():
    model = two_ubar_model()
    state = model.evaluate([0.2, 0.3])
    p2 = state.module_positions[1]
    desired = [(state.goal_positions[0] + [0, 0.05, 0], np.zeros(3))]
    center = p2 + [0, 0.035 + 0.02 + 0.001, 0]
    kept = [(np.zeros(0, int), np.zeros((0, 3)), np.zeros(0)), (np.array([0]), center[None], np.array([0.02]))]
    prog = assemble(state, desired, TuningConfig(), model, kept=kept, prev_theta_dot=np.array([0.5, 0.5]))
    sol = solve(prog)
    assert sol.ok
    v = state.module_velocity_maps[1] @ sol.theta_dot
    assert v[1] <= prog.h[-1] + 1e-12 < 0


def test_dump_program_is_json(tmp_path):
    prog = program(np.eye(2), [0, 0], A=[[1, 1]], b=[1], lo=[-np.inf, 0])
    sol = solve(prog)
    qp.dump_program(tmp_path / "p.json", prog, sol, step=3)
    data = json.loads((tmp_path / "p.json").read_text())
    assert data["step"] == 3
    assert data["program"]["lo"][0] == "-inf"
    assert data["solution"]["status"] == "optimal"


def test_tuning_validation():
    with pytest.raises(ValueError):
        TuningConfig(mode="loose")
    with pytest.raises(ValueError):
        TuningConfig(dt=0.0)
    with pytest.raises(ValueError):
        TuningConfig(gains=[[1, 1]])
    t = TuningConfig(gains=[[1, 2, 3], [4, 5, 6]])
    assert np.array_equal(t.gain_matrix(1), np.diag([4.0, 5, 6]))
    assert np.array_equal(t.gain_matrix(5), np.diag([4.0, 5, 6]))
