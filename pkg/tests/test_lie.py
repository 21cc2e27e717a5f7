import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from modqp import lie
from modqp.errors import MalformedInputError
from modqp.lie import Transform

from oracles import expm_twist

finite = st.floats(-3.0, 3.0, allow_nan=False)
vec3 = arrays(float, 3, elements=finite)
vec6 = arrays(float, 6, elements=finite)


def unit_revolute(axis, point):
    if np.linalg.norm(axis) < 1e-3:
        axis = np.array([0.0, 0.0, 1.0])
    return lie.revolute_twist(axis, point)


@given(vec6)
def test_hat_vee_round_trip(xi):
    assert np.allclose(lie.vee(lie.hat(xi)), xi, atol=0)


def test_vee_rejects_non_se3():
    with pytest.raises(MalformedInputError):
        lie.vee(np.eye(3))
    m = lie.hat([1, 2, 3, 0.1, 0.2, 0.3])
    m[0, 1] += 1e-6
    with pytest.raises(MalformedInputError):
        lie.vee(m)
    m = lie.hat([1, 2, 3, 0.1, 0.2, 0.3])
    m[3, 2] = 1.0
    with pytest.raises(MalformedInputError):
        lie.vee(m)


@settings(max_examples=200)
@given(vec3, vec3, st.floats(-6.0, 6.0))
def test_exp_matches_matrix_exponential(axis, point, theta):
    xi = unit_revolute(axis, point)
    g = lie.exp_twist(xi, theta)
    assert np.allclose(g.matrix(), expm_twist(xi, theta), atol=1e-9)


@given(vec3, st.floats(-2.0, 2.0))
def test_prismatic_exp_is_translation(direction, d):
    if np.linalg.norm(direction) < 1e-3:
        direction = np.array([1.0, 0.0, 0.0])
    xi = lie.prismatic_twist(direction)
    g = lie.exp_twist(xi, d)
    assert np.allclose(g.rotation, np.eye(3))
    assert np.allclose(g.translation, xi[:3] * d)


def test_exp_at_zero_is_identity():
    xi = lie.revolute_twist([0, 0, 1], [1, 2, 3])
    assert lie.exp_twist(xi, 0.0).allclose(Transform.identity())


def test_quarter_turn_about_offset_axis():
    # rotating the origin a quarter turn about z through (1, 0, 0) lands on (1, -1, 0)
    g = lie.exp_twist(lie.revolute_twist([0, 0, 1], [1, 0, 0]), np.pi / 2)
    assert np.allclose(g @ np.zeros(3), [1.0, -1.0, 0.0])


@settings(max_examples=100)
@given(vec3, vec3, st.floats(-3, 3), vec6)
def test_adjoint_conjugates_twists(axis, point, theta, xi):
    g = lie.exp_twist(unit_revolute(axis, point), theta) @ Transform.from_translation(point)
    lhs = lie.hat(lie.adjoint(g) @ xi)
    rhs = g.matrix() @ lie.hat(xi) @ g.inverse().matrix()
    assert np.allclose(lhs, rhs, atol=1e-9)


@given(vec3, vec3, st.floats(-3, 3), vec3, st.floats(-3, 3))
def test_adjoint_is_a_homomorphism(a1, p1, t1, a2, t2):
    g = lie.exp_twist(unit_revolute(a1, p1), t1)
    h = lie.exp_twist(unit_revolute(a2, p1), t2) @ Transform.from_translation(p1)
    assert np.allclose(lie.adjoint(g @ h), lie.adjoint(g) @ lie.adjoint(h), atol=1e-9)


@given(vec6, vec3)
def test_point_velocity_map_matches_hat(twist, p):
    expected = (lie.hat(twist) @ np.append(p, 1.0))[:3]
    assert np.allclose(lie.point_velocity_map(p) @ twist, expected, atol=1e-12)


@given(vec3, vec3, st.floats(-3, 3))
def test_inverse_composes_to_identity(axis, point, theta):
    g = lie.exp_twist(unit_revolute(axis, point), theta) @ Transform.from_translation(point)
    assert (g @ g.inverse()).allclose(Transform.identity())
    assert (g.inverse() @ g).allclose(Transform.identity())


def test_composition_re_orthonormalizes_drift():
    r = lie.rotation_about([0, 0, 1], 0.3) * (1 + 1e-5)
    g = Transform(r, [0, 0, 0]) @ Transform.identity()
    assert np.allclose(g.rotation.T @ g.rotation, np.eye(3), atol=1e-12)


def test_transform_is_read_only():
    g = Transform.identity()
    with pytest.raises(ValueError):
        g.translation[0] = 1.0


def test_unit_screw_check():
    assert lie.is_unit_screw(lie.revolute_twist([1, 1, 0], [0, 0, 1]))
    assert lie.is_unit_screw(lie.prismatic_twist([0, 3, 0]))
    assert not lie.is_unit_screw([0, 0, 0, 0, 0, 2.0])
