import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.spatial.transform import Rotation

from mocapclean import quat


def random_unit_quats(n, seed=0):
    rng = np.random.default_rng(seed)
    q = rng.normal(size=(n, 4))
    return quat.normalize(q)


unit_quat = st.builds(
    lambda v: quat.normalize(np.array(v)),
    st.tuples(*[st.floats(-1, 1).filter(lambda x: abs(x) > 1e-3)] * 4),
)


def test_multiply_matches_scipy():
    a = random_unit_quats(50, seed=1)
    b = random_unit_quats(50, seed=2)
    ours = quat.multiply(a, b)
    ra = Rotation.from_quat(a, scalar_first=True)
    rb = Rotation.from_quat(b, scalar_first=True)
    theirs = (ra * rb).as_quat(scalar_first=True)
    # sign of q is arbitrary
    sign = np.sign(np.sum(ours * theirs, axis=1, keepdims=True))
    assert np.allclose(ours, theirs * sign, atol=1e-12)


def test_rotate_matches_matrix():
    q = random_unit_quats(30, seed=3)
    v = np.random.default_rng(4).normal(size=(30, 3))
    expected = np.einsum("nij,nj->ni", quat.to_matrix(q), v)
    assert np.allclose(quat.rotate(q, v), expected, atol=1e-12)


def test_matrix_round_trip():
    q = random_unit_quats(100, seed=5)
    q[q[:, 0] < 0] *= -1
    back = quat.from_matrix(quat.to_matrix(q))
    assert np.allclose(back, q, atol=1e-10)


def test_rot6d_round_trip():
    q = random_unit_quats(100, seed=6)
    q[q[:, 0] < 0] *= -1
    back = quat.from_rot6d(quat.to_rot6d(q))
    assert np.allclose(back, q, atol=1e-10)


def test_rot6d_degenerate_raises():
    with pytest.raises(ValueError):
        quat.from_rot6d(np.zeros(6))
    with pytest.raises(ValueError):
        quat.from_rot6d(np.array([1.0, 0, 0, 2.0, 0, 0]))  # parallel columns


def test_axis_angle_basics():
    q = quat.from_axis_angle(np.array([0.0, 1.0, 0.0]), np.pi / 2)
    v = quat.rotate(q, np.array([1.0, 0.0, 0.0]))
    assert np.allclose(v, [0.0, 0.0, -1.0], atol=1e-12)


@given(unit_quat, unit_quat)
def test_multiply_preserves_norm(a, b):
    assert abs(np.linalg.norm(quat.multiply(a, b)) - 1.0) < 1e-9


@given(unit_quat)
def test_conjugate_is_inverse(q):
    prod = quat.multiply(q, quat.conjugate(q))
    assert np.allclose(prod, [1, 0, 0, 0], atol=1e-9)


def test_slerp_endpoints_and_midpoint():
    a = quat.from_axis_angle(np.array([0.0, 1.0, 0.0]), 0.0)
    b = quat.from_axis_angle(np.array([0.0, 1.0, 0.0]), np.pi / 2)
    assert np.allclose(quat.slerp(a, b, 0.0), a, atol=1e-12)
    assert np.allclose(quat.slerp(a, b, 1.0), b, atol=1e-12)
    mid = quat.slerp(a, b, 0.5)
    expected = quat.from_axis_angle(np.array([0.0, 1.0, 0.0]), np.pi / 4)
    assert np.allclose(mid, expected, atol=1e-12)


def test_angle_between():
    a = quat.from_axis_angle(np.array([1.0, 0.0, 0.0]), 0.3)
    b = quat.from_axis_angle(np.array([1.0, 0.0, 0.0]), 1.0)
    assert np.isclose(quat.angle_between(a, b), 0.7, atol=1e-12)
