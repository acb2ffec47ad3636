import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from skelfit.exceptions import DegenerateRotation
from skelfit.geomcore import (
    AxisAngle,
    Camera,
    Quat,
    RigidTransform,
    axis_angle_to_quat,
    convert_chart,
    matrix_to_quat,
    normalize_quat,
    project,
    quat_to_axis_angle,
    quat_to_matrix,
    rodrigues_to_matrix,
)
from skelfit.gradcheck import probe

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)
quats = arrays(np.float64, 4, elements=finite).filter(lambda q: np.linalg.norm(q) > 1e-3)
small_rotvecs = arrays(np.float64, 3, elements=st.floats(-1.8, 1.8)).filter(lambda v: np.linalg.norm(v) < np.pi - 1e-3)


def test_identity_quaternion():
    assert np.array_equal(quat_to_matrix([1.0, 0, 0, 0]), np.eye(3))


def test_half_turn_about_z():
    np.testing.assert_allclose(quat_to_matrix([0, 0, 0, 1.0]), np.diag([-1.0, -1.0, 1.0]), atol=1e-15)


def test_zero_quaternion_rejected():
    with pytest.raises(DegenerateRotation):
        quat_to_matrix(np.zeros(4))
    with pytest.raises(DegenerateRotation):
        Quat(0, 0, 0, 0)


@given(quats)
def test_quaternion_matrix_is_rotation(q):
    R = quat_to_matrix(q)
    np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-12)
    assert abs(np.linalg.det(R) - 1.0) < 1e-12


@given(quats)
def test_normalization_is_folded_in(q):
    # equal up to the rounding of one extra division
    np.testing.assert_allclose(quat_to_matrix(q), quat_to_matrix(q / np.linalg.norm(q)), rtol=0, atol=2e-15)
    np.testing.assert_allclose(quat_to_matrix(q), quat_to_matrix(normalize_quat(q)), rtol=0, atol=2e-15)


def test_normalized_quaternion_has_unit_norm(rng):
    q = normalize_quat(rng.standard_normal((200, 4)) * 50)
    assert np.all(np.abs(np.linalg.norm(q, axis=1) - 1) < 1e-12)


def test_rodrigues_identity_and_half_turn():
    assert np.array_equal(rodrigues_to_matrix(np.zeros(3)), np.eye(3))
    np.testing.assert_allclose(rodrigues_to_matrix([np.pi, 0, 0]), np.diag([1.0, -1.0, -1.0]), atol=1e-15)


def test_rodrigues_matches_quaternion_path(rng):
    v = rng.standard_normal((500, 3)) * rng.uniform(0, 3, (500, 1))
    np.testing.assert_allclose(rodrigues_to_matrix(v), quat_to_matrix(axis_angle_to_quat(v)), rtol=0, atol=1e-10)


def test_rodrigues_series_branch_is_continuous():
    for scale in (0.9e-4, 1.1e-4):
        v = np.array([0.3, -0.5, 0.8]) * scale
        np.testing.assert_allclose(rodrigues_to_matrix(v), quat_to_matrix(axis_angle_to_quat(v)), atol=1e-15)


@given(small_rotvecs)
def test_matrix_quaternion_round_trip(v):
    R = rodrigues_to_matrix(v)
    np.testing.assert_allclose(quat_to_matrix(matrix_to_quat(R)), R, rtol=0, atol=1e-10)
    np.testing.assert_allclose(quat_to_axis_angle(axis_angle_to_quat(v)), v, atol=1e-10)


def test_chart_conversion_round_trip(rng):
    q = normalize_quat(rng.standard_normal((50, 4)))
    v = convert_chart(q, "quaternion", "rodrigues")
    np.testing.assert_allclose(quat_to_matrix(convert_chart(v, "rodrigues", "quaternion")), quat_to_matrix(q), atol=1e-12)


@pytest.mark.parametrize("fn,dim", [(quat_to_matrix, 4), (rodrigues_to_matrix, 3)])
def test_rotation_jacobians_match_finite_differences(fn, dim, rng):
    for i in range(100):
        x0 = rng.standard_normal(dim)
        if dim == 3 and i % 10 == 0:
            x0 *= 1e-5  # series branch
        W = rng.standard_normal((3, 3))
        _, J = fn(x0, jacobian=True)
        g = np.einsum("ab,abk->k", W, J)
        assert probe(lambda x: float(np.sum(W * fn(x))), x0, g, rng, n_coords=dim, n_dirs=1) < 1e-5


def test_project_examples():
    np.testing.assert_allclose(project([0, 0, 5], Camera(1, 0, 0)), [0, 0])
    np.testing.assert_allclose(project([1, 2, 0], Camera(2, 0.5, -1)), [3, 2])


@given(arrays(np.float64, 3, elements=finite), st.floats(0.1, 5), st.floats(0.1, 5), finite, finite)
def test_project_linear_in_camera(X, s, k, tx, ty):
    base = project(X, Camera(s, tx, ty))
    np.testing.assert_allclose(project(X, Camera(k * s, tx, ty)), k * base, rtol=1e-12, atol=1e-12)
    shifted = project(X, Camera(s, tx + 1.0, ty - 2.0))
    np.testing.assert_allclose(shifted - base, [s, -2 * s], rtol=1e-9, atol=1e-9)


def test_project_camera_jacobian(rng):
    X = rng.standard_normal((5, 3))
    cam = np.array([1.3, 0.2, -0.4])
    _, J = project(X, cam, jacobian=True)
    h = 1e-6
    for k in range(3):
        e = np.eye(3)[k] * h
        fd = (project(X, cam + e) - project(X, cam - e)) / (2 * h)
        np.testing.assert_allclose(J[..., k], fd, atol=1e-9)


def test_camera_scale_must_be_positive():
    with pytest.raises(ValueError):
        Camera(0.0, 0, 0)


def test_rigid_transform_compose_associative(rng):
    def rand():
        w, x, y, z = rng.standard_normal(4)
        return RigidTransform(Quat(w, x, y, z), tuple(rng.standard_normal(3)), float(rng.uniform(0.5, 2)))

    a, b, c = rand(), rand(), rand()
    X = rng.standard_normal((7, 3))
    np.testing.assert_allclose(a.compose(b).compose(c).apply(X), a.compose(b.compose(c)).apply(X), atol=1e-12)
    np.testing.assert_allclose(a.inverse().apply(a.apply(X)), X, atol=1e-12)


def test_axis_angle_type():
    aa = AxisAngle(0, 0, np.pi / 2)
    assert aa.angle == pytest.approx(np.pi / 2)
    np.testing.assert_allclose(aa.matrix() @ [1, 0, 0], [0, 1, 0], atol=1e-15)
    with pytest.raises(ValueError):
        RigidTransform(aa, (0, 0, 0), s=-1.0)
