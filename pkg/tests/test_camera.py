import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from diffeye.camera import CameraIntrinsics, project, project_eyeball_center, project_points
from diffeye.errors import BehindCamera, FrameMismatch, InvalidParameter
from diffeye.geometry import Frame, PointCloud, Semantic, SharedEyeParams, canonical_pupil_cloud

from oracles import project_homogeneous

coords = st.floats(-50, 50)
clouds = arrays(np.float64, st.tuples(st.integers(1, 30), st.just(3)), elements=coords).map(
    lambda a: np.column_stack([a[:, 0], a[:, 1], np.abs(a[:, 2]) + 1.0]))


def cam_cloud(pts):
    return PointCloud(np.asarray(pts, float), Frame.CAMERA, Semantic.PUPIL)


def test_optical_axis_maps_to_principal_point():
    K = CameraIntrinsics(123.0, 200, 160)
    np.testing.assert_array_equal(project(cam_cloud([[0, 0, 7.5]]), K).points, [[100, 80]])


def test_hand_evaluation():
    # [DERIVED] f*x/z + W/2 = 100*1/100 + 100
    np.testing.assert_allclose(project(cam_cloud([[1, 0, 100]]), CameraIntrinsics(100, 200, 200)).points,
                               [[101, 100]])


def test_eyeball_centre_projection():
    K = CameraIntrinsics(100, 200, 200)
    assert tuple(project_eyeball_center(SharedEyeParams(12, 6, [0, 0, 30], 100), K)) == (100, 100)
    np.testing.assert_allclose(project_eyeball_center(SharedEyeParams(12, 6, [3, 0, 30], 100), K), [110, 100])
    other = SharedEyeParams(9, 2, [3, 0, 30], 100)
    np.testing.assert_array_equal(project_eyeball_center(other, K),
                                  project_eyeball_center(SharedEyeParams(12, 6, [3, 0, 30], 100), K))


def test_behind_camera_lists_indices():
    with pytest.raises(BehindCamera) as ei:
        project_points(np.array([[0, 0, 1.0], [0, 0, 0.0], [1, 1, -3.0]]), 100, 10, 10)
    assert ei.value.indices == [1, 2]


def test_requires_camera_frame():
    with pytest.raises(FrameMismatch):
        project(canonical_pupil_cloud(1.0, 2.0, 4, 1), CameraIntrinsics(100, 10, 10))


def test_intrinsics_validation():
    with pytest.raises(InvalidParameter):
        CameraIntrinsics(0, 10, 10)
    with pytest.raises(InvalidParameter):
        CameraIntrinsics(10, 0, 10)
    K = CameraIntrinsics(50, 64, 32)
    assert K.matrix[0, 2] == 32 and K.matrix[1, 2] == 16


@given(clouds, st.floats(10, 500), st.integers(1, 400), st.integers(1, 400))
def test_matches_homogeneous_oracle(X, f, W, H):
    # [DERIVED] K @ X followed by homogeneous division
    np.testing.assert_allclose(project_points(X, f, W, H), project_homogeneous(X, f, W, H), rtol=1e-12, atol=1e-9)


@given(clouds, st.floats(0.01, 100))
def test_scale_covariance(X, s):
    np.testing.assert_allclose(project_points(s * X, 100, 64, 64), project_points(X, 100, 64, 64),
                               rtol=1e-12, atol=1e-9)


@given(clouds, st.floats(10, 500))
def test_linear_in_f(X, f):
    c = np.array([32.0, 32.0])
    a = project_points(X, f, 64, 64) - c
    b = project_points(X, 2 * f, 64, 64) - c
    np.testing.assert_allclose(b, 2 * a, rtol=1e-12, atol=1e-9)


@given(clouds)
def test_order_and_cardinality(X):
    out = project(cam_cloud(X), CameraIntrinsics(100, 64, 64))
    assert len(out) == len(X) and out.semantic_tag is Semantic.PUPIL
    for i in range(len(X)):
        np.testing.assert_allclose(out.points[i], project_points(X[i:i + 1], 100, 64, 64)[0])
