"""Rotation geometry tests against independent scipy-based oracles."""

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from trimodal.errors import DegenerateSixDError, ShapeMismatchError
from trimodal.rotgeom import (
    PoseSequence,
    axis_angle_to_matrix,
    geodesic_angle,
    matrix_to_6d,
    pose_angle_error,
    six_d_to_matrix,
)

QUARTER_Z = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])


def random_rotations(n, seed):
    return Rotation.random(n, rng=np.random.default_rng(seed)).as_matrix()


class TestAxisAngleToMatrix:
    def test_zero_rotation_is_identity(self):
        assert np.array_equal(axis_angle_to_matrix([0.0, 0.0, 0.0]), np.eye(3))

    def test_quarter_turn_about_z(self):
        r = axis_angle_to_matrix([0.0, 0.0, np.pi / 2])
        assert np.allclose(r, QUARTER_Z, atol=1e-12)

    def test_matches_rotvec_oracle(self):
        a = np.array([0.3, -0.2, 0.1])
        expected = Rotation.from_rotvec(a).as_matrix()
        assert np.allclose(axis_angle_to_matrix(a), expected, atol=1e-12)

    def test_batch_matches_oracle(self):
        rng = np.random.default_rng(7)
        a = rng.normal(size=(50, 3))
        expected = Rotation.from_rotvec(a).as_matrix()
        assert np.allclose(axis_angle_to_matrix(a), expected, atol=1e-12)

    def test_preserves_axis(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            a = rng.normal(size=3)
            r = axis_angle_to_matrix(a)
            axis = a / np.linalg.norm(a)
            assert np.allclose(r @ axis, axis, atol=1e-9)

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            axis_angle_to_matrix([np.nan, 0.0, 0.0])
        with pytest.raises(ValueError):
            axis_angle_to_matrix([np.inf, 0.0, 0.0])


class TestMatrixTo6D:
    def test_identity(self):
        assert np.array_equal(matrix_to_6d(np.eye(3)), [1, 0, 0, 0, 1, 0])

    def test_quarter_turn_columns(self):
        assert np.allclose(matrix_to_6d(QUARTER_Z), [0, 1, 0, -1, 0, 0])

    def test_slices_first_two_columns(self):
        r = random_rotations(1, 3)[0]
        expected = np.concatenate([r[:, 0], r[:, 1]])
        assert np.array_equal(matrix_to_6d(r), expected)

    def test_rejects_non_orthonormal(self):
        with pytest.raises(ValueError):
            matrix_to_6d(np.eye(3) * 1.01)


class TestSixDToMatrix:
    def test_identity(self):
        assert np.allclose(six_d_to_matrix([1, 0, 0, 0, 1, 0]), np.eye(3))

    def test_repairs_scaled_sheared_columns(self):
        # Hand Gram-Schmidt: (2,0,0) normalizes to x-hat; (0.5,3,0) minus its
        # x component leaves (0,3,0), normalizing to y-hat; cross gives z-hat.
        assert np.allclose(six_d_to_matrix([2, 0, 0, 0.5, 3, 0]), np.eye(3), atol=1e-12)

    def test_round_trip_1000_random_rotations(self):
        r = random_rotations(1000, 5)
        back = six_d_to_matrix(matrix_to_6d(r))
        assert np.abs(back - r).max() < 1e-6

    def test_right_handed(self):
        r = six_d_to_matrix(np.random.default_rng(9).normal(size=(30, 6)))
        assert np.allclose(np.linalg.det(r), 1.0, atol=1e-9)

    def test_degenerate_zero_first_column(self):
        with pytest.raises(DegenerateSixDError):
            six_d_to_matrix([0, 0, 0, 0, 1, 0])

    def test_degenerate_parallel_columns(self):
        with pytest.raises(DegenerateSixDError):
            six_d_to_matrix([1, 0, 0, 2, 0, 0])


class TestGeodesicAngle:
    def test_zero_for_equal(self):
        r = random_rotations(1, 13)[0]
        assert geodesic_angle(r, r) < 1e-7

    def test_quarter_turn(self):
        assert abs(geodesic_angle(np.eye(3), QUARTER_Z) - np.pi / 2) < 1e-12

    def test_matches_quaternion_oracle(self):
        # Oracle: angle = 2*arccos(|<q1, q2>|) on unit quaternions.
        rng = np.random.default_rng(17)
        r1 = Rotation.random(200, rng=rng)
        r2 = Rotation.random(200, rng=rng)
        dots = np.abs(np.sum(r1.as_quat() * r2.as_quat(), axis=1))
        expected = 2.0 * np.arccos(np.clip(dots, -1.0, 1.0))
        got = geodesic_angle(r1.as_matrix(), r2.as_matrix())
        assert np.abs(got - expected).max() < 1e-9

    def test_symmetric(self):
        r1, r2 = random_rotations(2, 19)
        assert geodesic_angle(r1, r2) == geodesic_angle(r2, r1)

    def test_never_nan_near_extremes(self):
        # Trace rounding can push the arccos argument slightly outside [-1, 1].
        r = random_rotations(200, 23)
        angles = geodesic_angle(r, r)
        assert np.isfinite(angles).all()
        flip = Rotation.from_rotvec([np.pi, 0, 0]).as_matrix()
        assert np.isfinite(geodesic_angle(np.eye(3), flip))


def _pose_from_matrices(mats, fps=20.0):
    return PoseSequence(matrix_to_6d(mats).astype(np.float32), fps)


class TestPoseAngleError:
    def test_zero_for_identical(self):
        x = _pose_from_matrices(random_rotations(8 * 4, 29).reshape(8, 4, 3, 3))
        assert pose_angle_error(x, x) == 0.0

    def test_constant_offset_quarter_turn(self):
        base = random_rotations(6 * 3, 31).reshape(6, 3, 3, 3)
        shifted = base @ QUARTER_Z
        err = pose_angle_error(_pose_from_matrices(base), _pose_from_matrices(shifted))
        assert abs(err - np.pi / 2) < 1e-5

    def test_matches_per_pair_loop(self):
        rng = np.random.default_rng(37)
        m1 = Rotation.random(32, rng=rng).as_matrix().reshape(8, 4, 3, 3)
        m2 = Rotation.random(32, rng=rng).as_matrix().reshape(8, 4, 3, 3)
        p1, p2 = _pose_from_matrices(m1), _pose_from_matrices(m2)
        # Loop oracle over all 32 joint pairs, via float32 like the library path.
        angles = []
        for t in range(8):
            for j in range(4):
                a = six_d_to_matrix(p1.data[t, j].astype(np.float64))
                b = six_d_to_matrix(p2.data[t, j].astype(np.float64))
                angles.append(geodesic_angle(a, b))
        assert abs(pose_angle_error(p1, p2) - np.mean(angles)) < 1e-12

    def test_symmetric_and_bounded(self):
        rng = np.random.default_rng(41)
        m1 = Rotation.random(20, rng=rng).as_matrix().reshape(5, 4, 3, 3)
        m2 = Rotation.random(20, rng=rng).as_matrix().reshape(5, 4, 3, 3)
        p1, p2 = _pose_from_matrices(m1), _pose_from_matrices(m2)
        e = pose_angle_error(p1, p2)
        assert e == pose_angle_error(p2, p1)
        assert 0.0 <= e <= np.pi

    def test_shape_mismatch(self):
        a = _pose_from_matrices(random_rotations(8, 43).reshape(4, 2, 3, 3))
        b = _pose_from_matrices(random_rotations(12, 43).reshape(6, 2, 3, 3))
        with pytest.raises(ShapeMismatchError):
            pose_angle_error(a, b)

    def test_fps_mismatch(self):
        m = random_rotations(8, 47).reshape(4, 2, 3, 3)
        with pytest.raises(ShapeMismatchError):
            pose_angle_error(_pose_from_matrices(m, 20.0), _pose_from_matrices(m, 25.0))


class TestPoseSequence:
    def test_validates_shape(self):
        with pytest.raises(ValueError):
            PoseSequence(np.zeros((4, 2, 5)), 20.0)

    def test_validates_fps(self):
        with pytest.raises(ValueError):
            PoseSequence(np.zeros((4, 2, 6)), 0.0)

    def test_validates_finite(self):
        data = np.zeros((4, 2, 6))
        data[0, 0, 0] = np.nan
        with pytest.raises(ValueError):
            PoseSequence(data, 20.0)
