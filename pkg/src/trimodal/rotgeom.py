"""Rotation representations and angular distances for 6D-coded pose data.

Conventions: a 6D code is the first two columns of a rotation matrix,
column-major, i.e. (r00, r10, r20, r01, r11, r21). All functions accept
batched inputs with leading dimensions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateSixDError, ShapeMismatchError

# Matrices round-tripped through float32 files stay within this.
ORTHONORMAL_TOL = 1e-6
DEGENERACY_TOL = 1e-8


def _check_finite(a: np.ndarray, name: str) -> None:
    if not np.isfinite(a).all():
        raise ValueError(f"{name} must be finite")


def axis_angle_to_matrix(a) -> np.ndarray:
    """Rodrigues formula. Input (..., 3): axis direction, angle magnitude."""
    a = np.asarray(a, dtype=np.float64)
    if a.shape[-1] != 3:
        raise ValueError(f"axis-angle input must have last dimension 3, got {a.shape}")
    _check_finite(a, "axis-angle input")

    angle = np.linalg.norm(a, axis=-1)
    safe = np.where(angle > 1e-12, angle, 1.0)
    axis = a / safe[..., None]

    x, y, z = axis[..., 0], axis[..., 1], axis[..., 2]
    zero = np.zeros_like(x)
    k = np.stack(
        [zero, -z, y,
         z, zero, -x,
         -y, x, zero],
        axis=-1,
    ).reshape(a.shape[:-1] + (3, 3))

    s = np.sin(angle)[..., None, None]
    c = (1.0 - np.cos(angle))[..., None, None]
    eye = np.broadcast_to(np.eye(3), k.shape)
    rot = eye + s * k + c * (k @ k)
    # Exact identity at zero angle instead of accumulated round-off.
    near_zero = (angle <= 1e-12)[..., None, None]
    return np.where(near_zero, eye, rot)


def is_rotation_matrix(r: np.ndarray, tol: float = ORTHONORMAL_TOL) -> bool:
    r = np.asarray(r, dtype=np.float64)
    if r.shape[-2:] != (3, 3) or not np.isfinite(r).all():
        return False
    err = np.abs(r @ np.swapaxes(r, -1, -2) - np.eye(3)).max()
    if err > tol:
        return False
    return bool(np.abs(np.linalg.det(r) - 1.0).max() <= tol)


def _check_rotation(r, name: str) -> np.ndarray:
    r = np.asarray(r, dtype=np.float64)
    if r.shape[-2:] != (3, 3):
        raise ValueError(f"{name} must have shape (..., 3, 3), got {r.shape}")
    _check_finite(r, name)
    if not is_rotation_matrix(r):
        raise ValueError(f"{name} is not orthonormal within {ORTHONORMAL_TOL}")
    return r


def matrix_to_6d(r) -> np.ndarray:
    """First two columns of a rotation matrix, column-major flattening."""
    r = _check_rotation(r, "rotation matrix")
    return np.concatenate([r[..., :, 0], r[..., :, 1]], axis=-1)


def six_d_to_matrix(v) -> np.ndarray:
    """Gram-Schmidt recovery of a rotation matrix from a 6D code.

    Non-canonical inputs (scaled or sheared columns) are repaired by
    orthonormalization; near-zero or near-parallel columns raise
    DegenerateSixDError.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != 6:
        raise ValueError(f"6D input must have last dimension 6, got {v.shape}")
    _check_finite(v, "6D input")

    b1, b2 = v[..., :3], v[..., 3:]
    n1 = np.linalg.norm(b1, axis=-1)
    if (n1 <= DEGENERACY_TOL).any():
        raise DegenerateSixDError("first 6D column has near-zero norm")
    x = b1 / n1[..., None]

    y = b2 - np.sum(x * b2, axis=-1, keepdims=True) * x
    n2 = np.linalg.norm(y, axis=-1)
    if (n2 <= DEGENERACY_TOL).any():
        raise DegenerateSixDError("6D columns are near-parallel")
    y = y / n2[..., None]

    z = np.cross(x, y)
    return np.stack([x, y, z], axis=-1)


def geodesic_angle(r1, r2) -> np.ndarray | float:
    """Angle of the relative rotation, arccos((trace(R1^T R2) - 1) / 2).

    The arccos argument is clamped to [-1, 1] so round-off near 0 and pi
    never produces NaN.
    """
    r1 = _check_rotation(r1, "first rotation")
    r2 = _check_rotation(r2, "second rotation")
    tr = np.einsum("...ij,...ij->...", r1, r2)
    cos = np.clip((tr - 1.0) / 2.0, -1.0, 1.0)
    out = np.arccos(cos)
    return float(out) if out.ndim == 0 else out


@dataclass
class PoseSequence:
    """Time-major per-joint 6D rotations at a fixed frame rate.

    data has shape (frames, joints, 6) and is kept in float32, the on-disk
    dtype, so file round trips are bit-exact.
    """

    data: np.ndarray
    fps: float

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 3 or self.data.shape[-1] != 6:
            raise ValueError(f"pose data must have shape (T, J, 6), got {self.data.shape}")
        if self.data.shape[0] < 1 or self.data.shape[1] < 1:
            raise ValueError("pose sequence needs at least one frame and one joint")
        if not np.isfinite(self.data).all():
            raise ValueError("pose data must be finite")
        if not self.fps > 0:
            raise ValueError(f"fps must be positive, got {self.fps}")

    @property
    def frames(self) -> int:
        return self.data.shape[0]

    @property
    def joints(self) -> int:
        return self.data.shape[1]

    @property
    def duration(self) -> float:
        return self.frames / self.fps


def pose_angle_error(pred: PoseSequence, ref: PoseSequence) -> float:
    """Mean geodesic angle over all (frame, joint) rotation pairs, radians."""
    if pred.data.shape != ref.data.shape or pred.fps != ref.fps:
        raise ShapeMismatchError(
            f"pose sequences must match: {pred.data.shape}@{pred.fps}fps vs "
            f"{ref.data.shape}@{ref.fps}fps"
        )
    if np.array_equal(pred.data, ref.data):
        return 0.0
    rp = six_d_to_matrix(pred.data.astype(np.float64))
    rr = six_d_to_matrix(ref.data.astype(np.float64))
    return float(np.mean(geodesic_angle(rp, rr)))
