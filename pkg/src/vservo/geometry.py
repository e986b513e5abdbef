"""Rigid transforms, axis-angle rotations, and twist integration.

A ``Pose`` maps points from its own frame to the reference frame:
``p_ref = R @ p_own + t``.  Camera poses are camera-to-world transforms; the
relative pose between two cameras therefore expresses the current frame in
the goal frame, which is exactly what the servo control law consumes.

All functions are pure and operate on float64 arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from vservo.errors import NonOrthonormalInput

__all__ = [
    "Pose",
    "Twist",
    "axis_angle_from_rotation",
    "rotation_from_axis_angle",
    "compose",
    "inverse",
    "relative_pose",
    "integrate_twist",
    "wrap_axis_angle",
]

# Below this angle the Rodrigues coefficients switch to series expansions.
_SMALL_ANGLE = 1e-8


@dataclass(frozen=True)
class Pose:
    """Rigid transform: 3x3 rotation plus translation in meters."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64))
        if self.rotation.shape != (3, 3) or self.translation.shape != (3,):
            raise ValueError("Pose expects a 3x3 rotation and a 3-vector translation")

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))


@dataclass(frozen=True)
class Twist:
    """Camera velocity in its own frame: linear (m/step), angular (rad/step)."""

    linear: np.ndarray
    angular: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "linear", np.asarray(self.linear, dtype=np.float64))
        object.__setattr__(self, "angular", np.asarray(self.angular, dtype=np.float64))
        if not (np.all(np.isfinite(self.linear)) and np.all(np.isfinite(self.angular))):
            raise ValueError("twist components must be finite")

    @property
    def norm(self) -> float:
        return float(np.sqrt(np.dot(self.linear, self.linear) + np.dot(self.angular, self.angular)))

    @staticmethod
    def zero() -> "Twist":
        return Twist(np.zeros(3), np.zeros(3))


def _check_orthonormal(R: np.ndarray, tol: float) -> None:
    err = np.max(np.abs(R.T @ R - np.eye(3)))
    if err > tol or abs(np.linalg.det(R) - 1.0) > max(tol, 1e-9) * 10:
        raise NonOrthonormalInput(f"max |R^T R - I| = {err:.3e}")


def axis_angle_from_rotation(R: np.ndarray) -> np.ndarray:
    """Axis-angle vector (direction = axis, norm = angle in [0, pi]) of R.

    Near angle pi the axis is recovered from the largest diagonal element of
    (R + I)/2, which stays well conditioned where sin(theta) vanishes.
    """
    R = np.asarray(R, dtype=np.float64)
    _check_orthonormal(R, 1e-6)

    cos_theta = np.clip((np.trace(R) - 1.0) * 0.5, -1.0, 1.0)
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    # sin(theta) recovered from the skew part and the angle via atan2: both
    # stay well conditioned near 0 and near pi (arccos of the trace does not).
    sin_theta = 0.5 * float(np.linalg.norm(w))
    theta = float(np.arctan2(sin_theta, cos_theta))

    if theta < _SMALL_ANGLE:
        return np.zeros(3)

    if theta < np.pi - 1e-6:
        return w * (theta / (2.0 * sin_theta))

    # Angle at or near pi: R ~ 2 u u^T - I, so u u^T = (R + I)/2.
    B = (R + np.eye(3)) * 0.5
    k = int(np.argmax(np.diag(B)))
    axis = B[:, k] / np.sqrt(max(B[k, k], 1e-300))
    axis /= np.linalg.norm(axis)
    # Fix the sign using an off-diagonal of R - R^T (zero exactly at pi,
    # where both signs are equivalent).
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if np.dot(w, axis) < 0.0:
        axis = -axis
    return axis * theta


def rotation_from_axis_angle(v: np.ndarray) -> np.ndarray:
    """Rodrigues formula; series expansion below the small-angle cutoff."""
    v = np.asarray(v, dtype=np.float64)
    theta = float(np.linalg.norm(v))
    K = np.array(
        [
            [0.0, -v[2], v[1]],
            [v[2], 0.0, -v[0]],
            [-v[1], v[0], 0.0],
        ]
    )
    if theta < _SMALL_ANGLE:
        # sin(t)/t ~ 1 - t^2/6, (1-cos(t))/t^2 ~ 1/2 - t^2/24
        a = 1.0 - theta * theta / 6.0
        b = 0.5 - theta * theta / 24.0
    else:
        a = np.sin(theta) / theta
        b = (1.0 - np.cos(theta)) / (theta * theta)
    return np.eye(3) + a * K + b * (K @ K)


def compose(a: Pose, b: Pose) -> Pose:
    """Rigid composition a.b (apply b first, then a)."""
    return Pose(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def inverse(p: Pose) -> Pose:
    Rt = p.rotation.T
    return Pose(Rt, -(Rt @ p.translation))


def relative_pose(goal: Pose, current: Pose) -> Pose:
    """Pose of the current frame expressed in the goal frame."""
    return compose(inverse(goal), current)


def integrate_twist(p: Pose, tw: Twist, dt: float) -> Pose:
    """Advance p by a body-frame twist over one step of length dt.

    Rotation and translation are updated independently (rotation through the
    axis-angle exponential, translation as R @ (v dt)); a zero twist returns
    p bit-for-bit.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    if not (np.any(tw.linear) or np.any(tw.angular)):
        return p
    R_step = rotation_from_axis_angle(tw.angular * dt)
    return Pose(p.rotation @ R_step, p.rotation @ (tw.linear * dt) + p.translation)


def wrap_axis_angle(v: np.ndarray) -> np.ndarray:
    """Map an unconstrained axis-angle vector onto the norm <= pi branch."""
    v = np.asarray(v, dtype=np.float64)
    theta = float(np.linalg.norm(v))
    if theta <= np.pi or theta == 0.0:
        return v
    wrapped = np.remainder(theta, 2.0 * np.pi)
    if wrapped > np.pi:
        wrapped -= 2.0 * np.pi
    return v * (wrapped / theta)
