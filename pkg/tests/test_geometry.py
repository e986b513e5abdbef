import numpy as np
import pytest

from vservo.errors import NonOrthonormalInput
from vservo.geometry import (
    Pose,
    Twist,
    axis_angle_from_rotation,
    compose,
    integrate_twist,
    inverse,
    relative_pose,
    rotation_from_axis_angle,
    wrap_axis_angle,
)

# ---------------------------------------------------------------------------
# Independent oracles: quaternion-based conversions and homogeneous matrices.
# These deliberately avoid the code paths under test.


def quat_from_axis_angle(v):
    theta = np.linalg.norm(v)
    if theta < 1e-300:
        return np.array([1.0, 0.0, 0.0, 0.0])
    axis = v / theta
    return np.concatenate([[np.cos(theta / 2.0)], axis * np.sin(theta / 2.0)])


def quat_to_matrix(q):
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def random_rotation(rng, max_angle=np.pi):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    if q[0] < 0:
        q = -q
    R = quat_to_matrix(q)
    angle = 2.0 * np.arccos(np.clip(q[0], -1.0, 1.0))
    if angle > max_angle:
        return random_rotation(rng, max_angle)
    return R


def homogeneous(p):
    T = np.eye(4)
    T[:3, :3] = p.rotation
    T[:3, 3] = p.translation
    return T


def random_pose(rng):
    return Pose(random_rotation(rng), rng.normal(size=3))


# ---------------------------------------------------------------------------


def test_axis_angle_identity():
    assert np.array_equal(axis_angle_from_rotation(np.eye(3)), np.zeros(3))


def test_axis_angle_quarter_turn_about_z():
    c, s = np.cos(np.pi / 2), np.sin(np.pi / 2)
    R = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])
    np.testing.assert_allclose(axis_angle_from_rotation(R), [0, 0, np.pi / 2], atol=1e-12)


def test_rotation_from_axis_angle_trivial_cases():
    np.testing.assert_array_equal(rotation_from_axis_angle(np.zeros(3)), np.eye(3))
    np.testing.assert_allclose(
        rotation_from_axis_angle(np.array([0.0, 0.0, np.pi])), np.diag([-1.0, -1.0, 1.0]), atol=1e-12
    )


def test_rotation_matches_quaternion_oracle():
    v = np.array([0.1, -0.2, 0.05])
    expected = quat_to_matrix(quat_from_axis_angle(v))
    np.testing.assert_allclose(rotation_from_axis_angle(v), expected, atol=1e-10)


def test_axis_angle_round_trip_random():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(1000):
        R = random_rotation(rng, max_angle=np.pi - 1e-3)
        v = axis_angle_from_rotation(R)
        assert np.linalg.norm(v) <= np.pi
        worst = max(worst, np.max(np.abs(rotation_from_axis_angle(v) - R)))
    assert worst < 1e-8


def test_axis_angle_near_pi_branch():
    rng = np.random.default_rng(1)
    for _ in range(50):
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        for angle in (np.pi, np.pi - 1e-9, np.pi - 1e-5):
            R = quat_to_matrix(quat_from_axis_angle(axis * angle))
            v = axis_angle_from_rotation(R)
            np.testing.assert_allclose(rotation_from_axis_angle(v), R, atol=1e-7)


def test_small_angle_series():
    v = np.array([1e-10, -2e-10, 5e-11])
    R = rotation_from_axis_angle(v)
    expected = quat_to_matrix(quat_from_axis_angle(v))
    np.testing.assert_allclose(R, expected, atol=1e-15)
    assert np.max(np.abs(R.T @ R - np.eye(3))) < 1e-10


def test_rotation_orthonormality():
    rng = np.random.default_rng(2)
    for _ in range(200):
        v = rng.uniform(-np.pi, np.pi, size=3)
        if np.linalg.norm(v) > np.pi:
            continue
        R = rotation_from_axis_angle(v)
        assert np.max(np.abs(R.T @ R - np.eye(3))) < 1e-10


def test_non_orthonormal_rejected():
    bad = np.eye(3)
    bad[0, 1] = 1e-3
    with pytest.raises(NonOrthonormalInput):
        axis_angle_from_rotation(bad)


def test_compose_identity_and_inverse():
    rng = np.random.default_rng(3)
    p = random_pose(rng)
    ident = Pose.identity()
    q = compose(p, ident)
    np.testing.assert_array_equal(q.rotation, p.rotation)
    np.testing.assert_array_equal(q.translation, p.translation)
    r = compose(p, inverse(p))
    np.testing.assert_allclose(r.rotation, np.eye(3), atol=1e-10)
    np.testing.assert_allclose(r.translation, 0.0, atol=1e-10)


def test_inverse_pure_translation():
    p = Pose(np.eye(3), np.array([1.0, -2.0, 3.0]))
    q = inverse(p)
    np.testing.assert_array_equal(q.rotation, np.eye(3))
    np.testing.assert_array_equal(q.translation, -p.translation)


def test_compose_matches_homogeneous_oracle():
    rng = np.random.default_rng(4)
    for _ in range(100):
        a, b = random_pose(rng), random_pose(rng)
        T = homogeneous(a) @ homogeneous(b)
        c = compose(a, b)
        np.testing.assert_allclose(homogeneous(c), T, atol=1e-12)


def test_compose_associative():
    rng = np.random.default_rng(5)
    for _ in range(50):
        a, b, c = (random_pose(rng) for _ in range(3))
        left = compose(compose(a, b), c)
        right = compose(a, compose(b, c))
        np.testing.assert_allclose(homogeneous(left), homogeneous(right), atol=1e-12)


def test_group_inverse_property():
    rng = np.random.default_rng(6)
    for _ in range(100):
        a, b = random_pose(rng), random_pose(rng)
        lhs = inverse(compose(a, b))
        rhs = compose(inverse(b), inverse(a))
        np.testing.assert_allclose(homogeneous(lhs), homogeneous(rhs), atol=1e-10)


def test_relative_pose_cases():
    rng = np.random.default_rng(7)
    p = random_pose(rng)
    rel = relative_pose(p, p)
    np.testing.assert_allclose(rel.rotation, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(rel.translation, 0.0, atol=1e-12)

    goal = Pose.identity()
    current = Pose(np.eye(3), np.array([0.1, 0.0, 0.0]))
    rel = relative_pose(goal, current)
    np.testing.assert_allclose(rel.translation, [0.1, 0.0, 0.0], atol=1e-15)

    for _ in range(50):
        g, c = random_pose(rng), random_pose(rng)
        expected = np.linalg.inv(homogeneous(g)) @ homogeneous(c)
        np.testing.assert_allclose(homogeneous(relative_pose(g, c)), expected, atol=1e-10)


def test_integrate_twist_zero_is_identity_bitwise():
    rng = np.random.default_rng(8)
    p = random_pose(rng)
    q = integrate_twist(p, Twist.zero(), 0.5)
    assert q.translation is p.translation or np.array_equal(q.translation, p.translation)
    assert np.array_equal(q.rotation, p.rotation)


def test_integrate_twist_pure_translation():
    p = Pose.identity()
    q = integrate_twist(p, Twist(np.array([1.0, 0.0, 0.0]), np.zeros(3)), 0.1)
    np.testing.assert_allclose(q.translation, [0.1, 0.0, 0.0], atol=1e-15)
    np.testing.assert_array_equal(q.rotation, np.eye(3))


def test_integrate_twist_one_parameter_subgroup():
    # n small steps of a pure rotation equal one big step.
    p = Pose.identity()
    w = np.array([0.0, 0.0, 0.3])
    tw = Twist(np.zeros(3), w)
    n, dt = 7, 0.1
    stepped = p
    for _ in range(n):
        stepped = integrate_twist(stepped, tw, dt)
    direct = integrate_twist(p, tw, n * dt)
    np.testing.assert_allclose(stepped.rotation, direct.rotation, atol=1e-9)
    np.testing.assert_allclose(stepped.translation, direct.translation, atol=1e-9)


def test_integrate_twist_rejects_bad_dt():
    with pytest.raises(ValueError):
        integrate_twist(Pose.identity(), Twist.zero(), 0.0)


def test_twist_rejects_non_finite():
    with pytest.raises(ValueError):
        Twist(np.array([np.nan, 0.0, 0.0]), np.zeros(3))


def test_wrap_axis_angle():
    v = np.array([0.0, 0.0, 3.0])
    np.testing.assert_array_equal(wrap_axis_angle(v), v)
    w = wrap_axis_angle(np.array([0.0, 0.0, 2.0 * np.pi - 0.1]))
    np.testing.assert_allclose(w, [0.0, 0.0, -0.1], atol=1e-12)
    big = np.array([4.0, 0.0, 0.0])
    wrapped = wrap_axis_angle(big)
    assert np.linalg.norm(wrapped) <= np.pi
    np.testing.assert_allclose(
        rotation_from_axis_angle(wrapped), rotation_from_axis_angle(big), atol=1e-12
    )
