import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from overlapreg.geometry import (
    Quaternion,
    RigidTransform,
    anisotropic_errors,
    apply,
    compose,
    euler_zyx_to_rotmat,
    inverse,
    isotropic_errors,
    quat_to_rotmat,
    rotmat_to_euler_zyx,
    rotmat_to_quat,
)


def axis_angle_matrix(axis, angle_deg):
    """Rodrigues rotation, independent of the quaternion path."""
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    a = math.radians(angle_deg)
    k = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + math.sin(a) * k + (1 - math.cos(a)) * (k @ k)


def random_unit_quat(rng):
    v = rng.normal(size=4)
    return Quaternion.from_array(v / np.linalg.norm(v)).normalized()


def random_transform(rng, trans_scale=1.0):
    return RigidTransform(random_unit_quat(rng), rng.uniform(-trans_scale, trans_scale, 3))


# --- quat_to_rotmat -----------------------------------------------------------


def test_identity_quaternion_gives_identity_matrix():
    assert np.allclose(quat_to_rotmat(Quaternion.identity()), np.eye(3), atol=1e-12)


def test_half_turn_about_x_matches_axis_angle_oracle():
    m = quat_to_rotmat(Quaternion(0.0, 1.0, 0.0, 0.0))
    assert np.allclose(m, axis_angle_matrix([1, 0, 0], 180.0), atol=1e-12)
    assert np.allclose(np.diag(m), [1.0, -1.0, -1.0], atol=1e-12)


def test_quarter_turn_about_x_matches_axis_angle_oracle():
    c = math.cos(math.pi / 4)
    m = quat_to_rotmat(Quaternion(c, math.sin(math.pi / 4), 0.0, 0.0))
    assert np.allclose(m, axis_angle_matrix([1, 0, 0], 90.0), atol=1e-12)


def test_quat_to_rotmat_rejects_unnormalized():
    with pytest.raises(ValueError, match="not normalized"):
        quat_to_rotmat(Quaternion(1.0, 0.1, 0.0, 0.0))


def test_rotmat_is_orthonormal_proper(rng):
    for _ in range(50):
        m = quat_to_rotmat(random_unit_quat(rng))
        assert np.allclose(m @ m.T, np.eye(3), atol=1e-9)
        assert abs(np.linalg.det(m) - 1.0) < 1e-9


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**9))
def test_double_cover_same_matrix(seed):
    q = random_unit_quat(np.random.default_rng(seed))
    q_neg = Quaternion(-q.w, -q.x, -q.y, -q.z)
    assert np.allclose(quat_to_rotmat(q), quat_to_rotmat(q_neg), atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**9))
def test_rotmat_quat_round_trip(seed):
    m = quat_to_rotmat(random_unit_quat(np.random.default_rng(seed)))
    assert np.abs(quat_to_rotmat(rotmat_to_quat(m)) - m).max() < 1e-8


def test_normalize_canonical_sign():
    q = Quaternion(-0.5, 0.5, 0.5, 0.5).normalized()
    assert q.w >= 0
    assert abs(q.norm() - 1.0) < 1e-9
    q0 = Quaternion(0.0, -1.0, 0.0, 0.0).normalized()
    assert q0.x > 0


# --- compose / inverse / apply -------------------------------------------------


def test_compose_with_inverse_is_identity(rng):
    t = random_transform(rng)
    ident = compose(t, inverse(t))
    assert np.allclose(quat_to_rotmat(ident.rotation), np.eye(3), atol=1e-9)
    assert np.allclose(ident.translation, 0.0, atol=1e-9)


def test_compose_two_z_rotations_matches_matrix_product():
    def z_rot(deg):
        return RigidTransform(rotmat_to_quat(euler_zyx_to_rotmat(math.radians(deg), 0, 0)), np.zeros(3))

    c = compose(z_rot(30.0), z_rot(15.0))
    assert np.allclose(c.rotmat(), axis_angle_matrix([0, 0, 1], 45.0), atol=1e-12)


def test_compose_pure_translations():
    a = RigidTransform(Quaternion.identity(), [0.0, 0.0, 0.2])
    b = RigidTransform(Quaternion.identity(), [0.1, 0.0, 0.0])
    assert np.allclose(compose(a, b).translation, [0.1, 0.0, 0.2], atol=1e-15)


def test_compose_applies_b_first(rng):
    a, b = random_transform(rng), random_transform(rng)
    cloud = rng.normal(size=(10, 3))
    assert np.allclose(apply(compose(a, b), cloud), apply(a, apply(b, cloud)), atol=1e-9)


def test_apply_identity_and_symmetry():
    cloud = np.array([[1.0, 0.0, 0.0]])
    assert np.array_equal(apply(RigidTransform.identity(), cloud), cloud)
    half_turn_z = RigidTransform(Quaternion(0.0, 0.0, 0.0, 1.0), np.zeros(3))
    assert np.allclose(apply(half_turn_z, cloud), [[-1.0, 0.0, 0.0]], atol=1e-12)


def test_apply_round_trip(rng):
    t = random_transform(rng)
    cloud = rng.normal(size=(64, 3))
    assert np.abs(apply(inverse(t), apply(t, cloud)) - cloud).max() < 1e-9


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**9))
def test_apply_preserves_pairwise_distances(seed):
    rng = np.random.default_rng(seed)
    t = random_transform(rng)
    cloud = rng.normal(size=(20, 3))
    moved = apply(t, cloud)
    d0 = np.linalg.norm(cloud[:, None] - cloud[None, :], axis=2)
    d1 = np.linalg.norm(moved[:, None] - moved[None, :], axis=2)
    assert np.abs(d0 - d1).max() < 1e-9


# --- isotropic errors ----------------------------------------------------------


def test_isotropic_zero_for_equal_transforms(rng):
    t = random_transform(rng)
    rot, trans = isotropic_errors(t, t)
    assert rot < 1e-9 and trans == 0.0


def test_isotropic_rotation_offset_by_construction(rng):
    gt = random_transform(rng)
    bump = RigidTransform(rotmat_to_quat(axis_angle_matrix([1, 0, 0], 10.0)), np.zeros(3))
    pred = compose(gt, bump)
    rot, _ = isotropic_errors(pred, gt)
    assert abs(rot - 10.0) < 1e-6


def test_isotropic_translation_pythagorean(rng):
    gt = random_transform(rng)
    pred = RigidTransform(gt.rotation, gt.translation + np.array([0.3, 0.0, 0.4]))
    _, trans = isotropic_errors(pred, gt)
    assert abs(trans - 0.5) < 1e-12


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**9))
def test_isotropic_left_invariance(seed):
    rng = np.random.default_rng(seed)
    pred, gt, extra = random_transform(rng), random_transform(rng), random_transform(rng)
    base, _ = isotropic_errors(pred, gt)
    shifted, _ = isotropic_errors(compose(extra, pred), compose(extra, gt))
    assert abs(base - shifted) < 1e-6


# --- anisotropic errors --------------------------------------------------------


def test_anisotropic_all_identical(rng):
    ts = [random_transform(rng) for _ in range(5)]
    report = anisotropic_errors(ts, ts)
    assert report.rmse_rot < 1e-9 and report.mae_rot < 1e-9
    assert report.rmse_trans == 0.0 and report.mae_trans == 0.0
    assert report.iso_rot < 1e-6 and report.iso_trans == 0.0


def test_anisotropic_single_pair_euler_offset():
    # gt differs from pred by intrinsic-ZYX Euler (5, 0, 0) degrees; residuals
    # pool over (pair, axis) entries: mae = 5/3, rmse = 5/sqrt(3).
    pred = RigidTransform.identity()
    gt = RigidTransform(rotmat_to_quat(euler_zyx_to_rotmat(math.radians(5.0), 0.0, 0.0)), np.zeros(3))
    report = anisotropic_errors([pred], [gt])
    assert abs(report.mae_rot - 5.0 / 3.0) < 1e-9
    assert abs(report.rmse_rot - 5.0 / math.sqrt(3.0)) < 1e-9


def test_anisotropic_two_pair_translation_residuals():
    ident = RigidTransform.identity()
    gts = [
        RigidTransform(Quaternion.identity(), [0.1, 0.0, 0.0]),
        RigidTransform(Quaternion.identity(), [0.3, 0.0, 0.0]),
    ]
    report = anisotropic_errors([ident, ident], gts)
    assert abs(report.rmse_trans - math.sqrt((0.01 + 0.09) / 6.0)) < 1e-12
    assert abs(report.mae_trans - 0.4 / 6.0) < 1e-12


def test_anisotropic_empty_rejected():
    with pytest.raises(ValueError):
        anisotropic_errors([], [])


def test_rmse_at_least_mae(rng):
    preds = [random_transform(rng) for _ in range(8)]
    gts = [random_transform(rng) for _ in range(8)]
    report = anisotropic_errors(preds, gts)
    assert report.rmse_rot >= report.mae_rot
    assert report.rmse_trans >= report.mae_trans
    assert 0.0 <= report.iso_rot <= 180.0


def test_euler_round_trip():
    angles = np.radians([33.0, -41.0, 12.0])
    back = rotmat_to_euler_zyx(euler_zyx_to_rotmat(*angles))
    assert np.allclose(back, angles, atol=1e-12)


# --- serialization -------------------------------------------------------------


def test_json_round_trip_and_sign(rng):
    t = RigidTransform(Quaternion(-0.5, 0.5, 0.5, 0.5).normalized(), [0.1, -0.2, 0.3])
    d = t.to_json_dict()
    assert d["q"][0] >= 0
    back = RigidTransform.from_json_dict(d)
    assert np.allclose(back.rotmat(), t.rotmat(), atol=1e-12)
    assert np.allclose(back.translation, t.translation)


def test_translation_immutable():
    t = RigidTransform.identity()
    with pytest.raises(ValueError):
        t.translation[0] = 1.0
