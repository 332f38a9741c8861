"""Rigid-transform algebra: quaternions, composition, and registration error metrics.

Conventions
-----------
- Quaternions are scalar-first ``(w, x, y, z)`` and unit-norm; after any
  normalization the sign is canonicalized to ``w >= 0`` (if ``w == 0``, the
  first nonzero of ``x, y, z`` is made positive) so serialization is
  deterministic under the q/-q double cover.
- A transform maps a source point ``p`` to ``R @ p + t``.
- Euler angles are intrinsic Z-Y-X (yaw, pitch, roll). Radians internally;
  degrees at every reporting and sampling boundary.
"""

import math
from dataclasses import dataclass, field

import numpy as np

QUAT_NORM_TOL = 1e-6


@dataclass(frozen=True)
class Quaternion:
    """Unit quaternion (w, x, y, z). Immutable; construct then `normalized()`."""

    w: float
    x: float
    y: float
    z: float

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z], dtype=np.float64)

    @classmethod
    def from_array(cls, q) -> "Quaternion":
        w, x, y, z = (float(v) for v in q)
        return cls(w, x, y, z)

    @classmethod
    def identity(cls) -> "Quaternion":
        return cls(1.0, 0.0, 0.0, 0.0)

    def norm(self) -> float:
        return math.sqrt(self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z)

    def normalized(self) -> "Quaternion":
        """Unit-norm copy with canonical sign (w >= 0)."""
        n = self.norm()
        if n == 0.0:
            raise ValueError("cannot normalize a zero quaternion")
        q = (self.w / n, self.x / n, self.y / n, self.z / n)
        return Quaternion(*_canonical_sign(q))

    def conjugate(self) -> "Quaternion":
        return Quaternion(self.w, -self.x, -self.y, -self.z)

    def __mul__(self, other: "Quaternion") -> "Quaternion":
        """Hamilton product; composes rotations (self applied after other)."""
        w1, x1, y1, z1 = self.w, self.x, self.y, self.z
        w2, x2, y2, z2 = other.w, other.x, other.y, other.z
        return Quaternion(
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        )


def _canonical_sign(q) -> tuple:
    w, x, y, z = q
    if w < 0.0:
        return (-w, -x, -y, -z)
    if w == 0.0:
        for v in (x, y, z):
            if v != 0.0:
                if v < 0.0:
                    return (w, -x, -y, -z)
                break
    return (w, x, y, z)


def quat_to_rotmat(q: Quaternion) -> np.ndarray:
    """3x3 rotation matrix of a unit quaternion.

    Rejects inputs whose norm deviates from 1 by more than ``QUAT_NORM_TOL``.
    """
    if abs(q.norm() - 1.0) > QUAT_NORM_TOL:
        raise ValueError(f"quaternion not normalized: |q| = {q.norm():.9g}")
    w, x, y, z = q.w, q.x, q.y, q.z
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ],
        dtype=np.float64,
    )


def rotmat_to_quat(m: np.ndarray) -> Quaternion:
    """Inverse of `quat_to_rotmat`, stable for all rotations (Shepperd's branches)."""
    m = np.asarray(m, dtype=np.float64)
    t = m[0, 0] + m[1, 1] + m[2, 2]
    if t > 0.0:
        s = math.sqrt(t + 1.0) * 2.0
        w = 0.25 * s
        x = (m[2, 1] - m[1, 2]) / s
        y = (m[0, 2] - m[2, 0]) / s
        z = (m[1, 0] - m[0, 1]) / s
    elif m[0, 0] >= m[1, 1] and m[0, 0] >= m[2, 2]:
        s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        w = (m[2, 1] - m[1, 2]) / s
        x = 0.25 * s
        y = (m[0, 1] + m[1, 0]) / s
        z = (m[0, 2] + m[2, 0]) / s
    elif m[1, 1] >= m[2, 2]:
        s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
        w = (m[0, 2] - m[2, 0]) / s
        x = (m[0, 1] + m[1, 0]) / s
        y = 0.25 * s
        z = (m[1, 2] + m[2, 1]) / s
    else:
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        w = (m[1, 0] - m[0, 1]) / s
        x = (m[0, 2] + m[2, 0]) / s
        y = (m[1, 2] + m[2, 1]) / s
        z = 0.25 * s
    return Quaternion(w, x, y, z).normalized()


def euler_zyx_to_rotmat(yaw: float, pitch: float, roll: float) -> np.ndarray:
    """Rz(yaw) @ Ry(pitch) @ Rx(roll), angles in radians."""
    ca, sa = math.cos(yaw), math.sin(yaw)
    cb, sb = math.cos(pitch), math.sin(pitch)
    cc, sc = math.cos(roll), math.sin(roll)
    return np.array(
        [
            [ca * cb, ca * sb * sc - sa * cc, ca * sb * cc + sa * sc],
            [sa * cb, sa * sb * sc + ca * cc, sa * sb * cc - ca * sc],
            [-sb, cb * sc, cb * cc],
        ],
        dtype=np.float64,
    )


def rotmat_to_euler_zyx(m: np.ndarray) -> tuple:
    """(yaw, pitch, roll) in radians; pitch in [-pi/2, pi/2]."""
    m = np.asarray(m, dtype=np.float64)
    sb = -m[2, 0]
    sb = min(1.0, max(-1.0, sb))
    pitch = math.asin(sb)
    if abs(sb) < 1.0 - 1e-12:
        yaw = math.atan2(m[1, 0], m[0, 0])
        roll = math.atan2(m[2, 1], m[2, 2])
    else:
        # Gimbal lock: yaw/roll coupled; fold everything into yaw.
        yaw = math.atan2(-m[0, 1], m[1, 1])
        roll = 0.0
    return yaw, pitch, roll


@dataclass(frozen=True)
class RigidTransform:
    """Rotation (unit quaternion) plus translation; maps p -> R @ p + t."""

    rotation: Quaternion
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        t = np.asarray(self.translation, dtype=np.float64).reshape(3).copy()
        t.setflags(write=False)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(Quaternion.identity(), np.zeros(3))

    @classmethod
    def from_quat_trans(cls, q, t) -> "RigidTransform":
        return cls(Quaternion.from_array(q).normalized(), np.asarray(t, dtype=np.float64))

    @classmethod
    def from_rotmat_trans(cls, m: np.ndarray, t) -> "RigidTransform":
        return cls(rotmat_to_quat(m), np.asarray(t, dtype=np.float64))

    def rotmat(self) -> np.ndarray:
        return quat_to_rotmat(self.rotation)

    def to_json_dict(self) -> dict:
        q = self.rotation.normalized()
        return {"q": [q.w, q.x, q.y, q.z], "t": [float(v) for v in self.translation]}

    @classmethod
    def from_json_dict(cls, d: dict) -> "RigidTransform":
        return cls.from_quat_trans(d["q"], d["t"])


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Transform equal to applying b first, then a."""
    q = (a.rotation * b.rotation).normalized()
    t = a.rotmat() @ b.translation + a.translation
    return RigidTransform(q, t)


def inverse(t: RigidTransform) -> RigidTransform:
    q_inv = t.rotation.conjugate().normalized()
    return RigidTransform(q_inv, -(quat_to_rotmat(q_inv) @ t.translation))


def apply(t: RigidTransform, cloud: np.ndarray) -> np.ndarray:
    """Transform an (n, 3) cloud; count and ordering preserved."""
    cloud = np.asarray(cloud, dtype=np.float64)
    return cloud @ t.rotmat().T + t.translation


def isotropic_errors(pred: RigidTransform, gt: RigidTransform) -> tuple:
    """(rotation error in degrees, translation error) between prediction and truth.

    Rotation error is the angle of the relative rotation R_gt^T @ R_pred,
    equal to arccos((trace - 1) / 2) but evaluated as atan2 of the rotation's
    sine (from the skew-symmetric part) and cosine (from the clamped trace),
    which stays accurate where arccos loses precision near 0 and 180 degrees.
    """
    rel = gt.rotmat().T @ pred.rotmat()
    cos_angle = (np.trace(rel) - 1.0) / 2.0
    cos_angle = min(1.0, max(-1.0, cos_angle))
    sin_angle = 0.5 * math.sqrt(
        (rel[2, 1] - rel[1, 2]) ** 2 + (rel[0, 2] - rel[2, 0]) ** 2 + (rel[1, 0] - rel[0, 1]) ** 2
    )
    iso_rot = math.degrees(math.atan2(sin_angle, cos_angle))
    iso_trans = float(np.linalg.norm(gt.translation - pred.translation))
    return iso_rot, iso_trans


@dataclass(frozen=True)
class ErrorReport:
    """Aggregate registration errors. Angles in degrees, translations in cloud units."""

    rmse_rot: float
    mae_rot: float
    rmse_trans: float
    mae_trans: float
    iso_rot: float
    iso_trans: float

    def to_dict(self) -> dict:
        return {
            "rmse_rot": self.rmse_rot,
            "mae_rot": self.mae_rot,
            "rmse_trans": self.rmse_trans,
            "mae_trans": self.mae_trans,
            "iso_rot": self.iso_rot,
            "iso_trans": self.iso_trans,
        }


def anisotropic_errors(preds, gts) -> ErrorReport:
    """RMSE/MAE of per-axis rotation (intrinsic ZYX Euler, degrees) and translation
    residuals, pooled over all (pair, axis) entries, plus mean isotropic errors.
    """
    if len(preds) == 0 or len(gts) == 0:
        raise ValueError("anisotropic_errors requires non-empty transform lists")
    if len(preds) != len(gts):
        raise ValueError(f"length mismatch: {len(preds)} predictions vs {len(gts)} ground truths")
    rot_res = []
    trans_res = []
    iso_r = []
    iso_t = []
    for p, g in zip(preds, gts):
        ep = np.degrees(rotmat_to_euler_zyx(p.rotmat()))
        eg = np.degrees(rotmat_to_euler_zyx(g.rotmat()))
        rot_res.append(eg - ep)
        trans_res.append(g.translation - p.translation)
        r, t = isotropic_errors(p, g)
        iso_r.append(r)
        iso_t.append(t)
    rot_res = np.concatenate(rot_res)
    trans_res = np.concatenate(trans_res)
    return ErrorReport(
        rmse_rot=float(np.sqrt(np.mean(rot_res**2))),
        mae_rot=float(np.mean(np.abs(rot_res))),
        rmse_trans=float(np.sqrt(np.mean(trans_res**2))),
        mae_trans=float(np.mean(np.abs(trans_res))),
        iso_rot=float(np.mean(iso_r)),
        iso_trans=float(np.mean(iso_t)),
    )
