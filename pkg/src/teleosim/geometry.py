"""SE(3) primitives shared by every module.

Rotations are unit quaternions stored as numpy arrays ``(w, x, y, z)``;
translations are 3-vectors in meters.  The wire form of a :class:`Transform`
is seven little-endian float64 values ``(qw, qx, qy, qz, tx, ty, tz)``;
:class:`Twist` and :class:`SpatialAccel` serialize as six float64 values
(linear then angular).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

_TRANSFORM_WIRE = struct.Struct("<7d")
_SIXVEC_WIRE = struct.Struct("<6d")


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if n == 0.0 or not np.isfinite(n):
        raise ValueError("cannot normalize degenerate quaternion")
    return q / n


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_conj(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate vector ``v`` by quaternion ``q`` (cheaper than forming the matrix)."""
    v = np.asarray(v, dtype=float)
    u = q[1:]
    w = q[0]
    return v + 2.0 * np.cross(u, np.cross(u, v) + w * v)


def quat_from_axis_angle(axis: np.ndarray, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    n = np.linalg.norm(axis)
    if n == 0.0:
        raise ValueError("zero rotation axis")
    half = 0.5 * angle
    return np.concatenate(([np.cos(half)], np.sin(half) * axis / n))


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_from_matrix(m: np.ndarray) -> np.ndarray:
    """Shepperd's method: branch on the largest diagonal element for stability."""
    m = np.asarray(m, dtype=float)
    t = np.trace(m)
    if t > 0.0:
        s = np.sqrt(t + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
        )
    else:
        i = int(np.argmax(np.diag(m)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = np.sqrt(m[i, i] - m[j, j] - m[k, k] + 1.0) * 2.0
        q = np.empty(4)
        q[0] = (m[k, j] - m[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (m[j, i] + m[i, j]) / s
        q[1 + k] = (m[k, i] + m[i, k]) / s
    return quat_normalize(q)


def rot_err(q_rel: np.ndarray) -> np.ndarray:
    """Axis-angle (log map) of a relative rotation, magnitude in [0, pi].

    Uses the atan2 form, which stays accurate near identity and near pi
    (the vector part dominates at pi, so no special-casing is needed).
    """
    q = np.asarray(q_rel, dtype=float)
    if q[0] < 0.0:
        q = -q
    n = np.linalg.norm(q[1:])
    if n < 1e-15:
        return 2.0 * q[1:] / q[0]
    angle = 2.0 * np.arctan2(n, q[0])
    return (angle / n) * q[1:]


def rot_exp(rotvec: np.ndarray) -> np.ndarray:
    """Inverse of :func:`rot_err`: axis-angle vector to quaternion."""
    rotvec = np.asarray(rotvec, dtype=float)
    angle = np.linalg.norm(rotvec)
    if angle < 1e-15:
        return quat_normalize(np.concatenate(([1.0], 0.5 * rotvec)))
    return quat_from_axis_angle(rotvec, angle)


@dataclass
class Transform:
    """Rigid transform from a child frame to a parent frame."""

    q: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    p: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self) -> None:
        self.q = np.asarray(self.q, dtype=float)
        self.p = np.asarray(self.p, dtype=float)

    @staticmethod
    def identity() -> "Transform":
        return Transform()

    @staticmethod
    def from_rotation(q: np.ndarray) -> "Transform":
        return Transform(quat_normalize(q), np.zeros(3))

    @staticmethod
    def from_translation(p: np.ndarray) -> "Transform":
        return Transform(np.array([1.0, 0.0, 0.0, 0.0]), np.asarray(p, dtype=float))

    @staticmethod
    def from_matrix(m: np.ndarray) -> "Transform":
        m = np.asarray(m, dtype=float)
        return Transform(quat_from_matrix(m[:3, :3]), m[:3, 3].copy())

    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.q)

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = quat_to_matrix(self.q)
        m[:3, 3] = self.p
        return m

    def apply(self, point: np.ndarray) -> np.ndarray:
        return quat_rotate(self.q, np.asarray(point, dtype=float)) + self.p

    def to_bytes(self) -> bytes:
        return _TRANSFORM_WIRE.pack(*self.q, *self.p)

    @staticmethod
    def from_bytes(raw: bytes) -> "Transform":
        vals = _TRANSFORM_WIRE.unpack(raw)
        return Transform(np.array(vals[:4]), np.array(vals[4:]))

    def copy(self) -> "Transform":
        return Transform(self.q.copy(), self.p.copy())

    def is_close(self, other: "Transform", tol: float = 1e-9) -> bool:
        dq = min(np.linalg.norm(self.q - other.q), np.linalg.norm(self.q + other.q))
        return dq <= tol and np.linalg.norm(self.p - other.p) <= tol


def compose(a: Transform, b: Transform) -> Transform:
    """Chain ``a`` then ``b``: result maps b's child frame through a."""
    return Transform(
        quat_normalize(quat_mul(a.q, b.q)),
        a.p + quat_rotate(a.q, b.p),
    )


def invert(t: Transform) -> Transform:
    qi = quat_conj(t.q)
    return Transform(qi, -quat_rotate(qi, t.p))


@dataclass
class Twist:
    linear: np.ndarray = field(default_factory=lambda: np.zeros(3))
    angular: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self) -> None:
        self.linear = np.asarray(self.linear, dtype=float)
        self.angular = np.asarray(self.angular, dtype=float)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.linear, self.angular])

    def to_bytes(self) -> bytes:
        return _SIXVEC_WIRE.pack(*self.linear, *self.angular)

    @staticmethod
    def from_bytes(raw: bytes) -> "Twist":
        v = _SIXVEC_WIRE.unpack(raw)
        return Twist(np.array(v[:3]), np.array(v[3:]))


@dataclass
class SpatialAccel:
    linear: np.ndarray = field(default_factory=lambda: np.zeros(3))
    angular: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self) -> None:
        self.linear = np.asarray(self.linear, dtype=float)
        self.angular = np.asarray(self.angular, dtype=float)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.linear, self.angular])

    def to_bytes(self) -> bytes:
        return _SIXVEC_WIRE.pack(*self.linear, *self.angular)

    @staticmethod
    def from_bytes(raw: bytes) -> "SpatialAccel":
        v = _SIXVEC_WIRE.unpack(raw)
        return SpatialAccel(np.array(v[:3]), np.array(v[3:]))


def skew(v: np.ndarray) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
