"""Geometric primitives and the raw motion data model.

Conventions used throughout the package:

* Axes: +x right, +y up, +z forward. Angles follow the standard
  right-handed quaternion/rotation-matrix math; all derived sign
  conventions (yaw, pitch) are pinned by tests against a rotation-matrix
  oracle.
* Quaternions are stored component order ``(x, y, z, w)`` and are kept in
  canonical sign: ``w >= 0``, and if ``w == 0`` the first nonzero of
  ``x, y, z`` is positive. A quaternion and its negation encode the same
  rotation; canonicalization makes downstream features deterministic.
* Pitch is the elevation of the rotated forward axis, reported in degrees
  with positive values meaning a downward gaze. Range is [-90, +90].

The array-level helpers (``qmul``, ``qrotate``, ...) operate on numpy
arrays with a trailing quaternion/vector axis and broadcast over leading
dimensions; the dataclass layer wraps them for single values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError

_UNIT_TOL = 1e-6


# ---------------------------------------------------------------------------
# array-level quaternion kernels
# ---------------------------------------------------------------------------

def qnormalize(q: np.ndarray) -> np.ndarray:
    """Scale quaternions to unit norm. Zero-norm input raises."""
    q = np.asarray(q, dtype=np.float64)
    norm = np.sqrt(np.sum(q * q, axis=-1))
    if np.any(norm <= 0.0) or not np.all(np.isfinite(norm)):
        raise InvalidInputError("quaternion with zero or non-finite norm")
    return q / norm[..., None]


def qcanonical(q: np.ndarray) -> np.ndarray:
    """Flip signs so w >= 0 (first nonzero of x,y,z positive when w == 0)."""
    q = np.asarray(q, dtype=np.float64)
    x, y, z, w = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    s = np.sign(w)
    tie = np.where(np.sign(z) != 0.0, np.sign(z), 1.0)
    tie = np.where(np.sign(y) != 0.0, np.sign(y), tie)
    tie = np.where(np.sign(x) != 0.0, np.sign(x), tie)
    s = np.where(s != 0.0, s, tie)
    return q * s[..., None]


def qmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product a*b, so that qrotate(qmul(a, b), v) == qrotate(a, qrotate(b, v))."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    ax, ay, az, aw = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bx, by, bz, bw = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack(
        [
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
            aw * bw - ax * bx - ay * by - az * bz,
        ],
        axis=-1,
    )


def qconj(q: np.ndarray) -> np.ndarray:
    """Conjugate; the inverse for unit quaternions."""
    q = np.asarray(q, dtype=np.float64)
    return q * np.array([-1.0, -1.0, -1.0, 1.0])


def qrotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate vectors v by unit quaternions q (active rotation)."""
    q = np.asarray(q, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    u = q[..., :3]
    w = q[..., 3:4]
    uv = np.cross(u, v)
    return v + 2.0 * (w * uv + np.cross(u, uv))


def qmatrix(q: np.ndarray) -> np.ndarray:
    """Rotation matrices (...,3,3) with columns = rotated basis vectors."""
    q = np.asarray(q, dtype=np.float64)
    x, y, z, w = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    xx, yy, zz = x * x, y * y, z * z
    xy, xz, yz = x * y, x * z, y * z
    wx, wy, wz = w * x, w * y, w * z
    m = np.empty(q.shape[:-1] + (3, 3), dtype=np.float64)
    m[..., 0, 0] = 1.0 - 2.0 * (yy + zz)
    m[..., 0, 1] = 2.0 * (xy - wz)
    m[..., 0, 2] = 2.0 * (xz + wy)
    m[..., 1, 0] = 2.0 * (xy + wz)
    m[..., 1, 1] = 1.0 - 2.0 * (xx + zz)
    m[..., 1, 2] = 2.0 * (yz - wx)
    m[..., 2, 0] = 2.0 * (xz - wy)
    m[..., 2, 1] = 2.0 * (yz + wx)
    m[..., 2, 2] = 1.0 - 2.0 * (xx + yy)
    return m


def qaxis_angle(axis, angle_rad) -> np.ndarray:
    """Unit quaternion for a rotation of angle_rad about axis (broadcasts over angles)."""
    axis = np.asarray(axis, dtype=np.float64)
    n = np.linalg.norm(axis, axis=-1, keepdims=True)
    if np.any(n <= 0.0):
        raise InvalidInputError("rotation axis must be nonzero")
    axis = axis / n
    angle = np.asarray(angle_rad, dtype=np.float64)
    half = 0.5 * angle
    s = np.sin(half)
    xyz = axis * s[..., None]
    return np.concatenate([xyz, np.cos(half)[..., None]], axis=-1)


def qslerp(a: np.ndarray, b: np.ndarray, u) -> np.ndarray:
    """Geodesic interpolation along the shorter arc, canonical-sign output."""
    a = qnormalize(a)
    b = qnormalize(b)
    u = np.asarray(u, dtype=np.float64)
    dot = np.sum(a * b, axis=-1)
    b = np.where((dot < 0.0)[..., None], -b, b)
    dot = np.clip(np.abs(dot), 0.0, 1.0)
    theta = np.arccos(dot)
    sin_theta = np.sin(theta)
    # fall back to normalized lerp when the arc is too short for stable sines
    close = dot > 0.9995
    safe_sin = np.where(close, 1.0, sin_theta)
    w1 = np.where(close, 1.0 - u, np.sin((1.0 - u) * theta) / safe_sin)
    w2 = np.where(close, u, np.sin(u * theta) / safe_sin)
    out = a * w1[..., None] + b * w2[..., None]
    return qcanonical(qnormalize(out))


def forward_vectors(rot: np.ndarray) -> np.ndarray:
    """The rotated forward (+z) axis for an array of quaternions."""
    rot = np.asarray(rot, dtype=np.float64)
    fwd = np.zeros(rot.shape[:-1] + (3,))
    fwd[..., 2] = 1.0
    return qrotate(rot, fwd)


def pitch_angles(rot: np.ndarray) -> np.ndarray:
    """Signed pitch in degrees for an array of quaternions; positive = looking down."""
    fwd = forward_vectors(rot)
    return -np.degrees(np.arcsin(np.clip(fwd[..., 1], -1.0, 1.0)))


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------

def _require_finite(name: str, *values: float) -> None:
    if not all(math.isfinite(v) for v in values):
        raise InvalidInputError(f"{name} components must be finite")


@dataclass(frozen=True)
class Vec3:
    """A 3-vector in meters (positions) or unitless (directions)."""

    x: float
    y: float
    z: float

    def __post_init__(self):
        _require_finite("Vec3", self.x, self.y, self.z)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=np.float64)

    @classmethod
    def from_array(cls, a) -> "Vec3":
        a = np.asarray(a, dtype=np.float64)
        return cls(float(a[0]), float(a[1]), float(a[2]))


@dataclass(frozen=True)
class UnitQuaternion:
    """A unit quaternion (x, y, z, w), canonicalized to w >= 0 on construction."""

    x: float
    y: float
    z: float
    w: float

    def __post_init__(self):
        _require_finite("UnitQuaternion", self.x, self.y, self.z, self.w)
        norm = math.sqrt(self.x**2 + self.y**2 + self.z**2 + self.w**2)
        if abs(norm - 1.0) > _UNIT_TOL:
            raise InvalidInputError(f"quaternion norm {norm:.8f} not within {_UNIT_TOL} of 1")
        q = qcanonical(np.array([self.x, self.y, self.z, self.w]) / norm)
        object.__setattr__(self, "x", float(q[0]))
        object.__setattr__(self, "y", float(q[1]))
        object.__setattr__(self, "z", float(q[2]))
        object.__setattr__(self, "w", float(q[3]))

    @classmethod
    def identity(cls) -> "UnitQuaternion":
        return cls(0.0, 0.0, 0.0, 1.0)

    @classmethod
    def from_array(cls, a) -> "UnitQuaternion":
        a = np.asarray(a, dtype=np.float64)
        return cls(float(a[0]), float(a[1]), float(a[2]), float(a[3]))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z, self.w], dtype=np.float64)


@dataclass(frozen=True)
class DevicePose:
    """World-frame position and orientation of one tracked device."""

    position: Vec3
    rotation: UnitQuaternion

    @classmethod
    def identity(cls) -> "DevicePose":
        return cls(Vec3(0.0, 0.0, 0.0), UnitQuaternion.identity())


@dataclass(frozen=True)
class MotionFrame:
    """One timestamped sample of the head-mounted device and both hand devices."""

    t: float
    hmd: DevicePose
    left: DevicePose
    right: DevicePose

    def __post_init__(self):
        if not (math.isfinite(self.t) and self.t >= 0.0):
            raise InvalidInputError(f"frame timestamp must be finite and >= 0, got {self.t}")


@dataclass
class MotionRecording:
    """A labeled sequence of motion frames, stored as packed arrays.

    Arrays are validated and normalized on construction: timestamps must be
    strictly increasing, rotations must be unit within 1e-6 (they are then
    renormalized and sign-canonicalized).
    """

    user_id: str
    condition: str
    height_cm: float
    t: np.ndarray = field(repr=False)
    hmd_pos: np.ndarray = field(repr=False)
    hmd_rot: np.ndarray = field(repr=False)
    left_pos: np.ndarray = field(repr=False)
    left_rot: np.ndarray = field(repr=False)
    right_pos: np.ndarray = field(repr=False)
    right_rot: np.ndarray = field(repr=False)

    def __post_init__(self):
        if not self.user_id or not self.condition:
            raise InvalidInputError("user_id and condition must be non-empty")
        self.t = np.asarray(self.t, dtype=np.float64)
        if self.t.ndim != 1 or self.t.shape[0] < 2:
            raise InvalidInputError("a recording needs at least 2 frames")
        n = self.t.shape[0]
        if self.t[0] < 0.0 or not np.all(np.isfinite(self.t)):
            raise InvalidInputError("timestamps must be finite and start at >= 0")
        if not np.all(np.diff(self.t) > 0.0):
            raise InvalidInputError("timestamps must be strictly increasing")
        for name in ("hmd_pos", "left_pos", "right_pos"):
            a = np.asarray(getattr(self, name), dtype=np.float64)
            if a.shape != (n, 3) or not np.all(np.isfinite(a)):
                raise InvalidInputError(f"{name} must be finite with shape ({n}, 3)")
            setattr(self, name, a)
        for name in ("hmd_rot", "left_rot", "right_rot"):
            a = np.asarray(getattr(self, name), dtype=np.float64)
            if a.shape != (n, 4) or not np.all(np.isfinite(a)):
                raise InvalidInputError(f"{name} must be finite with shape ({n}, 4)")
            norms = np.linalg.norm(a, axis=-1)
            if np.any(np.abs(norms - 1.0) > _UNIT_TOL):
                raise InvalidInputError(f"{name} contains non-unit quaternions")
            # renormalize only rows that need it so construction is idempotent
            # (re-reading a written file must reproduce the same bits)
            off = np.abs(norms - 1.0) > 1e-12
            if np.any(off):
                a = a.copy()
                a[off] /= norms[off, None]
            setattr(self, name, qcanonical(a))

    @property
    def n_frames(self) -> int:
        return self.t.shape[0]

    @property
    def duration(self) -> float:
        return float(self.t[-1] - self.t[0])

    def frame(self, i: int) -> MotionFrame:
        return MotionFrame(
            t=float(self.t[i]),
            hmd=DevicePose(Vec3.from_array(self.hmd_pos[i]), UnitQuaternion.from_array(self.hmd_rot[i])),
            left=DevicePose(Vec3.from_array(self.left_pos[i]), UnitQuaternion.from_array(self.left_rot[i])),
            right=DevicePose(Vec3.from_array(self.right_pos[i]), UnitQuaternion.from_array(self.right_rot[i])),
        )

    @property
    def frames(self) -> list[MotionFrame]:
        return [self.frame(i) for i in range(self.n_frames)]

    @classmethod
    def from_frames(cls, user_id: str, condition: str, height_cm: float,
                    frames: list[MotionFrame]) -> "MotionRecording":
        if len(frames) < 2:
            raise InvalidInputError("a recording needs at least 2 frames")
        return cls(
            user_id=user_id,
            condition=condition,
            height_cm=height_cm,
            t=np.array([f.t for f in frames]),
            hmd_pos=np.array([f.hmd.position.as_array() for f in frames]),
            hmd_rot=np.array([f.hmd.rotation.as_array() for f in frames]),
            left_pos=np.array([f.left.position.as_array() for f in frames]),
            left_rot=np.array([f.left.rotation.as_array() for f in frames]),
            right_pos=np.array([f.right.position.as_array() for f in frames]),
            right_rot=np.array([f.right.rotation.as_array() for f in frames]),
        )


# ---------------------------------------------------------------------------
# pose operations
# ---------------------------------------------------------------------------

def quat_multiply(a: UnitQuaternion, b: UnitQuaternion) -> UnitQuaternion:
    """Compose rotations: applying the result equals applying b, then a."""
    return UnitQuaternion.from_array(qnormalize(qmul(a.as_array(), b.as_array())))


def quat_inverse(q: UnitQuaternion) -> UnitQuaternion:
    """Inverse rotation (conjugate for unit quaternions)."""
    return UnitQuaternion.from_array(qconj(q.as_array()))


def quat_slerp(a: UnitQuaternion, b: UnitQuaternion, u: float) -> UnitQuaternion:
    """Shorter-arc geodesic interpolation; u=0 and u=1 reproduce the endpoints exactly."""
    if not 0.0 <= u <= 1.0:
        raise InvalidInputError(f"interpolation parameter u={u} outside [0, 1]")
    if u == 0.0:
        return a
    if u == 1.0:
        return b
    return UnitQuaternion.from_array(qslerp(a.as_array(), b.as_array(), u))


def relative_pose(child: DevicePose, parent: DevicePose) -> DevicePose:
    """Express child in the parent's local frame."""
    inv = qconj(parent.rotation.as_array())
    pos = qrotate(inv, child.position.as_array() - parent.position.as_array())
    rot = qmul(inv, child.rotation.as_array())
    return DevicePose(Vec3.from_array(pos), UnitQuaternion.from_array(qnormalize(rot)))


def pitch_angle(q: UnitQuaternion) -> float:
    """Pitch of the forward axis in degrees; positive = looking down."""
    return float(pitch_angles(q.as_array()))
