"""Rigid transforms, pinhole projection, and rig pose composition.

Conventions used throughout the package:
  * Poses are camera-to-world (projection applies the inverse).
  * Rotations are stored as unit quaternions (w, x, y, z) and renormalized
    after every composition.
  * Camera frame: x right, y down, z forward.
  * Pixel coordinates are continuous with (0, 0) at the top-left pixel center.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NonPositiveDepthError


# ---------------------------------------------------------------------------
# Quaternion helpers (w, x, y, z)
# ---------------------------------------------------------------------------

def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    return q / np.linalg.norm(q)


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quat_from_axis_angle(axis: np.ndarray, angle_rad: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    n = np.linalg.norm(axis)
    if n == 0.0:
        return np.array([1.0, 0.0, 0.0, 0.0])
    half = 0.5 * angle_rad
    return np.concatenate([[np.cos(half)], np.sin(half) * axis / n])


def quat_from_rotvec(rotvec: np.ndarray) -> np.ndarray:
    rotvec = np.asarray(rotvec, dtype=np.float64)
    angle = np.linalg.norm(rotvec)
    if angle < 1e-12:
        # First-order expansion keeps exp well-behaved near zero.
        return quat_normalize(np.concatenate([[1.0], 0.5 * rotvec]))
    return quat_from_axis_angle(rotvec / angle, angle)


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate one or many 3-vectors by unit quaternion q."""
    v = np.asarray(v, dtype=np.float64)
    return v @ quat_to_matrix(q).T


def rotation_angle(q: np.ndarray) -> float:
    """Rotation angle of a unit quaternion, in radians, in [0, pi]."""
    w = min(1.0, abs(float(q[0])))
    return 2.0 * np.arccos(w)


# ---------------------------------------------------------------------------
# SE(3) poses
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SE3Pose:
    """Rigid transform stored as unit quaternion (w, x, y, z) + translation."""

    quat: np.ndarray
    trans: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.quat, dtype=np.float64).reshape(4)
        t = np.asarray(self.trans, dtype=np.float64).reshape(3)
        n = np.linalg.norm(q)
        if abs(n - 1.0) > 1e-6:
            raise ValueError(f"quaternion norm {n:.6g} too far from 1")
        object.__setattr__(self, "quat", q / n)
        object.__setattr__(self, "trans", t)

    @staticmethod
    def identity() -> "SE3Pose":
        return SE3Pose(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3))

    @staticmethod
    def from_axis_angle(axis, angle_rad: float, trans=(0.0, 0.0, 0.0)) -> "SE3Pose":
        return SE3Pose(quat_from_axis_angle(np.asarray(axis, float), angle_rad),
                       np.asarray(trans, dtype=np.float64))

    @staticmethod
    def from_matrix(m: np.ndarray) -> "SE3Pose":
        m = np.asarray(m, dtype=np.float64)
        r = m[:3, :3]
        # Shepperd's method: pick the largest diagonal combination.
        tr = np.trace(r)
        if tr > 0:
            s = np.sqrt(tr + 1.0) * 2
            q = np.array([0.25 * s,
                          (r[2, 1] - r[1, 2]) / s,
                          (r[0, 2] - r[2, 0]) / s,
                          (r[1, 0] - r[0, 1]) / s])
        elif r[0, 0] > r[1, 1] and r[0, 0] > r[2, 2]:
            s = np.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2]) * 2
            q = np.array([(r[2, 1] - r[1, 2]) / s, 0.25 * s,
                          (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s])
        elif r[1, 1] > r[2, 2]:
            s = np.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2]) * 2
            q = np.array([(r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s,
                          0.25 * s, (r[1, 2] + r[2, 1]) / s])
        else:
            s = np.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1]) * 2
            q = np.array([(r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s,
                          (r[1, 2] + r[2, 1]) / s, 0.25 * s])
        return SE3Pose(quat_normalize(q), m[:3, 3])

    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.quat)

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation_matrix()
        m[:3, 3] = self.trans
        return m

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform one (3,) or many (N, 3) points."""
        return quat_rotate(self.quat, points) + self.trans


def se3_compose(a: SE3Pose, b: SE3Pose) -> SE3Pose:
    """Composition a ∘ b; the result quaternion is renormalized."""
    q = quat_normalize(quat_multiply(a.quat, b.quat))
    t = quat_rotate(a.quat, b.trans) + a.trans
    return SE3Pose(q, t)


def se3_inverse(a: SE3Pose) -> SE3Pose:
    qinv = quat_conjugate(a.quat)
    return SE3Pose(qinv, -quat_rotate(qinv, a.trans))


def se3_exp(rotvec: np.ndarray, trans: np.ndarray) -> SE3Pose:
    """Pose from a local 6-vector increment (axis-angle rotation + translation).

    The translation part is applied directly, not through the SE(3) V-matrix:
    increments here are the left-multiplied update convention of the solver.
    """
    return SE3Pose(quat_from_rotvec(rotvec), np.asarray(trans, dtype=np.float64))


# ---------------------------------------------------------------------------
# Pinhole camera
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width) or not (0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx],
                         [0.0, self.fy, self.cy],
                         [0.0, 0.0, 1.0]])


def project(K: Intrinsics, p_cam: np.ndarray) -> np.ndarray:
    """Pinhole projection of camera-frame points (..., 3) -> pixels (..., 2)."""
    p = np.asarray(p_cam, dtype=np.float64)
    z = p[..., 2]
    if np.any(z <= 0):
        raise NonPositiveDepthError("point has non-positive depth")
    return np.stack([K.fx * p[..., 0] / z + K.cx,
                     K.fy * p[..., 1] / z + K.cy], axis=-1)


def unproject(K: Intrinsics, pixel: np.ndarray, depth) -> np.ndarray:
    """Inverse of project: pixels (..., 2) at given depth -> camera-frame points."""
    px = np.asarray(pixel, dtype=np.float64)
    d = np.asarray(depth, dtype=np.float64)
    if np.any(d <= 0):
        raise NonPositiveDepthError("depth must be positive")
    x = (px[..., 0] - K.cx) / K.fx * d
    y = (px[..., 1] - K.cy) / K.fy * d
    return np.stack([x, y, d * np.ones_like(x)], axis=-1)


def pixel_rays(K: Intrinsics, pose: SE3Pose) -> tuple[np.ndarray, np.ndarray]:
    """World-space ray origins and unit directions for every pixel center.

    Returns (origins (H, W, 3), directions (H, W, 3)).
    """
    u, v = np.meshgrid(np.arange(K.width, dtype=np.float64),
                       np.arange(K.height, dtype=np.float64), indexing="xy")
    dirs = np.stack([(u - K.cx) / K.fx, (v - K.cy) / K.fy, np.ones_like(u)], axis=-1)
    dirs = dirs @ pose.rotation_matrix().T
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    origins = np.broadcast_to(pose.trans, dirs.shape).copy()
    return origins, dirs


# ---------------------------------------------------------------------------
# Rig state
# ---------------------------------------------------------------------------

@dataclass
class RigState:
    """Per-timestamp ego poses plus one fixed offset per camera.

    The camera-to-world pose of camera k at timestamp i is
    ego_poses[i] ∘ deltas[k].
    """

    ego_poses: list = field(default_factory=list)
    deltas: list = field(default_factory=list)

    @property
    def n_timestamps(self) -> int:
        return len(self.ego_poses)

    @property
    def n_cameras(self) -> int:
        return len(self.deltas)

    def copy(self) -> "RigState":
        return RigState(list(self.ego_poses), list(self.deltas))


def camera_pose(rig: RigState, i: int, k: int) -> SE3Pose:
    """Camera-to-world pose of camera k at timestamp i."""
    if not (0 <= i < rig.n_timestamps):
        raise IndexError(f"timestamp {i} out of range [0, {rig.n_timestamps})")
    if not (0 <= k < rig.n_cameras):
        raise IndexError(f"camera {k} out of range [0, {rig.n_cameras})")
    return se3_compose(rig.ego_poses[i], rig.deltas[k])


def pose_difference(a: SE3Pose, b: SE3Pose) -> tuple[float, float]:
    """(rotation angle in radians, translation distance) between two poses."""
    dq = quat_multiply(quat_conjugate(a.quat), b.quat)
    return rotation_angle(dq), float(np.linalg.norm(a.trans - b.trans))
