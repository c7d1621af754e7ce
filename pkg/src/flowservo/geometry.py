"""Pinhole camera, rigid poses and twists, and the point-feature interaction matrix.

Conventions used everywhere in the package:

* camera frame: +x right, +y down, +z along the optical axis;
* a :class:`Pose` maps camera coordinates to world coordinates,
  ``p_world = R @ p_cam + t``, so ``t`` is the camera centre;
* twists are ``[v; w]`` expressed in the camera frame and are applied on the
  right, ``T_new = T @ exp(dt * xi)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

Z_MIN = 1e-3
ORTHO_TOL = 1e-9


class DomainError(ValueError):
    """Input outside an operation's domain."""


class DegenerateDepthError(DomainError):
    pass


def _frozen(a, shape=None) -> np.ndarray:
    arr = np.array(a, dtype=np.float64)
    if shape is not None and arr.shape != shape:
        raise DomainError(f"expected shape {shape}, got {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise DomainError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise DomainError("principal point outside the image")

    @classmethod
    def default(cls) -> "Intrinsics":
        return cls(fx=128.0, fy=128.0, cx=63.5, cy=63.5, width=128, height=128)

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}


@dataclass(frozen=True)
class VelocityScrew:
    linear: np.ndarray = field(default_factory=lambda: np.zeros(3))
    angular: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        lin = _frozen(self.linear, (3,))
        ang = _frozen(self.angular, (3,))
        if not (np.all(np.isfinite(lin)) and np.all(np.isfinite(ang))):
            raise DomainError("twist components must be finite")
        object.__setattr__(self, "linear", lin)
        object.__setattr__(self, "angular", ang)

    @classmethod
    def from_vector(cls, xi) -> "VelocityScrew":
        xi = np.asarray(xi, dtype=np.float64)
        if xi.shape != (6,):
            raise DomainError(f"twist must have shape (6,), got {xi.shape}")
        return cls(xi[:3], xi[3:])

    @classmethod
    def zero(cls) -> "VelocityScrew":
        return cls(np.zeros(3), np.zeros(3))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.linear, self.angular])

    def __neg__(self) -> "VelocityScrew":
        return VelocityScrew(-self.linear, -self.angular)


@dataclass(frozen=True)
class Pose:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = _frozen(self.rotation, (3, 3))
        t = _frozen(self.translation, (3,))
        if np.max(np.abs(R.T @ R - np.eye(3))) > ORTHO_TOL:
            raise DomainError("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > ORTHO_TOL:
            raise DomainError("rotation is not proper (det != +1)")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_rotvec(cls, rotvec, translation) -> "Pose":
        return cls(so3_exp(np.asarray(rotvec, dtype=np.float64)), translation)

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def compose(self, other: "Pose") -> "Pose":
        return Pose(self.rotation @ other.rotation,
                    self.rotation @ other.translation + self.translation)

    def inverse(self) -> "Pose":
        Rt = self.rotation.T
        return Pose(Rt, -Rt @ self.translation)

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        """Express (N, 3) world points in this camera's frame."""
        return (points - self.translation) @ self.rotation

    def camera_to_world(self, points: np.ndarray) -> np.ndarray:
        return points @ self.rotation.T + self.translation

    def to_dict(self) -> dict:
        return {"rotvec": so3_log(self.rotation).tolist(),
                "translation": self.translation.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Pose":
        return cls.from_rotvec(d.get("rotvec", [0.0, 0.0, 0.0]), d.get("translation", [0.0, 0.0, 0.0]))


@dataclass(frozen=True)
class InteractionMatrix:
    rows: np.ndarray
    sample_coords: np.ndarray
    depths: np.ndarray

    def __post_init__(self):
        rows = _frozen(self.rows)
        coords = _frozen(self.sample_coords)
        depths = _frozen(self.depths)
        n = depths.shape[0]
        if rows.shape != (2 * n, 6) or coords.shape != (n, 2):
            raise DomainError("interaction matrix shape does not match its samples")
        if np.any(depths <= Z_MIN):
            raise DegenerateDepthError(f"depths must exceed Z_min={Z_MIN}")
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "sample_coords", coords)
        object.__setattr__(self, "depths", depths)

    @property
    def n_samples(self) -> int:
        return self.depths.shape[0]


def hat(w) -> np.ndarray:
    x, y, z = w
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def so3_exp(w) -> np.ndarray:
    """Rodrigues' formula for a rotation vector."""
    w = np.asarray(w, dtype=np.float64)
    th = float(np.linalg.norm(w))
    W = hat(w)
    if th < 1e-8:
        return np.eye(3) + W + 0.5 * W @ W
    return np.eye(3) + (np.sin(th) / th) * W + ((1.0 - np.cos(th)) / th**2) * W @ W


def so3_log(R) -> np.ndarray:
    th = rotation_angle(R)
    if th < 1e-9:
        return np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]]) * 0.5
    if np.pi - th < 1e-6:
        # axis from the symmetric part near 180 degrees
        B = (R + np.eye(3)) * 0.5
        axis = np.sqrt(np.clip(np.diag(B), 0.0, None))
        k = int(np.argmax(axis))
        axis = B[:, k] / axis[k]
        return th * axis / np.linalg.norm(axis)
    W = (R - R.T) / (2.0 * np.sin(th))
    return th * np.array([W[2, 1], W[0, 2], W[1, 0]])


def rotation_angle(R) -> float:
    c = (np.trace(R) - 1.0) * 0.5
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def se3_exp(xi) -> np.ndarray:
    """4x4 exponential of a twist ``[v; w]`` (closed form, exact V matrix)."""
    xi = np.asarray(xi, dtype=np.float64)
    v, w = xi[:3], xi[3:]
    th = float(np.linalg.norm(w))
    W = hat(w)
    R = so3_exp(w)
    if th < 1e-8:
        V = np.eye(3) + 0.5 * W + W @ W / 6.0
    else:
        V = (np.eye(3) + ((1.0 - np.cos(th)) / th**2) * W
             + ((th - np.sin(th)) / th**3) * W @ W)
    T = np.eye(4)
    T[:3, :3] = R
    T[:3, 3] = V @ v
    return T


def _orthonormalize(R: np.ndarray) -> np.ndarray:
    U, _, Vt = np.linalg.svd(R)
    out = U @ Vt
    if np.linalg.det(out) < 0:
        U[:, -1] *= -1
        out = U @ Vt
    return out


def normalize_pixel(intrinsics: Intrinsics, u: float, v: float) -> tuple[float, float]:
    if not (0 <= u < intrinsics.width and 0 <= v < intrinsics.height):
        raise DomainError(f"pixel ({u}, {v}) outside {intrinsics.width}x{intrinsics.height} image")
    return (u - intrinsics.cx) / intrinsics.fx, (v - intrinsics.cy) / intrinsics.fy


def interaction_rows(x: float, y: float, Z: float) -> np.ndarray:
    """The 2x6 image Jacobian of a normalized point (x, y) at depth Z."""
    if not Z > Z_MIN:
        raise DegenerateDepthError(f"depth {Z} must exceed Z_min={Z_MIN}")
    iz = 1.0 / Z
    return np.array([
        [-iz, 0.0, x * iz, x * y, -(1.0 + x * x), y],
        [0.0, -iz, y * iz, 1.0 + y * y, -x * y, -x],
    ])


def interaction_rows_batch(x: np.ndarray, y: np.ndarray, Z: np.ndarray) -> np.ndarray:
    """Vectorized interaction_rows, returned stacked as (2N, 6)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    Z = np.asarray(Z, dtype=np.float64)
    if np.any(~(Z > Z_MIN)):
        raise DegenerateDepthError(f"depths must exceed Z_min={Z_MIN}")
    iz = 1.0 / Z
    n = x.shape[0]
    L = np.zeros((n, 2, 6))
    L[:, 0, 0] = -iz
    L[:, 0, 2] = x * iz
    L[:, 0, 3] = x * y
    L[:, 0, 4] = -(1.0 + x * x)
    L[:, 0, 5] = y
    L[:, 1, 1] = -iz
    L[:, 1, 2] = y * iz
    L[:, 1, 3] = 1.0 + y * y
    L[:, 1, 4] = -x * y
    L[:, 1, 5] = -x
    return L.reshape(2 * n, 6)


def stack_interaction(samples) -> InteractionMatrix:
    """Stack per-sample Jacobians; ``samples`` is a sequence or (N, 3) array of (x, y, Z)."""
    arr = np.asarray(samples, dtype=np.float64)
    if arr.size == 0:
        raise DomainError("no samples to stack")
    arr = arr.reshape(-1, 3)
    rows = interaction_rows_batch(arr[:, 0], arr[:, 1], arr[:, 2])
    return InteractionMatrix(rows, arr[:, :2], arr[:, 2])


def integrate_twist(pose: Pose, twist: VelocityScrew, dt: float) -> Pose:
    if not dt > 0:
        raise DomainError("dt must be positive")
    T = pose.matrix() @ se3_exp(dt * twist.as_vector())
    R = T[:3, :3]
    if np.max(np.abs(R.T @ R - np.eye(3))) > 1e-12:
        R = _orthonormalize(R)
    return Pose(R, T[:3, 3])


def pose_error(a: Pose, b: Pose) -> tuple[float, float]:
    """Translation distance (m) and geodesic rotation angle (deg) between poses."""
    t_err = float(np.linalg.norm(a.translation - b.translation))
    r_err = float(np.degrees(rotation_angle(a.rotation.T @ b.rotation)))
    return t_err, r_err
