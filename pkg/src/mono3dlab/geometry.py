"""Yaw-box parameterization, object/camera transforms and pinhole projection.

Conventions used by every other module:

* Camera frame: +X right, +Y down, +Z forward (KITTI camera 2).
* Yaw rotates about camera +Y with ``RotY(a) = [[c, 0, s], [0, 1, 0], [-s, 0, c]]``,
  so positive yaw turns +X toward -Z.  Same sign as KITTI ``rotation_y``.
* Object frame: the box occupies [-1, 1]^3, width along x, height along y,
  length along z.  ``R = RotY(yaw) @ diag(w/2, h/2, l/2)`` maps it to the camera
  frame (scale first, then rotate) so the result is a rigid w x h x l box.
* Image frame: continuous pixel coordinates; pixel (u, v) of a raster covers
  [u, u+1) x [v, v+1) and its center sits at (u + 0.5, v + 0.5).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import BehindCameraError, InvalidInputError

EPS_Z = 1e-6

# Lexicographic over the (x, y, z) signs of the object-frame corner.
CORNER_SIGNS = np.array(list(itertools.product((-1.0, 1.0), repeat=3)))

# Index pairs of the 12 box edges in CORNER_SIGNS ordering (corners differing in one sign).
BOX_EDGES = tuple(
    (i, j)
    for i in range(8)
    for j in range(i + 1, 8)
    if np.count_nonzero(CORNER_SIGNS[i] != CORNER_SIGNS[j]) == 1
)


def wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]."""
    a = math.remainder(a, 2.0 * math.pi)
    if a <= -math.pi:
        a += 2.0 * math.pi
    return a


def _finite(*values: float) -> bool:
    return all(math.isfinite(v) for v in values)


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not _finite(self.fx, self.fy, self.cx, self.cy):
            raise InvalidInputError(f"non-finite intrinsics {self}")
        if self.fx <= 0 or self.fy <= 0:
            raise InvalidInputError(f"focal lengths must be positive, got fx={self.fx} fy={self.fy}")

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class Dimensions:
    w: float
    h: float
    l: float

    def __post_init__(self):
        if not _finite(self.w, self.h, self.l) or min(self.w, self.h, self.l) <= 0:
            raise InvalidInputError(f"dimensions must be positive and finite, got {self}")

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.h, self.l])


@dataclass(frozen=True)
class ObjectPose:
    yaw: float
    center: tuple[float, float, float]

    def __post_init__(self):
        if not math.isfinite(self.yaw):
            raise InvalidInputError(f"non-finite yaw {self.yaw}")
        c = tuple(float(v) for v in self.center)
        if len(c) != 3 or not _finite(*c):
            raise InvalidInputError(f"center must be a finite 3-vector, got {self.center}")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "yaw", wrap_angle(float(self.yaw)))


@dataclass(frozen=True)
class Box3D:
    pose: ObjectPose
    dims: Dimensions
    class_id: int = 0

    @classmethod
    def make(cls, center, dims, yaw: float = 0.0, class_id: int = 0) -> "Box3D":
        if not isinstance(dims, Dimensions):
            dims = Dimensions(*(float(d) for d in dims))
        return cls(ObjectPose(yaw, tuple(center)), dims, class_id)

    @property
    def center(self) -> np.ndarray:
        return np.array(self.pose.center)

    @property
    def yaw(self) -> float:
        return self.pose.yaw

    @property
    def depth(self) -> float:
        return self.pose.center[2]

    def with_center(self, center) -> "Box3D":
        return replace(self, pose=ObjectPose(self.pose.yaw, tuple(center)))

    def volume(self) -> float:
        return self.dims.w * self.dims.h * self.dims.l


@dataclass(frozen=True)
class PixelPoint:
    u: float
    v: float

    def __post_init__(self):
        if not _finite(self.u, self.v):
            raise InvalidInputError(f"non-finite pixel {self}")

    def as_array(self) -> np.ndarray:
        return np.array([self.u, self.v])


def rot_y(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rotation_scale_matrix(yaw: float, dims: Dimensions) -> np.ndarray:
    """Object-to-camera linear map ``RotY(yaw) @ diag(w/2, h/2, l/2)``."""
    if not math.isfinite(yaw):
        raise InvalidInputError(f"non-finite yaw {yaw}")
    return rot_y(yaw) * (0.5 * dims.as_array())[None, :]


def object_to_camera(p_obj, box: Box3D) -> np.ndarray:
    """Map object-frame points (shape (3,) or (N, 3)) into the camera frame."""
    p = np.asarray(p_obj, dtype=float)
    return p @ rotation_scale_matrix(box.yaw, box.dims).T + box.center


def camera_to_object(p_cam, box: Box3D) -> np.ndarray:
    p = np.asarray(p_cam, dtype=float) - box.center
    # inverse of Rot @ S is S^-1 @ Rot^T
    return (p @ rot_y(box.yaw)) / (0.5 * box.dims.as_array())


def project(K: CameraIntrinsics, P) -> np.ndarray:
    """Pinhole projection; returns (2,) for a single point or (N, 2)."""
    P = np.asarray(P, dtype=float)
    z = P[..., 2]
    if np.any(~(z > EPS_Z)):
        raise BehindCameraError(f"point(s) with z <= {EPS_Z} cannot be projected")
    u = K.fx * P[..., 0] / z + K.cx
    v = K.fy * P[..., 1] / z + K.cy
    return np.stack([u, v], axis=-1)


def project_unchecked(K: CameraIntrinsics, P: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized projection returning (uv, in_front) instead of raising."""
    z = P[..., 2]
    ok = z > EPS_Z
    zs = np.where(ok, z, 1.0)
    uv = np.stack([K.fx * P[..., 0] / zs + K.cx, K.fy * P[..., 1] / zs + K.cy], axis=-1)
    return uv, ok


def backproject(K: CameraIntrinsics, p, z) -> np.ndarray:
    """Lift pixel(s) to camera-frame points at depth ``z``."""
    if isinstance(p, PixelPoint):
        p = p.as_array()
    p = np.asarray(p, dtype=float)
    z = np.asarray(z, dtype=float)
    if np.any(~(z > EPS_Z)):
        raise InvalidInputError(f"backprojection depth must exceed {EPS_Z}")
    x = (p[..., 0] - K.cx) * z / K.fx
    y = (p[..., 1] - K.cy) * z / K.fy
    return np.stack(np.broadcast_arrays(x, y, z), axis=-1)


def box_corners(box: Box3D) -> np.ndarray:
    """(8, 3) camera-frame corners in CORNER_SIGNS order."""
    return object_to_camera(CORNER_SIGNS, box)


def projected_center(box: Box3D, K: CameraIntrinsics) -> np.ndarray:
    return project(K, box.center)


def box_at_depth(box: Box3D, K: CameraIntrinsics, depth: float, center_px=None) -> Box3D:
    """Slide the box center along the ray through its projected center to ``depth``."""
    if center_px is None:
        center_px = projected_center(box, K)
    return box.with_center(backproject(K, center_px, depth))


def normalize_pixel(p, center, roi_w: float, roi_h: float) -> np.ndarray:
    """Location-invariant ROI coordinates ``((u - u_o) / W, (v - v_o) / H)``."""
    if not (roi_w > 0 and roi_h > 0):
        raise InvalidInputError(f"ROI size must be positive, got {roi_w}x{roi_h}")
    if isinstance(p, PixelPoint):
        p = p.as_array()
    if isinstance(center, PixelPoint):
        center = center.as_array()
    p = np.asarray(p, dtype=float)
    center = np.asarray(center, dtype=float)
    return (p - center) / np.array([roi_w, roi_h])


@dataclass(frozen=True)
class PixelRect:
    """Half-open integer pixel rectangle [u0, u1) x [v0, v1)."""

    u0: int
    v0: int
    u1: int
    v1: int

    @property
    def width(self) -> int:
        return self.u1 - self.u0

    @property
    def height(self) -> int:
        return self.v1 - self.v0

    @property
    def empty(self) -> bool:
        return self.width <= 0 or self.height <= 0

    def clip(self, width: int, height: int) -> "PixelRect":
        return PixelRect(max(self.u0, 0), max(self.v0, 0), min(self.u1, width), min(self.v1, height))

    def pixels(self, stride: int = 1) -> np.ndarray:
        """(N, 2) integer (u, v) indices in row-major order."""
        vv, uu = np.mgrid[self.v0:self.v1:stride, self.u0:self.u1:stride]
        return np.stack([uu.ravel(), vv.ravel()], axis=-1)

    @classmethod
    def bounding(cls, pixels: np.ndarray) -> "PixelRect":
        pixels = np.asarray(pixels)
        if len(pixels) == 0:
            return cls(0, 0, 0, 0)
        lo = pixels.min(axis=0)
        hi = pixels.max(axis=0) + 1
        return cls(int(lo[0]), int(lo[1]), int(hi[0]), int(hi[1]))


def pixel_centers(pixels: np.ndarray) -> np.ndarray:
    """Continuous image coordinates of integer pixel indices."""
    return np.asarray(pixels, dtype=float) + 0.5


@dataclass(frozen=True, eq=False)
class KeypointSet:
    """Observed image locations of the 8 box corners (CORNER_SIGNS order)."""

    uv: np.ndarray  # (8, 2)
    valid: np.ndarray  # (8,) bool

    def __post_init__(self):
        uv = np.asarray(self.uv, dtype=float).reshape(8, 2)
        valid = np.asarray(self.valid, dtype=bool).reshape(8)
        object.__setattr__(self, "uv", uv)
        object.__setattr__(self, "valid", valid)

    @property
    def n_valid(self) -> int:
        return int(self.valid.sum())

    def __eq__(self, other):
        if not isinstance(other, KeypointSet):
            return NotImplemented
        return np.array_equal(self.uv, other.uv, equal_nan=True) and np.array_equal(self.valid, other.valid)


def project_corners(box: Box3D, K: CameraIntrinsics) -> KeypointSet:
    """Exact corner projections; corners at or behind the camera are marked invalid."""
    uv, ok = project_unchecked(K, box_corners(box))
    return KeypointSet(np.where(ok[:, None], uv, np.nan), ok)
