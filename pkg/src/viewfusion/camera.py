"""Pinhole camera intrinsics/extrinsics, projection, and look-at poses.

Conventions: world-to-camera transform p = R @ X + t, camera +z is the
viewing direction, image u grows right and v grows down, pixel (i, j) has
its center at continuous coordinates (i + 0.5, j + 0.5). The camera center
is C = -R^T @ t, the unique point with R @ C + t = 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DEFAULT_Z_NEAR = 0.01


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be at least 1x1")

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx],
                         [0.0, self.fy, self.cy],
                         [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class CameraExtrinsics:
    """World-to-camera rotation (orthonormal, det +1) and translation."""

    rotation: np.ndarray     # (3, 3)
    translation: np.ndarray  # (3,)

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-6):
            raise ValueError("rotation is not orthonormal")
        if not math.isclose(float(np.linalg.det(r)), 1.0, abs_tol=1e-6):
            raise ValueError("rotation must have determinant +1")


@dataclass(frozen=True)
class PixelCoord:
    """Continuous pixel coordinates plus camera-frame depth in meters."""

    u: float
    v: float
    depth: float


def intrinsics_from_fov(width: int, height: int, horizontal_fov: float) -> CameraIntrinsics:
    """Square-pixel intrinsics from a horizontal field of view in radians."""
    if not 0.0 < horizontal_fov < math.pi:
        raise ValueError(f"horizontal_fov must be in (0, pi), got {horizontal_fov}")
    fx = width / (2.0 * math.tan(horizontal_fov / 2.0))
    return CameraIntrinsics(fx=fx, fy=fx, cx=width / 2.0, cy=height / 2.0,
                            width=int(width), height=int(height))


def project_point(point, intr: CameraIntrinsics, extr: CameraExtrinsics,
                  z_near: float = DEFAULT_Z_NEAR) -> PixelCoord | None:
    """Project a world point; None when it lies at or behind the near plane."""
    p = extr.rotation @ np.asarray(point, dtype=np.float64) + extr.translation
    if p[2] <= z_near:
        return None
    return PixelCoord(u=float(intr.fx * p[0] / p[2] + intr.cx),
                      v=float(intr.fy * p[1] / p[2] + intr.cy),
                      depth=float(p[2]))


def project_points(points, intr: CameraIntrinsics, extr: CameraExtrinsics,
                   z_near: float = DEFAULT_Z_NEAR):
    """Vectorized projection of an (N, 3) array.

    Returns (u, v, depth, in_front); u/v/depth are meaningful only where
    in_front is True.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    cam = pts @ extr.rotation.T + extr.translation
    z = cam[:, 2]
    in_front = z > z_near
    with np.errstate(divide="ignore", invalid="ignore"):
        u = intr.fx * cam[:, 0] / z + intr.cx
        v = intr.fy * cam[:, 1] / z + intr.cy
    return u, v, z, in_front


def camera_center(extr: CameraExtrinsics) -> np.ndarray:
    return -extr.rotation.T @ extr.translation


def point_camera_distance(point, extr: CameraExtrinsics) -> float:
    return float(np.linalg.norm(np.asarray(point, dtype=np.float64) - camera_center(extr)))


def look_at(eye, target, up_hint=(0.0, 0.0, 1.0)) -> CameraExtrinsics:
    """Extrinsics with camera +z pointing from eye toward target.

    up_hint fixes the roll (it appears toward the top of the image). A
    degenerate hint (parallel to the view direction) falls back to +Z,
    then +Y.
    """
    eye = np.asarray(eye, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    forward = target - eye
    dist = np.linalg.norm(forward)
    if dist < 1e-12:
        raise ValueError("eye and target coincide")
    z = forward / dist
    for up in (np.asarray(up_hint, dtype=np.float64), np.array([0.0, 0.0, 1.0]),
               np.array([0.0, 1.0, 0.0])):
        lateral = up - np.dot(up, z) * z
        norm = np.linalg.norm(lateral)
        if norm > 1e-9:
            break
    else:
        raise ValueError("no usable up vector")
    y = -lateral / norm          # image v grows downward
    x = np.cross(y, z)
    rotation = np.stack([x, y, z])
    return CameraExtrinsics(rotation=rotation, translation=-rotation @ eye)
