"""Pinhole cameras and projective geometry.

Conventions:

* world-to-camera transform: x_cam = R @ x_world + t
* camera looks along +z in its own frame; x is right, y follows the
  right-handed completion (image rows increase with y)
* pixel (col u, row v) has its center at integer coordinates, so the
  principal point of a centered W x H camera is ((W-1)/2, (H-1)/2)
* depth means the z coordinate in the camera frame, not ray length
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "CameraPose",
    "pinhole_intrinsics",
    "look_at",
]

_ORTHO_TOL = 1e-9


class CameraError(ValueError):
    """Raised for invalid camera parameters or degenerate viewpoints."""


@dataclass(frozen=True)
class CameraPose:
    """Intrinsics plus a rigid world-to-camera transform."""

    intrinsics: np.ndarray  # 3x3, fx/fy > 0
    rotation: np.ndarray  # 3x3, orthonormal, det +1
    translation: np.ndarray  # 3-vector

    def __post_init__(self) -> None:
        k = np.asarray(self.intrinsics, dtype=np.float64)
        r = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if k.shape != (3, 3) or r.shape != (3, 3):
            raise CameraError("intrinsics and rotation must be 3x3 matrices")
        if k[0, 0] <= 0.0 or k[1, 1] <= 0.0:
            raise CameraError("focal lengths must be positive")
        if np.max(np.abs(r.T @ r - np.eye(3))) > _ORTHO_TOL:
            raise CameraError("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > _ORTHO_TOL:
            raise CameraError("rotation determinant must be +1")
        if not (np.all(np.isfinite(k)) and np.all(np.isfinite(t))):
            raise CameraError("camera parameters must be finite")
        object.__setattr__(self, "intrinsics", k)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    def project(self, points_world: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Project world points; returns pixel coords (N, 2) and depths (N,).

        Points behind the camera get negative depth; callers filter.
        """
        pts = np.atleast_2d(np.asarray(points_world, dtype=np.float64))
        cam = pts @ self.rotation.T + self.translation
        z = cam[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = self.intrinsics[0, 0] * cam[:, 0] / z + self.intrinsics[0, 2]
            v = self.intrinsics[1, 1] * cam[:, 1] / z + self.intrinsics[1, 2]
        return np.stack([u, v], axis=-1), z

    def unproject(self, pixels: np.ndarray, depths: np.ndarray) -> np.ndarray:
        """Lift pixel coords (N, 2) with z-depths (N,) to world points (N, 3)."""
        px = np.atleast_2d(np.asarray(pixels, dtype=np.float64))
        d = np.asarray(depths, dtype=np.float64).reshape(-1)
        fx, fy = self.intrinsics[0, 0], self.intrinsics[1, 1]
        cx, cy = self.intrinsics[0, 2], self.intrinsics[1, 2]
        x = (px[:, 0] - cx) / fx * d
        y = (px[:, 1] - cy) / fy * d
        cam = np.stack([x, y, d], axis=-1)
        return (cam - self.translation) @ self.rotation

    def pixel_rays(self, height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
        """World-space ray origins/directions for every pixel.

        Directions are scaled so that the camera-frame z component is 1;
        the ray parameter then equals z-depth directly.
        """
        vv, uu = np.mgrid[0:height, 0:width]
        ones = np.ones_like(uu, dtype=np.float64)
        homog = np.stack([uu.astype(np.float64), vv.astype(np.float64), ones], axis=-1)
        dirs_cam = homog @ np.linalg.inv(self.intrinsics).T
        dirs_world = dirs_cam @ self.rotation
        return self.center, dirs_world


def pinhole_intrinsics(
    fx: float,
    width: int,
    height: int,
    fy: float | None = None,
    cx: float | None = None,
    cy: float | None = None,
) -> np.ndarray:
    """Centered pinhole intrinsics matrix."""
    fy = fx if fy is None else fy
    cx = (width - 1) / 2.0 if cx is None else cx
    cy = (height - 1) / 2.0 if cy is None else cy
    return np.array([[fx, 0.0, cx], [0.0, fy, cy], [0.0, 0.0, 1.0]], dtype=np.float64)


def look_at(
    eye: np.ndarray,
    target: np.ndarray,
    intrinsics: np.ndarray,
    up: np.ndarray = (0.0, 1.0, 0.0),
) -> CameraPose:
    """Camera at ``eye`` with its +z axis through ``target``."""
    eye = np.asarray(eye, dtype=np.float64).reshape(3)
    target = np.asarray(target, dtype=np.float64).reshape(3)
    up = np.asarray(up, dtype=np.float64).reshape(3)
    forward = target - eye
    norm = np.linalg.norm(forward)
    if norm < 1e-12:
        raise CameraError("eye and target coincide")
    forward = forward / norm
    right = np.cross(up, forward)
    rnorm = np.linalg.norm(right)
    if rnorm < 1e-12:
        raise CameraError("view direction is parallel to the up vector")
    right = right / rnorm
    down = np.cross(forward, right)
    rotation = np.stack([right, down, forward], axis=0)
    translation = -rotation @ eye
    return CameraPose(intrinsics=np.asarray(intrinsics, dtype=np.float64),
                      rotation=rotation, translation=translation)
