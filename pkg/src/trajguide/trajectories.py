"""Parametric camera trajectories.

All generated cameras look at a fixed target point.  Full-circle orbits
space their frames so that frame T would land back on frame 0; partial
spans include both endpoints.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .camera import CameraPose, look_at

__all__ = ["TrajectorySpec", "make_trajectory"]

_KINDS = ("orbit", "dolly_zoom", "arc_pan", "custom")


class TrajectoryError(ValueError):
    """Raised for invalid trajectory specifications."""


@dataclass(frozen=True)
class TrajectorySpec:
    """Declarative description of a camera path."""

    kind: str
    frame_count: int
    target: tuple[float, float, float] = (0.0, 0.0, 0.0)
    radius: float = 1.0
    span_deg: float = 360.0
    start_deg: float = 0.0
    height: float = 0.0
    pan_deg: float = 0.0
    dolly_from: float | None = None
    dolly_to: float | None = None
    poses: tuple = ()
    max_rotation_step_deg: float = 60.0
    max_translation_step: float = math.inf

    def __post_init__(self) -> None:
        if self.kind not in _KINDS:
            raise TrajectoryError(f"unknown trajectory kind {self.kind!r}")
        if self.frame_count < 1:
            raise TrajectoryError("frame_count must be >= 1")
        if self.kind in ("orbit", "arc_pan") and self.radius <= 0.0:
            raise TrajectoryError("orbit radius must be positive")
        if self.kind == "dolly_zoom" and (self.dolly_from is None or self.dolly_to is None):
            raise TrajectoryError("dolly_zoom needs dolly_from and dolly_to distances")
        if self.kind == "dolly_zoom" and (self.dolly_from <= 0.0 or self.dolly_to <= 0.0):
            raise TrajectoryError("dolly distances must be positive")
        if self.kind == "custom" and len(self.poses) != self.frame_count:
            raise TrajectoryError("custom trajectories need exactly frame_count poses")


def _orbit_eye(spec: TrajectorySpec, angle_deg: float) -> np.ndarray:
    phi = math.radians(angle_deg)
    target = np.asarray(spec.target, dtype=np.float64)
    return target + np.array(
        [spec.radius * math.sin(phi), spec.height, -spec.radius * math.cos(phi)]
    )


def _angles(spec: TrajectorySpec) -> np.ndarray:
    t_len = spec.frame_count
    full_circle = abs(abs(spec.span_deg) - 360.0) < 1e-12
    if full_circle:
        # Closure spacing: the frame after the last coincides with the first.
        steps = np.arange(t_len) * (spec.span_deg / t_len)
    else:
        steps = np.linspace(0.0, spec.span_deg, t_len) if t_len > 1 else np.zeros(1)
    return spec.start_deg + steps


def _yaw(angle_deg: float) -> np.ndarray:
    phi = math.radians(angle_deg)
    c, s = math.cos(phi), math.sin(phi)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _check_step_bounds(poses: list[CameraPose], spec: TrajectorySpec) -> None:
    for i in range(len(poses) - 1):
        rel = poses[i].rotation @ poses[i + 1].rotation.T
        angle = math.degrees(
            math.acos(min(1.0, max(-1.0, (np.trace(rel) - 1.0) / 2.0)))
        )
        if angle > spec.max_rotation_step_deg + 1e-9:
            raise TrajectoryError(
                f"rotation step {angle:.2f} deg between frames {i} and {i + 1} "
                f"exceeds the bound {spec.max_rotation_step_deg}"
            )
        translation = float(np.linalg.norm(poses[i + 1].center - poses[i].center))
        if translation > spec.max_translation_step:
            raise TrajectoryError(
                f"translation step {translation:.3f} between frames {i} and {i + 1} "
                f"exceeds the bound {spec.max_translation_step}"
            )


def make_trajectory(spec: TrajectorySpec, intrinsics: np.ndarray) -> list[CameraPose]:
    """Instantiate the pose sequence for a spec with the given intrinsics.

    Dolly-zoom ramps the focal length with the subject distance so the
    subject's pixel extent stays constant (fx / distance is constant).
    """
    intrinsics = np.asarray(intrinsics, dtype=np.float64)
    target = np.asarray(spec.target, dtype=np.float64)

    if spec.kind == "custom":
        poses = list(spec.poses)
    elif spec.kind == "orbit":
        poses = [look_at(_orbit_eye(spec, a), target, intrinsics) for a in _angles(spec)]
    elif spec.kind == "arc_pan":
        poses = []
        t_len = spec.frame_count
        for i, angle in enumerate(_angles(spec)):
            base = look_at(_orbit_eye(spec, angle), target, intrinsics)
            pan = spec.pan_deg * (i / (t_len - 1) if t_len > 1 else 0.0)
            poses.append(
                CameraPose(
                    intrinsics=base.intrinsics,
                    rotation=_yaw(pan) @ base.rotation,
                    translation=_yaw(pan) @ base.translation,
                )
            )
    else:  # dolly_zoom
        poses = []
        t_len = spec.frame_count
        fx0 = intrinsics[0, 0]
        fy0 = intrinsics[1, 1]
        for i in range(t_len):
            frac = i / (t_len - 1) if t_len > 1 else 0.0
            dist = spec.dolly_from + (spec.dolly_to - spec.dolly_from) * frac
            ramp = dist / spec.dolly_from
            k = intrinsics.copy()
            k[0, 0] = fx0 * ramp
            k[1, 1] = fy0 * ramp
            eye = target + np.array([0.0, spec.height, -dist])
            poses.append(look_at(eye, target, k))

    if len(poses) != spec.frame_count:
        raise TrajectoryError("generated pose count does not match frame_count")
    _check_step_bounds(poses, spec)
    return poses
