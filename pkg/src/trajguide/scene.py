"""Procedural scenes with analytic ray intersection and exact depth.

Scenes are built from textured planes and spheres.  Rendering intersects
each pixel ray analytically, so depth maps are exact to machine precision
(no rasterization, no sampling).  Textures are smooth procedural fields so
dense optical flow has gradients to lock onto.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .camera import CameraError, CameraPose

__all__ = [
    "DepthMap",
    "Plane",
    "Sphere",
    "SceneSpec",
    "render",
    "render_sequence",
]

_NEAR = 1e-9
_TEXTURES = ("sinmix", "checker", "grad")


class SceneError(ValueError):
    """Raised for degenerate scene specifications."""


@dataclass(frozen=True)
class DepthMap:
    """Per-pixel z-depth in meters with an explicit validity mask."""

    values: np.ndarray
    valid: np.ndarray

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=np.float64)
        valid = np.asarray(self.valid, dtype=bool)
        if vals.ndim != 2 or valid.shape != vals.shape:
            raise SceneError("depth values and validity mask must share an HxW shape")
        if not np.all(np.isfinite(vals[valid])):
            raise SceneError("valid depth entries must be finite")
        if np.any(vals[valid] <= 0.0):
            raise SceneError("valid depth entries must be positive")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "valid", valid)

    @classmethod
    def from_values(cls, values: np.ndarray) -> "DepthMap":
        values = np.asarray(values, dtype=np.float64)
        return cls(values=values, valid=np.ones(values.shape, dtype=bool))


def _texture(kind: str, u: np.ndarray, v: np.ndarray, channels: int, scale: float) -> np.ndarray:
    """Evaluate a procedural texture; returns (channels, *u.shape) in [0, 1]."""
    if kind not in _TEXTURES:
        raise SceneError(f"unknown texture {kind!r}; expected one of {_TEXTURES}")
    u = u * scale
    v = v * scale
    out = np.empty((channels,) + u.shape, dtype=np.float64)
    for c in range(channels):
        phase = 2.0 * math.pi * c / max(channels, 1)
        if kind == "sinmix":
            out[c] = 0.5 + 0.25 * np.sin(2.0 * math.pi * u + phase) + 0.25 * np.cos(
                2.0 * math.pi * 0.7 * v + 1.3 * phase
            )
        elif kind == "checker":
            out[c] = ((np.floor(u + 0.37 * c) + np.floor(v)) % 2.0).astype(np.float64)
        else:  # grad
            frac_u = u - np.floor(u)
            frac_v = v - np.floor(v)
            out[c] = np.clip(0.5 * frac_u + 0.5 * frac_v + 0.1 * c, 0.0, 1.0)
    return out


def _plane_basis(normal: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic in-plane orthonormal basis for surface coordinates."""
    helper = np.zeros(3)
    helper[int(np.argmin(np.abs(normal)))] = 1.0
    e1 = np.cross(helper, normal)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(normal, e1)
    return e1, e2


@dataclass(frozen=True)
class Plane:
    """Finite textured rectangle."""

    center: tuple[float, float, float]
    normal: tuple[float, float, float]
    extent: tuple[float, float] = (2.0, 2.0)
    texture: str = "sinmix"
    texture_scale: float = 1.0
    velocity: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self) -> None:
        n = np.asarray(self.normal, dtype=np.float64)
        norm = np.linalg.norm(n)
        if norm < 1e-12:
            raise SceneError("plane normal must be nonzero")
        if self.extent[0] <= 0.0 or self.extent[1] <= 0.0:
            raise SceneError("plane extent must be positive")
        object.__setattr__(self, "normal", tuple(n / norm))

    def center_at(self, frame: int) -> np.ndarray:
        return np.asarray(self.center, dtype=np.float64) + frame * np.asarray(
            self.velocity, dtype=np.float64
        )

    def intersect(self, origin: np.ndarray, dirs: np.ndarray, frame: int):
        """Ray-parameter map (z-depth) plus surface coordinates; misses are +inf."""
        n = np.asarray(self.normal, dtype=np.float64)
        c = self.center_at(frame)
        denom = dirs @ n
        offset = float((c - origin) @ n)
        with np.errstate(divide="ignore", invalid="ignore"):
            tvals = offset / denom
        e1_e2 = _plane_basis(n)
        tvals = np.where(np.abs(denom) > 1e-12, tvals, np.inf)
        with np.errstate(invalid="ignore"):
            hits = origin + tvals[..., None] * dirs
            su = (hits - c) @ e1_e2[0]
            sv = (hits - c) @ e1_e2[1]
            inside = (np.abs(su) <= self.extent[0]) & (np.abs(sv) <= self.extent[1])
        tvals = np.where(inside & (tvals > _NEAR), tvals, np.inf)
        return tvals, (su, sv)

    def contains(self, point: np.ndarray, frame: int) -> bool:
        return False  # planes have no interior


@dataclass(frozen=True)
class Sphere:
    """Textured sphere."""

    center: tuple[float, float, float]
    radius: float = 1.0
    texture: str = "sinmix"
    texture_scale: float = 1.0
    velocity: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self) -> None:
        if self.radius <= 0.0:
            raise SceneError("sphere radius must be positive")

    def center_at(self, frame: int) -> np.ndarray:
        return np.asarray(self.center, dtype=np.float64) + frame * np.asarray(
            self.velocity, dtype=np.float64
        )

    def intersect(self, origin: np.ndarray, dirs: np.ndarray, frame: int):
        c = self.center_at(frame)
        oc = origin - c
        a = np.sum(dirs * dirs, axis=-1)
        b = 2.0 * (dirs @ oc)
        const = float(oc @ oc) - self.radius**2
        disc = b * b - 4.0 * a * const
        sqrt_disc = np.sqrt(np.maximum(disc, 0.0))
        t_near = (-b - sqrt_disc) / (2.0 * a)
        t_far = (-b + sqrt_disc) / (2.0 * a)
        tvals = np.where(t_near > _NEAR, t_near, t_far)
        tvals = np.where((disc >= 0.0) & (tvals > _NEAR), tvals, np.inf)
        hits = origin + tvals[..., None] * dirs
        rel = (hits - c) / self.radius
        theta = np.arccos(np.clip(rel[..., 2], -1.0, 1.0))
        phi = np.arctan2(rel[..., 1], rel[..., 0])
        return tvals, (phi / (2.0 * math.pi) + 0.5, theta / math.pi)

    def contains(self, point: np.ndarray, frame: int) -> bool:
        return bool(np.linalg.norm(point - self.center_at(frame)) < self.radius)


@dataclass(frozen=True)
class SceneSpec:
    """Primitives plus global rendering parameters."""

    primitives: tuple = field(default_factory=tuple)
    channels: int = 3
    far_plane: float = 100.0
    background_value: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "primitives", tuple(self.primitives))
        if not self.primitives:
            raise SceneError("scene must contain at least one primitive")
        if self.channels < 1:
            raise SceneError("channels must be >= 1")
        if self.far_plane <= 0.0:
            raise SceneError("far plane must be positive")


def render(
    scene: SceneSpec,
    pose: CameraPose,
    resolution: tuple[int, int],
    frame: int = 0,
) -> tuple[np.ndarray, DepthMap]:
    """Render one frame; returns (image [C, 1, H, W], exact DepthMap).

    Background pixels carry the far-plane depth and the scene's reserved
    background value.
    """
    height, width = resolution
    origin, dirs = pose.pixel_rays(height, width)
    for prim in scene.primitives:
        if prim.contains(origin, frame):
            raise CameraError("degenerate viewpoint: camera inside a primitive")
    depth = np.full((height, width), scene.far_plane, dtype=np.float64)
    image = np.full((scene.channels, height, width), scene.background_value, dtype=np.float64)
    for prim in scene.primitives:
        tvals, (su, sv) = prim.intersect(origin, dirs, frame)
        closer = tvals < depth
        if not np.any(closer):
            continue
        depth[closer] = tvals[closer]
        tex = _texture(prim.texture, su, sv, scene.channels, prim.texture_scale)
        image[:, closer] = tex[:, closer]
    return image[:, None, :, :], DepthMap.from_values(depth)


def render_sequence(
    scene: SceneSpec,
    poses: list[CameraPose],
    resolution: tuple[int, int],
) -> tuple[np.ndarray, list[DepthMap]]:
    """Render a pose sequence; returns (frames [C, T, H, W], depth maps)."""
    frames = []
    depths = []
    for idx, pose in enumerate(poses):
        img, dm = render(scene, pose, resolution, frame=idx)
        frames.append(img[:, 0])
        depths.append(dm)
    return np.stack(frames, axis=1), depths
