"""Forward depth warping with a z-buffer and explicit validity masks.

Each valid source pixel is unprojected with its depth, transformed to the
target camera, reprojected, and deposited with a one-pixel footprint.
When several sources land on the same target pixel the nearest depth wins;
depths equal to within 1e-12 tie-break to the lowest source row-major
index, so the output is deterministic.  Target pixels that receive no
splat are marked invalid (mask 0) and carry a fill value.
"""

from __future__ import annotations

import warnings

import numpy as np

from .camera import CameraPose
from .rng import keyed_generator
from .scene import DepthMap

__all__ = [
    "warp",
    "warp_sequence",
    "collapse_mask",
    "orthogonal_channel_mix",
    "embed_latent",
]

_Z_TIE = 1e-12
_BEHIND = 1e-12


def warp(
    src: np.ndarray,
    depth: DepthMap,
    p_src: CameraPose,
    p_tar: CameraPose,
    fill: float = 0.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Splat one frame into the target view.

    ``src`` is [C, H, W] or [C, 1, H, W]; the output matches.  Returns
    (warped, mask) with mask an HxW boolean array, true exactly where at
    least one splat arrived.  Pixels projecting behind the target camera
    are dropped silently; an entirely empty warp emits a warning.
    """
    squeeze = src.ndim == 4
    frame = src[:, 0] if squeeze else src
    if frame.ndim != 3:
        raise ValueError("src must be [C, H, W] or [C, 1, H, W]")
    channels, height, width = frame.shape
    if depth.values.shape != (height, width):
        raise ValueError("depth map shape does not match the source frame")

    vv, uu = np.mgrid[0:height, 0:width]
    valid = depth.valid & np.isfinite(depth.values) & (depth.values > 0.0)
    src_rows = vv[valid]
    src_cols = uu[valid]
    pixels = np.stack([src_cols, src_rows], axis=-1).astype(np.float64)
    world = p_src.unproject(pixels, depth.values[valid])
    uv_tar, z_tar = p_tar.project(world)

    front = z_tar > _BEHIND
    cols = np.round(uv_tar[:, 0]).astype(np.int64)
    rows = np.round(uv_tar[:, 1]).astype(np.int64)
    in_bounds = front & (cols >= 0) & (cols < width) & (rows >= 0) & (rows < height)

    warped = np.full((channels, height, width), fill, dtype=np.float64)
    mask = np.zeros((height, width), dtype=bool)
    if not np.any(in_bounds):
        warnings.warn("empty warp: no source pixel is visible in the target view")
        return (warped[:, None] if squeeze else warped), mask

    tgt_flat = rows[in_bounds] * width + cols[in_bounds]
    z = z_tar[in_bounds]
    src_flat = (src_rows[in_bounds] * width + src_cols[in_bounds]).astype(np.int64)

    # Nearest depth per target pixel, then lowest source index among ties.
    z_best = np.full(height * width, np.inf)
    np.minimum.at(z_best, tgt_flat, z)
    contender = z <= z_best[tgt_flat] + _Z_TIE
    winner = np.full(height * width, np.iinfo(np.int64).max, dtype=np.int64)
    np.minimum.at(winner, tgt_flat[contender], src_flat[contender])

    hit = winner < np.iinfo(np.int64).max
    tgt_idx = np.nonzero(hit)[0]
    src_idx = winner[hit]
    flat = warped.reshape(channels, -1)
    flat[:, tgt_idx] = frame.reshape(channels, -1)[:, src_idx]
    mask.reshape(-1)[tgt_idx] = True
    return (warped[:, None] if squeeze else warped), mask


def warp_sequence(
    frames: np.ndarray,
    depths: list[DepthMap],
    src_poses: list[CameraPose],
    tar_poses: list[CameraPose],
    fill: float = 0.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-frame warp of a [C, T, H, W] sequence; returns (warped, masks [T, H, W])."""
    _, t_len, _, _ = frames.shape
    if not (len(depths) == len(src_poses) == len(tar_poses) == t_len):
        raise ValueError("frames, depths, and pose lists must agree on T")
    warped = np.empty_like(frames)
    masks = np.empty(frames.shape[1:], dtype=bool)
    for k in range(t_len):
        warped[:, k], masks[k] = warp(frames[:, k], depths[k], src_poses[k], tar_poses[k], fill)
    return warped, masks


def collapse_mask(mask: np.ndarray, factor: int) -> np.ndarray:
    """Downsample a pixel mask by strict AND over factor x factor windows.

    A coarse cell counts as observed only if every covered pixel is
    observed; partial observations never leak through.
    """
    if factor < 1:
        raise ValueError("factor must be >= 1")
    if factor == 1:
        return mask.astype(bool)
    *lead, height, width = mask.shape
    if height % factor or width % factor:
        raise ValueError("mask dimensions must be divisible by the pooling factor")
    shaped = mask.reshape(*lead, height // factor, factor, width // factor, factor)
    return np.all(shaped, axis=(-3, -1))


def orthogonal_channel_mix(channels: int, seed: int = 0) -> np.ndarray:
    """Fixed random orthogonal channel-mixing matrix.

    Emulates the channel entanglement of a learned latent space while
    preserving all information; the sign convention is fixed so the matrix
    is a deterministic function of (channels, seed).
    """
    gen = keyed_generator(seed, "channel_mix")
    q, r = np.linalg.qr(gen.standard_normal((channels, channels)))
    return q * np.sign(np.diag(r))


def embed_latent(frames: np.ndarray, mixing: np.ndarray | None = None) -> np.ndarray:
    """Embed pixel-space frames [C, T, H, W] into the latent space.

    The identity embedding keeps pixel space and latent space equal; an
    optional orthogonal mixing matrix distributes content across channels.
    """
    if mixing is None:
        return frames.astype(np.float64, copy=True)
    channels = frames.shape[0]
    if mixing.shape != (channels, channels):
        raise ValueError("mixing matrix must be C x C")
    return np.einsum("dc,cthw->dthw", mixing, frames)
