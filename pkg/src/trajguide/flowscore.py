"""Dense per-channel optical flow and masked flow-error metrics.

Flow between consecutive frames of one latent channel is estimated with
the Farneback polynomial-expansion method under pinned parameters, so the
result is a deterministic function of the input.  Three masked error
metrics compare a predicted flow against a reference flow over the valid
pixel set:

* end-point error: mean Euclidean distance between flow vectors
* angular error:   mean angle in radians, zero-length vectors excluded
* outlier rate:    fraction of pixels whose end-point error exceeds 3 px
                   or whose error relative to the reference exceeds 5%

Each metric is normalized into [0, 1] by a saturation constant and the
complements are combined into a per-channel motion similarity score

    score = sum_k gamma_k * (1 - min(metric_k / n_k, 1)).
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import cv2
import numpy as np

__all__ = [
    "FlowMetricConfig",
    "ChannelScore",
    "FARNEBACK_PARAMS",
    "estimate_flow",
    "masked_epe",
    "masked_ae",
    "fl_all",
    "channel_scores",
    "pairwise_mask",
    "dump_scores_csv",
]

# Pinned for reproducibility; recorded in every score dump.
FARNEBACK_PARAMS = {
    "pyr_scale": 0.5,
    "levels": 3,
    "winsize": 15,
    "iterations": 3,
    "poly_n": 5,
    "poly_sigma": 1.1,
    "flags": 0,
}

_ZERO_NORM_EPS = 1e-8


class FlowError(ValueError):
    """Raised for invalid flow fields, masks, or configurations."""


@dataclass(frozen=True)
class FlowMetricConfig:
    """Saturation constants, weights, and outlier thresholds."""

    n_epe: float = 10.0
    n_ae_deg: float = 30.0
    n_fl: float = 0.5
    gamma: tuple[float, float, float] = (0.4, 0.3, 0.3)
    fl_epe_threshold: float = 3.0
    fl_rel_threshold: float = 0.05
    fl_rule: str = "or"  # "or" flags either violation; "and" requires both

    def __post_init__(self) -> None:
        if min(self.n_epe, self.n_ae_deg, self.n_fl) <= 0.0:
            raise FlowError("normalization constants must be positive")
        g = np.asarray(self.gamma, dtype=np.float64)
        if g.size != 3 or np.any(g <= 0.0) or abs(float(g.sum()) - 1.0) > 1e-12:
            raise FlowError("gamma must be three positive weights summing to 1")
        if self.fl_epe_threshold <= 0.0 or self.fl_rel_threshold <= 0.0:
            raise FlowError("outlier thresholds must be positive")
        if self.fl_rule not in ("or", "and"):
            raise FlowError("fl_rule must be 'or' or 'and'")

    @property
    def n_ae_rad(self) -> float:
        return float(np.deg2rad(self.n_ae_deg))


@dataclass(frozen=True)
class ChannelScore:
    """Per-channel motion similarity with the raw metrics behind it.

    Channels whose valid set is empty are flagged unscorable and carry NaN
    entries; they are never selected downstream.
    """

    scores: np.ndarray
    epe: np.ndarray
    ae: np.ndarray
    fl: np.ndarray
    valid_counts: np.ndarray
    scorable: np.ndarray

    @property
    def n_channels(self) -> int:
        return int(self.scores.size)


def _to_gray_sequence(channel: np.ndarray) -> np.ndarray:
    """Min-max normalize a [T, H, W] channel onto the 0..255 float32 range.

    The whole channel shares one affine map so inter-frame motion is
    preserved; a constant channel maps to zeros (no gradient, zero flow).
    """
    lo = float(channel.min())
    hi = float(channel.max())
    if hi - lo < 1e-30:
        return np.zeros(channel.shape, dtype=np.float32)
    return ((channel - lo) * (255.0 / (hi - lo))).astype(np.float32)


def estimate_flow(channel: np.ndarray) -> np.ndarray:
    """Dense flow between consecutive frames of one channel.

    Accepts [T, H, W] or [1, T, H, W]; returns [2, T-1, H, W] with the
    horizontal component first, in pixels per frame.  The frame is
    min-max normalized per call; pyramid levels are reduced with a warning
    when the frame is too small for the pinned window.
    """
    if channel.ndim == 4:
        if channel.shape[0] != 1:
            raise FlowError("estimate_flow expects a single channel")
        channel = channel[0]
    if channel.ndim != 3:
        raise FlowError("channel must have shape [T, H, W]")
    t_len, height, width = channel.shape
    if t_len < 2:
        raise FlowError("need at least two frames to estimate flow")

    params = dict(FARNEBACK_PARAMS)
    min_dim = min(height, width)
    if min_dim < params["winsize"]:
        raise FlowError(
            f"frame side {min_dim} is smaller than the flow window {params['winsize']}"
        )
    # Each pyramid level halves the frame; keep every level at or above the window.
    levels = params["levels"]
    while levels > 1 and min_dim * (params["pyr_scale"] ** (levels - 1)) < params["winsize"]:
        levels -= 1
    if levels != params["levels"]:
        warnings.warn(
            f"frame {height}x{width} too small for {params['levels']} pyramid levels; using {levels}"
        )
        params["levels"] = levels

    gray = _to_gray_sequence(np.asarray(channel, dtype=np.float64))
    flow = np.empty((2, t_len - 1, height, width), dtype=np.float64)
    for tau in range(t_len - 1):
        uv = cv2.calcOpticalFlowFarneback(gray[tau], gray[tau + 1], None, **params)
        flow[0, tau] = uv[..., 0]
        flow[1, tau] = uv[..., 1]
    return flow


def _check_pair(pred: np.ndarray, gt: np.ndarray, mask: np.ndarray) -> np.ndarray:
    if pred.shape != gt.shape or pred.ndim != 4 or pred.shape[0] != 2:
        raise FlowError("flow fields must share a [2, T-1, H, W] shape")
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), pred.shape[1:])
    return mask


def masked_epe(pred: np.ndarray, gt: np.ndarray, mask: np.ndarray) -> float:
    """Mean end-point error over the valid set."""
    mask = _check_pair(pred, gt, mask)
    if not np.any(mask):
        raise FlowError("empty valid region")
    diff = pred - gt
    epe = np.sqrt(diff[0] ** 2 + diff[1] ** 2)
    return float(epe[mask].mean())


def masked_ae(pred: np.ndarray, gt: np.ndarray, mask: np.ndarray) -> float:
    """Mean angular error in radians over the valid set.

    Pixels where either vector is shorter than 1e-8 carry no direction and
    are excluded; if that empties the set an error is raised.
    """
    mask = _check_pair(pred, gt, mask)
    norm_p = np.sqrt(pred[0] ** 2 + pred[1] ** 2)
    norm_g = np.sqrt(gt[0] ** 2 + gt[1] ** 2)
    usable = mask & (norm_p >= _ZERO_NORM_EPS) & (norm_g >= _ZERO_NORM_EPS)
    if not np.any(usable):
        raise FlowError("empty valid region: no pixels with measurable direction")
    cos = (pred[0] * gt[0] + pred[1] * gt[1]) / (norm_p * norm_g)
    angles = np.arccos(np.clip(cos[usable], -1.0, 1.0))
    return float(angles.mean())


def fl_all(
    pred: np.ndarray,
    gt: np.ndarray,
    mask: np.ndarray,
    cfg: FlowMetricConfig = FlowMetricConfig(),
) -> float:
    """Outlier fraction over the valid set, in [0, 1]."""
    mask = _check_pair(pred, gt, mask)
    if not np.any(mask):
        raise FlowError("empty valid region")
    diff = pred - gt
    epe = np.sqrt(diff[0] ** 2 + diff[1] ** 2)
    norm_g = np.sqrt(gt[0] ** 2 + gt[1] ** 2)
    epe_bad = epe > cfg.fl_epe_threshold
    rel_bad = (norm_g >= _ZERO_NORM_EPS) & (epe / np.maximum(norm_g, _ZERO_NORM_EPS) > cfg.fl_rel_threshold)
    outlier = (epe_bad | rel_bad) if cfg.fl_rule == "or" else (epe_bad & rel_bad)
    return float(outlier[mask].mean())


def pairwise_mask(masks: np.ndarray) -> np.ndarray:
    """Collapse per-frame masks [T, H, W] to per-pair masks [T-1, H, W].

    A pixel is valid for a frame pair only when it is valid in both frames.
    """
    masks = np.asarray(masks, dtype=bool)
    if masks.ndim != 3 or masks.shape[0] < 2:
        raise FlowError("masks must be [T, H, W] with T >= 2")
    return masks[:-1] & masks[1:]


def _score_channel(pred, gt, pair_mask, cfg):
    epe = masked_epe(pred, gt, pair_mask)
    fl = fl_all(pred, gt, pair_mask, cfg)
    try:
        ae = masked_ae(pred, gt, pair_mask)
    except FlowError:
        # No pixel carries a direction on either side; there is no angular
        # evidence of misalignment, so the angular term contributes zero.
        ae = 0.0
    norms = np.array([
        min(epe / cfg.n_epe, 1.0),
        min(ae / cfg.n_ae_rad, 1.0),
        min(fl / cfg.n_fl, 1.0),
    ])
    score = float(np.dot(cfg.gamma, 1.0 - norms))
    return score, epe, ae, fl


def channel_scores(
    x0_hat: np.ndarray,
    z_traj: np.ndarray,
    masks: np.ndarray,
    cfg: FlowMetricConfig = FlowMetricConfig(),
) -> ChannelScore:
    """Motion similarity of every channel of x0_hat against z_traj.

    ``masks`` is [T, H, W] (shared across channels) or [C, T, H, W]
    per-channel.  Channels with an empty valid pair set are flagged
    unscorable (NaN score) rather than scored.
    """
    if x0_hat.shape != z_traj.shape or x0_hat.ndim != 4:
        raise FlowError("latents must share a [C, T, H, W] shape")
    n_channels = x0_hat.shape[0]
    masks = np.asarray(masks, dtype=bool)
    per_channel_masks = masks.ndim == 4
    if per_channel_masks and masks.shape[0] != n_channels:
        raise FlowError("per-channel masks must match the channel count")

    scores = np.full(n_channels, np.nan)
    epe = np.full(n_channels, np.nan)
    ae = np.full(n_channels, np.nan)
    fl = np.full(n_channels, np.nan)
    counts = np.zeros(n_channels, dtype=np.int64)
    scorable = np.zeros(n_channels, dtype=bool)

    for c in range(n_channels):
        channel_mask = masks[c] if per_channel_masks else masks
        pair = pairwise_mask(channel_mask)
        counts[c] = int(pair.sum())
        if counts[c] == 0:
            continue
        pred = estimate_flow(x0_hat[c])
        gt = estimate_flow(z_traj[c])
        scores[c], epe[c], ae[c], fl[c] = _score_channel(pred, gt, pair, cfg)
        scorable[c] = True
    return ChannelScore(scores=scores, epe=epe, ae=ae, fl=fl, valid_counts=counts, scorable=scorable)


def dump_scores_csv(path, rows: list[dict]) -> None:
    """Write per-step, per-channel score rows with the pinned flow parameters."""
    if not rows:
        raise FlowError("no score rows to write")
    fieldnames = list(rows[0].keys())
    with open(path, "w", newline="") as handle:
        handle.write(f"# farneback: {FARNEBACK_PARAMS}\n")
        writer = csv.DictWriter(handle, fieldnames=fieldnames)
        writer.writeheader()
        writer.writerows(rows)
