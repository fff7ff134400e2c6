"""Trajectory guidance injected into a running sampler.

Three cooperating mechanisms steer sampling toward a partially observed
guidance latent without touching the underlying model:

* recursive refinement: at every step the clean estimate is fused with the
  guidance latent on observed cells, re-noised back to the step's
  corruption level, and fed back into the prediction;
* flow-gated fusion: fusion is restricted to channels whose inter-frame
  motion agrees with the guidance latent, selected by a dynamic threshold
  mean - lambda * std over the per-channel similarity scores;
* dual-path correction: the velocity of the guided state is corrected
  against the unguided velocity, v + rho * sin(theta) * (v - cos(theta) *
  v_unguided_rescaled), which amplifies the correction when the two paths
  diverge and vanishes when they agree.
"""

from __future__ import annotations

import csv
import math
import zlib
from dataclasses import dataclass, field, replace

import numpy as np

from .flowscore import ChannelScore, FlowMetricConfig, channel_scores
from .oracles import DenoiserOracle
from .rng import keyed_normal
from .samplers import (
    SamplerError,
    SamplerState,
    ddim_step,
    flow_euler_step,
    predict_x0,
    velocity_prediction,
)
from .schedules import DiscreteDdimSchedule, LinearFlowSchedule, NoiseSchedule

__all__ = [
    "GuidanceConfig",
    "GuidanceTrace",
    "fuse_masked",
    "irr_renoise",
    "renoise_weight",
    "flf_select",
    "flf_update",
    "dsg_correct",
    "guided_sample",
]

_NORM_EPS = 1e-12


class GuidanceError(ValueError):
    """Raised for invalid guidance configurations or inputs."""


@dataclass(frozen=True)
class GuidanceConfig:
    """All guidance hyperparameters in one validated record.

    ``lambda_start >= lambda_end`` enforces the loose-to-tight channel
    selection (more channels fused early, fewer late).  ``irr_enabled``
    is the master switch: without refinement there is no guided path for
    the other two mechanisms to act on.
    """

    irr_enabled: bool = True
    flf_enabled: bool = True
    dsg_enabled: bool = True
    rho: float = 1.0
    irr_recursions: int = 1
    lambda_start: float = 1.5
    lambda_end: float = 0.0
    renoise_scheduler: str = "flow_linear"  # "flow_linear" | "ddim_sqrt" | "custom"
    renoise_table: tuple[float, ...] | None = None
    renoise_redraw_per_step: bool = False
    dsg_normalization: str = "match_traj"  # "match_traj" | "unit"
    flow_cfg: FlowMetricConfig = field(default_factory=FlowMetricConfig)

    def __post_init__(self) -> None:
        if self.rho < 0.0 or not math.isfinite(self.rho):
            raise GuidanceError("rho must be finite and >= 0")
        if self.irr_recursions < 1:
            raise GuidanceError("irr_recursions must be >= 1")
        if self.lambda_start < self.lambda_end:
            raise GuidanceError("lambda schedule must be loose-to-tight (start >= end)")
        if self.renoise_scheduler not in ("flow_linear", "ddim_sqrt", "custom"):
            raise GuidanceError(f"unknown renoise scheduler {self.renoise_scheduler!r}")
        if self.renoise_scheduler == "custom" and self.renoise_table is None:
            raise GuidanceError("custom renoise scheduler requires a table")
        if self.dsg_normalization not in ("match_traj", "unit"):
            raise GuidanceError(f"unknown dsg normalization {self.dsg_normalization!r}")

    def lambda_at(self, step_index: int, n_steps: int) -> float:
        """Linear interpolation over step index, loose at the noise end."""
        if n_steps <= 0:
            return self.lambda_end
        frac = step_index / n_steps
        return self.lambda_end + (self.lambda_start - self.lambda_end) * frac


@dataclass
class GuidanceTrace:
    """Append-only per-step record of what the guidance did."""

    steps: list[int] = field(default_factory=list)
    renoise_weights: list[float] = field(default_factory=list)
    selected: list[int] = field(default_factory=list)  # channel bitmask
    delta: list[float] = field(default_factory=list)
    mu_s: list[float] = field(default_factory=list)
    sigma_s: list[float] = field(default_factory=list)
    alpha: list[float] = field(default_factory=list)
    beta: list[float] = field(default_factory=list)
    correction_norm: list[float] = field(default_factory=list)
    observed_adherence: list[float] = field(default_factory=list)
    channel_score_rows: list[dict] = field(default_factory=list)
    renoise_crc: list[int] = field(default_factory=list)
    dsg_enabled: bool = False
    flf_enabled: bool = False

    def append(self, **kwargs) -> None:
        for key, value in kwargs.items():
            getattr(self, key).append(value)

    def __len__(self) -> int:
        return len(self.steps)

    def rows(self) -> list[dict]:
        """One dict per step; correction columns only when the mechanism ran."""
        out = []
        for i, step in enumerate(self.steps):
            row = {
                "step": step,
                "renoise_weight": self.renoise_weights[i],
                "selected_bitmask": self.selected[i],
                "delta": self.delta[i],
                "mu_s": self.mu_s[i],
                "sigma_s": self.sigma_s[i],
                "correction_norm": self.correction_norm[i],
                "observed_adherence": self.observed_adherence[i],
                "renoise_crc": self.renoise_crc[i],
            }
            if self.dsg_enabled:
                row["alpha"] = self.alpha[i]
                row["beta"] = self.beta[i]
            out.append(row)
        return out

    def save_csv(self, path) -> None:
        rows = self.rows()
        if not rows:
            raise GuidanceError("empty trace")
        with open(path, "w", newline="") as handle:
            writer = csv.DictWriter(handle, fieldnames=list(rows[0].keys()))
            writer.writeheader()
            writer.writerows(rows)


def fuse_masked(x0_hat: np.ndarray, z_traj: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Copy guidance content where observed: mask * z + (1 - mask) * x0.

    The mask broadcasts over channels; selected entries are taken verbatim
    so both branches are bit-exact.
    """
    if x0_hat.shape != z_traj.shape:
        raise GuidanceError(f"shape mismatch: {x0_hat.shape} vs {z_traj.shape}")
    mask = np.asarray(mask)
    if not np.all((mask == 0) | (mask == 1)):
        raise GuidanceError("mask must be binary")
    return np.where(np.broadcast_to(mask.astype(bool), x0_hat.shape), z_traj, x0_hat)


def renoise_weight(schedule: NoiseSchedule, step_index: int, cfg: GuidanceConfig) -> float:
    """Mixing weight for re-noising the fused latent at a grid point.

    flow_linear uses w = t, putting the re-noised state at the corruption
    level of the linear path; ddim_sqrt uses w = sqrt(1 - abar); a custom
    table is indexed by grid point.
    """
    if cfg.renoise_scheduler == "custom":
        table = cfg.renoise_table
        if step_index >= len(table):
            raise GuidanceError("renoise table shorter than the schedule")
        w = float(table[step_index])
    elif cfg.renoise_scheduler == "flow_linear":
        if isinstance(schedule, LinearFlowSchedule):
            w = float(schedule.t_grid[step_index])
        elif isinstance(schedule, DiscreteDdimSchedule) and schedule.t_grid is not None:
            w = float(schedule.t_grid[step_index])
        else:
            raise GuidanceError("flow_linear re-noise needs a schedule with a t grid")
    else:  # ddim_sqrt
        if isinstance(schedule, DiscreteDdimSchedule):
            w = float(np.sqrt(1.0 - schedule.alpha_bar[step_index]))
        else:
            _, noise = schedule.signal_noise(step_index)
            signal = 1.0 - noise
            w = float(noise / np.hypot(signal, noise))
    if not 0.0 <= w <= 1.0:
        raise GuidanceError(f"invalid renoise weight {w!r} at step {step_index}")
    return w


def irr_renoise(
    fused: np.ndarray,
    eps: np.ndarray,
    step: int,
    cfg: GuidanceConfig,
    schedule: NoiseSchedule,
) -> np.ndarray:
    """Re-noise the fused latent: (1 - w) * fused + w * eps."""
    if fused.shape != eps.shape:
        raise GuidanceError(f"shape mismatch: {fused.shape} vs {eps.shape}")
    w = renoise_weight(schedule, step, cfg)
    if w == 0.0:
        return fused
    if w == 1.0:
        return eps.astype(np.float64, copy=True)
    return (1.0 - w) * fused + w * eps


def flf_select(
    scores: ChannelScore,
    step: int,
    cfg: GuidanceConfig,
    n_steps: int,
) -> tuple[set[int], float]:
    """Channels whose similarity clears the dynamic threshold.

    threshold = mean - lambda(step) * population std over scorable
    channels; unscorable channels are never selected.  With no scorable
    channel at all the selection is empty.
    """
    scorable = scores.scorable
    if not np.any(scorable):
        import warnings

        warnings.warn("no scorable channel; guidance selection is empty")
        return set(), float("nan")
    values = scores.scores[scorable]
    mu = float(values.mean())
    sigma = float(values.std())
    lam = cfg.lambda_at(step, n_steps)
    delta = mu - lam * sigma
    selected = {
        int(c)
        for c in np.nonzero(scorable)[0]
        if scores.scores[c] >= delta
    }
    return selected, delta


def flf_update(
    x0_hat: np.ndarray,
    z_traj: np.ndarray,
    masks: np.ndarray,
    selected: set[int],
) -> np.ndarray:
    """Masked fusion on selected channels; unselected channels pass through bit-exact."""
    if x0_hat.shape != z_traj.shape:
        raise GuidanceError(f"shape mismatch: {x0_hat.shape} vs {z_traj.shape}")
    masks = np.asarray(masks)
    per_channel = masks.ndim == 4
    out = x0_hat.copy()
    for c in sorted(selected):
        channel_mask = masks[c] if per_channel else masks
        out[c] = np.where(channel_mask.astype(bool), z_traj[c], x0_hat[c])
    return out


def dsg_correct(
    v_traj: np.ndarray,
    v_ori: np.ndarray,
    rho: float,
    normalization: str = "match_traj",
) -> tuple[np.ndarray, float, float]:
    """Correct the guided velocity against the unguided one.

    Returns (v_corr, cosine, sine).  The unguided field enters only
    through its direction: it is rescaled to the guided field's length
    before the projection, so the correction is invariant to positive
    rescaling of the unguided input.  Near-zero fields make the angle
    undefined; the guided field is returned unchanged with NaN weights.
    """
    if v_traj.shape != v_ori.shape:
        raise GuidanceError(f"shape mismatch: {v_traj.shape} vs {v_ori.shape}")
    flat_t = v_traj.ravel()
    flat_o = v_ori.ravel()
    norm_t = float(np.linalg.norm(flat_t))
    norm_o = float(np.linalg.norm(flat_o))
    if norm_t < _NORM_EPS or norm_o < _NORM_EPS:
        return v_traj, float("nan"), float("nan")
    alpha = float(np.clip(np.dot(flat_t, flat_o) / (norm_t * norm_o), -1.0, 1.0))
    beta = math.sqrt(max(0.0, 1.0 - alpha * alpha))
    rescaled = v_ori * (norm_t / norm_o)
    if normalization == "match_traj":
        v_corr = v_traj + rho * beta * (v_traj - alpha * rescaled)
    elif normalization == "unit":
        # Correction computed on unit vectors, result rescaled back to the
        # guided field's length (direction-only variant).
        direction = v_traj / norm_t + rho * beta * (v_traj / norm_t - alpha * v_ori / norm_o)
        dn = float(np.linalg.norm(direction.ravel()))
        v_corr = v_traj if dn < _NORM_EPS else direction * (norm_t / dn)
    else:
        raise GuidanceError(f"unknown dsg normalization {normalization!r}")
    return v_corr, alpha, beta


def _epsilon_from_velocity(x: np.ndarray, v: np.ndarray, signal: float, noise: float) -> np.ndarray:
    # From x = signal * x0 + noise * eps and v = eps - x0:
    # eps = (x + signal * v) / (signal + noise).
    return (x + signal * v) / (signal + noise)


def _observed_adherence(x0_hat, z_traj, masks) -> float:
    mask = np.asarray(masks, dtype=bool)
    broad = np.broadcast_to(mask, x0_hat.shape)
    if not np.any(broad):
        return float("nan")
    return float(np.abs(x0_hat - z_traj)[broad].mean())


def guided_sample(
    initial_noise: np.ndarray,
    oracle: DenoiserOracle,
    z_traj: np.ndarray,
    masks: np.ndarray,
    cfg: GuidanceConfig,
    schedule: NoiseSchedule,
    seed: int = 0,
) -> tuple[np.ndarray, GuidanceTrace]:
    """Run the full guided chain from initial noise to the data end.

    Per step: refine (predict clean estimate, fuse observed content,
    re-noise) ``irr_recursions`` times, evaluate the model on both the
    original and refined states, correct the refined velocity against the
    original one, and advance from the refined state.  With refinement
    disabled this is exactly the plain sampler, bit for bit.

    On a flow grid that touches t = 1 the clean estimate is singular for
    noise-prediction oracles; use a velocity-convention oracle there.
    """
    initial_noise = np.asarray(initial_noise, dtype=np.float64)
    if z_traj.shape != initial_noise.shape:
        raise GuidanceError("guidance latent must match the sampled latent shape")
    is_flow = isinstance(schedule, LinearFlowSchedule)
    state = SamplerState(
        x=initial_noise.copy(),
        step_index=len(schedule) - 1,
        schedule=schedule,
        rng_seed=seed,
    )
    n_steps = schedule.n_steps
    trace = GuidanceTrace(dsg_enabled=cfg.dsg_enabled and cfg.irr_enabled,
                          flf_enabled=cfg.flf_enabled and cfg.irr_enabled)

    eps_shared = keyed_normal(seed, "irr_renoise", initial_noise.shape)

    while state.step_index > 0:
        k = state.step_index
        if not cfg.irr_enabled:
            # No guided path exists; the chain is the plain sampler, bit for bit.
            state = flow_euler_step(state, oracle) if is_flow else ddim_step(state, oracle)
            trace.append(
                steps=k,
                renoise_weights=float("nan"),
                selected=0,
                delta=float("nan"),
                mu_s=float("nan"),
                sigma_s=float("nan"),
                alpha=float("nan"),
                beta=float("nan"),
                correction_norm=0.0,
                observed_adherence=float("nan"),
                renoise_crc=0,
            )
            continue

        eps = (
            keyed_normal(seed, "irr_renoise", initial_noise.shape, step=k)
            if cfg.renoise_redraw_per_step
            else eps_shared
        )
        selected_mask = 0
        delta = mu = sigma = float("nan")
        adherence = float("nan")
        refined = state
        for _ in range(cfg.irr_recursions):
            x0_hat = predict_x0(refined, oracle)
            if math.isnan(adherence):
                adherence = _observed_adherence(x0_hat, z_traj, masks)
            if cfg.flf_enabled:
                scores = channel_scores(x0_hat, z_traj, masks, cfg.flow_cfg)
                sel, delta = flf_select(scores, k, cfg, n_steps)
                values = scores.scores[scores.scorable]
                mu = float(values.mean()) if values.size else float("nan")
                sigma = float(values.std()) if values.size else float("nan")
                selected_mask = sum(1 << c for c in sel)
                for c in range(scores.n_channels):
                    trace.channel_score_rows.append(
                        {
                            "step": k,
                            "channel": c,
                            "score": float(scores.scores[c]),
                            "selected": int(c in sel),
                        }
                    )
                fused = flf_update(x0_hat, z_traj, masks, sel)
            else:
                fused = fuse_masked(x0_hat, z_traj, masks)
                selected_mask = (1 << initial_noise.shape[0]) - 1
            x_prime = irr_renoise(fused, eps, k, cfg, schedule)
            refined = replace(refined, x=x_prime)

        w = renoise_weight(schedule, k, cfg)
        alpha = beta = float("nan")
        corr_norm = 0.0
        if cfg.dsg_enabled:
            v_ori = velocity_prediction(state, oracle)
            v_traj = velocity_prediction(refined, oracle)
            v_corr, alpha, beta = dsg_correct(v_traj, v_ori, cfg.rho, cfg.dsg_normalization)
            corr_norm = float(np.linalg.norm((v_corr - v_traj).ravel()))
            if is_flow:
                t = float(schedule.t_grid[k])
                t_next = float(schedule.t_grid[k - 1])
                x_next = refined.x - (t - t_next) * v_corr
            else:
                a_t, s_t = schedule.signal_noise(k)
                a_next, s_next = schedule.signal_noise(k - 1)
                eps_corr = _epsilon_from_velocity(refined.x, v_corr, a_t, s_t)
                x0_corr = (refined.x - s_t * eps_corr) / a_t
                x_next = a_next * x0_corr + s_next * eps_corr
            if not np.all(np.isfinite(x_next)):
                raise SamplerError(f"non-finite latent after guided step {k}")
            state = replace(state, x=x_next, step_index=k - 1)
        else:
            state = flow_euler_step(refined, oracle) if is_flow else ddim_step(refined, oracle)

        trace.append(
            steps=k,
            renoise_weights=w,
            selected=selected_mask,
            delta=delta,
            mu_s=mu,
            sigma_s=sigma,
            alpha=alpha,
            beta=beta,
            correction_norm=corr_norm,
            observed_adherence=adherence,
            renoise_crc=zlib.crc32(eps.tobytes()),
        )
    return state.x, trace
