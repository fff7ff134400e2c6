"""Deterministic samplers over the two schedule families.

The latent state is a float64 array of shape [C, T, H, W].  All steps are
pure functions from state to state; a chain is replayed bit-identically
from the same seed, schedule, and oracle.

Update rules (signal a_k, noise s_k from the schedule at grid index k):

* clean estimate:   x0_hat = (x_k - s_k * eps_hat) / a_k
* ladder step:      x_{k-1} = a_{k-1} * x0_hat + s_{k-1} * eps_hat
* flow Euler step:  x_{k-1} = x_k - (t_k - t_{k-1}) * v_hat

with the velocity and noise predictions related on the linear path by
v_hat = eps_hat - x0_hat.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from .oracles import DenoiserOracle, PredictionKind
from .rng import keyed_normal
from .schedules import (
    DEFAULT_ALPHA_BAR_FLOOR,
    DiscreteDdimSchedule,
    LinearFlowSchedule,
    NoiseSchedule,
    linear_flow_schedule,
    snr_matched_alpha_bar,
)

__all__ = [
    "SamplerState",
    "SamplerError",
    "initial_state",
    "predict_x0",
    "velocity_prediction",
    "ddim_step",
    "flow_euler_step",
    "run_chain",
    "cfg_combine",
    "ddim_fm_equivalence_check",
]

_T_ENDPOINT_EPS = 1e-12


class SamplerError(ValueError):
    """Raised for invalid sampler states, schedules, or oracle outputs."""


def _ensure_finite(arr: np.ndarray, context: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise SamplerError(f"{context}: non-finite values encountered")
    return arr


def _check_oracle_output(arr: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise SamplerError("oracle produced non-finite values")
    return arr


@dataclass(frozen=True)
class SamplerState:
    """One point of a sampling chain; immutable, replaced on every step."""

    x: np.ndarray
    step_index: int
    schedule: NoiseSchedule
    rng_seed: int = 0

    def __post_init__(self) -> None:
        x = np.asarray(self.x, dtype=np.float64)
        object.__setattr__(self, "x", x)
        _ensure_finite(x, "sampler state")
        if not 0 <= self.step_index < len(self.schedule):
            raise SamplerError(
                f"step_index {self.step_index} outside schedule range [0, {len(self.schedule) - 1}]"
            )


def initial_state(
    schedule: NoiseSchedule,
    shape: tuple[int, ...],
    seed: int = 0,
) -> SamplerState:
    """Chain start at the noise end: x ~ N(0, I) from the keyed stream."""
    x = keyed_normal(seed, "init_noise", shape)
    return SamplerState(x=x, step_index=len(schedule) - 1, schedule=schedule, rng_seed=seed)


def model_predictions(
    state: SamplerState,
    oracle: DenoiserOracle,
    alpha_bar_floor: float = DEFAULT_ALPHA_BAR_FLOOR,
) -> tuple[np.ndarray, np.ndarray]:
    """Consistent (clean estimate, noise prediction) pair at the current index.

    Velocity-convention oracles (linear-flow schedules only) yield
    x0 = x - t * v and eps = x0 + v.  Epsilon-convention oracles yield
    x0 = (x - noise * eps) / signal, except that oracles with a
    closed-form clean estimate short-circuit the subtract-divide round
    trip (same algebra, exact arithmetic).  The attenuation floor guards
    the division; squared signal coefficients below it raise.
    """
    a, s = state.schedule.signal_noise(state.step_index)
    x = state.x
    if oracle.convention is PredictionKind.VELOCITY:
        if state.schedule.kind != "linear_flow":
            raise SamplerError("velocity-convention oracles require a linear-flow schedule")
        v = _check_oracle_output(oracle.predict(x, a, s))
        x0 = x - s * v
        return _ensure_finite(x0, "clean estimate"), x0 + v
    if oracle.has_clean_estimate:
        x0 = _check_oracle_output(oracle.clean_estimate(x, a, s))
        eps = (x - a * x0) / s if s >= _T_ENDPOINT_EPS else np.zeros_like(x)
        return _ensure_finite(x0, "clean estimate"), eps
    if a * a < alpha_bar_floor:
        raise SamplerError(
            f"schedule singularity: squared signal coefficient {a * a:.3e} "
            f"below floor {alpha_bar_floor:.3e} at step {state.step_index}"
        )
    eps = _check_oracle_output(oracle.predict(x, a, s))
    x0 = (x - s * eps) / a
    return _ensure_finite(x0, "clean estimate"), eps


def predict_x0(
    state: SamplerState,
    oracle: DenoiserOracle,
    alpha_bar_floor: float = DEFAULT_ALPHA_BAR_FLOOR,
) -> np.ndarray:
    """One-step clean estimate at the current grid index."""
    x0, _ = model_predictions(state, oracle, alpha_bar_floor)
    return x0


def velocity_prediction(
    state: SamplerState,
    oracle: DenoiserOracle,
    alpha_bar_floor: float = DEFAULT_ALPHA_BAR_FLOOR,
) -> np.ndarray:
    """Velocity-equivalent prediction v_hat = eps_hat - x0_hat at the current index.

    Velocity-convention oracles return their native field.  For
    epsilon-convention oracles the pair (x0, eps) is assembled first; a
    generic conversion at the exact flow endpoint t = 1 has no finite
    form and raises, unless the oracle's closed-form clean estimate
    sidesteps the division.
    """
    a, s = state.schedule.signal_noise(state.step_index)
    if oracle.convention is PredictionKind.VELOCITY:
        if state.schedule.kind != "linear_flow":
            raise SamplerError("velocity-convention oracles require a linear-flow schedule")
        return _check_oracle_output(oracle.predict(state.x, a, s))
    if (
        state.schedule.kind == "linear_flow"
        and a < _T_ENDPOINT_EPS
        and not oracle.has_clean_estimate
    ):
        raise SamplerError(
            "flow endpoint singularity: cannot convert an epsilon prediction at t = 1"
        )
    x0, eps = model_predictions(state, oracle, alpha_bar_floor)
    return eps - x0


def ddim_step(
    state: SamplerState,
    oracle: DenoiserOracle,
    alpha_bar_floor: float = DEFAULT_ALPHA_BAR_FLOOR,
) -> SamplerState:
    """Advance one rung down the attenuation ladder."""
    if state.step_index <= 0:
        raise SamplerError("cannot step below the data end")
    k = state.step_index
    a_next, s_next = state.schedule.signal_noise(k - 1)
    x0, eps = model_predictions(state, oracle, alpha_bar_floor)
    x_next = a_next * x0 + s_next * eps
    _ensure_finite(x_next, f"ddim step {k}")
    return replace(state, x=x_next, step_index=k - 1)


def flow_euler_step(state: SamplerState, oracle: DenoiserOracle) -> SamplerState:
    """Explicit Euler step of the flow ODE dx/dt = v_hat toward the data end."""
    if not isinstance(state.schedule, LinearFlowSchedule):
        raise SamplerError("flow Euler steps require a linear-flow schedule")
    if state.step_index <= 0:
        raise SamplerError("cannot step below the data end")
    k = state.step_index
    t = float(state.schedule.t_grid[k])
    t_next = float(state.schedule.t_grid[k - 1])
    v = velocity_prediction(state, oracle)
    x_next = state.x - (t - t_next) * v
    _ensure_finite(x_next, f"flow step {k}")
    return replace(state, x=x_next, step_index=k - 1)


def run_chain(
    state: SamplerState,
    oracle: DenoiserOracle,
    alpha_bar_floor: float = DEFAULT_ALPHA_BAR_FLOOR,
) -> np.ndarray:
    """Run the chain to the data end and return the terminal sample."""
    if isinstance(state.schedule, LinearFlowSchedule):
        while state.step_index > 0:
            state = flow_euler_step(state, oracle)
    else:
        while state.step_index > 0:
            state = ddim_step(state, oracle, alpha_bar_floor=alpha_bar_floor)
    return state.x


def cfg_combine(cond: np.ndarray, uncond: np.ndarray, weight: float) -> np.ndarray:
    """Classifier-free combination: cond + weight * (cond - uncond)."""
    cond = np.asarray(cond, dtype=np.float64)
    uncond = np.asarray(uncond, dtype=np.float64)
    if cond.shape != uncond.shape:
        raise SamplerError(f"shape mismatch: {cond.shape} vs {uncond.shape}")
    return cond + weight * (cond - uncond)


def ddim_fm_equivalence_check(
    oracle: DenoiserOracle,
    steps: int,
    latent_shape: tuple[int, ...] = (1, 1, 4, 4),
    seed: int = 0,
    alpha_bar_floor: float = DEFAULT_ALPHA_BAR_FLOOR,
) -> float:
    """Max terminal deviation between the ladder and flow samplers.

    Both samplers run on the same uniform flow grid from the same initial
    noise; the ladder uses the SNR-matched attenuation of that grid, under
    which the two updates are coordinate changes of one another and the
    deviation shrinks as the grid is refined.

    Oracles with a native velocity run on the full grid (the flow side
    consumes velocities, finite at t = 1, while the ladder consumes noise
    predictions with the endpoint attenuation floored).  Oracles that only
    produce noise predictions run on a grid truncated to t <= 1 - 1/steps,
    where the epsilon-to-velocity conversion stays finite.
    """
    if steps < 2:
        raise SamplerError("equivalence check needs at least 2 steps")
    if oracle.has_native_velocity:
        flow_schedule = linear_flow_schedule(steps)
        flow_oracle = oracle.with_convention(PredictionKind.VELOCITY)
    else:
        flow_schedule = linear_flow_schedule(steps, t_max=1.0 - 1.0 / steps)
        flow_oracle = oracle.with_convention(PredictionKind.EPSILON)
    ddim_schedule = DiscreteDdimSchedule(
        alpha_bar=snr_matched_alpha_bar(flow_schedule.t_grid, floor=alpha_bar_floor),
        t_grid=flow_schedule.t_grid.copy(),
    )
    eps_oracle = oracle.with_convention(PredictionKind.EPSILON)

    x_init = keyed_normal(seed, "equivalence_init", latent_shape)
    top = len(flow_schedule) - 1
    terminal_ddim = run_chain(
        SamplerState(x_init.copy(), top, ddim_schedule, seed),
        eps_oracle,
        alpha_bar_floor=alpha_bar_floor,
    )
    terminal_flow = run_chain(
        SamplerState(x_init.copy(), top, flow_schedule, seed), flow_oracle
    )
    return float(np.max(np.abs(terminal_ddim - terminal_flow)))
