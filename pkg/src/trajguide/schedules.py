"""Noise schedules for the two sampler families.

Two corruption conventions are supported, both over a latent x0 and a
standard-normal draw eps:

* discrete DDIM ladder:  x_k = sqrt(abar_k) * x0 + sqrt(1 - abar_k) * eps,
  with abar the cumulative signal attenuation, indexed so that index 0 is
  the data end (abar = 1) and the last index is the noise end.
* linear flow path:      x_t = (1 - t) * x0 + t * eps  on a grid
  t in [0, 1].  Note (1-t)^2 + t^2 != 1: this parameterization is not
  variance preserving, and no such constraint is imposed.

``ddim_schedule_matching_flow`` builds the DDIM ladder whose
signal-to-noise ratio matches the linear path at every grid point,
abar(t) = (1-t)^2 / ((1-t)^2 + t^2), which is what makes the DDIM sampler
and the flow Euler sampler two coordinate systems for the same process.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "NoiseSchedule",
    "DiscreteDdimSchedule",
    "LinearFlowSchedule",
    "linear_flow_schedule",
    "ddim_schedule_matching_flow",
    "snr_matched_alpha_bar",
]

DEFAULT_ALPHA_BAR_FLOOR = 1e-8


class ScheduleError(ValueError):
    """Raised for malformed or incompatible noise schedules."""


@dataclass(frozen=True)
class NoiseSchedule:
    """Base class; use one of the two concrete schedules below."""

    def __len__(self) -> int:
        raise NotImplementedError

    @property
    def n_steps(self) -> int:
        """Number of sampler transitions (grid points minus one)."""
        return len(self) - 1

    @property
    def kind(self) -> str:
        raise NotImplementedError

    def signal_noise(self, index: int) -> tuple[float, float]:
        """(signal, noise) coefficients of the corruption at a grid point."""
        raise NotImplementedError


@dataclass(frozen=True)
class DiscreteDdimSchedule(NoiseSchedule):
    """Cumulative-attenuation ladder; index 0 = data end, last = noise end.

    ``t_grid`` is optional provenance: schedules built from a flow grid keep
    the originating t values, which lets flow-style re-noise weights be
    evaluated on them.
    """

    alpha_bar: np.ndarray
    t_grid: np.ndarray | None = None

    def __post_init__(self) -> None:
        ab = np.asarray(self.alpha_bar, dtype=np.float64)
        object.__setattr__(self, "alpha_bar", ab)
        if ab.ndim != 1 or ab.size < 2:
            raise ScheduleError("alpha_bar must be a 1-D array with >= 2 entries")
        if not np.all(np.isfinite(ab)):
            raise ScheduleError("alpha_bar contains non-finite entries")
        if np.any(ab <= 0.0) or np.any(ab > 1.0):
            raise ScheduleError("alpha_bar entries must lie in (0, 1]")
        if np.any(np.diff(ab) >= 0.0):
            raise ScheduleError("alpha_bar must be strictly decreasing from data end to noise end")
        if self.t_grid is not None:
            tg = np.asarray(self.t_grid, dtype=np.float64)
            if tg.shape != ab.shape:
                raise ScheduleError("t_grid and alpha_bar must have equal length")
            object.__setattr__(self, "t_grid", tg)

    def __len__(self) -> int:
        return int(self.alpha_bar.size)

    @property
    def kind(self) -> str:
        return "discrete_ddim"

    def signal_noise(self, index: int) -> tuple[float, float]:
        ab = float(self.alpha_bar[index])
        return np.sqrt(ab), np.sqrt(1.0 - ab)


@dataclass(frozen=True)
class LinearFlowSchedule(NoiseSchedule):
    """Strictly increasing grid of flow times t in [0, 1]."""

    t_grid: np.ndarray = field(default_factory=lambda: np.linspace(0.0, 1.0, 51))

    def __post_init__(self) -> None:
        tg = np.asarray(self.t_grid, dtype=np.float64)
        object.__setattr__(self, "t_grid", tg)
        if tg.ndim != 1 or tg.size < 2:
            raise ScheduleError("t_grid must be a 1-D array with >= 2 entries")
        if not np.all(np.isfinite(tg)):
            raise ScheduleError("t_grid contains non-finite entries")
        if tg[0] < 0.0 or tg[-1] > 1.0:
            raise ScheduleError("t_grid must lie within [0, 1]")
        if np.any(np.diff(tg) <= 0.0):
            raise ScheduleError("t_grid must be strictly increasing")

    def __len__(self) -> int:
        return int(self.t_grid.size)

    @property
    def kind(self) -> str:
        return "linear_flow"

    def signal_noise(self, index: int) -> tuple[float, float]:
        t = float(self.t_grid[index])
        return 1.0 - t, t


def linear_flow_schedule(n_steps: int, t_max: float = 1.0) -> LinearFlowSchedule:
    """Uniform flow grid with ``n_steps`` transitions on [0, t_max]."""
    if n_steps < 1:
        raise ScheduleError("n_steps must be >= 1")
    if not 0.0 < t_max <= 1.0:
        raise ScheduleError("t_max must lie in (0, 1]")
    return LinearFlowSchedule(np.linspace(0.0, t_max, n_steps + 1))


def snr_matched_alpha_bar(t: np.ndarray, floor: float = DEFAULT_ALPHA_BAR_FLOOR) -> np.ndarray:
    """Cumulative attenuation whose SNR matches the linear path at time t.

    SNR of the linear path is (1-t)^2 / t^2; solving abar/(1-abar) = SNR
    gives abar = (1-t)^2 / ((1-t)^2 + t^2).  The value at t = 1 is floored
    so the ladder stays strictly positive.
    """
    t = np.asarray(t, dtype=np.float64)
    ab = (1.0 - t) ** 2 / ((1.0 - t) ** 2 + t**2)
    return np.maximum(ab, floor)


def ddim_schedule_matching_flow(
    n_steps: int,
    t_max: float = 1.0,
    floor: float = DEFAULT_ALPHA_BAR_FLOOR,
) -> DiscreteDdimSchedule:
    """Default DDIM ladder: SNR-matched to the uniform linear-flow grid."""
    flow = linear_flow_schedule(n_steps, t_max)
    ab = snr_matched_alpha_bar(flow.t_grid, floor=floor)
    return DiscreteDdimSchedule(alpha_bar=ab, t_grid=flow.t_grid.copy())
