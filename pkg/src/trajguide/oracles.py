"""Analytic denoiser oracles.

Each oracle stands in for a trained noise-prediction network: given a
corrupted state x = signal * x0 + noise * eps (eps standard normal) it
returns the exact posterior prediction for its data distribution.  Two
output conventions exist:

* ``EPSILON``  - the noise prediction E[eps | x].
* ``VELOCITY`` - the linear-path velocity E[eps - x0 | x]; only meaningful
  on the flow parameterization (signal + noise == 1), and supplied in
  closed form so it stays finite at t = 1 where a generic
  epsilon-to-velocity conversion blows up.

The closed forms follow from Gaussian conditioning: for data ~ N(m, v)
the corrupted marginal is N(signal * m, signal^2 v + noise^2), so

    eps_hat = noise * (x - signal * m) / (signal^2 v + noise^2)

which is exactly -noise * grad log p(x).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np

__all__ = [
    "PredictionKind",
    "DenoiserOracle",
    "ConstantEps",
    "IsotropicGaussian",
    "GaussianMixture",
    "TabulatedVideoTarget",
    "OracleError",
]

_TINY = 1e-12


class OracleError(ValueError):
    """Raised when an oracle is queried outside its domain."""


class PredictionKind(enum.Enum):
    EPSILON = "epsilon"
    VELOCITY = "velocity"


@dataclass(frozen=True)
class DenoiserOracle:
    """Base oracle; subclasses implement the closed-form predictions."""

    convention: PredictionKind = PredictionKind.EPSILON

    def epsilon(self, x: np.ndarray, signal: float, noise: float) -> np.ndarray:
        raise NotImplementedError

    def velocity(self, x: np.ndarray, t: float) -> np.ndarray:
        """Linear-path velocity prediction; overridden where a closed form exists."""
        raise OracleError(f"{type(self).__name__} has no native velocity prediction")

    def clean_estimate(self, x: np.ndarray, signal: float, noise: float) -> np.ndarray:
        """Closed-form posterior mean of the clean sample, where one exists.

        Samplers prefer this over inverting the noise prediction: the two
        are algebraically identical, but the closed form avoids a
        subtract-divide round trip and keeps pinned targets exact to the
        bit.
        """
        raise OracleError(f"{type(self).__name__} has no closed-form clean estimate")

    @property
    def has_native_velocity(self) -> bool:
        return type(self).velocity is not DenoiserOracle.velocity

    @property
    def has_clean_estimate(self) -> bool:
        return type(self).clean_estimate is not DenoiserOracle.clean_estimate

    def with_convention(self, convention: PredictionKind) -> "DenoiserOracle":
        """Same oracle, different output convention."""
        if convention is PredictionKind.VELOCITY and not self.has_native_velocity:
            raise OracleError(f"{type(self).__name__} cannot produce velocity predictions")
        return replace(self, convention=convention)

    def predict(self, x: np.ndarray, signal: float, noise: float) -> np.ndarray:
        """Prediction in this oracle's own convention.

        For the velocity convention the coefficients must come from the
        linear path, i.e. signal + noise == 1 with noise playing the role
        of t.
        """
        x = np.asarray(x, dtype=np.float64)
        if self.convention is PredictionKind.EPSILON:
            return self.epsilon(x, signal, noise)
        if abs(signal + noise - 1.0) > 1e-9:
            raise OracleError(
                "velocity predictions require linear-path coefficients (signal + noise = 1); "
                f"got signal={signal!r}, noise={noise!r}"
            )
        return self.velocity(x, t=noise)


@dataclass(frozen=True)
class ConstantEps(DenoiserOracle):
    """Returns the same noise prediction everywhere; useful for hand unrolls."""

    value: float = 0.0

    def epsilon(self, x: np.ndarray, signal: float, noise: float) -> np.ndarray:
        return np.full_like(np.asarray(x, dtype=np.float64), self.value)


@dataclass(frozen=True)
class IsotropicGaussian(DenoiserOracle):
    """Exact denoiser for data ~ N(mean, variance * I)."""

    mean: float = 0.0
    variance: float = 1.0

    def __post_init__(self) -> None:
        if self.variance <= 0.0:
            raise OracleError("variance must be positive")

    def epsilon(self, x, signal, noise):
        marginal_var = signal**2 * self.variance + noise**2
        return noise * (x - signal * self.mean) / marginal_var

    def clean_estimate(self, x, signal, noise):
        marginal_var = signal**2 * self.variance + noise**2
        return self.mean + (signal * self.variance / marginal_var) * (x - signal * self.mean)

    def velocity(self, x, t):
        # eps_hat - x0_hat simplified on the linear path; finite on all of [0, 1].
        c = (1.0 - t) ** 2 * self.variance + t**2
        return (x * (t - (1.0 - t) * self.variance) - self.mean * t) / c


@dataclass(frozen=True)
class GaussianMixture(DenoiserOracle):
    """Exact denoiser for an isotropic Gaussian mixture.

    ``means`` may be scalars (one value broadcast over the latent) or
    arrays matching the latent shape.  Responsibilities are computed
    jointly over all coordinates of the state.
    """

    weights: tuple[float, ...] = (1.0,)
    means: tuple = (0.0,)
    variances: tuple[float, ...] = (1.0,)

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 1 or w.size == 0:
            raise OracleError("weights must be a non-empty 1-D sequence")
        if np.any(w <= 0.0):
            raise OracleError("mixture weights must be positive")
        if abs(float(w.sum()) - 1.0) > 1e-12:
            raise OracleError("mixture weights must sum to 1 (tolerance 1e-12)")
        if not (len(self.weights) == len(self.means) == len(self.variances)):
            raise OracleError("weights, means, variances must have equal length")
        if any(v <= 0.0 for v in self.variances):
            raise OracleError("mixture variances must be positive")

    def _posterior(self, x, signal, noise):
        """Responsibilities and per-component posterior means of x0."""
        n_coords = x.size
        log_terms = []
        comp_x0 = []
        for w, m, v in zip(self.weights, self.means, self.variances):
            m = np.asarray(m, dtype=np.float64)
            c = signal**2 * v + noise**2
            resid = x - signal * m
            log_terms.append(
                np.log(w) - 0.5 * (n_coords * np.log(c) + float(np.sum(resid**2)) / c)
            )
            comp_x0.append(m + (signal * v / c) * resid)
        log_r = np.asarray(log_terms)
        log_r -= log_r.max()
        r = np.exp(log_r)
        r /= r.sum()
        return r, comp_x0

    def clean_estimate(self, x, signal, noise):
        r, comp_x0 = self._posterior(x, signal, noise)
        out = np.zeros_like(x)
        for ri, x0i in zip(r, comp_x0):
            out += ri * x0i
        return out

    def epsilon(self, x, signal, noise):
        if noise < _TINY:
            # Prediction coefficient vanishes at the data end; any value works.
            return np.zeros_like(x)
        return (x - signal * self.clean_estimate(x, signal, noise)) / noise

    def velocity(self, x, t):
        if t < _TINY:
            raise OracleError("mixture velocity is undefined at t = 0")
        return (x - self.clean_estimate(x, 1.0 - t, t)) / t


@dataclass(frozen=True)
class TabulatedVideoTarget(DenoiserOracle):
    """Perfect denoiser: predictions that pin the clean estimate to a target."""

    target: np.ndarray = None  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if self.target is None:
            raise OracleError("target tensor is required")
        tgt = np.asarray(self.target, dtype=np.float64)
        if not np.all(np.isfinite(tgt)):
            raise OracleError("target contains non-finite values")
        object.__setattr__(self, "target", tgt)

    def epsilon(self, x, signal, noise):
        if noise < _TINY:
            return np.zeros_like(x)
        return (x - signal * self.target) / noise

    def clean_estimate(self, x, signal, noise):
        return np.broadcast_to(self.target, x.shape).astype(np.float64, copy=True)

    def velocity(self, x, t):
        if t < _TINY:
            raise OracleError("tabulated velocity is undefined at t = 0")
        return (x - self.target) / t
