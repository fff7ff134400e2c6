import numpy as np
import pytest

from trajguide.oracles import (
    ConstantEps,
    GaussianMixture,
    IsotropicGaussian,
    OracleError,
    PredictionKind,
    TabulatedVideoTarget,
)


def finite_difference_score(log_density, x, h=1e-6):
    """Independent oracle: central-difference gradient of a log density."""
    grad = np.zeros_like(x)
    flat = x.ravel()
    out = grad.ravel()
    for i in range(flat.size):
        bump = np.zeros_like(flat)
        bump[i] = h
        out[i] = (log_density(flat + bump) - log_density(flat - bump)) / (2 * h)
    return grad


def test_isotropic_gaussian_matches_score_transform():
    # eps_hat must equal -noise * grad log p(x) for the corrupted marginal.
    mean, var = 0.7, 2.3
    signal, noise = 0.6, 0.5
    marginal_var = signal**2 * var + noise**2

    def log_density(flat):
        return float(-0.5 * np.sum((flat - signal * mean) ** 2) / marginal_var)

    rng = np.random.default_rng(3)
    x = rng.standard_normal(5)
    oracle = IsotropicGaussian(mean=mean, variance=var)
    eps = oracle.epsilon(x, signal, noise)
    score = finite_difference_score(log_density, x)
    np.testing.assert_allclose(eps, -noise * score, rtol=1e-6, atol=1e-8)


def test_gaussian_mixture_matches_score_transform():
    weights = (0.3, 0.7)
    means = (-1.0, 2.0)
    variances = (0.5, 1.5)
    signal, noise = 0.8, 0.4

    def log_density(flat):
        total = 0.0
        for w, m, v in zip(weights, means, variances):
            c = signal**2 * v + noise**2
            total += w * np.exp(-0.5 * np.sum((flat - signal * m) ** 2) / c) / c ** (flat.size / 2)
        return float(np.log(total))

    rng = np.random.default_rng(4)
    x = rng.standard_normal(4)
    oracle = GaussianMixture(weights=weights, means=means, variances=variances)
    eps = oracle.epsilon(x, signal, noise)
    score = finite_difference_score(log_density, x)
    np.testing.assert_allclose(eps, -noise * score, rtol=1e-5, atol=1e-7)


def test_mixture_weight_validation():
    with pytest.raises(OracleError):
        GaussianMixture(weights=(0.5, 0.6), means=(0.0, 1.0), variances=(1.0, 1.0))
    with pytest.raises(OracleError):
        GaussianMixture(weights=(1.0, -0.0), means=(0.0, 1.0), variances=(1.0, 1.0))
    # Exactly summing weights pass.
    GaussianMixture(weights=(0.25, 0.75), means=(0.0, 1.0), variances=(1.0, 1.0))


def test_tabulated_target_pins_clean_estimate():
    target = np.array([[3.0, -1.0], [0.5, 2.0]])
    oracle = TabulatedVideoTarget(target=target)
    x = np.array([[0.1, 0.2], [0.3, 0.4]])
    signal, noise = 0.35, 0.81
    # The closed form is exact; inverting the noise prediction agrees to rounding.
    np.testing.assert_array_equal(oracle.clean_estimate(x, signal, noise), target)
    eps = oracle.epsilon(x, signal, noise)
    np.testing.assert_allclose((x - noise * eps) / signal, target, rtol=1e-14)


def test_velocity_consistent_with_epsilon_on_linear_path():
    # v_hat == eps_hat - x0_hat wherever both are defined.
    x = np.linspace(-2, 2, 7)
    for t in (0.25, 0.5, 0.9, 1.0):
        oracle = IsotropicGaussian(mean=0.4, variance=1.7)
        v = oracle.velocity(x, t)
        if t < 1.0:
            eps = oracle.epsilon(x, 1.0 - t, t)
            x0 = (x - t * eps) / (1.0 - t)
            np.testing.assert_allclose(v, eps - x0, rtol=1e-9, atol=1e-12)


def test_velocity_finite_at_endpoint():
    oracle = IsotropicGaussian(mean=1.0, variance=0.5)
    v = oracle.velocity(np.array([2.0]), 1.0)
    assert np.isfinite(v).all()
    np.testing.assert_allclose(v, np.array([2.0 - 1.0]))  # x - mean at pure noise


def test_constant_eps_has_no_velocity():
    oracle = ConstantEps(value=0.3)
    assert not oracle.has_native_velocity
    with pytest.raises(OracleError):
        oracle.with_convention(PredictionKind.VELOCITY)


def test_convention_switch_round_trip():
    oracle = IsotropicGaussian(mean=0.0, variance=1.0)
    vel = oracle.with_convention(PredictionKind.VELOCITY)
    assert vel.convention is PredictionKind.VELOCITY
    x = np.array([0.5, -0.2])
    out = vel.predict(x, 0.4, 0.6)
    np.testing.assert_allclose(out, oracle.velocity(x, 0.6))
    with pytest.raises(OracleError):
        vel.predict(x, 0.5, 0.9)  # not linear-path coefficients
