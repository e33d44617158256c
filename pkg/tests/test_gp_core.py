import math

import numpy as np
import pytest

from src.core.errors import NonPsdError
from src.core.gp_core import (
    GaussianProcessSpec, OuParams, constant_spec, gaussian_norm_variance, is_symmetric_kernel,
    kernel_table, l2_increment, marginals, ou_spec, periodic_covariance_quadrature,
    periodic_example_spec, periodic_variance_quadrature,
)
from src.core.sampler import ExactPeriodicSampler


@pytest.mark.parametrize("alpha, sigma", [(1.0, 1.0), (0.5, 2.0)])
@pytest.mark.parametrize("tau", [0.0, math.log(2.0), 1.0, 5.0])
def test_ou_kernel_closed_form(alpha, sigma, tau):
    spec = ou_spec(OuParams(alpha, sigma))
    for t in (0.0, 1.0, 5.0):
        assert spec.cov(t, t + tau)[0, 0] == pytest.approx(sigma ** 2 * math.exp(-alpha * tau), rel=1e-14)
        assert spec.cov(t + tau, t)[0, 0] == pytest.approx(sigma ** 2 * math.exp(-alpha * tau), rel=1e-14)


def test_ou_kernel_is_stationary_and_symmetric():
    spec = ou_spec(OuParams(0.7, 1.3))
    grid = np.linspace(-3.0, 7.0, 21)
    assert is_symmetric_kernel(spec, grid)
    assert spec.cov(2.0, 3.5)[0, 0] == pytest.approx(spec.cov(12.0, 13.5)[0, 0], rel=1e-14)


@pytest.mark.parametrize("bad", [0.0, -1.0, math.inf])
def test_ou_params_reject_nonpositive(bad):
    with pytest.raises(ValueError):
        OuParams(bad, 1.0)
    with pytest.raises(ValueError):
        OuParams(1.0, bad)


def test_ou_diffusion_coefficient():
    assert OuParams(2.0, 3.0).diffusion == pytest.approx(math.sqrt(4.0) * 3.0)


def test_periodic_kernel_values():
    spec = periodic_example_spec()
    assert spec.cov(0.0, 2 * math.pi)[0, 0] == pytest.approx(0.5 * math.exp(-2 * math.pi), rel=1e-12)
    for t in (0.0, 0.5 * math.pi, math.pi, 3.0):
        assert spec.cov(t, t)[0, 0] == pytest.approx(0.5, rel=1e-15)
    assert spec.cov(1.0, 2.5)[0, 0] == pytest.approx(0.5 * math.exp(-1.5 + math.sin(2.5) - math.sin(1.0)))


def test_periodic_kernel_is_two_pi_periodic_in_t():
    spec = periodic_example_spec()
    s = np.linspace(0.0, 5.0, 11)
    assert np.allclose(spec.cov(s, s + 1.3), spec.cov(s + 2 * math.pi, s + 1.3 + 2 * math.pi), atol=1e-14)


@pytest.mark.parametrize("t", [0.0, 0.5 * math.pi, math.pi, 3.0])
def test_periodic_variance_quadrature_is_one_half(t):
    assert periodic_variance_quadrature(t) == pytest.approx(0.5, abs=1e-8)


def test_periodic_covariance_quadrature_matches_kernel():
    value = periodic_covariance_quadrature(0.0, 2 * math.pi)
    assert value == pytest.approx(0.5 * math.exp(-2 * math.pi), abs=1e-6)
    with pytest.raises(ValueError):
        periodic_covariance_quadrature(0.0, -1.0)


def test_marginals_shapes_and_blocks():
    spec = ou_spec(OuParams(1.0, 1.0))
    mg = marginals(spec, [0.0, 1.0, 3.0])
    assert mg.cov.shape == (3, 3)
    assert mg.mean.shape == (3,)
    assert mg.block(0, 2)[0, 0] == pytest.approx(math.exp(-3.0))
    assert np.allclose(mg.cov, mg.cov.T)


def test_marginals_of_vector_process_are_time_major():
    def kernel(s, t):
        lag = np.abs(np.subtract(t, s))[..., None, None]
        return np.exp(-lag) * np.array([[2.0, 0.5], [0.5, 1.0]])

    spec = GaussianProcessSpec(mean_fn=lambda t: np.zeros(np.shape(t) + (2,)), kernel=kernel, dim=2)
    mg = marginals(spec, [0.0, 1.0])
    assert mg.cov.shape == (4, 4)
    assert mg.block(0, 1) == pytest.approx(math.exp(-1.0) * np.array([[2.0, 0.5], [0.5, 1.0]]))


@pytest.mark.parametrize("times", [[], [1.0, 1.0], [2.0, 1.0]])
def test_marginals_reject_bad_times(times):
    with pytest.raises(ValueError):
        marginals(ou_spec(OuParams(1.0, 1.0)), times)


def test_marginals_reject_indefinite_kernel():
    spec = GaussianProcessSpec(
        mean_fn=lambda t: np.zeros(np.shape(t) + (1,)),
        kernel=lambda s, t: np.where(np.equal(s, t), 1.0, 2.0)[..., None, None],
        dim=1,
    )
    with pytest.raises(NonPsdError):
        marginals(spec, [0.0, 1.0])


def test_l2_increment_ou_closed_form():
    spec = ou_spec(OuParams(1.0, 1.0))
    taus = np.array([0.0, 0.5, 1.0, 10.0])
    expected = 2.0 * (1.0 - np.exp(-taus))
    assert np.allclose(l2_increment(spec, 3.0, taus), expected, atol=1e-15)
    assert l2_increment(spec, 0.0, 1.0) == pytest.approx(2.0 * (1.0 - math.exp(-1.0)), abs=1e-15)
    assert l2_increment(spec, 5.0, 0.0) == 0.0


def test_l2_increment_rejects_negative_shift():
    with pytest.raises(ValueError):
        l2_increment(ou_spec(OuParams(1.0, 1.0)), 0.0, -0.1)


def test_l2_increment_includes_mean_gap():
    spec = GaussianProcessSpec(
        mean_fn=lambda t: np.asarray(t, dtype=float)[..., None],
        kernel=lambda s, t: np.zeros(np.broadcast(np.asarray(s), np.asarray(t)).shape + (1, 1)),
        dim=1,
    )
    assert l2_increment(spec, 1.0, 3.0) == pytest.approx(9.0)


@pytest.mark.parametrize("seed", range(5))
def test_periodic_marginals_are_psd_at_random_times(seed):
    rng = np.random.default_rng(seed)
    times = np.unique(rng.uniform(-20.0, 20.0, size=rng.integers(2, 11)))
    mg = marginals(periodic_example_spec(), times)
    assert mg.cov.shape == (times.size, times.size)
    assert np.allclose(mg.cov, mg.cov.T, atol=1e-15)
    assert np.min(np.linalg.eigvalsh(mg.cov)) >= -1e-12


@pytest.mark.parametrize("t, tau", [(1.0, 2.0), (0.0, 2.0 * math.pi), (3.0, 0.4)])
def test_l2_increment_agrees_with_sampled_paths(t, tau):
    spec = periodic_example_spec()
    sample = ExactPeriodicSampler().sample_at([t, t + tau], seed=11, n_paths=40_000)
    squares = (sample.at(1)[:, 0] - sample.at(0)[:, 0]) ** 2
    se = squares.std(ddof=1) / math.sqrt(squares.size)
    assert abs(squares.mean() - l2_increment(spec, t, tau)) <= 4.0 * se


def test_constant_spec_has_zero_kernel():
    spec = constant_spec(2.0, dim=2)
    assert np.all(spec.cov(np.arange(3.0), 1.0) == 0.0)
    assert spec.mean(np.zeros(4)).shape == (4, 2)
    assert l2_increment(spec, 0.0, 5.0) == 0.0


def test_kernel_table_lists_every_pair():
    frame = kernel_table(ou_spec(OuParams(1.0, 2.0)), [0.0, 1.0, 2.0])
    assert list(frame.columns) == ["s", "t", "i", "j", "cov"]
    assert len(frame) == 9
    row = frame[(frame.s == 0.0) & (frame.t == 2.0)].iloc[0]
    assert row["cov"] == pytest.approx(4.0 * math.exp(-2.0))


def test_gaussian_norm_variance():
    assert gaussian_norm_variance(0.0, 1.0) == pytest.approx(1.0 - 2.0 / math.pi, rel=1e-12)
    assert gaussian_norm_variance(0.0, 4.0) == pytest.approx(4.0 * (1.0 - 2.0 / math.pi), rel=1e-12)
    assert gaussian_norm_variance(3.0, 0.0) == 0.0
    # far from zero the fold does not matter
    assert gaussian_norm_variance(50.0, 1.0) == pytest.approx(1.0, rel=1e-9)
    with pytest.raises(ValueError):
        gaussian_norm_variance(0.0, -1.0)
