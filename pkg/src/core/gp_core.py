"""
Closed-form Gaussian laws of the stationary OU process and of the
periodic-coefficient example, plus finite-dimensional marginals.

Kernels are vectorized: kernel(s, t) broadcasts its arguments and returns
an array of shape broadcast(s, t).shape + (dim, dim) holding Cov(X_s, X_t).
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import pandas as pd
from scipy import integrate, stats

from src.utils.linalg import check_psd

logger = logging.getLogger(__name__)

# Lower-limit cut for improper integrals over (-inf, t] at unit rates.
T_CUT = 40.0


@dataclass(frozen=True)
class OuParams:
    """Mean-reversion rate alpha and stationary standard deviation sigma."""

    alpha: float
    sigma: float

    def __post_init__(self):
        if not (self.alpha > 0 and math.isfinite(self.alpha)):
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise ValueError(f"sigma must be positive, got {self.sigma}")

    @property
    def diffusion(self):
        """Noise coefficient sqrt(2 alpha) sigma of dX = -alpha X dt + ... dW."""
        return math.sqrt(2.0 * self.alpha) * self.sigma


@dataclass(frozen=True, eq=False)
class GaussianProcessSpec:
    """Mean function and covariance kernel of a (vector) Gaussian process."""

    mean_fn: Callable
    kernel: Callable
    dim: int
    name: str = "gaussian"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if int(self.dim) < 1:
            raise ValueError(f"dim must be a positive integer, got {self.dim}")

    def mean(self, t):
        """Mean at t, shape np.shape(t) + (dim,)."""
        return np.asarray(self.mean_fn(np.asarray(t, dtype=float)), dtype=float)

    def cov(self, s, t):
        """Cov(X_s, X_t), shape broadcast(s, t).shape + (dim, dim)."""
        return np.asarray(
            self.kernel(np.asarray(s, dtype=float), np.asarray(t, dtype=float)),
            dtype=float,
        )

    def describe(self):
        return {"name": self.name, "dim": self.dim, "params": dict(self.params)}


@dataclass(frozen=True)
class MarginalGaussian:
    """Law of (X_{t_1}, ..., X_{t_k}) stacked time-major into a k*dim vector."""

    times: np.ndarray
    mean: np.ndarray
    cov: np.ndarray
    dim: int = 1

    def block(self, i, j):
        d = self.dim
        return self.cov[i * d:(i + 1) * d, j * d:(j + 1) * d]

    def to_dict(self):
        return {
            "times": self.times.tolist(),
            "dim": self.dim,
            "mean": self.mean.tolist(),
            "cov": self.cov.tolist(),
        }


def _zero_mean(dim):
    def mean_fn(t):
        return np.zeros(np.shape(t) + (dim,))
    return mean_fn


def ou_spec(params):
    """Stationary OU law: zero mean, K(s, t) = sigma^2 exp(-alpha |t - s|)."""
    alpha, var = params.alpha, params.sigma ** 2

    def kernel(s, t):
        lag = np.abs(np.subtract(t, s))
        return (var * np.exp(-alpha * lag))[..., None, None]

    return GaussianProcessSpec(
        mean_fn=_zero_mean(1),
        kernel=kernel,
        dim=1,
        name="ou",
        params={"alpha": params.alpha, "sigma": params.sigma},
    )


def periodic_example_spec():
    """
    Law of the L2-bounded solution of dX = (-1 + cos t) X dt + sqrt(1 - cos t) dW.

    K(t, t + tau) = 0.5 exp(-tau + sin(t + tau) - sin(t)) for tau >= 0. The
    variance is the constant 1/2 (see periodic_variance_quadrature).
    """
    def kernel(s, t):
        s, t = np.broadcast_arrays(np.asarray(s, dtype=float), np.asarray(t, dtype=float))
        lo, hi = np.minimum(s, t), np.maximum(s, t)
        return (0.5 * np.exp(-(hi - lo) + np.sin(hi) - np.sin(lo)))[..., None, None]

    return GaussianProcessSpec(
        mean_fn=_zero_mean(1),
        kernel=kernel,
        dim=1,
        name="periodic_example",
    )


def constant_spec(value, dim=1):
    """Deterministic process X_t = value (zero kernel)."""
    value = np.broadcast_to(np.asarray(value, dtype=float), (dim,)).copy()

    def mean_fn(t):
        return np.broadcast_to(value, np.shape(t) + (dim,)).copy()

    def kernel(s, t):
        shape = np.broadcast(np.asarray(s), np.asarray(t)).shape
        return np.zeros(shape + (dim, dim))

    return GaussianProcessSpec(
        mean_fn=mean_fn, kernel=kernel, dim=dim, name="constant",
        params={"value": value.tolist()},
    )


def marginals(spec, times):
    """Finite-dimensional law of spec at strictly increasing times."""
    times = np.asarray(times, dtype=float).ravel()
    if times.size == 0:
        raise ValueError("times must be nonempty")
    if np.any(np.diff(times) <= 0):
        raise ValueError("times must be strictly increasing")
    k, d = times.size, spec.dim
    s_grid, t_grid = np.meshgrid(times, times, indexing="ij")
    blocks = spec.cov(s_grid, t_grid)  # (k, k, d, d)
    cov = blocks.transpose(0, 2, 1, 3).reshape(k * d, k * d)
    cov = check_psd(cov, what=f"{spec.name} marginal")
    mean = spec.mean(times).reshape(k * d)
    return MarginalGaussian(times=times, mean=mean, cov=cov, dim=d)


def l2_increment(spec, t, tau):
    """
    E||X_{t+tau} - X_t||^2 from the kernel and mean function.

    Vectorized over t and tau; results clamped at zero.
    """
    t = np.asarray(t, dtype=float)
    tau = np.asarray(tau, dtype=float)
    if np.any(tau < 0):
        raise ValueError("tau must be nonnegative")
    t, tau = np.broadcast_arrays(t, tau)
    u = t + tau
    k_tt = np.trace(spec.cov(t, t), axis1=-2, axis2=-1)
    k_uu = np.trace(spec.cov(u, u), axis1=-2, axis2=-1)
    k_tu = np.trace(spec.cov(t, u), axis1=-2, axis2=-1)
    mean_gap = np.sum((spec.mean(u) - spec.mean(t)) ** 2, axis=-1)
    value = np.clip(k_tt + k_uu - 2.0 * k_tu + mean_gap, 0.0, None)
    value = np.where(tau == 0, 0.0, value)
    return float(value) if value.ndim == 0 else value


def kernel_table(spec, times):
    """Long-format table (s, t, i, j, cov) over all pairs of times."""
    times = np.asarray(times, dtype=float).ravel()
    s_grid, t_grid = np.meshgrid(times, times, indexing="ij")
    blocks = spec.cov(s_grid, t_grid)
    rows = []
    d = spec.dim
    for a in range(times.size):
        for b in range(times.size):
            for i in range(d):
                for j in range(d):
                    rows.append((times[a], times[b], i, j, blocks[a, b, i, j]))
    return pd.DataFrame(rows, columns=["s", "t", "i", "j", "cov"])


def gaussian_norm_variance(mean, var):
    """Var|X| for scalar X ~ N(mean, var) (folded normal law)."""
    if var < 0:
        raise ValueError("variance must be nonnegative")
    if var == 0:
        return 0.0
    scale = math.sqrt(var)
    return float(stats.foldnorm(abs(mean) / scale, scale=scale).var())


def periodic_variance_quadrature(t, t_cut=T_CUT, tol=1e-10):
    """
    Ito-isometry variance of the periodic example at time t:
    e^{-2t + 2 sin t} * int_{t - t_cut}^t e^{2s - 2 sin s} (1 - cos s) ds.

    The integrand is rescaled by e^{-2t + 2 sin t} inside the integral so the
    quadrature works with O(1) numbers.
    """
    def integrand(s):
        return math.exp(2.0 * (s - t) - 2.0 * (math.sin(s) - math.sin(t))) * (1.0 - math.cos(s))

    value, err = integrate.quad(integrand, t - t_cut, t, epsabs=tol, epsrel=tol, limit=500)
    logger.debug("variance quadrature at t=%g: %.12g (err %.1e)", t, value, err)
    return value


def periodic_covariance_quadrature(t, tau, t_cut=T_CUT, tol=1e-10):
    """Cov(X_t, X_{t+tau}) = U(t+tau, t) Var(X_t) with the closed-form propagator."""
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    transfer = math.exp(-tau + math.sin(t + tau) - math.sin(t))
    return transfer * periodic_variance_quadrature(t, t_cut=t_cut, tol=tol)


def is_symmetric_kernel(spec, grid, atol=1e-12):
    """Check K(s, t) = K(t, s)^T on all grid pairs."""
    grid = np.asarray(grid, dtype=float)
    s_grid, t_grid = np.meshgrid(grid, grid, indexing="ij")
    forward = spec.cov(s_grid, t_grid)
    backward = np.swapaxes(spec.cov(t_grid, s_grid), -1, -2)
    return bool(np.max(np.abs(forward - backward)) <= atol)


__all__ = [
    "OuParams", "GaussianProcessSpec", "MarginalGaussian", "ou_spec",
    "periodic_example_spec", "constant_spec", "marginals", "l2_increment",
    "kernel_table", "gaussian_norm_variance", "periodic_variance_quadrature",
    "periodic_covariance_quadrature", "is_symmetric_kernel",
]
