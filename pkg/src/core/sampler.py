"""
Seeded path samplers for the OU process, the periodic example and general
linear systems (Euler-Maruyama), plus draws from finite-dimensional laws.

Randomness is laid out in fixed blocks of BLOCK_SIZE paths; block b uses a
Philox generator seeded with SeedSequence([seed, b]) and always draws a full
block, so path i does not depend on how many paths were requested.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np
import pandas as pd

from src.core.errors import DivergedError, NotStableError
from src.core.evolution import stationary_variance
from src.utils.io import write_csv
from src.utils.linalg import psd_sqrt

logger = logging.getLogger(__name__)

BLOCK_SIZE = 256
GENERATOR_ID = f"numpy.Philox/ziggurat/block{BLOCK_SIZE}"
DIVERGENCE_LIMIT = 1e6
EULER_CHUNK = 512


class Method(str, Enum):
    EXACT_RECURSION = "ExactRecursion"
    EULER_MARUYAMA = "EulerMaruyama"
    MARGINAL_FACTOR = "MarginalFactor"
    DETERMINISTIC = "Deterministic"


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t0, t0 + h, ..., t0 + n h."""

    t0: float
    h: float
    n: int

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError(f"grid step must be positive, got {self.h}")
        if int(self.n) < 0:
            raise ValueError("grid size must be nonnegative")

    @property
    def times(self):
        return self.t0 + self.h * np.arange(self.n + 1)

    @classmethod
    def covering(cls, t0, t1, h):
        """Grid from t0 to t1 whose step is at most h and lands on t1."""
        if t1 < t0:
            raise ValueError("t1 must not precede t0")
        n = max(1, int(math.ceil((t1 - t0) / h - 1e-9))) if t1 > t0 else 0
        return cls(t0=t0, h=(t1 - t0) / n if n else h, n=n)


@dataclass(frozen=True)
class PathSample:
    """Sampled values of shape (n_paths, len(times), d)."""

    times: np.ndarray
    values: np.ndarray
    seed: int
    method: Method
    grid: Optional[TimeGrid] = None
    generator: str = GENERATOR_ID

    @property
    def n_paths(self):
        return self.values.shape[0]

    @property
    def dim(self):
        return self.values.shape[2]

    def at(self, index):
        """Values at the index-th time, shape (n_paths, d)."""
        return self.values[:, index, :]

    def to_frame(self):
        n_paths, k, d = self.values.shape
        frame = pd.DataFrame({"t": np.tile(self.times, n_paths)})
        for j in range(d):
            frame[f"x_{j + 1}"] = self.values[:, :, j].reshape(-1)
        if n_paths > 1:
            frame.insert(0, "path", np.repeat(np.arange(n_paths), k))
        return frame

    def metadata(self):
        return {"seed": self.seed, "method": self.method.value, "generator": self.generator}


def block_generator(seed, block):
    if int(seed) < 0:
        raise ValueError("seed must be nonnegative")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(block)])))


def run_blocks(n, seed, block_fn):
    """Concatenate block_fn(generator) over ceil(n / BLOCK_SIZE) blocks, truncated to n rows."""
    if n < 1:
        raise ValueError("number of paths must be positive")
    n_blocks = -(-n // BLOCK_SIZE)
    parts = [block_fn(block_generator(seed, b)) for b in range(n_blocks)]
    return np.concatenate(parts, axis=0)[:n]


def _check_times(times):
    times = np.asarray(times, dtype=float).ravel()
    if times.size == 0:
        raise ValueError("times must be nonempty")
    if np.any(np.diff(times) <= 0):
        raise ValueError("times must be strictly increasing")
    return times


class PathSampler:
    """Common interface: sample on a uniform grid or jointly at given times."""

    name = "sampler"
    method = Method.EXACT_RECURSION
    dim = 1

    def describe(self):
        return {"name": self.name, "method": self.method.value}

    def sample(self, grid, seed, n_paths=1):
        result = self.sample_at(grid.times, seed, n_paths)
        return PathSample(
            times=result.times, values=result.values, seed=seed,
            method=result.method, grid=grid,
        )

    def sample_at(self, times, seed, n_paths=1):
        times = _check_times(times)
        values = run_blocks(n_paths, seed, lambda gen: self._block(gen, times))
        if not np.all(np.isfinite(values)):
            raise DivergedError(f"{self.name}: non-finite sample values")
        return PathSample(times=times, values=values, seed=seed, method=self.method)

    def _block(self, gen, times):
        raise NotImplementedError


class GaussMarkovSampler(PathSampler):
    """Exact scalar recursion X_{j+1} = u_j X_j + N(0, v (1 - u_j^2)) started in N(0, v)."""

    variance = 1.0

    def transfer(self, t_from, t_to):
        raise NotImplementedError

    def _block(self, gen, times):
        z = gen.standard_normal((BLOCK_SIZE, times.size, 1))
        out = np.empty_like(z)
        out[:, 0] = math.sqrt(self.variance) * z[:, 0]
        for j in range(times.size - 1):
            u = self.transfer(times[j], times[j + 1])
            noise_sd = math.sqrt(max(self.variance * (1.0 - u * u), 0.0))
            out[:, j + 1] = u * out[:, j] + noise_sd * z[:, j + 1]
        return out


class ExactOuSampler(GaussMarkovSampler):
    name = "ou"

    def __init__(self, params):
        self.params = params
        self.variance = params.sigma ** 2

    def transfer(self, t_from, t_to):
        return math.exp(-self.params.alpha * (t_to - t_from))

    def describe(self):
        return {**super().describe(), "alpha": self.params.alpha, "sigma": self.params.sigma}


class ExactPeriodicSampler(GaussMarkovSampler):
    """Transition u = exp(-(t' - t) + sin t' - sin t), stationary variance 1/2."""

    name = "periodic_example"
    variance = 0.5

    def transfer(self, t_from, t_to):
        return math.exp(-(t_to - t_from) + math.sin(t_to) - math.sin(t_from))


class ConstantSampler(PathSampler):
    """Deterministic process X_t = value."""

    name = "constant"
    method = Method.DETERMINISTIC

    def __init__(self, value=0.0, dim=1):
        self.value = np.broadcast_to(np.asarray(value, dtype=float), (dim,)).copy()
        self.dim = dim

    def _block(self, gen, times):
        return np.broadcast_to(self.value, (BLOCK_SIZE, times.size, self.dim)).copy()

    def describe(self):
        return {**super().describe(), "value": self.value.tolist()}


class EulerSampler(PathSampler):
    """
    Euler-Maruyama for dX = A(t) X dt + g(t) dW with Cov(W_1) = Q.

    Each gap between requested times is split into equal sub-steps of size
    at most h. Paths start in N(0, Var(X_{t0})) when the system has a
    stability certificate and at 0 otherwise.
    """

    method = Method.EULER_MARUYAMA

    def __init__(self, system, h, stationary_start=True):
        if not h > 0:
            raise ValueError("Euler step must be positive")
        self.system = system
        self.h = h
        self.name = f"euler[{system.name}]"
        self.dim = system.dim_state
        self.stationary_start = stationary_start
        self._root_q = psd_sqrt(system.Q)

    def describe(self):
        return {**super().describe(), "system": self.system.describe(), "h": self.h}

    def _fine_grid(self, times):
        fine, marks = [times[0]], [0]
        for a, b in zip(times[:-1], times[1:]):
            n = max(1, int(math.ceil((b - a) / self.h - 1e-9)))
            fine.extend(a + (b - a) * np.arange(1, n + 1) / n)
            marks.append(len(fine) - 1)
        return np.asarray(fine), marks

    def _initial_root(self, t0):
        if not self.stationary_start:
            return np.zeros((self.dim, self.dim))
        try:
            return psd_sqrt(stationary_variance(self.system, t0))
        except NotStableError:
            logger.warning("%s: no stationary law, starting paths at 0", self.name)
            return np.zeros((self.dim, self.dim))

    def sample_at(self, times, seed, n_paths=1):
        times = _check_times(times)
        fine, marks = self._fine_grid(times)
        steps = np.diff(fine)
        left = fine[:-1]
        a = self.system.drift(left)
        gain = np.linalg.norm(np.eye(self.dim) + steps[:, None, None] * a, ord=2, axis=(-2, -1))
        if gain.size and np.max(gain) >= 2.0:
            raise ValueError(f"Euler step too large: ||I + h A(t)|| reaches {np.max(gain):.3g}")
        noise = self.system.noise(left) @ self._root_q * np.sqrt(steps)[:, None, None]
        root0 = self._initial_root(times[0])

        def block(gen):
            x = gen.standard_normal((BLOCK_SIZE, self.dim)) @ root0.T
            out = np.empty((BLOCK_SIZE, times.size, self.dim))
            out[:, 0] = x
            mark = 1
            for start in range(0, steps.size, EULER_CHUNK):
                stop = min(start + EULER_CHUNK, steps.size)
                z = gen.standard_normal((BLOCK_SIZE, stop - start, self.system.dim_noise))
                for k in range(start, stop):
                    x = x + steps[k] * x @ a[k].T + z[:, k - start] @ noise[k].T
                    if mark < len(marks) and marks[mark] == k + 1:
                        out[:, mark] = x
                        mark += 1
                if np.max(np.abs(x)) > DIVERGENCE_LIMIT:
                    raise DivergedError(
                        f"{self.name}: |X| exceeded {DIVERGENCE_LIMIT:g} by t={fine[stop]:.4g}"
                    )
            return out

        values = run_blocks(n_paths, seed, block)
        return PathSample(times=times, values=values, seed=seed, method=self.method)


def sample_ou_exact(params, grid, seed, n_paths=1):
    return ExactOuSampler(params).sample(grid, seed, n_paths)


def sample_periodic_exact(grid, seed, n_paths=1):
    return ExactPeriodicSampler().sample(grid, seed, n_paths)


def sample_euler(system, grid, seed, n_paths=1):
    return EulerSampler(system, grid.h).sample(grid, seed, n_paths)


def iter_marginal_blocks(mg, n_draws, seed):
    """Yield the draws of sample_marginal block by block (last block truncated)."""
    if n_draws < 1:
        raise ValueError("number of draws must be positive")
    root = psd_sqrt(mg.cov)
    size = mg.mean.size
    for b in range(-(-n_draws // BLOCK_SIZE)):
        draws = mg.mean + block_generator(seed, b).standard_normal((BLOCK_SIZE, size)) @ root
        yield draws[:n_draws - b * BLOCK_SIZE]


def sample_marginal(mg, n_draws, seed):
    """Draws of shape (n_draws, k * dim) via the symmetric square root of mg.cov."""
    return np.concatenate(list(iter_marginal_blocks(mg, n_draws, seed)), axis=0)


def write_path_csv(sample, path):
    return write_csv(sample.to_frame(), path, sample.metadata())
