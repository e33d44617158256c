"""
Finite-dimensional linear stochastic evolution equations

    dX_t = A(t) X_t dt + g(t) dW_t,   W a Q-Brownian motion,

their propagators U(t, s), the covariance of the stochastic convolution
X_t = int_{-inf}^t U(t, s) g(s) dW_s, and numeric checks of the
dissipativity / exponential-stability / variance hypotheses.
"""

import logging
import math
import weakref
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.linalg import expm

from src.core.errors import NotStableError, StepTooLargeError, UnstableError
from src.core.gp_core import GaussianProcessSpec
from src.utils.expressions import compile_matrix
from src.utils.linalg import spectral_norm, symmetrize

logger = logging.getLogger(__name__)

DEFAULT_STEP = 1e-2
DEFAULT_TAIL_TOL = 1e-10
DEFAULT_HORIZON = 40.0
PROPAGATOR_RTOL = 1e-6
GROWTH_LIMIT = 10.0
FIT_MARGIN = 5e-4
MAX_TAIL_DOUBLINGS = 12

_stability_cache = weakref.WeakKeyDictionary()


@dataclass(frozen=True, eq=False)
class EvolutionSystem:
    """
    Drift A(t) (d x d), noise coefficient g(t) (d x m) and noise covariance Q.

    A and g take a scalar or an array of times and return arrays of shape
    np.shape(t) + (d, d) and np.shape(t) + (d, m).
    """

    dim_state: int
    dim_noise: int
    A: Callable
    g: Callable
    Q: np.ndarray
    period_hint: Optional[float] = None
    name: str = "system"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        d, m = int(self.dim_state), int(self.dim_noise)
        if d < 1 or m < 1:
            raise ValueError("dim_state and dim_noise must be positive")
        q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        if q.shape != (m, m):
            raise ValueError(f"Q must be {m}x{m}, got {q.shape}")
        if np.max(np.abs(q - q.T)) > 1e-12 * max(1.0, np.max(np.abs(q))):
            raise ValueError("Q must be symmetric")
        if np.linalg.eigvalsh(q)[0] < -1e-12:
            raise ValueError("Q must be positive semidefinite")
        object.__setattr__(self, "Q", q)
        if self.period_hint is not None and not self.period_hint > 0:
            raise ValueError("period_hint must be positive")

        probe = np.linspace(0.0, self.period_hint or 1.0, 17)
        a, g = self.drift(probe), self.noise(probe)
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(g))):
            raise ValueError(f"system '{self.name}' has non-finite coefficients on the sample grid")

    def drift(self, t):
        out = np.asarray(self.A(np.asarray(t, dtype=float)), dtype=float)
        return np.broadcast_to(out, np.shape(t) + (self.dim_state, self.dim_state))

    def noise(self, t):
        out = np.asarray(self.g(np.asarray(t, dtype=float)), dtype=float)
        return np.broadcast_to(out, np.shape(t) + (self.dim_state, self.dim_noise))

    def noise_cov(self, t):
        """G(t) = g(t) Q g(t)^T."""
        g = self.noise(t)
        return g @ self.Q @ np.swapaxes(g, -1, -2)

    def describe(self):
        return {
            "name": self.name,
            "dim_state": self.dim_state,
            "dim_noise": self.dim_noise,
            "period_hint": self.period_hint,
            "params": dict(self.params),
        }

    @classmethod
    def from_expressions(cls, A, g, Q=None, period_hint=None, name="custom"):
        """Build a system from nested lists of entry expressions in t."""
        a_fn, g_fn = compile_matrix(A), compile_matrix(g)
        d, m = len(A), len(g[0])
        if len(A[0]) != d:
            raise ValueError("A must be square")
        if len(g) != d:
            raise ValueError(f"g must have {d} rows")
        q = np.eye(m) if Q is None else np.asarray(Q, dtype=float)
        return cls(
            dim_state=d, dim_noise=m, A=a_fn, g=g_fn, Q=q,
            period_hint=period_hint, name=name,
            params={"A": a_fn.source, "g": g_fn.source, "Q": q.tolist()},
        )


@dataclass(frozen=True)
class PropagatorEval:
    """Numerical U(t, s) with the step used and a local-error estimate."""

    s: float
    t: float
    U: np.ndarray
    step: float
    err_est: float


@dataclass(frozen=True)
class StabilityEstimate:
    """Fitted bound ||U(t, s)|| <= M exp(-delta (t - s)) and dissipativity margin."""

    M: float
    delta: float
    beta: float
    grid_meta: dict

    @property
    def certified(self):
        return self.delta > 0

    def to_dict(self):
        return {"M": self.M, "delta": self.delta, "beta": self.beta, "grid": dict(self.grid_meta)}


@dataclass
class HypothesisAudit:
    """Outcome of the dissipativity, stability and variance checks for one system."""

    system: str
    beta: float
    stability: Optional[StabilityEstimate]
    variances: dict
    sup_variance: Optional[float]
    violations: list = field(default_factory=list)

    @property
    def dissipative(self):
        return self.beta > 0

    @property
    def exponentially_stable(self):
        return self.stability is not None and self.stability.certified

    @property
    def ok(self):
        return not self.violations

    def to_dict(self):
        return {
            "system": self.system,
            "beta": self.beta,
            "dissipative": self.dissipative,
            "exponentially_stable": self.exponentially_stable,
            "stability": self.stability.to_dict() if self.stability else None,
            "variance_condition": {f"{t:.12g}": v for t, v in self.variances.items()},
            "sup_variance": self.sup_variance,
            "violations": list(self.violations),
        }


def ou_system(params):
    """dX = -alpha X dt + sqrt(2 alpha) sigma dW as a 1-d system."""
    alpha, diffusion = params.alpha, params.diffusion
    return EvolutionSystem(
        dim_state=1, dim_noise=1,
        A=lambda t: np.full(np.shape(t) + (1, 1), -alpha),
        g=lambda t: np.full(np.shape(t) + (1, 1), diffusion),
        Q=np.eye(1), name="ou",
        params={"alpha": params.alpha, "sigma": params.sigma},
    )


def periodic_example_system():
    """dX = (-1 + cos t) X dt + sqrt(1 - cos t) dW, period 2 pi."""
    return EvolutionSystem(
        dim_state=1, dim_noise=1,
        A=lambda t: (-1.0 + np.cos(t))[..., None, None],
        g=lambda t: np.sqrt(1.0 - np.cos(t))[..., None, None],
        Q=np.eye(1), period_hint=2.0 * math.pi, name="periodic_example",
    )


def quasi_periodic_system():
    """
    Two-dimensional system with rotating drift and almost periodic noise:
    A(t) = [[-2, sin t], [-sin t, -2]], g(t) = diag(1 + cos(sqrt(2) t) / 2, 1).
    """
    def drift(t):
        t = np.asarray(t, dtype=float)
        out = np.zeros(t.shape + (2, 2))
        out[..., 0, 0] = out[..., 1, 1] = -2.0
        out[..., 0, 1] = np.sin(t)
        out[..., 1, 0] = -np.sin(t)
        return out

    def noise(t):
        t = np.asarray(t, dtype=float)
        out = np.zeros(t.shape + (2, 2))
        out[..., 0, 0] = 1.0 + 0.5 * np.cos(math.sqrt(2.0) * t)
        out[..., 1, 1] = 1.0
        return out

    return EvolutionSystem(
        dim_state=2, dim_noise=2, A=drift, g=noise, Q=np.eye(2),
        period_hint=2.0 * math.pi, name="quasi_periodic",
    )


def _step_count(length, step):
    if step <= 0:
        raise ValueError(f"step must be positive, got {step}")
    return max(1, int(math.ceil(length / step - 1e-9)))


def _march_propagator(sys, s, t, n):
    h = (t - s) / n
    mids = s + (np.arange(n) + 0.5) * h
    factors = expm(h * sys.drift(mids))
    u = np.eye(sys.dim_state)
    for factor in factors:
        u = factor @ u
    return u


def propagator(sys, s, t, step=DEFAULT_STEP, rtol=PROPAGATOR_RTOL):
    """
    U(t, s) by the midpoint exponential U <- exp(h A(tau + h/2)) U.

    The scheme is symmetric, so the h and h/2 results are combined by
    Richardson extrapolation; their gap gives err_est. One refinement is
    attempted before StepTooLargeError.
    """
    s, t = float(s), float(t)
    if t < s:
        raise ValueError(f"propagator needs s <= t, got s={s}, t={t}")
    n = _step_count(t - s, step)
    if t == s:
        return PropagatorEval(s=s, t=t, U=np.eye(sys.dim_state), step=step, err_est=0.0)

    coarse = _march_propagator(sys, s, t, n)
    for _ in range(2):
        fine = _march_propagator(sys, s, t, 2 * n)
        value = fine + (fine - coarse) / 3.0
        err = float(spectral_norm(fine - coarse)) / 3.0
        if err <= rtol * max(float(spectral_norm(value)), np.finfo(float).tiny):
            return PropagatorEval(s=s, t=t, U=value, step=(t - s) / (2 * n), err_est=err)
        coarse, n = fine, 2 * n
    raise StepTooLargeError(
        f"propagator error {err:.2e} above tolerance on [{s}, {t}]", err_est=err, step=step
    )


def check_dissipativity(sys, t_grid):
    """beta = -max_t lambda_max((A(t) + A(t)^T) / 2); beta > 0 certifies dissipativity."""
    t_grid = np.asarray(t_grid, dtype=float).ravel()
    if t_grid.size == 0:
        raise ValueError("t_grid must be nonempty")
    eigvals = np.linalg.eigvalsh(symmetrize(sys.drift(t_grid)))
    return float(-np.max(eigvals[..., -1]))


def _upper_hull(x, y):
    hull = []
    for i in range(len(x)):
        while len(hull) >= 2:
            a, b = hull[-2], hull[-1]
            cross = (x[b] - x[a]) * (y[i] - y[a]) - (y[b] - y[a]) * (x[i] - x[a])
            if cross >= 0:
                hull.pop()
            else:
                break
        hull.append(i)
    return hull


def check_exponential_stability(sys, horizon=DEFAULT_HORIZON, step=DEFAULT_STEP, n_base=64,
                                fit_margin=FIT_MARGIN, growth_limit=GROWTH_LIMIT):
    """
    Fit ||U(t, s)|| <= M exp(-delta (t - s)) on a lag grid up to horizon.

    Base points s are spread over one period_hint (or [0, 1)). delta is read
    off the upper concave hull of the worst-case log-norm curve at half the
    horizon; M is then the smallest constant covering every sample, inflated
    by fit_margin.
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    d = sys.dim_state
    base_window = sys.period_hint or 1.0
    bases = base_window * np.arange(n_base) / n_base
    n_lag = _step_count(horizon, step)
    h = horizon / n_lag
    lags = h * np.arange(n_lag + 1)

    worst = np.empty(n_lag + 1)
    worst[0] = 1.0
    u = np.broadcast_to(np.eye(d), (n_base, d, d)).copy()
    for k in range(n_lag):
        u = expm(h * sys.drift(bases + (k + 0.5) * h)) @ u
        worst[k + 1] = np.max(spectral_norm(u))
        if worst[k + 1] > growth_limit:
            raise UnstableError(
                f"||U(t, s)|| reached {worst[k + 1]:.3g} at lag {lags[k + 1]:.3g} "
                f"for system '{sys.name}'",
                max_norm=float(worst[k + 1]),
            )

    phi = np.log(np.maximum(worst, np.finfo(float).tiny))
    hull = _upper_hull(lags, phi)
    mid = 0.5 * horizon
    slope = 0.0
    for a, b in zip(hull[:-1], hull[1:]):
        if lags[a] <= mid <= lags[b]:
            slope = (phi[b] - phi[a]) / (lags[b] - lags[a])
            break
    delta = float(-slope)
    m_fit = float(np.max(np.exp(phi + delta * lags))) * (1.0 + fit_margin)
    beta = check_dissipativity(sys, np.linspace(bases[0], bases[-1] + horizon, 2001))
    logger.info(
        "stability fit for '%s': M=%.6g delta=%.6g beta=%.3g (%d lags x %d bases)",
        sys.name, m_fit, delta, beta, n_lag + 1, n_base,
    )
    return StabilityEstimate(
        M=max(m_fit, 1.0), delta=delta, beta=beta,
        grid_meta={
            "horizon": horizon, "lag_step": h, "n_lag": n_lag + 1, "n_base": n_base,
            "base_window": base_window, "max_norm": float(np.max(worst)),
            "fit_margin": fit_margin,
        },
    )


def _require_certificate(sys, stability):
    if stability is None:
        stability = _stability_cache.get(sys)
    if stability is None:
        try:
            stability = check_exponential_stability(sys)
        except UnstableError as exc:
            raise NotStableError(f"system '{sys.name}' is unstable: {exc}") from exc
        _stability_cache[sys] = stability
    if not stability.certified:
        raise NotStableError(
            f"system '{sys.name}' has no positive decay rate (delta={stability.delta:.3g})"
        )
    return stability


def _van_loan_steps(sys, starts, lengths):
    """Per-step (Phi, D) of P <- Phi P Phi^T + D with A and G frozen at each midpoint."""
    d = sys.dim_state
    starts, lengths = np.broadcast_arrays(np.asarray(starts, dtype=float), np.asarray(lengths, dtype=float))
    if starts.size == 0:
        return np.zeros((0, d, d)), np.zeros((0, d, d))
    mids = starts + 0.5 * lengths
    a = sys.drift(mids)
    blocks = np.zeros(mids.shape + (2 * d, 2 * d))
    blocks[..., :d, :d] = -a
    blocks[..., :d, d:] = sys.noise_cov(mids)
    blocks[..., d:, d:] = np.swapaxes(a, -1, -2)
    f = expm(lengths[..., None, None] * blocks)
    phi = np.swapaxes(f[..., d:, d:], -1, -2)
    return phi, phi @ f[..., :d, d:]


def _richardson_steps(sys, starts, lengths):
    """One step against two half steps, extrapolated to fourth order."""
    phi_c, noise_c = _van_loan_steps(sys, starts, lengths)
    half = 0.5 * np.asarray(lengths, dtype=float)
    phi_1, noise_1 = _van_loan_steps(sys, starts, half)
    phi_2, noise_2 = _van_loan_steps(sys, np.asarray(starts, dtype=float) + half, half)
    phi_f = phi_2 @ phi_1
    noise_f = phi_2 @ noise_1 @ np.swapaxes(phi_2, -1, -2) + noise_2
    return phi_f + (phi_f - phi_c) / 3.0, noise_f + (noise_f - noise_c) / 3.0


def _march_lyapunov(sys, s0, s1, n):
    """P(s1) from P(s0) = 0 with Van Loan steps, and the propagator of the march."""
    h = (s1 - s0) / n
    phi, noise = _van_loan_steps(sys, s0 + np.arange(n) * h, np.full(n, h))
    p = np.zeros((sys.dim_state, sys.dim_state))
    transfer = np.eye(sys.dim_state)
    for phi_k, noise_k in zip(phi, noise):
        p = phi_k @ p @ phi_k.T + noise_k
        transfer = phi_k @ transfer
    return p, transfer


def stationary_variance(sys, t, step=DEFAULT_STEP, tail_tol=DEFAULT_TAIL_TOL, stability=None):
    """
    Var(X_t) = int_{-inf}^t U(t,s) G(s) U(t,s)^T ds with a checked tail cut.

    The first window comes from (M, delta) and tr G near t. The window is
    then doubled, adding the contribution of each older segment, until that
    contribution (or its geometric extrapolation when the segments shrink)
    is below tail_tol.
    """
    stability = _require_certificate(sys, stability)
    near = np.linspace(t - (sys.period_hint or 1.0), t, 257)
    trace_bound = float(np.max(np.trace(sys.noise_cov(near), axis1=-2, axis2=-1)))
    window = math.log(max(stability.M ** 2 * trace_bound / tail_tol, math.e)) / stability.delta
    n = _step_count(window, step)
    fine, transfer = _march_lyapunov(sys, t - window, t, 2 * n)
    previous = None
    for _ in range(MAX_TAIL_DOUBLINGS):
        older = sys.noise_cov(np.linspace(t - 2.0 * window, t - window, 65))
        if not np.all(np.isfinite(older)):
            break
        segment, segment_transfer = _march_lyapunov(sys, t - 2.0 * window, t - window, 2 * n)
        tail = transfer @ segment @ transfer.T
        size = float(abs(np.trace(tail)))
        if not (np.all(np.isfinite(tail)) and np.all(np.isfinite(segment_transfer))):
            break
        fine = fine + tail
        transfer = transfer @ segment_transfer
        window, n = 2.0 * window, 2 * n
        ratio = None if not previous else size / previous
        if size <= tail_tol or (ratio is not None and ratio < 1.0
                                and size * ratio / (1.0 - ratio) <= tail_tol):
            coarse, _ = _march_lyapunov(sys, t - window, t, n)
            logger.debug("variance at t=%g: window %.3g, %d steps, tail %.2e", t, window, 2 * n, size)
            return symmetrize(fine + (fine - coarse) / 3.0)
        previous = size
    raise NotStableError(
        f"variance integral of '{sys.name}' at t={t:g} does not settle within "
        f"window {window:.3g} (tail_tol={tail_tol:g})"
    )


def convolution_covariance(sys, t1, t2, step=DEFAULT_STEP, tail_tol=DEFAULT_TAIL_TOL,
                           stability=None):
    """Cov(X_{t1}, X_{t2}) = Var(X_{t1}) U(t2, t1)^T for t1 <= t2."""
    if t2 < t1:
        raise ValueError(f"need t1 <= t2, got {t1} > {t2}")
    stability = _require_certificate(sys, stability)
    variance = stationary_variance(sys, t1, step, tail_tol, stability)
    if t2 == t1:
        return variance
    return variance @ propagator(sys, t1, t2, step).U.T


def variance_condition(sys, t, step=DEFAULT_STEP, tail_tol=DEFAULT_TAIL_TOL, stability=None):
    """int_{-inf}^t ||U(t,s) g(s)||^2_{L2^0} ds, i.e. trace Var(X_t)."""
    return float(np.trace(stationary_variance(sys, t, step, tail_tol, stability)))


class _CovarianceGrid:
    """
    Var(X_t) and U(t, s) on the shared grid k * h.

    Var is marched forward once from a stationary anchor, and products of
    per-step propagators come from a doubling table, so a kernel call costs
    a few batched products. Off-grid ends use one extrapolated partial step.
    """

    def __init__(self, sys, step, tail_tol, stability):
        self.sys = sys
        self.h = float(step)
        self.tail_tol = tail_tol
        self.stability = stability
        self.k0 = None
        self.var = None
        self.steps = None
        self.table = []

    @property
    def k_end(self):
        return self.k0 + self.steps.shape[0]

    def cover(self, lo, hi):
        k_lo = int(math.floor(lo / self.h)) - 1
        k_hi = int(math.ceil(hi / self.h)) + 1
        pad = max(int(math.ceil(1.0 / self.h)), (k_hi - k_lo) // 4)
        if self.k0 is None or k_lo < self.k0:
            k_hi = k_hi if self.k0 is None else max(k_hi, self.k_end)
            self.k0 = k_lo - pad
            d = self.sys.dim_state
            anchor = stationary_variance(self.sys, self.k0 * self.h, self.h, self.tail_tol, self.stability)
            self.var, self.steps = anchor[None], np.zeros((0, d, d))
        elif k_hi <= self.k_end:
            return
        self._extend(k_hi + pad)

    def _extend(self, k_new):
        n = k_new - self.k_end
        phi, noise = _richardson_steps(self.sys, (self.k_end + np.arange(n)) * self.h, np.full(n, self.h))
        var = np.empty((n,) + phi.shape[1:])
        p = self.var[-1]
        for i in range(n):
            p = symmetrize(phi[i] @ p @ phi[i].T + noise[i])
            var[i] = p
        self.var = np.concatenate([self.var, var])
        self.steps = np.concatenate([self.steps, phi])
        self.table = [self.steps]
        width = 1
        while 2 * width <= self.steps.shape[0]:
            prev = self.table[-1]
            self.table.append(prev[width:] @ prev[:-width])
            width *= 2
        logger.debug("covariance grid for '%s': %d steps from t=%g", self.sys.name,
                     self.steps.shape[0], self.k0 * self.h)

    def _product(self, i, j):
        """Propagator from grid index i to grid index j >= i."""
        d = self.sys.dim_state
        out = np.broadcast_to(np.eye(d), (i.size, d, d)).copy()
        remaining, pos = j - i, i.copy()
        for level in range(len(self.table) - 1, -1, -1):
            take = ((remaining >> level) & 1).astype(bool)
            if take.any():
                out[take] = self.table[level][pos[take]] @ out[take]
                pos[take] += 1 << level
        return out

    def _cells(self, x):
        k = np.floor(x / self.h + 1e-9).astype(np.int64)
        return k, np.maximum(x - k * self.h, 0.0)

    def _partial(self, starts, lengths):
        keys, inverse = np.unique(np.stack([starts, lengths], axis=-1), axis=0, return_inverse=True)
        phi, noise = _richardson_steps(self.sys, keys[:, 0], keys[:, 1])
        inverse = inverse.reshape(-1)
        return phi[inverse], noise[inverse]

    def variance(self, x):
        k, frac = self._cells(x)
        phi, noise = self._partial(k * self.h, frac)
        return symmetrize(phi @ self.var[k - self.k0] @ np.swapaxes(phi, -1, -2) + noise)

    def transfer(self, a, b):
        """U(b, a) for a <= b elementwise."""
        first = np.ceil(a / self.h - 1e-9).astype(np.int64)
        last, _ = self._cells(b)
        out = np.empty(a.shape + (self.sys.dim_state,) * 2)
        inside = first > last
        if inside.any():
            out[inside] = self._partial(a[inside], b[inside] - a[inside])[0]
        span = ~inside
        if span.any():
            lo, hi, i, j = a[span], b[span], first[span], last[span]
            head = self._partial(lo, np.maximum(i * self.h - lo, 0.0))[0]
            tail = self._partial(j * self.h, np.maximum(hi - j * self.h, 0.0))[0]
            out[span] = tail @ self._product(i - self.k0, j - self.k0) @ head
        return out


def gaussian_spec(sys, step=DEFAULT_STEP, tail_tol=DEFAULT_TAIL_TOL, stability=None):
    """
    Law of the unique L2-bounded mild solution as a GaussianProcessSpec.

    Kernel values come from a covariance grid shared by every call, so
    repeated evaluations on nearby times reuse one march.
    """
    stability = _require_certificate(sys, stability)
    grid = _CovarianceGrid(sys, step, tail_tol, stability)
    d = sys.dim_state

    def kernel(s, t):
        s, t = np.broadcast_arrays(np.asarray(s, dtype=float), np.asarray(t, dtype=float))
        shape = s.shape
        s, t = s.ravel(), t.ravel()
        if s.size == 0:
            return np.zeros(shape + (d, d))
        lo, hi = np.minimum(s, t), np.maximum(s, t)
        pairs, inverse = np.unique(np.stack([lo, hi], axis=-1), axis=0, return_inverse=True)
        grid.cover(float(pairs[:, 0].min()), float(pairs[:, 1].max()))
        u = grid.transfer(pairs[:, 0], pairs[:, 1])
        cov = (grid.variance(pairs[:, 0]) @ np.swapaxes(u, -1, -2))[inverse.reshape(-1)]
        flip = s > t
        cov[flip] = np.swapaxes(cov[flip], -1, -2)
        return cov.reshape(shape + (d, d))

    def mean_fn(t):
        return np.zeros(np.shape(t) + (d,))

    return GaussianProcessSpec(
        mean_fn=mean_fn, kernel=kernel, dim=d,
        name=f"{sys.name}_convolution", params=sys.describe(),
    )


def audit_hypotheses(sys, t_grid, horizon=DEFAULT_HORIZON, step=DEFAULT_STEP,
                     tail_tol=DEFAULT_TAIL_TOL):
    """Run the dissipativity, exponential-stability and variance checks together."""
    t_grid = np.asarray(t_grid, dtype=float).ravel()
    violations = []
    beta_grid = np.linspace(t_grid.min(), t_grid.max() + (sys.period_hint or 1.0), 2001)
    beta = check_dissipativity(sys, np.union1d(beta_grid, t_grid))
    if beta <= 0:
        violations.append(f"uniform dissipativity fails: beta={beta:.3g}")

    stability = None
    try:
        stability = check_exponential_stability(sys, horizon, step)
    except UnstableError as exc:
        violations.append(f"exponential stability fails: {exc}")
    variances = {}
    if stability is not None and stability.certified:
        for t in t_grid:
            variances[float(t)] = variance_condition(sys, float(t), step, tail_tol, stability)
        degenerate = [t for t, v in variances.items() if not v > 0]
        if degenerate:
            violations.append(f"variance condition degenerate (zero) at t={degenerate}")
        if not all(math.isfinite(v) for v in variances.values()):
            violations.append("variance condition infinite")
    elif stability is not None:
        violations.append(f"exponential stability fails: delta={stability.delta:.3g}")

    sup_variance = max(variances.values()) if variances else None
    for message in violations:
        logger.warning("system '%s': %s", sys.name, message)
    return HypothesisAudit(
        system=sys.name, beta=beta, stability=stability, variances=variances,
        sup_variance=sup_variance, violations=violations,
    )
