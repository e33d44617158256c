"""Monte Carlo estimates with standard errors and provenance."""

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import pandas as pd

from src.core.errors import DivergedError
from src.core.sampler import GENERATOR_ID

logger = logging.getLogger(__name__)

MIN_PATHS = 100
Z_BAND = 4.0
GROWTH_FACTOR = 2.0


@dataclass(frozen=True)
class McEstimate:
    value: float
    std_error: float
    n: int
    seed: int
    method: str = ""
    generator: str = GENERATOR_ID
    spec_hash: str = ""
    reference: Optional[float] = None

    @property
    def z_score(self):
        if self.reference is None:
            return None
        if self.std_error == 0:
            return 0.0 if self.value == self.reference else math.inf
        return (self.value - self.reference) / self.std_error

    def covers(self, truth, k=Z_BAND):
        """True when |value - truth| <= k standard errors."""
        return abs(self.value - truth) <= k * self.std_error

    def to_dict(self):
        return {
            "value": self.value,
            "std_error": self.std_error,
            "n": self.n,
            "seed": self.seed,
            "method": self.method,
            "generator": self.generator,
            "spec_hash": self.spec_hash,
            "reference": self.reference,
        }


@dataclass
class UiReport:
    """Uniform fourth-moment bound over a time grid."""

    sup_value: float
    sup_std_error: float
    argsup: float
    table: pd.DataFrame
    passed: bool
    reason: str = ""
    provenance: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "sup_fourth_moment": self.sup_value,
            "sup_std_error": self.sup_std_error,
            "upper_bound": self.sup_value + Z_BAND * self.sup_std_error,
            "argsup": self.argsup,
            "passed": self.passed,
            "reason": self.reason,
            "provenance": dict(self.provenance),
        }


def spec_hash(sampler):
    payload = json.dumps(sampler.describe(), sort_keys=True, default=str)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def _provenance(sampler, n, seed):
    return {
        "n": n, "seed": seed, "method": sampler.method.value,
        "generator": GENERATOR_ID, "spec_hash": spec_hash(sampler),
    }


def _project(values, probe):
    if probe is None:
        return values[..., 0]
    return values @ np.asarray(probe, dtype=float)


def mc_cov(sampler, t1, t2, n, seed, probe=None, centered=True):
    """
    Sample covariance of <x*, X_{t1}> and <x*, X_{t2}> over n paths.

    The standard error is the delta-method one, sd(products) / sqrt(n).
    With centered=False the raw second moment E[X_{t1} X_{t2}] is returned.
    """
    if n < MIN_PATHS:
        raise ValueError(f"need at least {MIN_PATHS} paths, got {n}")
    lo, hi = min(t1, t2), max(t1, t2)
    times = [lo] if lo == hi else [lo, hi]
    sample = sampler.sample_at(times, seed, n)
    x = _project(sample.at(0), probe)
    y = _project(sample.at(len(times) - 1), probe)
    if centered:
        products = (x - x.mean()) * (y - y.mean())
        value = float(products.sum() / (n - 1))
    else:
        products = x * y
        value = float(products.mean())
    std_error = float(products.std(ddof=1) / math.sqrt(n))
    prov = _provenance(sampler, n, seed)
    return McEstimate(value=value, std_error=std_error, n=n, seed=seed,
                      method=prov["method"], spec_hash=prov["spec_hash"])


def mc_cov_matrix(sampler, times, n, seed, probe=None):
    """Covariance matrix of <x*, X_{t_i}> with elementwise delta-method standard errors."""
    if n < MIN_PATHS:
        raise ValueError(f"need at least {MIN_PATHS} paths, got {n}")
    sample = sampler.sample_at(times, seed, n)
    proj = _project(sample.values, probe)  # (n, k)
    centered = proj - proj.mean(axis=0)
    products = centered[:, :, None] * centered[:, None, :]
    cov = products.sum(axis=0) / (n - 1)
    std_error = products.std(axis=0, ddof=1) / math.sqrt(n)
    return cov, std_error, sample


def gaussian_moment(cov, p):
    """E||X||^p for X ~ N(0, cov), p in {2, 4}."""
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    trace = float(np.trace(cov))
    if p == 2:
        return trace
    if p == 4:
        return trace ** 2 + 2.0 * float(np.trace(cov @ cov))
    raise ValueError("p must be 2 or 4")


def _norm_powers(values, p):
    if p not in (2, 4):
        raise ValueError("p must be 2 or 4")
    squared = np.sum(values ** 2, axis=-1)
    return squared if p == 2 else squared ** 2


def mc_moment(sampler, t, p, n, seed, reference_cov=None):
    """E||X_t||^p with its standard error; reference_cov adds the exact Gaussian moment."""
    if n < MIN_PATHS:
        raise ValueError(f"need at least {MIN_PATHS} paths, got {n}")
    sample = sampler.sample_at([t], seed, n)
    powers = _norm_powers(sample.at(0), p)
    reference = None if reference_cov is None else gaussian_moment(reference_cov, p)
    prov = _provenance(sampler, n, seed)
    return McEstimate(
        value=float(powers.mean()), std_error=float(powers.std(ddof=1) / math.sqrt(n)),
        n=n, seed=seed, method=prov["method"], spec_hash=prov["spec_hash"],
        reference=reference,
    )


def _growth(moments, errors):
    """Reason string when the later half of the grid outgrows the earlier half."""
    m = moments.size // 2
    if m == 0:
        return ""
    early = int(np.argmax(moments[:m]))
    late = m + int(np.argmax(moments[m:]))
    ceiling = GROWTH_FACTOR * (moments[early] + Z_BAND * errors[early])
    if moments[late] - Z_BAND * errors[late] > ceiling:
        return (f"fourth moment grows across the grid: {moments[late]:.4g} in the later half "
                f"against {moments[early]:.4g} in the earlier half")
    return ""


def ui_proxy(sampler, t_grid, n, seed, bound=None):
    """
    Fourth-moment bound sup_t E||X_t||^4 over t_grid (uniform-integrability proxy).

    Paths are drawn jointly on the grid. Divergent samplers and non-finite
    moments fail the proxy instead of raising. Without a bound the proxy
    still fails when the sup over the later half of the grid exceeds
    GROWTH_FACTOR times the earlier-half sup, both taken 4 SE in the
    conservative direction.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    prov = _provenance(sampler, n, seed)
    try:
        sample = sampler.sample_at(t_grid, seed, n)
    except DivergedError as exc:
        logger.warning("uniform-integrability proxy failed: %s", exc)
        return UiReport(
            sup_value=math.inf, sup_std_error=math.inf, argsup=math.nan,
            table=pd.DataFrame(columns=["t", "moment4", "std_error"]),
            passed=False, reason=f"diverged: {exc}", provenance=prov,
        )
    powers = _norm_powers(sample.values, 4)  # (n, k)
    moments = powers.mean(axis=0)
    errors = powers.std(axis=0, ddof=1) / math.sqrt(n)
    table = pd.DataFrame({"t": t_grid, "moment4": moments, "std_error": errors})
    k = int(np.argmax(moments))
    sup_value, sup_error = float(moments[k]), float(errors[k])
    passed, reason = True, ""
    if not math.isfinite(sup_value):
        passed, reason = False, "non-finite fourth moment"
    elif bound is not None and sup_value - Z_BAND * sup_error > bound:
        passed, reason = False, f"fourth moment {sup_value:.4g} exceeds bound {bound:.4g}"
    elif _growth(moments, errors):
        passed, reason = False, _growth(moments, errors)
    return UiReport(
        sup_value=sup_value, sup_std_error=sup_error, argsup=float(t_grid[k]),
        table=table, passed=passed, reason=reason, provenance=prov,
    )
