"""
Almost-period scanning on sampled functions, mean-square falsification via
the L2 increment, the covariance criterion for probe sequences and
distribution-level checks on Gaussian finite-dimensional marginals.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import pandas as pd
from scipy import optimize
from scipy.linalg import polar

from src.core.errors import InconclusiveError, UndecidedError, WindowTooShortError
from src.core.estimators import Z_BAND, mc_cov_matrix
from src.core.gp_core import GaussianProcessSpec, gaussian_norm_variance, l2_increment, marginals
from src.core.sampler import iter_marginal_blocks
from src.utils.linalg import check_psd, psd_sqrt

logger = logging.getLogger(__name__)

# Number of distance evaluations per vectorized chunk.
CHUNK_ELEMENTS = 2_000_000
MAX_REFINE = 64
MAX_OFFSETS = 8


def absolute_distance(a, b):
    return np.abs(np.subtract(a, b))


def euclidean_distance(a, b):
    return np.linalg.norm(np.subtract(a, b), axis=-1)


@dataclass(frozen=True)
class SampledFunction:
    """
    A map t -> f(t) into a metric space, observed on a uniform grid
    start, start + step, ... within [start, start + window].

    With vectorized=True, fn accepts an array of times of any shape and
    distance compares arrays elementwise (over a trailing value axis if any).
    """

    fn: Callable
    distance: Callable = absolute_distance
    window: float = 100.0
    step: float = 0.05
    vectorized: bool = False
    start: float = 0.0

    def __post_init__(self):
        if not self.window > 0:
            raise ValueError("window must be positive")
        if not 0 < self.step <= self.window:
            raise ValueError("step must lie in (0, window]")

    @property
    def grid(self):
        n = int(math.floor(self.window / self.step + 1e-9))
        return self.start + self.step * np.arange(n + 1)

    def evaluate(self, times):
        if self.vectorized:
            return np.asarray(self.fn(times))
        return [self.fn(float(t)) for t in times]


@dataclass(frozen=True)
class ProbeSequence:
    """Times t_1 < t_2 < ... and the probe functional x*."""

    times: np.ndarray
    functional: np.ndarray = field(default_factory=lambda: np.ones(1))

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float).ravel()
        if times.size < 2:
            raise ValueError("a probe sequence needs at least two times")
        if np.any(np.diff(times) <= 0):
            raise ValueError("probe times must be strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "functional", np.atleast_1d(np.asarray(self.functional, dtype=float)))


@dataclass
class AlmostPeriodReport:
    epsilon: float
    taus_found: list
    window: tuple
    search_range: tuple
    relatively_dense: bool
    inclusion_length: Optional[float]
    witnesses: list
    curve: pd.DataFrame
    grid_meta: dict = field(default_factory=dict)

    def distance_at(self, tau):
        """Smallest reported sup-distance at tau (found set first, then curve)."""
        for w in self.witnesses:
            if w["tau"] == tau:
                return w["distance"]
        row = self.curve.loc[np.isclose(self.curve["tau"], tau, rtol=0, atol=1e-12)]
        return float(row["sup_distance"].min()) if len(row) else None

    def to_dict(self):
        return {
            "epsilon": self.epsilon,
            "taus_found": [float(t) for t in self.taus_found],
            "n_found": len(self.taus_found),
            "window": list(self.window),
            "search_range": list(self.search_range),
            "relatively_dense": self.relatively_dense,
            "inclusion_length": self.inclusion_length,
            "witnesses": list(self.witnesses),
            "min_sup_distance": float(self.curve["sup_distance"].min()) if len(self.curve) else None,
            "grid": dict(self.grid_meta),
        }


@dataclass(frozen=True)
class FalsificationWitness:
    """c = inf E||X_{t+tau} - X_t||^2 over the tested mesh; no eps-almost period below sqrt(c)."""

    c: float
    argmin_t: float
    argmin_tau: float
    tau_range: tuple
    t_window: tuple
    grid_meta: dict
    verdict: str

    @property
    def epsilon_bound(self):
        return math.sqrt(max(self.c, 0.0))

    def to_dict(self):
        return {
            "c": self.c,
            "argmin": {"t": self.argmin_t, "tau": self.argmin_tau},
            "epsilon_bound": self.epsilon_bound,
            "tau_range": list(self.tau_range),
            "t_window": list(self.t_window),
            "grid": dict(self.grid_meta),
            "verdict": self.verdict,
        }


@dataclass
class LemmaVerdict:
    """Covariance decay along a probe sequence and the variance of the norm."""

    times: np.ndarray
    functional: np.ndarray
    cov: np.ndarray
    gap: int
    max_offdiag: float
    probe_variance: np.ndarray
    norm_variance: np.ndarray
    status: str
    source: str
    norm_variance_se: Optional[np.ndarray] = None
    norm_variance_mc: Optional[np.ndarray] = None
    mc_consistent: Optional[bool] = None
    reasons: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    @property
    def satisfied(self):
        return self.status == "satisfied"

    def to_dict(self):
        return {
            "status": self.status,
            "source": self.source,
            "times": self.times.tolist(),
            "functional": self.functional.tolist(),
            "gap": self.gap,
            "max_offdiag": self.max_offdiag,
            "cov": self.cov.tolist(),
            "probe_variance": self.probe_variance.tolist(),
            "norm_variance": self.norm_variance.tolist(),
            "norm_variance_se": None if self.norm_variance_se is None else self.norm_variance_se.tolist(),
            "norm_variance_mc": None if self.norm_variance_mc is None else self.norm_variance_mc.tolist(),
            "mc_consistent": self.mc_consistent,
            "reasons": list(self.reasons),
            "provenance": dict(self.provenance),
        }


# ---------------------------------------------------------------- scanning

def _sup_curve(evaluate, distance, vectorized, t_points, base, taus):
    """sup_t d(f(t + tau), f(t)) over t_points and where it is attained, per tau."""
    sups = np.empty(taus.size)
    where = np.empty(taus.size)
    if vectorized:
        rows = max(1, CHUNK_ELEMENTS // t_points.size)
        for start in range(0, taus.size, rows):
            block = taus[start:start + rows]
            shifted = evaluate(t_points[None, :] + block[:, None])
            d = np.asarray(distance(shifted, base[None, ...]), dtype=float)
            k = np.argmax(d, axis=1)
            sups[start:start + rows] = d[np.arange(block.size), k]
            where[start:start + rows] = t_points[k]
        return sups, where
    for i, tau in enumerate(taus):
        shifted = evaluate(t_points + tau)
        d = np.array([float(distance(a, b)) for a, b in zip(shifted, base)])
        k = int(np.argmax(d))
        sups[i], where[i] = d[k], t_points[k]
    return sups, where


def _local_minima(values):
    inner = np.arange(1, values.size - 1)
    keep = (values[inner] <= values[inner - 1]) & (values[inner] <= values[inner + 1])
    return inner[keep]


def _refine_minima(sup_at, taus, sups, epsilon, max_refine):
    """Brent refinement of the smallest local minima of the curve that sit above epsilon."""
    found = []
    candidates = [i for i in _local_minima(sups) if sups[i] > epsilon]
    candidates = sorted(candidates, key=lambda i: sups[i])[:max_refine]
    for i in candidates:
        lo, mid, hi = taus[i - 1], taus[i], taus[i + 1]
        bracket = (lo, mid, hi) if sups[i] < min(sups[i - 1], sups[i + 1]) else (lo, hi)
        try:
            res = optimize.minimize_scalar(
                lambda tau: sup_at(tau)[0], bracket=bracket, method="brent",
                options={"xtol": 1e-14, "maxiter": 500},
            )
        except (ValueError, RuntimeError) as exc:
            logger.debug("refinement near tau=%g failed: %s", mid, exc)
            continue
        tau = float(res.x)
        if lo <= tau <= hi and res.fun <= epsilon:
            value, t_at = sup_at(tau)
            if value <= epsilon:
                found.append((tau, value, t_at))
    return found


def inclusion_length(taus, span):
    """Largest gap between consecutive taus in span, boundary gaps included."""
    a, b = span
    taus = np.asarray([t for t in taus if a <= t <= b], dtype=float)
    if taus.size == 0:
        return None
    gaps = np.concatenate([[taus[0] - a], np.diff(taus), [b - taus[-1]]])
    return float(np.max(gaps))


def relatively_dense(taus, span, L):
    """True iff every closed subinterval of span of length L contains some tau."""
    taus = list(taus)
    if any(b < a for a, b in zip(taus[:-1], taus[1:])):
        raise ValueError("taus must be sorted")
    gap = inclusion_length(taus, span)
    return gap is not None and gap <= L


def _assemble_report(epsilon, taus, sups, where, extra, window, span, max_inclusion, grid_meta):
    hits = [(float(t), float(s), float(w)) for t, s, w in zip(taus, sups, where) if s <= epsilon]
    hits = sorted(hits + [tuple(map(float, e)) for e in extra])
    taus_found = [h[0] for h in hits]
    witnesses = [{"t": w, "tau": t, "distance": s} for t, s, w in hits]
    gap = inclusion_length(taus_found, span)
    limit = 0.5 * (span[1] - span[0]) if max_inclusion is None else max_inclusion
    # a single candidate says nothing about density
    dense = gap is not None and span[1] > span[0] and gap <= limit
    curve = pd.DataFrame({"tau": taus, "sup_distance": sups, "argmax_t": where})
    grid_meta = {**grid_meta, "n_refined": len(extra), "max_inclusion": limit}
    logger.info(
        "scan eps=%g over [%g, %g]: %d almost periods, inclusion length %s",
        epsilon, span[0], span[1], len(taus_found), "n/a" if gap is None else f"{gap:.4g}",
    )
    return AlmostPeriodReport(
        epsilon=epsilon, taus_found=taus_found, window=window, search_range=tuple(span),
        relatively_dense=dense, inclusion_length=gap, witnesses=witnesses,
        curve=curve, grid_meta=grid_meta,
    )


def _tau_grid(tau_range, tau_step):
    a, b = map(float, tau_range)
    if not 0 <= a <= b:
        raise ValueError(f"need 0 <= tau_min <= tau_max, got {tau_range}")
    if not tau_step > 0:
        raise ValueError("tau_step must be positive")
    n = int(math.floor((b - a) / tau_step + 1e-9))
    taus = a + tau_step * np.arange(n + 1)
    if b - taus[-1] > 1e-12:
        taus = np.append(taus, b)
    return taus


def comparison_points(f, tau_max):
    """Grid times t with t + tau_max still inside the window."""
    grid = f.grid
    t_points = grid[grid <= f.start + f.window - tau_max + 1e-12]
    if t_points.size < 2:
        raise WindowTooShortError(
            f"window {f.window:g} leaves no comparison interval for tau up to {tau_max:g}"
        )
    return t_points


def sup_distance(f, tau, t_points):
    """sup over t_points of d(f(t + tau), f(t)) for a single tau."""
    base = f.evaluate(t_points)
    sups, where = _sup_curve(f.evaluate, f.distance, f.vectorized, t_points, base, np.array([tau]))
    return float(sups[0]), float(where[0])


def scan_almost_periods(f, epsilon, tau_range, tau_step, refine=True, max_refine=MAX_REFINE,
                        max_inclusion=None):
    """
    All tau on the tau grid (plus refined local minima) whose sup-distance
    over the comparison subwindow [start, start + window - tau_max] is at most
    epsilon. relatively_dense compares the inclusion length of the found set
    with max_inclusion (half the search range by default).
    """
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    taus = _tau_grid(tau_range, tau_step)
    t_points = comparison_points(f, taus[-1])
    base = f.evaluate(t_points)
    if f.vectorized:
        base = np.asarray(base)
    logger.info("scanning %d taus against %d comparison points", taus.size, t_points.size)
    sups, where = _sup_curve(f.evaluate, f.distance, f.vectorized, t_points, base, taus)

    extra = []
    if refine and taus.size >= 3:
        def sup_at(tau):
            s, w = _sup_curve(f.evaluate, f.distance, f.vectorized, t_points, base, np.array([tau]))
            return float(s[0]), float(w[0])
        known = set(taus[sups <= epsilon].tolist())
        extra = [e for e in _refine_minima(sup_at, taus, sups, epsilon, max_refine) if e[0] not in known]

    grid_meta = {
        "tau_step": tau_step, "n_tau": int(taus.size), "t_step": f.step,
        "n_t": int(t_points.size), "comparison": [float(t_points[0]), float(t_points[-1])],
    }
    return _assemble_report(
        epsilon, taus, sups, where, extra, (f.start, f.start + f.window),
        (float(tau_range[0]), float(tau_range[1])), max_inclusion, grid_meta,
    )


# ---------------------------------------------------------- mean-square AP

def ms_ap_falsify(spec, tau_min, tau_max, t_window=(0.0, 20.0), n_t=41, n_tau=400,
                  tolerance=1e-12, refine=True):
    """
    Lower bound c on E||X_{t+tau} - X_t||^2 over t in t_window, tau in
    [tau_min, tau_max]. When c > tolerance no tau in that range is an
    eps-almost period in mean square for eps < sqrt(c).
    """
    if not 0 <= tau_min <= tau_max:
        raise ValueError(f"need 0 <= tau_min <= tau_max, got [{tau_min}, {tau_max}]")
    t0, t1 = map(float, t_window)
    if t1 < t0 or n_t < 1 or n_tau < 2:
        raise ValueError("invalid falsification mesh")
    ts = np.linspace(t0, t1, n_t)
    taus = np.linspace(tau_min, tau_max, n_tau)
    mesh_t, mesh_tau = np.meshgrid(ts, taus, indexing="ij")
    values = np.asarray(l2_increment(spec, mesh_t, mesh_tau))
    i, j = np.unravel_index(int(np.argmin(values)), values.shape)
    c, arg_t, arg_tau = float(values[i, j]), float(ts[i]), float(taus[j])
    logger.info("L2 increment grid minimum %.12g at t=%g tau=%g", c, arg_t, arg_tau)

    if refine:
        res = optimize.minimize(
            lambda x: float(l2_increment(spec, x[0], x[1])), x0=[arg_t, arg_tau],
            method="L-BFGS-B", bounds=[(t0, t1), (tau_min, tau_max)],
        )
        if res.fun < c:
            c, arg_t, arg_tau = float(res.fun), float(res.x[0]), float(res.x[1])

    grid_meta = {"n_t": n_t, "n_tau": n_tau, "refined": bool(refine), "tolerance": tolerance}
    if c <= tolerance:
        witness = FalsificationWitness(
            c=c, argmin_t=arg_t, argmin_tau=arg_tau, tau_range=(tau_min, tau_max),
            t_window=(t0, t1), grid_meta=grid_meta, verdict="inconclusive",
        )
        raise InconclusiveError(
            f"infimum of the L2 increment is {c:.3g} at tau={arg_tau:g}; cannot falsify",
            witness=witness,
        )
    return FalsificationWitness(
        c=c, argmin_t=arg_t, argmin_tau=arg_tau, tau_range=(tau_min, tau_max),
        t_window=(t0, t1), grid_meta=grid_meta,
        verdict="not mean-square almost periodic on tested range",
    )


# ------------------------------------------------------------ probe lemma

def _streamed_norm_variance(mg, n, seed):
    """Var||X_{t_m}|| and its standard error from n joint draws, accumulated per block."""
    k, d = mg.times.size, mg.dim
    sums = np.zeros((4, k))
    shift = None
    for draws in iter_marginal_blocks(mg, n, seed):
        norms = np.linalg.norm(draws.reshape(-1, k, d), axis=-1)
        if shift is None:
            shift = norms.mean(axis=0)
        y = norms - shift
        for p in range(4):
            sums[p] += np.sum(y ** (p + 1), axis=0)
    m1, m2, m3, m4 = sums / n
    mu2 = m2 - m1 ** 2
    mu4 = m4 - 4 * m1 * m3 + 6 * m1 ** 2 * m2 - 3 * m1 ** 4
    variance = mu2 * n / (n - 1)
    se = np.sqrt(np.clip(mu4 - mu2 ** 2, 0.0, None) / n)
    return variance, se


def _decide(upper, lower, threshold, below):
    """'ok' / 'fail' / 'undecided' for a quantity bracketed by [lower, upper]."""
    if below:
        if upper < threshold:
            return "ok"
        return "fail" if lower >= threshold else "undecided"
    if lower > threshold:
        return "ok"
    return "fail" if upper <= threshold else "undecided"


def lemma_check(process, probe, n_mc=0, seed=0, gap=10, cov_tol=1e-4, var_margin=1e-3):
    """
    Check covariance decay Cov(<x*, X_{t_n}>, <x*, X_{t_m}>) -> 0 for
    |n - m| >= gap and a positive floor for Var||X_{t_m}||.

    process is a GaussianProcessSpec (closed form, Monte Carlo cross-check
    when n_mc > 0) or a PathSampler (Monte Carlo with Z_BAND intervals).
    Raises UndecidedError when an interval straddles a threshold.
    """
    times, x = probe.times, probe.functional
    k = times.size
    far = np.abs(np.subtract.outer(np.arange(k), np.arange(k))) >= gap
    if not far.any():
        raise ValueError(f"probe sequence of length {k} has no pairs at gap {gap}")

    if isinstance(process, GaussianProcessSpec):
        d = process.dim
        if x.size != d:
            raise ValueError(f"functional has size {x.size}, process dim is {d}")
        mg = marginals(process, times)
        cov = np.einsum("i,aibj,j->ab", x, mg.cov.reshape(k, d, k, d), x)
        means = mg.mean.reshape(k, d)
        mc_var = mc_se = None
        if n_mc > 0:
            mc_var, mc_se = _streamed_norm_variance(mg, n_mc, seed)
        if d == 1:
            norm_var = np.array([gaussian_norm_variance(m[0], v)
                                 for m, v in zip(means, np.diag(mg.cov))])
            var_lower = var_upper = norm_var
            source = "closed_form"
        elif mc_var is not None:
            norm_var = mc_var
            var_lower, var_upper = mc_var - Z_BAND * mc_se, mc_var + Z_BAND * mc_se
            source = "closed_form+monte_carlo"
        else:
            raise ValueError("the norm variance of a vector process needs n_mc > 0")
        off = np.abs(cov[far])
        off_lower = off_upper = float(np.max(off))
        provenance = {"n_mc": n_mc, "seed": seed, "spec": process.describe()}
    else:
        if n_mc <= 0:
            raise ValueError("a sampler needs n_mc > 0")
        cov, cov_se, sample = mc_cov_matrix(process, times, n_mc, seed, probe=x)
        norms = np.linalg.norm(sample.values, axis=-1)
        centered = norms - norms.mean(axis=0)
        norm_var = centered.var(axis=0, ddof=1)
        mc_se = np.sqrt(np.clip((centered ** 4).mean(axis=0) - norm_var ** 2, 0.0, None) / n_mc)
        mc_var = norm_var
        var_lower, var_upper = norm_var - Z_BAND * mc_se, norm_var + Z_BAND * mc_se
        off_upper = float(np.max(np.abs(cov[far]) + Z_BAND * cov_se[far]))
        off_lower = float(np.max(np.abs(cov[far]) - Z_BAND * cov_se[far]))
        source = "monte_carlo"
        provenance = {"n_mc": n_mc, "seed": seed, "sampler": process.describe()}

    cov_state = _decide(off_upper, off_lower, cov_tol, below=True)
    var_state = _decide(float(np.min(var_upper)), float(np.min(var_lower)), var_margin, below=False)
    reasons = []
    if cov_state != "ok":
        reasons.append(f"covariance at gap >= {gap}: max {float(np.max(np.abs(cov[far]))):.3g} "
                       f"vs tolerance {cov_tol:g} ({cov_state})")
    if var_state != "ok":
        reasons.append(f"norm variance floor {float(np.min(norm_var)):.3g} "
                       f"vs margin {var_margin:g} ({var_state})")
    if "fail" in (cov_state, var_state):
        status = "failed"
    elif "undecided" in (cov_state, var_state):
        status = "undecided"
    else:
        status = "satisfied"

    consistent = None
    if source == "closed_form" and mc_var is not None:
        consistent = bool(np.all(np.abs(mc_var - norm_var) <= Z_BAND * mc_se + 1e-12))
        if not consistent:
            logger.warning("Monte Carlo norm variance disagrees with the closed form")

    verdict = LemmaVerdict(
        times=times, functional=x, cov=cov, gap=gap,
        max_offdiag=float(np.max(np.abs(cov[far]))), probe_variance=np.diag(cov).copy(),
        norm_variance=np.asarray(norm_var, dtype=float), status=status, source=source,
        norm_variance_se=mc_se, norm_variance_mc=mc_var if source == "closed_form" else None,
        mc_consistent=consistent, reasons=reasons, provenance=provenance,
    )
    if status == "undecided":
        raise UndecidedError("; ".join(reasons), verdict=verdict)
    return verdict


# ---------------------------------------------------- distribution level

def gaussian_w2(m1, C1, m2, C2):
    """
    2-Wasserstein distance between N(m1, C1) and N(m2, C2).

    Uses W2^2 = ||m1 - m2||^2 + min_R ||C1^{1/2} - C2^{1/2} R||_F^2 over
    orthogonal R, with R the polar factor of C2^{1/2} C1^{1/2}.
    """
    m1, m2 = np.atleast_1d(np.asarray(m1, dtype=float)), np.atleast_1d(np.asarray(m2, dtype=float))
    C1, C2 = np.atleast_2d(np.asarray(C1, dtype=float)), np.atleast_2d(np.asarray(C2, dtype=float))
    if not (m1.shape == m2.shape and C1.shape == C2.shape == (m1.size, m1.size)):
        raise ValueError("mean and covariance shapes do not match")
    a = psd_sqrt(check_psd(C1, what="first covariance"))
    b = psd_sqrt(check_psd(C2, what="second covariance"))
    rotation = polar(b.T @ a)[0]
    total = float(np.sum((m1 - m2) ** 2) + np.sum((a - b @ rotation) ** 2))
    return math.sqrt(max(total, 0.0))


def _marginal_distance(p, q):
    return gaussian_w2(p.mean, p.cov, q.mean, q.cov)


def distribution_ap_check(spec, k=None, offsets=None, tau_candidates=(2.0 * math.pi,),
                          epsilon=1e-10, t_grid=None):
    """
    Scan F(t) = law(X_{t + offsets}) with the Gaussian W2 distance.

    This is a finite-dimensional proxy: it can refute but not prove almost
    periodicity in distribution.
    """
    if offsets is None:
        if k is None:
            raise ValueError("give k or offsets")
        offsets = np.arange(k, dtype=float)
    offsets = np.asarray(offsets, dtype=float).ravel()
    if k is not None and k != offsets.size:
        raise ValueError(f"k={k} does not match {offsets.size} offsets")
    if not 1 <= offsets.size <= MAX_OFFSETS:
        raise ValueError(f"between 1 and {MAX_OFFSETS} offsets are supported")
    if np.any(np.diff(offsets) <= 0):
        raise ValueError("offsets must be strictly increasing")
    taus = np.unique(np.asarray(tau_candidates, dtype=float))
    if taus.size == 0 or taus[0] < 0:
        raise ValueError("tau candidates must be nonempty and nonnegative")
    t_grid = np.linspace(0.0, 2.0 * math.pi, 33) if t_grid is None else np.asarray(t_grid, dtype=float)

    def law(times):
        return [marginals(spec, t + offsets) for t in np.atleast_1d(times)]

    base = law(t_grid)
    sups, where = _sup_curve(law, _marginal_distance, False, t_grid, base, taus)
    grid_meta = {
        "offsets": offsets.tolist(), "n_t": int(t_grid.size), "n_tau": int(taus.size),
        "t_range": [float(t_grid.min()), float(t_grid.max())],
    }
    window = (float(t_grid.min()), float(t_grid.max() + taus[-1] + offsets[-1]))
    return _assemble_report(
        epsilon, taus, sups, where, [], window, (float(taus[0]), float(taus[-1])), None, grid_meta,
    )


__all__ = [
    "SampledFunction", "ProbeSequence", "AlmostPeriodReport", "FalsificationWitness",
    "LemmaVerdict", "absolute_distance", "euclidean_distance", "scan_almost_periods",
    "sup_distance", "comparison_points", "inclusion_length", "relatively_dense",
    "ms_ap_falsify", "lemma_check", "gaussian_w2", "distribution_ap_check",
]
