"""
Experiment runners behind the CLI and the reproduction bundle.

Each runner takes a resolved process, its parameter dataclass and a seed
and returns an ExperimentResult: a JSON-ready summary, named tables and
the exit code the CLI should report.
"""

import logging
import math
import os
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import pandas as pd

from src.core import ap_analysis, estimators, evolution, gp_core, sampler
from src.core.errors import ApsdeError, ConfigError, InconclusiveError, UndecidedError
from src.utils.expressions import compile_matrix
from src.utils.io import write_csv, write_json

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_INCONCLUSIVE = 2
EXIT_VIOLATION = 3

OUT_ENV = "APSDE_OUT"
DEFAULT_OUT = "apsde_out"
REPRO_N_MC = 100_000
LEMMA_ORACLE_N = 1_000_000


def default_out_dir():
    return Path(os.environ.get(OUT_ENV) or DEFAULT_OUT)


class ProcessBundle:
    """A configured process: exact or Euler sampler, optional system, lazily built law."""

    def __init__(self, name, path_sampler, system=None, spec=None):
        self.name = name
        self.sampler = path_sampler
        self.system = system
        self._spec = spec

    @cached_property
    def spec(self):
        if self._spec is not None:
            return self._spec
        if self.system is None:
            raise ValueError(f"process '{self.name}' has no Gaussian law")
        return evolution.gaussian_spec(self.system)


def resolve_process(system_cfg, euler_step=1e-2):
    """Build the process named by a validated config 'system' object."""
    builtin = system_cfg.get("builtin")
    if builtin == "ou":
        params = gp_core.OuParams(alpha=system_cfg.get("alpha", 1.0), sigma=system_cfg.get("sigma", 1.0))
        return ProcessBundle("ou", sampler.ExactOuSampler(params),
                             evolution.ou_system(params), gp_core.ou_spec(params))
    if builtin == "periodic_example":
        return ProcessBundle("periodic_example", sampler.ExactPeriodicSampler(),
                             evolution.periodic_example_system(), gp_core.periodic_example_spec())
    if builtin == "quasi_periodic":
        system = evolution.quasi_periodic_system()
        return ProcessBundle("quasi_periodic", sampler.EulerSampler(system, euler_step), system)
    if builtin == "constant":
        value = system_cfg.get("value", 0.0)
        return ProcessBundle("constant", sampler.ConstantSampler(value),
                             spec=gp_core.constant_spec(value))
    try:
        system = evolution.EvolutionSystem.from_expressions(
            system_cfg["A"], system_cfg["g"], system_cfg.get("Q"),
            system_cfg.get("period_hint"), system_cfg.get("name", "custom"),
        )
    except ValueError as exc:
        raise ConfigError(str(exc), field="$.system") from exc
    return ProcessBundle(system.name, sampler.EulerSampler(system, euler_step), system)


@dataclass
class ExperimentResult:
    experiment: str
    verdict: str
    summary: dict
    exit_code: int = EXIT_OK
    tables: dict = field(default_factory=dict)


def _table(frame, **metadata):
    return frame, metadata


def run_kernel_table(process, params, seed):
    frame = gp_core.kernel_table(process.spec, params.times)
    summary = {"n_times": len(params.times), "max_abs_cov": float(frame["cov"].abs().max())}
    return ExperimentResult("kernel-table", "computed", summary,
                            tables={"kernel_table": _table(frame, process=process.name)})


def _scan_function(process, params):
    if params.target == "expression":
        fn = compile_matrix([[params.expression]])
        return ap_analysis.SampledFunction(
            fn=lambda t: fn(t)[..., 0, 0], window=params.window, step=params.t_step, vectorized=True,
        )
    spec = process.spec
    if params.target == "variance":
        return ap_analysis.SampledFunction(
            fn=lambda t: np.trace(spec.cov(t, t), axis1=-2, axis2=-1),
            window=params.window, step=params.t_step, vectorized=True,
        )

    # Points are labelled by their time; the metric is the L2 distance of X.
    def l2_distance(a, b):
        a, b = np.broadcast_arrays(a, b)
        return np.sqrt(gp_core.l2_increment(spec, np.minimum(a, b), np.abs(a - b)))

    return ap_analysis.SampledFunction(
        fn=lambda t: np.asarray(t, dtype=float), distance=l2_distance,
        window=params.window, step=params.t_step, vectorized=True,
    )


def run_ap_scan(process, params, seed):
    f = _scan_function(process, params)
    report = ap_analysis.scan_almost_periods(
        f, params.epsilon, (params.tau_min, params.tau_max), params.tau_step,
        refine=params.refine, max_inclusion=params.max_inclusion,
    )
    verdict = "relatively dense" if report.relatively_dense else (
        "almost periods found" if report.taus_found else "no almost periods")
    return ExperimentResult(
        "ap-scan", verdict, {"target": params.target, **report.to_dict()},
        tables={"sup_distance_curve": _table(report.curve, epsilon=params.epsilon, target=params.target)},
    )


def _increment_curve(spec, witness, n=200):
    taus = np.linspace(witness.tau_range[0], witness.tau_range[1], n)
    values = gp_core.l2_increment(spec, np.full(n, witness.argmin_t), taus)
    return pd.DataFrame({"tau": taus, "l2_increment": values})


def run_ms_falsify(process, params, seed):
    spec = process.spec
    try:
        witness = ap_analysis.ms_ap_falsify(
            spec, params.tau_min, params.tau_max, params.t_window,
            n_t=params.n_t, n_tau=params.n_tau, tolerance=params.tolerance, refine=params.refine,
        )
    except InconclusiveError as exc:
        logger.warning("%s", exc)
        return ExperimentResult("ms-falsify", "inconclusive", exc.witness.to_dict(), EXIT_INCONCLUSIVE)
    return ExperimentResult(
        "ms-falsify", witness.verdict, witness.to_dict(),
        tables={"l2_increment_curve": _table(_increment_curve(spec, witness), t=witness.argmin_t)},
    )


def _decay_table(verdict):
    cov = verdict.cov
    k = cov.shape[0]
    lags = np.abs(np.subtract.outer(np.arange(k), np.arange(k)))
    rows = [(lag, float(np.max(np.abs(cov[lags == lag])))) for lag in range(k)]
    return pd.DataFrame(rows, columns=["lag", "max_abs_cov"])


def run_lemma_check(process, params, seed):
    probe = ap_analysis.ProbeSequence(np.asarray(params.probe_times), np.asarray(params.functional))
    target = process.spec if params.route == "closed_form" else process.sampler
    try:
        verdict = ap_analysis.lemma_check(
            target, probe, n_mc=params.n, seed=seed, gap=params.gap,
            cov_tol=params.cov_tol, var_margin=params.var_margin,
        )
    except UndecidedError as exc:
        logger.warning("%s", exc)
        return ExperimentResult("lemma-check", "undecided", exc.verdict.to_dict(), EXIT_INCONCLUSIVE)
    code = EXIT_OK if verdict.satisfied else EXIT_VIOLATION
    variance = pd.DataFrame({
        "t": verdict.times, "norm_variance": verdict.norm_variance,
        "probe_variance": verdict.probe_variance,
    })
    return ExperimentResult(
        "lemma-check", f"hypotheses {verdict.status}", verdict.to_dict(), code,
        tables={
            "covariance_decay": _table(_decay_table(verdict), route=params.route),
            "norm_variance": _table(variance, route=params.route, seed=seed, n=params.n),
        },
    )


def run_dist_ap_check(process, params, seed):
    report = ap_analysis.distribution_ap_check(
        process.spec, offsets=params.offsets, tau_candidates=params.tau_candidates,
        epsilon=params.epsilon, t_grid=params.t_grid,
    )
    verdict = "periodic candidates found" if report.taus_found else "no candidate within epsilon"
    return ExperimentResult(
        "dist-ap-check", verdict, report.to_dict(),
        tables={"w2_curve": _table(report.curve, epsilon=params.epsilon)},
    )


def run_hypothesis_check(process, params, seed):
    if process.system is None:
        raise ValueError(f"process '{process.name}' is not given by an evolution system")
    audit = evolution.audit_hypotheses(
        process.system, params.t_grid, horizon=params.horizon, step=params.step, tail_tol=params.tail_tol,
    )
    frame = pd.DataFrame({"t": list(audit.variances), "variance_condition": list(audit.variances.values())})
    return ExperimentResult(
        "hypothesis-check", "hypotheses hold" if audit.ok else "hypothesis violated",
        audit.to_dict(), EXIT_OK if audit.ok else EXIT_VIOLATION,
        tables={"variance_condition": _table(frame, system=process.name)},
    )


def _reference_cov(process, t):
    try:
        return process.spec.cov(t, t)
    except (ApsdeError, ValueError) as exc:
        logger.info("no exact moments for '%s': %s", process.name, exc)
        return None


def run_moments(process, params, seed):
    path_sampler = process.sampler
    if params.p == 4:
        report = estimators.ui_proxy(path_sampler, params.t_grid, params.n, seed, bound=params.bound)
        table = report.table.copy()
        summary = report.to_dict()
        passed, reason = report.passed, report.reason
    elif params.p == 2:
        rows = [estimators.mc_moment(path_sampler, t, 2, params.n, seed) for t in params.t_grid]
        table = pd.DataFrame({"t": params.t_grid, "moment2": [r.value for r in rows],
                              "std_error": [r.std_error for r in rows]})
        summary = {"estimates": [r.to_dict() for r in rows]}
        passed, reason = bool(np.all(np.isfinite(table["moment2"]))), ""
    else:
        raise ValueError("p must be 2 or 4")
    if passed:
        refs = [_reference_cov(process, t) for t in params.t_grid]
        if all(r is not None for r in refs):
            table[f"exact{params.p}"] = [estimators.gaussian_moment(r, params.p) for r in refs]
    summary = {**summary, "p": params.p, "passed": passed, "reason": reason}
    return ExperimentResult(
        "moments", "bounded" if passed else "unbounded", summary,
        EXIT_OK if passed else EXIT_VIOLATION,
        tables={"moments": _table(table, seed=seed, n=params.n, generator=sampler.GENERATOR_ID)},
    )


RUNNERS = {
    "kernel-table": run_kernel_table,
    "ap-scan": run_ap_scan,
    "ms-falsify": run_ms_falsify,
    "lemma-check": run_lemma_check,
    "dist-ap-check": run_dist_ap_check,
    "hypothesis-check": run_hypothesis_check,
    "moments": run_moments,
}


def run_experiment(config):
    euler_step = getattr(config.parameters, "euler_step", 1e-2)
    process = resolve_process(config.system, euler_step=euler_step)
    logger.info("running %s on '%s' (seed %d)", config.experiment, process.name, config.seed)
    return RUNNERS[config.experiment](process, config.parameters, config.seed)


def _write_table(frame, metadata, path, fmt):
    if fmt == "json":
        return write_json({"metadata": metadata, "rows": frame.to_dict(orient="records")}, path)
    return write_csv(frame, path, metadata)


def write_result(result, config, out_dir):
    """Write the tables and report.json; returns the report path."""
    out_dir = Path(out_dir)
    suffix = "json" if config.output_format == "json" else "csv"
    artifacts = []
    for name, (frame, metadata) in sorted(result.tables.items()):
        path = out_dir / f"{name}.{suffix}"
        _write_table(frame, {**metadata, "seed": config.seed}, path, config.output_format)
        artifacts.append(path.name)
    report = {
        "experiment": result.experiment,
        "verdict": result.verdict,
        "exit_code": result.exit_code,
        "config": config.to_dict(),
        "generator": sampler.GENERATOR_ID,
        "results": result.summary,
        "artifacts": artifacts,
    }
    return write_json(report, out_dir / "report.json")


# ------------------------------------------------------------------ repro

def _covers(estimate, truth):
    return {"value": estimate.value, "std_error": estimate.std_error, "truth": truth,
            "covered": estimate.covers(truth)}


def _repro_ou_kernel(n, seed):
    rows = []
    for alpha, sigma in ((1.0, 1.0), (0.5, 2.0)):
        ou = sampler.ExactOuSampler(gp_core.OuParams(alpha, sigma))
        for t in (0.0, 1.0, 5.0):
            for tau in (0.0, math.log(2.0), 1.0, 5.0):
                est = estimators.mc_cov(ou, t, t + tau, n, seed)
                rows.append({"alpha": alpha, "sigma": sigma, "t": t, "tau": tau,
                             **_covers(est, sigma ** 2 * math.exp(-alpha * tau))})
    return pd.DataFrame(rows)


def _repro_periodic_variance(n, seed):
    exact = sampler.ExactPeriodicSampler()
    rows = []
    for t in (0.0, 0.5 * math.pi, math.pi, 3.0):
        est = estimators.mc_cov(exact, t, t, n, seed)
        rows.append({"t": t, "quadrature": gp_core.periodic_variance_quadrature(t), **_covers(est, 0.5)})
    frame = pd.DataFrame(rows)
    cov = estimators.mc_cov(exact, 0.0, 2.0 * math.pi, n, seed)
    truth = 0.5 * math.exp(-2.0 * math.pi)
    quad = gp_core.periodic_covariance_quadrature(0.0, 2.0 * math.pi)
    ok = bool((frame["quadrature"] - 0.5).abs().max() <= 0.005 and frame["covered"].all()
              and cov.covers(truth) and abs(quad - truth) <= 1e-6)
    return frame, {"cov_2pi": _covers(cov, truth), "cov_2pi_quadrature": quad}, ok


def _repro_propagator(seed):
    system = evolution.periodic_example_system()
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 1_000_003])))
    pairs = np.sort(rng.uniform(-10.0, 10.0, size=(20, 2)), axis=1)
    errors = []
    for s, t in pairs:
        u = evolution.propagator(system, s, t, step=1e-3).U[0, 0]
        errors.append(abs(u - math.exp(-(t - s) + math.sin(t) - math.sin(s))))
    defects = []
    for s, t in pairs[:5]:
        r = 0.5 * (s + t)
        whole = evolution.propagator(system, s, t, step=1e-3).U
        split = evolution.propagator(system, r, t, step=1e-3).U @ evolution.propagator(system, s, r, step=1e-3).U
        defects.append(float(np.max(np.abs(whole - split))))
    return {"max_error": float(max(errors)), "max_cocycle_defect": float(max(defects))}


def _repro_audit():
    system = evolution.periodic_example_system()
    stability = evolution.check_exponential_stability(system)
    ts = (0.0, 1.0, 2.0, 3.0, 4.0)
    variances = [evolution.variance_condition(system, t, stability=stability) for t in ts]
    return {
        "stability": stability.to_dict(),
        "variance_condition": dict(zip((f"{t:g}" for t in ts), variances)),
        "delta_ok": abs(stability.delta - 1.0) <= 0.01,
        "M_ok": math.exp(1.99) <= stability.M <= math.exp(2.01),
        "dissipativity_gap": abs(stability.beta) <= 1e-9,
        "variance_ok": max(abs(v - 0.5) for v in variances) <= 1e-6,
    }


def _repro_cross_validation():
    pairs = [(0.0, 0.0), (0.0, 0.5), (0.3, 1.7), (1.0, 3.0), (2.0, 2.0),
             (2.5, 6.0), (3.0, 3.1), (4.0, 8.0), (5.0, 5.5), (6.0, 9.0)]
    out = {}
    for system, spec in ((evolution.ou_system(gp_core.OuParams(1.0, 1.0)), gp_core.ou_spec(gp_core.OuParams(1.0, 1.0))),
                         (evolution.periodic_example_system(), gp_core.periodic_example_spec())):
        errors = [float(np.max(np.abs(evolution.convolution_covariance(system, a, b) - spec.cov(a, b))))
                  for a, b in pairs]
        out[system.name] = max(errors)
    return out


def _repro_moments(n, seed):
    ou = sampler.ExactOuSampler(gp_core.OuParams(1.0, 1.0))
    periodic = sampler.ExactPeriodicSampler()
    unstable = sampler.EulerSampler(
        evolution.EvolutionSystem.from_expressions([[1]], [[1]], name="unstable"), 1e-2,
    )
    t_grid = np.linspace(0.0, 100.0, 11)
    n_ui = min(n, 10_000)
    ui = {
        "ou": estimators.ui_proxy(ou, t_grid, n_ui, seed),
        "periodic_example": estimators.ui_proxy(periodic, t_grid, n_ui, seed),
        "unstable": estimators.ui_proxy(unstable, t_grid, n_ui, seed),
    }
    m_ou = estimators.mc_moment(ou, 0.0, 4, n, seed, reference_cov=np.eye(1))
    m_per = estimators.mc_moment(periodic, 0.0, 4, n, seed, reference_cov=0.5 * np.eye(1))
    summary = {
        "ou_moment4": m_ou.to_dict(), "periodic_moment4": m_per.to_dict(),
        "ui": {k: v.to_dict() for k, v in ui.items()},
    }
    ok = bool(m_ou.covers(3.0) and m_per.covers(0.75) and ui["ou"].passed
              and ui["periodic_example"].passed and not ui["unstable"].passed)
    return summary, ok


def run_repro(seed=42, out_dir=None, n_mc=REPRO_N_MC):
    """
    Run the full counterexample suite and write report.json plus CSV tables.

    Returns (report, exit_code); the exit code is EXIT_OK when every
    expected verdict holds and EXIT_VIOLATION otherwise.
    """
    out_dir = default_out_dir() if out_dir is None else Path(out_dir)
    ou_params = gp_core.OuParams(1.0, 1.0)
    ou, periodic = gp_core.ou_spec(ou_params), gp_core.periodic_example_spec()
    verdicts, results, tables = {}, {}, {}
    times = np.arange(6, dtype=float)
    tables["kernel_ou"] = gp_core.kernel_table(ou, times)
    tables["kernel_periodic"] = gp_core.kernel_table(periodic, times)

    logger.info("OU kernel against Monte Carlo (n=%d)", n_mc)
    ou_kernel = _repro_ou_kernel(n_mc, seed)
    tables["ou_covariance_mc"] = ou_kernel
    verdicts["ou_kernel_consistent"] = bool(ou_kernel["covered"].all())

    frame, extra, ok = _repro_periodic_variance(n_mc, seed)
    tables["periodic_variance"] = frame
    results["periodic_variance"] = extra
    verdicts["periodic_variance_half"] = ok

    ou_witness = ap_analysis.ms_ap_falsify(ou, 1.0, 50.0, (0.0, 20.0))
    results["ou_ms_falsify"] = ou_witness.to_dict()
    verdicts["ou_not_ms_ap"] = abs(ou_witness.c - 2.0 * (1.0 - math.exp(-1.0))) <= 1e-9
    tables["ou_l2_increment"] = _increment_curve(ou, ou_witness)
    try:
        ap_analysis.ms_ap_falsify(ou, 0.0, 50.0, (0.0, 20.0))
        verdicts["ou_zero_shift_inconclusive"] = False
    except InconclusiveError as exc:
        results["ou_zero_shift"] = exc.witness.to_dict()
        verdicts["ou_zero_shift_inconclusive"] = True

    per_witness = ap_analysis.ms_ap_falsify(periodic, math.pi, 100.0, (0.0, 20.0))
    results["periodic_ms_falsify"] = per_witness.to_dict()
    tables["periodic_l2_increment"] = _increment_curve(periodic, per_witness)
    dist = ap_analysis.distribution_ap_check(
        periodic, k=5, offsets=np.arange(5.0), tau_candidates=(1.0, math.pi, 2.0 * math.pi),
    )
    results["periodic_distribution"] = dist.to_dict()
    tables["periodic_w2_curve"] = dist.curve
    found = any(abs(t - 2.0 * math.pi) < 1e-12 for t in dist.taus_found)
    verdicts["separation_periodic"] = bool(found and per_witness.c >= 0.5)
    ou_dist = ap_analysis.distribution_ap_check(ou, k=5, tau_candidates=(1.0, 2.0 * math.pi))
    results["ou_distribution"] = ou_dist.to_dict()
    verdicts["separation_ou"] = bool(len(ou_dist.taus_found) == 2 and verdicts["ou_not_ms_ap"])

    lemma_ou = ap_analysis.lemma_check(
        ou, ap_analysis.ProbeSequence(np.arange(1.0, 31.0)), n_mc=LEMMA_ORACLE_N, seed=seed, gap=10,
    )
    lemma_per = ap_analysis.lemma_check(
        periodic, ap_analysis.ProbeSequence(2.0 * math.pi * np.arange(1.0, 11.0)), gap=2,
    )
    lemma_const = ap_analysis.lemma_check(gp_core.constant_spec(1.0), ap_analysis.ProbeSequence(np.arange(1.0, 6.0)), gap=2)
    results["lemma"] = {"ou": lemma_ou.to_dict(), "periodic_example": lemma_per.to_dict(),
                        "constant": lemma_const.to_dict()}
    tables["ou_covariance_decay"] = _decay_table(lemma_ou)
    verdicts["lemma_ou_satisfied"] = lemma_ou.satisfied and bool(lemma_ou.mc_consistent) and bool(
        abs(lemma_ou.norm_variance[0] - (1.0 - 2.0 / math.pi)) <= 1e-12)
    verdicts["lemma_periodic_satisfied"] = lemma_per.satisfied
    verdicts["lemma_constant_fails"] = lemma_const.status == "failed"

    results["propagator"] = _repro_propagator(seed)
    verdicts["propagator_accurate"] = (results["propagator"]["max_error"] <= 1e-8
                                       and results["propagator"]["max_cocycle_defect"] <= 1e-7)
    audit = _repro_audit()
    results["periodic_audit"] = audit
    verdicts["stability_certified"] = audit["delta_ok"] and audit["M_ok"]
    verdicts["dissipativity_gap_documented"] = audit["dissipativity_gap"]
    verdicts["variance_condition_half"] = audit["variance_ok"]
    results["convolution_vs_kernel"] = _repro_cross_validation()
    verdicts["convolution_matches_kernels"] = max(results["convolution_vs_kernel"].values()) <= 1e-6

    quasi = evolution.gaussian_spec(evolution.quasi_periodic_system())
    quasi_witness = ap_analysis.ms_ap_falsify(quasi, math.pi, 4.0 * math.pi, (0.0, 2.0 * math.pi),
                                              n_t=5, n_tau=25, refine=False)
    results["quasi_periodic_ms_falsify"] = quasi_witness.to_dict()
    verdicts["convolution_not_ms_ap"] = quasi_witness.c > 0

    results["moments"], verdicts["moments_bounded"] = _repro_moments(n_mc, seed)

    grid = sampler.TimeGrid(0.0, 0.05, 400)
    paths = {
        "path_ou": sampler.sample_ou_exact(ou_params, grid, seed),
        "path_periodic": sampler.sample_periodic_exact(grid, seed),
    }
    artifacts = []
    for name, frame in sorted(tables.items()):
        write_csv(frame, out_dir / f"{name}.csv", {"seed": seed, "n": n_mc, "generator": sampler.GENERATOR_ID})
        artifacts.append(f"{name}.csv")
    for name, sample in sorted(paths.items()):
        sampler.write_path_csv(sample, out_dir / f"{name}.csv")
        artifacts.append(f"{name}.csv")

    verdicts = {k: bool(v) for k, v in verdicts.items()}
    all_hold = all(verdicts.values())
    report = {
        "seed": seed,
        "n_mc": n_mc,
        "lemma_oracle_n": LEMMA_ORACLE_N,
        "generator": sampler.GENERATOR_ID,
        "verdicts": verdicts,
        "all_hold": all_hold,
        "results": results,
        "artifacts": sorted(artifacts),
    }
    write_json(report, out_dir / "report.json")
    failed = [k for k, v in verdicts.items() if not v]
    if failed:
        logger.warning("verdicts not holding: %s", ", ".join(failed))
    return report, EXIT_OK if all_hold else EXIT_VIOLATION
