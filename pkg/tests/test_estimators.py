import math

import numpy as np
import pytest

from src.core.estimators import (
    McEstimate, gaussian_moment, mc_cov, mc_cov_matrix, mc_moment, spec_hash, ui_proxy,
)
from src.core.evolution import EvolutionSystem
from src.core.gp_core import OuParams
from src.core.sampler import GENERATOR_ID, ConstantSampler, EulerSampler, ExactOuSampler, ExactPeriodicSampler


@pytest.fixture(scope="module")
def ou():
    return ExactOuSampler(OuParams(1.0, 1.0))


def test_ou_covariance_at_log_two(ou):
    est = mc_cov(ou, 0.0, math.log(2.0), n=100_000, seed=42)
    assert est.covers(0.5)
    assert est.n == 100_000
    assert est.generator == GENERATOR_ID
    assert est.method == "ExactRecursion"


def test_equal_times_match_variance(ou):
    est = mc_cov(ou, 3.0, 3.0, n=50_000, seed=1)
    assert est.covers(1.0)


def test_argument_order_does_not_matter(ou):
    a = mc_cov(ou, 0.0, 1.0, n=1000, seed=5)
    b = mc_cov(ou, 1.0, 0.0, n=1000, seed=5)
    assert a == b


def test_zero_process_gives_exact_zero():
    est = mc_cov(ConstantSampler(0.0), 0.0, 1.0, n=500, seed=0)
    assert est.value == 0.0
    assert est.std_error == 0.0


def test_too_few_paths(ou):
    with pytest.raises(ValueError):
        mc_cov(ou, 0.0, 1.0, n=99, seed=0)


def test_seed_reproducibility(ou):
    assert mc_cov(ou, 0.0, 2.0, 2000, 17) == mc_cov(ou, 0.0, 2.0, 2000, 17)
    assert mc_cov(ou, 0.0, 2.0, 2000, 17).value != mc_cov(ou, 0.0, 2.0, 2000, 18).value


def test_covariance_matrix(ou):
    cov, se, sample = mc_cov_matrix(ou, [0.0, 1.0, 5.0], n=20_000, seed=3)
    truth = np.exp(-np.abs(np.subtract.outer([0.0, 1.0, 5.0], [0.0, 1.0, 5.0])))
    assert cov.shape == se.shape == (3, 3)
    assert np.all(np.abs(cov - truth) <= 4 * se)
    assert sample.values.shape == (20_000, 3, 1)


@pytest.mark.parametrize("sampler, variance", [
    (ExactOuSampler(OuParams(1.0, 1.0)), 1.0),
    (ExactPeriodicSampler(), 0.5),
])
def test_fourth_moment(sampler, variance):
    est = mc_moment(sampler, 0.0, 4, n=100_000, seed=7, reference_cov=variance * np.eye(1))
    assert est.reference == pytest.approx(3.0 * variance ** 2)
    assert est.covers(3.0 * variance ** 2)
    assert abs(est.z_score) <= 4.0


def test_second_moment_equals_raw_covariance(ou):
    moment = mc_moment(ou, 2.0, 2, n=5000, seed=12)
    raw = mc_cov(ou, 2.0, 2.0, n=5000, seed=12, centered=False)
    assert moment.value == pytest.approx(raw.value, rel=1e-12)


def test_moment_order_is_checked(ou):
    with pytest.raises(ValueError):
        mc_moment(ou, 0.0, 3, n=1000, seed=0)
    with pytest.raises(ValueError):
        gaussian_moment(np.eye(2), 6)


def test_gaussian_moment_vector():
    cov = np.diag([1.0, 2.0])
    assert gaussian_moment(cov, 2) == pytest.approx(3.0)
    # E||X||^4 = (tr C)^2 + 2 tr(C^2)
    assert gaussian_moment(cov, 4) == pytest.approx(9.0 + 2.0 * 5.0)


@pytest.mark.parametrize("sampler, level", [
    (ExactOuSampler(OuParams(1.0, 1.0)), 3.0),
    (ExactPeriodicSampler(), 0.75),
])
def test_ui_proxy_flat_bound(sampler, level):
    report = ui_proxy(sampler, np.linspace(0.0, 100.0, 11), n=20_000, seed=2)
    assert report.passed
    assert abs(report.sup_value - level) <= 4 * report.sup_std_error + 0.05 * level
    assert len(report.table) == 11
    assert report.to_dict()["upper_bound"] > report.sup_value


def test_ui_proxy_flags_divergence():
    growing = EulerSampler(EvolutionSystem.from_expressions([[1]], [[1]], name="growing"), 1e-2)
    report = ui_proxy(growing, np.linspace(0.0, 100.0, 11), n=200, seed=0)
    assert not report.passed
    assert report.reason.startswith("diverged")
    assert math.isinf(report.sup_value)


def test_ui_proxy_flags_growth_without_bound():
    growing = EulerSampler(EvolutionSystem.from_expressions([[1]], [[1]], name="growing"), 1e-2)
    report = ui_proxy(growing, np.linspace(0.0, 5.0, 6), n=2000, seed=0)
    assert math.isfinite(report.sup_value)
    assert not report.passed
    assert "grows" in report.reason
    moments = report.table["moment4"].to_numpy()
    assert np.all(np.diff(moments) > 0)


def test_ui_proxy_bound_check(ou):
    report = ui_proxy(ou, [0.0, 1.0], n=5000, seed=1, bound=1.0)
    assert not report.passed
    assert "exceeds bound" in report.reason


def test_spec_hash_tracks_parameters():
    a = spec_hash(ExactOuSampler(OuParams(1.0, 1.0)))
    assert a == spec_hash(ExactOuSampler(OuParams(1.0, 1.0)))
    assert a != spec_hash(ExactOuSampler(OuParams(1.0, 2.0)))
    assert len(a) == 16


def test_estimate_serializes_provenance(ou):
    payload = mc_cov(ou, 0.0, 1.0, 1000, 3).to_dict()
    assert set(payload) == {"value", "std_error", "n", "seed", "method", "generator", "spec_hash", "reference"}
    assert McEstimate(1.0, 0.0, 100, 0, reference=1.0).z_score == 0.0


def test_four_standard_error_intervals_are_calibrated(ou):
    truth = math.exp(-1.0)
    hits = sum(mc_cov(ou, 0.0, 1.0, n=2000, seed=seed).covers(truth) for seed in range(200))
    assert hits >= 195
