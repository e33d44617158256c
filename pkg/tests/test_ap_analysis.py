import math

import numpy as np
import pytest
from scipy.linalg import sqrtm

from src.core.ap_analysis import (
    ProbeSequence, SampledFunction, comparison_points, distribution_ap_check, euclidean_distance,
    gaussian_w2, inclusion_length, lemma_check, ms_ap_falsify, relatively_dense,
    scan_almost_periods, sup_distance,
)
from src.core.errors import InconclusiveError, NonPsdError, UndecidedError, WindowTooShortError
from src.core.gp_core import GaussianProcessSpec, OuParams, constant_spec, ou_spec, periodic_example_spec
from src.core.sampler import ConstantSampler, ExactOuSampler

TWO_PI = 2.0 * math.pi


@pytest.fixture(scope="module")
def ou():
    return ou_spec(OuParams(1.0, 1.0))


@pytest.fixture(scope="module")
def periodic():
    return periodic_example_spec()


def random_psd(rng, d):
    x = rng.standard_normal((d, d + 1))
    return x @ x.T


class TestScan:
    def test_finds_exact_period_of_sine(self):
        f = SampledFunction(np.sin, window=60.0, step=0.05, vectorized=True)
        report = scan_almost_periods(f, 1e-9, (1.0, 20.0), 0.01)
        assert any(abs(tau - TWO_PI) < 1e-6 for tau in report.taus_found)
        assert all(w["distance"] <= 1e-9 for w in report.witnesses)
        assert len(report.curve) == report.grid_meta["n_tau"]

    def test_found_periods_survive_a_finer_grid(self):
        epsilon = 1e-9
        f = SampledFunction(np.sin, window=60.0, step=0.05, vectorized=True)
        report = scan_almost_periods(f, epsilon, (1.0, 20.0), 0.01)
        finer = SampledFunction(np.sin, window=60.0, step=0.025, vectorized=True)
        points = comparison_points(finer, 20.0)
        for tau in report.taus_found:
            # sin is 1-Lipschitz, so half a grid step bounds the gap between grid and true sup
            assert sup_distance(finer, tau, points)[0] <= epsilon + 0.5 * finer.step

    def test_identity_has_no_almost_periods(self):
        f = SampledFunction(lambda t: np.asarray(t, dtype=float), window=50.0, step=0.1, vectorized=True)
        report = scan_almost_periods(f, 0.5, (1.0, 20.0), 0.1)
        assert report.taus_found == []
        assert not report.relatively_dense
        assert report.inclusion_length is None
        assert report.curve["sup_distance"].min() == pytest.approx(1.0)

    def test_pointwise_evaluation_in_the_plane(self):
        f = SampledFunction(lambda t: np.array([math.cos(t), math.sin(t)]),
                            distance=euclidean_distance, window=20.0, step=0.1)
        report = scan_almost_periods(f, 1e-8, (5.0, 7.0), 0.05)
        assert any(abs(tau - TWO_PI) < 1e-6 for tau in report.taus_found)

    def test_quasi_periodic_sum_is_relatively_dense(self):
        f = SampledFunction(lambda t: np.sin(t) + np.sin(math.sqrt(2.0) * t),
                            window=700.0, step=0.1, vectorized=True)
        report = scan_almost_periods(f, 0.1, (0.0, 500.0), 0.02)
        assert report.taus_found
        assert report.inclusion_length <= 200.0
        assert report.relatively_dense
        assert relatively_dense(report.taus_found, (0.0, 500.0), report.inclusion_length)

    def test_window_too_short(self):
        f = SampledFunction(np.sin, window=10.0, step=0.1, vectorized=True)
        with pytest.raises(WindowTooShortError):
            scan_almost_periods(f, 0.1, (1.0, 20.0), 0.1)

    def test_rejects_bad_arguments(self):
        f = SampledFunction(np.sin, window=10.0, step=0.1, vectorized=True)
        with pytest.raises(ValueError):
            scan_almost_periods(f, -1.0, (1.0, 2.0), 0.1)
        with pytest.raises(ValueError):
            scan_almost_periods(f, 0.1, (2.0, 1.0), 0.1)
        with pytest.raises(ValueError):
            SampledFunction(np.sin, window=1.0, step=2.0)

    def test_report_serializes(self):
        f = SampledFunction(np.sin, window=30.0, step=0.1, vectorized=True)
        payload = scan_almost_periods(f, 1e-3, (6.0, 7.0), 0.01).to_dict()
        assert payload["n_found"] == len(payload["taus_found"])
        assert payload["grid"]["n_t"] > 0


class TestRelativeDensity:
    def test_multiples_of_two_pi(self):
        taus = [TWO_PI * k for k in range(16)]
        assert relatively_dense(taus, (0.0, 100.0), 7.0)
        assert not relatively_dense(taus, (0.0, 100.0), 6.0)

    def test_single_point(self):
        assert not relatively_dense([1.0], (0.0, 100.0), 10.0)
        assert inclusion_length([1.0], (0.0, 100.0)) == pytest.approx(99.0)

    def test_empty_and_unsorted(self):
        assert not relatively_dense([], (0.0, 1.0), 10.0)
        with pytest.raises(ValueError):
            relatively_dense([2.0, 1.0], (0.0, 3.0), 1.0)


class TestFalsify:
    def test_ou_infimum_is_closed_form(self, ou):
        witness = ms_ap_falsify(ou, 1.0, 50.0, (0.0, 20.0))
        assert witness.c == pytest.approx(2.0 * (1.0 - math.exp(-1.0)), abs=1e-9)
        assert witness.argmin_tau == pytest.approx(1.0)
        assert witness.epsilon_bound == pytest.approx(math.sqrt(witness.c))
        assert witness.verdict == "not mean-square almost periodic on tested range"

    def test_ou_from_zero_is_inconclusive(self, ou):
        with pytest.raises(InconclusiveError) as info:
            ms_ap_falsify(ou, 0.0, 50.0, (0.0, 20.0))
        assert info.value.witness.c == 0.0
        assert info.value.witness.verdict == "inconclusive"

    def test_periodic_example_is_not_mean_square_almost_periodic(self, periodic):
        witness = ms_ap_falsify(periodic, math.pi, 100.0, (0.0, 20.0))
        assert witness.c >= 0.5
        assert witness.c == pytest.approx(1.0 - math.exp(2.0 - math.pi), abs=1e-5)

    def test_rejects_bad_range(self, ou):
        with pytest.raises(ValueError):
            ms_ap_falsify(ou, 5.0, 1.0)


class TestLemma:
    def test_ou_closed_form(self, ou):
        verdict = lemma_check(ou, ProbeSequence(np.arange(1.0, 31.0)), gap=10)
        assert verdict.satisfied
        assert verdict.cov[0, 3] == pytest.approx(math.exp(-3.0))
        assert verdict.max_offdiag == pytest.approx(math.exp(-10.0))
        assert np.allclose(verdict.norm_variance, 1.0 - 2.0 / math.pi)
        assert np.allclose(verdict.probe_variance, 1.0)
        assert verdict.source == "closed_form"

    def test_ou_monte_carlo_cross_check(self, ou):
        verdict = lemma_check(ou, ProbeSequence(np.arange(1.0, 31.0)), n_mc=20_000, seed=1, gap=10)
        assert verdict.satisfied
        assert verdict.mc_consistent
        assert verdict.norm_variance_mc.shape == (30,)

    @pytest.mark.slow
    def test_ou_norm_variance_million_draws(self, ou):
        verdict = lemma_check(ou, ProbeSequence(np.arange(1.0, 31.0)), n_mc=1_000_000, seed=42, gap=10)
        assert np.all(np.abs(verdict.norm_variance_mc - (1.0 - 2.0 / math.pi)) <= 4 * verdict.norm_variance_se)

    def test_periodic_example(self, periodic):
        verdict = lemma_check(periodic, ProbeSequence(TWO_PI * np.arange(1.0, 11.0)), gap=2)
        assert verdict.satisfied
        assert verdict.cov[0, 1] == pytest.approx(0.5 * math.exp(-TWO_PI))
        assert np.allclose(verdict.norm_variance, 0.5 * (1.0 - 2.0 / math.pi))

    def test_constant_process_fails(self):
        verdict = lemma_check(constant_spec(1.0), ProbeSequence(np.arange(1.0, 6.0)), gap=2)
        assert verdict.status == "failed"
        assert any("norm variance" in r for r in verdict.reasons)

    def test_constant_sampler_fails(self):
        verdict = lemma_check(ConstantSampler(1.0), ProbeSequence(np.arange(1.0, 6.0)), n_mc=200, gap=2)
        assert verdict.status == "failed"
        assert verdict.source == "monte_carlo"

    def test_monte_carlo_straddle_is_undecided(self):
        sampler = ExactOuSampler(OuParams(1.0, 1.0))
        with pytest.raises(UndecidedError) as info:
            lemma_check(sampler, ProbeSequence(np.arange(1.0, 13.0)), n_mc=2000, seed=0, gap=10)
        assert info.value.verdict.status == "undecided"

    def test_gap_longer_than_sequence(self, ou):
        with pytest.raises(ValueError):
            lemma_check(ou, ProbeSequence([1.0, 2.0, 3.0]), gap=5)

    def test_probe_times_must_increase(self):
        with pytest.raises(ValueError):
            ProbeSequence([1.0, 1.0, 2.0])

    def test_routes_agree_with_falsification(self, ou, periodic):
        for spec, lo, times, gap in ((ou, 1.0, np.arange(1.0, 31.0), 10),
                                     (periodic, math.pi, TWO_PI * np.arange(1.0, 11.0), 2)):
            witness = ms_ap_falsify(spec, lo, 60.0, (0.0, 20.0), n_tau=200)
            assert witness.c > 0
            assert lemma_check(spec, ProbeSequence(times), gap=gap).satisfied


class TestWasserstein:
    def test_identical_laws(self):
        rng = np.random.default_rng(0)
        c = random_psd(rng, 3)
        assert gaussian_w2(np.ones(3), c, np.ones(3), c) == pytest.approx(0.0, abs=1e-12)

    def test_scalar_cases(self):
        assert gaussian_w2(0.0, 1.0, 1.0, 1.0) == pytest.approx(1.0, abs=1e-12)
        assert gaussian_w2(0.0, 1.0, 0.0, 4.0) == pytest.approx(1.0, abs=1e-12)

    def test_empirical_sorted_coupling(self):
        rng = np.random.default_rng(11)
        for (m1, v1), (m2, v2) in [((0.0, 1.0), (1.0, 1.0)), ((0.0, 1.0), (0.0, 4.0))]:
            x = np.sort(m1 + math.sqrt(v1) * rng.standard_normal(1_000_000))
            y = np.sort(m2 + math.sqrt(v2) * rng.standard_normal(1_000_000))
            empirical = math.sqrt(np.mean((x - y) ** 2))
            assert abs(empirical - gaussian_w2(m1, v1, m2, v2)) <= 1e-2

    def test_matches_trace_formula(self):
        rng = np.random.default_rng(5)
        for _ in range(5):
            c1, c2 = random_psd(rng, 4), random_psd(rng, 4)
            m1, m2 = rng.standard_normal(4), rng.standard_normal(4)
            root = np.real(sqrtm(c2))
            cross = np.real(sqrtm(root @ c1 @ root))
            trace_form = math.sqrt(np.sum((m1 - m2) ** 2) + np.trace(c1 + c2 - 2 * cross))
            assert gaussian_w2(m1, c1, m2, c2) == pytest.approx(trace_form, abs=1e-6)

    def test_diagonal_case(self):
        assert gaussian_w2([0, 0], np.diag([1.0, 4.0]), [0, 0], np.diag([4.0, 9.0])) == pytest.approx(math.sqrt(2.0))

    @pytest.mark.parametrize("seed", range(10))
    def test_metric_properties(self, seed):
        rng = np.random.default_rng(seed)
        laws = [(rng.standard_normal(3), random_psd(rng, 3)) for _ in range(3)]
        d = lambda p, q: gaussian_w2(p[0], p[1], q[0], q[1])  # noqa: E731
        a, b, c = laws
        assert d(a, b) == pytest.approx(d(b, a), abs=1e-12)
        assert d(a, c) <= d(a, b) + d(b, c) + 1e-12
        assert d(a, b) >= 0.0

    def test_rejects_indefinite_and_mismatched(self):
        with pytest.raises(NonPsdError):
            gaussian_w2([0, 0], np.array([[1.0, 2.0], [2.0, 1.0]]), [0, 0], np.eye(2))
        with pytest.raises(ValueError):
            gaussian_w2([0, 0], np.eye(2), [0], np.eye(1))


class TestDistribution:
    def test_periodic_example_has_exact_period(self, periodic):
        report = distribution_ap_check(periodic, k=5, offsets=np.arange(5.0), tau_candidates=(math.pi, TWO_PI))
        assert report.taus_found == [TWO_PI]
        assert report.distance_at(TWO_PI) <= 1e-10
        assert report.distance_at(math.pi) > 1e-3

    def test_single_candidate_is_not_relatively_dense(self, periodic):
        report = distribution_ap_check(periodic, k=5, offsets=np.arange(5.0), tau_candidates=(TWO_PI,))
        assert report.taus_found == [TWO_PI]
        assert report.inclusion_length == 0.0
        assert not report.relatively_dense

    def test_ou_is_stationary(self, ou):
        report = distribution_ap_check(ou, k=5, tau_candidates=(0.7, 3.0, TWO_PI))
        assert len(report.taus_found) == 3

    def test_growing_process_has_no_small_periods(self):
        spec = GaussianProcessSpec(
            mean_fn=lambda t: np.zeros(np.shape(t) + (1,)),
            kernel=lambda s, t: np.exp((np.add(s, t)) / 5.0 - np.abs(np.subtract(t, s)))[..., None, None],
            dim=1, name="growing",
        )
        report = distribution_ap_check(spec, k=3, tau_candidates=(1.0, TWO_PI, 10.0), epsilon=0.1)
        assert report.taus_found == []
        assert not report.relatively_dense

    def test_offset_validation(self, ou):
        with pytest.raises(ValueError):
            distribution_ap_check(ou, k=9)
        with pytest.raises(ValueError):
            distribution_ap_check(ou, k=3, offsets=[0.0, 1.0])
        with pytest.raises(ValueError):
            distribution_ap_check(ou)


def test_separation_on_periodic_example(periodic):
    distribution = distribution_ap_check(periodic, k=5, offsets=np.arange(5.0), tau_candidates=(TWO_PI,))
    mean_square = ms_ap_falsify(periodic, math.pi, 100.0, (0.0, 20.0))
    assert distribution.distance_at(TWO_PI) <= 1e-10
    assert mean_square.c >= 0.5
