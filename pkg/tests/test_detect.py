"""Sequential detectors.

Oracle checklist:
- log-likelihood ratio: hand-computed scalar cases; Monte Carlo expectation
  under the post-change law against the closed-form divergence.
- known-parameter recursion: deterministic streams with unit increments.
- frozen-truth reduction: window-limited run reproduces the known-parameter
  trajectory bit for bit on the same samples.
- window discipline: recording estimator compares every fitted window with
  the stream slice it must equal.
"""

import numpy as np
import pytest

from hdqcd.detect import (
    DetectorConfig,
    DetectorState,
    FrozenEstimator,
    LwiseEstimator,
    SampleEstimator,
    ShrinkageEstimator,
    cusum_run,
    cusum_step,
    gaussian_llr,
    resolve_estimator,
    wlcusum_run,
    wlcusum_step,
)
from hdqcd.divergence import GaussianParams, kl_vs_standard
from hdqcd.errors import (
    DimensionMismatchError,
    ExhaustedStreamError,
    InsufficientWarmupError,
    InvalidInputError,
    SingularEstimateError,
)
from hdqcd.estimators import DataWindow, ShrinkageRule


def mean_shift_post(p, norm_sq):
    """Post-change parameters with identity covariance and ||mu||^2 = norm_sq."""
    return GaussianParams(np.full(p, np.sqrt(norm_sq / p)), np.eye(p))


class TestGaussianLlr:
    def test_zero_under_standard_post(self, rng):
        post = GaussianParams.standard(3)
        for _ in range(5):
            assert gaussian_llr(rng.standard_normal(3), post) == 0.0

    def test_scalar_hand_case(self):
        post = GaussianParams([1.0], [[1.0]])
        assert gaussian_llr([1.0], post) == pytest.approx(0.5)

    def test_expectation_matches_divergence(self, rng):
        """Oracle: Monte Carlo mean under the post-change law, p = 2."""
        post = GaussianParams(np.zeros(2), np.diag([2.0, 2.0]))
        target = kl_vs_standard(post)
        assert target == pytest.approx(1.0 - np.log(2.0), rel=1e-12)
        X = rng.standard_normal((100_000, 2)) * np.sqrt(2.0)
        mc = np.mean([gaussian_llr(x, post) for x in X])
        assert mc == pytest.approx(target, abs=0.015)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            gaussian_llr(np.zeros(3), GaussianParams.standard(2))


class TestCusumStep:
    def test_clamps_at_zero(self):
        assert cusum_step(0.0, -5.0) == 0.0
        assert cusum_step(1.0, -3.0) == 0.0

    def test_accumulates(self):
        assert cusum_step(2.0, 1.5) == 3.5

    def test_rejects_negative_statistic(self):
        with pytest.raises(InvalidInputError):
            cusum_step(-0.5, 1.0)


def constant_llr_stream(llr, length):
    """Scalar stream whose log-likelihood ratio under mu = sqrt(2) is `llr`."""
    mu = np.sqrt(2.0)
    x = (llr + 1.0) / mu  # llr = mu x - mu^2 / 2 with mu^2 = 2
    return np.full((length, 1), x), GaussianParams([mu], [[1.0]])


class TestCusumRun:
    def test_unit_increments_cross_at_four(self):
        stream, post = constant_llr_stream(1.0, 10)
        record = cusum_run(stream, post, DetectorConfig(threshold=3.5, cap=100))
        assert record.time == 4
        assert not record.censored
        assert record.statistic == pytest.approx(4.0)

    def test_negative_drift_censors_at_cap(self):
        stream, post = constant_llr_stream(-1.0, 200)
        record = cusum_run(stream, post, DetectorConfig(threshold=5.0, cap=100))
        assert record.censored
        assert record.time == 100
        assert record.statistic == 0.0

    def test_exhausted_stream(self):
        stream, post = constant_llr_stream(-1.0, 5)
        with pytest.raises(ExhaustedStreamError):
            cusum_run(stream, post, DetectorConfig(threshold=5.0, cap=100))

    def test_trace_nonnegative_statistic(self, rng):
        post = mean_shift_post(4, 2.0)
        stream = rng.standard_normal((400, 4))
        record = cusum_run(stream, post, DetectorConfig(threshold=50.0, cap=400),
                           collect_trace=True)
        assert record.censored
        assert all(Y >= 0.0 for _, _, Y in record.trace)

    def test_mean_delay_near_threshold_over_drift(self):
        """Oracle: 2000 replications at unit divergence, b = 8, p = 10.

        The delay concentrates near b/D plus an O(1) overshoot.
        """
        post = mean_shift_post(10, 2.0)  # KL to standard normal = 1
        assert kl_vs_standard(post) == pytest.approx(1.0)
        config = DetectorConfig(threshold=8.0, cap=10_000)
        times = []
        for rep in range(2000):
            rng = np.random.default_rng(np.random.SeedSequence(entropy=42, spawn_key=(rep,)))
            stream = rng.standard_normal((200, 10)) + post.mean
            times.append(cusum_run(stream, post, config).time)
        assert 8.0 <= np.mean(times) <= 12.0


class TestWlcusumStep:
    def test_hand_computed_scalar_case(self):
        """Oracle: window (1, 3) gives mu = 2, var = 1; x = 2 scores 2."""
        window = np.array([[1.0, 3.0]])
        estimator = SampleEstimator()
        state = DetectorState(
            statistic=0.0, t=2, window=window,
            estimates=estimator.estimate(DataWindow(window)),
        )
        np.testing.assert_allclose(state.estimates.mean, [2.0])
        np.testing.assert_allclose(state.estimates.covariance, [[1.0]])
        wlcusum_step(state, np.array([2.0]), estimator)
        assert state.last_llr == pytest.approx(2.0)
        assert state.statistic == pytest.approx(2.0)
        assert state.t == 3
        np.testing.assert_array_equal(state.window, [[3.0, 2.0]])

    def test_pre_change_drift_keeps_statistic_at_zero(self, rng):
        """Under the no-change law the increments have negative mean.

        Estimation error gives the increments mean about -(p + p(p+1)/2)/2n,
        so at p = 8, n = 32 the statistic sits at zero more than half the
        time (measured ~0.55-0.61 across seeds).
        """
        p, n, steps = 8, 32, 300
        stream = rng.standard_normal((n + steps, p))
        config = DetectorConfig(threshold=1e18, window=n, cap=n + steps)
        record = wlcusum_run(stream, config, SampleEstimator(), collect_trace=True)
        llrs = np.array([llr for _, llr, _ in record.trace])
        zeros = np.mean([Y == 0.0 for _, _, Y in record.trace])
        assert record.censored
        assert llrs.mean() < 0.0
        assert zeros > 0.45


class TestWlcusumRun:
    def test_zero_threshold_stops_immediately(self, rng):
        n = 10
        stream = rng.standard_normal((n + 5, 2))
        config = DetectorConfig(threshold=0.0, window=n, cap=1000)
        record = wlcusum_run(stream, config, SampleEstimator())
        assert record.time == n + 1

    def test_insufficient_warmup(self, rng):
        config = DetectorConfig(threshold=1.0, window=10, cap=100)
        with pytest.raises(InsufficientWarmupError):
            wlcusum_run(rng.standard_normal((4, 2)), config, SampleEstimator())

    def test_singular_sample_estimate_rejected(self, rng):
        config = DetectorConfig(threshold=1.0, window=4, cap=100)
        with pytest.raises(SingularEstimateError):
            wlcusum_run(rng.standard_normal((50, 5)), config, SampleEstimator())

    def test_lwise_handles_window_shorter_than_dimension(self, rng):
        config = DetectorConfig(threshold=0.5, window=4, cap=30)
        record = wlcusum_run(rng.standard_normal((30, 6)), config, LwiseEstimator())
        assert record.time >= 5

    def test_frozen_truth_reduces_to_cusum_bitwise(self, rng):
        """Frozen true parameters reproduce the known-parameter trajectory."""
        p, n, extra = 4, 12, 150
        post = mean_shift_post(p, 1.5)
        stream = rng.standard_normal((n + extra, p)) * 0.9 + post.mean
        config_wl = DetectorConfig(threshold=7.0, window=n, cap=n + extra)
        config_cu = DetectorConfig(threshold=7.0, cap=extra)
        wl = wlcusum_run(stream, config_wl, FrozenEstimator(post), collect_trace=True)
        cu = cusum_run(stream[n:], post, config_cu, collect_trace=True)
        assert wl.time == cu.time + n
        assert wl.statistic == cu.statistic  # bitwise
        for (t_wl, llr_wl, y_wl), (t_cu, llr_cu, y_cu) in zip(wl.trace, cu.trace):
            assert t_wl == t_cu + n
            assert llr_wl == llr_cu
            assert y_wl == y_cu

    def test_stopping_time_monotone_in_threshold(self, rng):
        p, n = 3, 10
        post = mean_shift_post(p, 2.0)
        stream = rng.standard_normal((400, p)) + post.mean
        times = []
        for b in (0.5, 2.0, 5.0, 9.0):
            config = DetectorConfig(threshold=b, window=n, cap=400)
            times.append(wlcusum_run(stream, config, SampleEstimator()).time)
        assert all(t2 >= t1 for t1, t2 in zip(times, times[1:]))

    def test_window_discipline(self, rng):
        """Every estimate is fitted to exactly the n most recent past samples."""
        seen = []

        class RecordingEstimator(SampleEstimator):
            def estimate(self, window):
                seen.append(window.samples.copy())
                return super().estimate(window)

        p, n, total = 2, 6, 40
        stream = rng.standard_normal((total, p))
        config = DetectorConfig(threshold=1e18, window=n, cap=total)
        wlcusum_run(stream, config, RecordingEstimator())
        # estimate j is fitted right after sample n + j arrives
        for j, window in enumerate(seen):
            np.testing.assert_array_equal(window, stream[j:j + n].T)

    def test_stride_refresh_cadence(self, rng):
        calls = []

        class CountingEstimator(SampleEstimator):
            def estimate(self, window):
                calls.append(1)
                return super().estimate(window)

        n, total = 6, 30
        stream = rng.standard_normal((total, 2))
        config = DetectorConfig(threshold=1e18, window=n, cap=total, stride=4)
        wlcusum_run(stream, config, CountingEstimator())
        # one warm-up fit plus one per stride among the 24 detection steps
        assert len(calls) == 1 + (total - n) // 4

    def test_exhausted_after_warmup(self, rng):
        config = DetectorConfig(threshold=1e9, window=5, cap=1000)
        with pytest.raises(ExhaustedStreamError):
            wlcusum_run(rng.standard_normal((20, 2)), config, SampleEstimator())


class TestDetectorConfig:
    def test_validation(self):
        with pytest.raises(InvalidInputError):
            DetectorConfig(threshold=-1.0)
        with pytest.raises(InvalidInputError):
            DetectorConfig(threshold=1.0, window=1)
        with pytest.raises(InvalidInputError):
            DetectorConfig(threshold=1.0, cap=0)
        with pytest.raises(InvalidInputError):
            DetectorConfig(threshold=1.0, stride=0)


class TestResolveEstimator:
    def test_id_strings(self):
        assert isinstance(resolve_estimator("sample"), SampleEstimator)
        assert isinstance(resolve_estimator("lwise"), LwiseEstimator)
        identity = resolve_estimator("identity")
        assert isinstance(identity, ShrinkageEstimator)
        assert identity.rule.kind == "constant"

    def test_rule_and_params(self):
        rule = ShrinkageRule.constant(2.0)
        assert resolve_estimator(rule).rule is rule
        post = GaussianParams.standard(2)
        assert resolve_estimator(post).params is post

    def test_unknown_rejected(self):
        with pytest.raises(InvalidInputError):
            resolve_estimator("bogus")
