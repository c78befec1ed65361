"""Sequential detectors.

Gaussian log-likelihood ratios, the cumulative-sum recursion with known
post-change parameters, and the window-limited variant that re-estimates
the post-change mean and covariance from a sliding window of the n most
recent samples.

Usage
-----
    config = DetectorConfig(threshold=8.0, window=40, cap=100_000)
    record = wlcusum_run(stream, config, LwiseEstimator())
    if not record.censored:
        print("alarm at", record.time)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla

from .divergence import GaussianParams
from .errors import (
    DimensionMismatchError,
    ExhaustedStreamError,
    InsufficientWarmupError,
    InvalidInputError,
    SingularEstimateError,
)
from .estimators import (
    KERNEL_SCALE_INVERSE_SQ,
    DataWindow,
    ShrinkageRule,
    apply_shrinkage,
    lwise_estimate,
    sample_covariance,
    sample_mean,
)


@dataclass(frozen=True)
class DetectorConfig:
    """Detector parameters.

    threshold may be zero (degenerate immediate-stop runs appear in the
    test harness); window is required for the window-limited detector and
    must be at least 2. stride controls how often estimates are refreshed;
    the exact recursion corresponds to stride 1.
    """

    threshold: float
    window: int | None = None
    cap: int = 1_000_000
    stride: int = 1

    def __post_init__(self):
        if self.threshold < 0 or not np.isfinite(self.threshold):
            raise InvalidInputError(f"threshold must be finite and >= 0, got {self.threshold}")
        if self.window is not None and self.window < 2:
            raise InvalidInputError(f"window must be >= 2, got {self.window}")
        if self.cap < 1:
            raise InvalidInputError(f"cap must be >= 1, got {self.cap}")
        if self.stride < 1:
            raise InvalidInputError(f"stride must be >= 1, got {self.stride}")


@dataclass
class StoppingRecord:
    """Outcome of one detector run: 1-indexed stopping time or censoring."""

    time: int
    statistic: float
    censored: bool
    trace: list[tuple[int, float, float]] | None = None


@dataclass
class DetectorState:
    """Mutable state of a window-limited detector between observations."""

    statistic: float
    t: int
    window: np.ndarray | None = None
    estimates: GaussianParams | None = None
    stopped: bool = False
    stopping_time: int | None = None
    stride: int = 1
    steps_since_refresh: int = 0
    last_llr: float | None = None


class SampleEstimator:
    """Sample mean and sample covariance of the window."""

    name = "sample"

    def estimate(self, window: DataWindow) -> GaussianParams:
        cov = sample_covariance(window)
        if cov.singular:
            raise SingularEstimateError(
                f"sample covariance is singular at p = {window.p}, n = {window.n}; "
                "the window-limited statistic is undefined"
            )
        return GaussianParams(mean=sample_mean(window), covariance=cov.matrix)


@dataclass(frozen=True)
class LwiseEstimator:
    """Sample mean with the quadratic inverse-Stein-loss covariance."""

    kernel_scale: str = KERNEL_SCALE_INVERSE_SQ
    name = "lwise"

    def estimate(self, window: DataWindow) -> GaussianParams:
        cov = lwise_estimate(window, kernel_scale=self.kernel_scale)
        return GaussianParams(mean=sample_mean(window), covariance=cov.matrix)


@dataclass(frozen=True)
class ShrinkageEstimator:
    """Sample mean with a generic shrinkage covariance rule."""

    rule: ShrinkageRule
    name = "shrinkage"

    def estimate(self, window: DataWindow) -> GaussianParams:
        cov = apply_shrinkage(window, self.rule)
        return GaussianParams(mean=sample_mean(window), covariance=cov.matrix)


@dataclass(frozen=True)
class FrozenEstimator:
    """Ignores the window and returns fixed parameters.

    Test hook: with the true post-change parameters the window-limited
    detector reproduces the known-parameter recursion exactly.
    """

    params: GaussianParams
    name = "frozen"

    def estimate(self, window: DataWindow) -> GaussianParams:
        return self.params


def resolve_estimator(spec):
    """Estimator instance from an id string, rule, or parameter object."""
    if isinstance(spec, str):
        if spec == "sample":
            return SampleEstimator()
        if spec == "lwise":
            return LwiseEstimator()
        if spec == "identity":
            return ShrinkageEstimator(ShrinkageRule.constant(1.0))
        raise InvalidInputError(f"unknown estimator id {spec!r}")
    if isinstance(spec, ShrinkageRule):
        return ShrinkageEstimator(spec)
    if isinstance(spec, GaussianParams):
        return FrozenEstimator(spec)
    if hasattr(spec, "estimate"):
        return spec
    raise InvalidInputError(f"cannot interpret estimator spec {spec!r}")


def gaussian_llr(x, post: GaussianParams) -> float:
    """Log-likelihood ratio of one sample: post-change density over standard normal.

    Equals (x'x - (x - mu)' Sigma^{-1} (x - mu) - log|Sigma|) / 2; its
    expectation under the post-change law is the KL divergence to the
    standard normal.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != post.p:
        raise DimensionMismatchError(f"sample has length {x.shape[0]}, expected {post.p}")
    y = sla.solve_triangular(post.chol, x - post.mean, lower=True)
    return 0.5 * (float(x @ x) - float(y @ y) - post.logdet)


def cusum_step(Y: float, llr: float) -> float:
    """Positive-part recursion max(Y + llr, 0)."""
    if Y < 0:
        raise InvalidInputError(f"statistic must be >= 0, got {Y}")
    return max(Y + llr, 0.0)


def _iter_samples(stream):
    if isinstance(stream, np.ndarray):
        if stream.ndim != 2:
            raise InvalidInputError(f"stream array must be 2-D, got shape {stream.shape}")
        return iter(stream)
    return iter(stream)


def cusum_run(stream, post: GaussianParams, config: DetectorConfig,
              collect_trace: bool = False) -> StoppingRecord:
    """Run the known-parameter detector until threshold crossing or cap.

    Time is 1-indexed; a run that reaches the cap without crossing returns
    a censored record rather than raising.
    """
    it = _iter_samples(stream)
    Y = 0.0
    trace = [] if collect_trace else None
    for t in range(1, config.cap + 1):
        try:
            x = next(it)
        except StopIteration:
            raise ExhaustedStreamError(
                f"stream ended at t = {t} before crossing (threshold {config.threshold})"
            ) from None
        llr = gaussian_llr(x, post)
        Y = cusum_step(Y, llr)
        if collect_trace:
            trace.append((t, llr, Y))
        if Y >= config.threshold:
            return StoppingRecord(time=t, statistic=Y, censored=False, trace=trace)
    return StoppingRecord(time=config.cap, statistic=Y, censored=True, trace=trace)


def wlcusum_step(state: DetectorState, x_t, estimator) -> DetectorState:
    """Advance the window-limited detector by one observation.

    Scores x_t under the estimates fitted to the current window (which
    ends just before x_t), applies the positive-part recursion, then
    slides the window to include x_t and refreshes the estimates for the
    next step (every `stride` slides).
    """
    x = np.asarray(x_t, dtype=float).reshape(-1)
    if x.shape[0] != state.window.shape[0]:
        raise DimensionMismatchError(
            f"sample has length {x.shape[0]}, window dimension is {state.window.shape[0]}"
        )
    llr = gaussian_llr(x, state.estimates)
    state.last_llr = llr
    state.statistic = cusum_step(state.statistic, llr)
    state.t += 1
    state.window = np.concatenate([state.window[:, 1:], x[:, None]], axis=1)
    state.steps_since_refresh += 1
    if state.steps_since_refresh >= state.stride:
        state.estimates = estimator.estimate(DataWindow(state.window))
        state.steps_since_refresh = 0
    return state


def wlcusum_run(stream, config: DetectorConfig, estimator,
                collect_trace: bool = False) -> StoppingRecord:
    """Run the window-limited detector: warm up, then detect from t = n + 1.

    The first n samples fill the window and never contribute
    log-likelihood terms; the statistic starts at zero and the earliest
    possible stopping time is n + 1.
    """
    if config.window is None:
        raise InvalidInputError("window-limited detector needs a window length")
    n = config.window
    it = _iter_samples(stream)
    warmup = []
    for _ in range(n):
        try:
            warmup.append(np.asarray(next(it), dtype=float).reshape(-1))
        except StopIteration:
            raise InsufficientWarmupError(
                f"stream ended during warm-up: got {len(warmup)} of {n} samples"
            ) from None
    window = np.column_stack(warmup)
    state = DetectorState(
        statistic=0.0,
        t=n,
        window=window,
        estimates=estimator.estimate(DataWindow(window)),
        stride=config.stride,
    )
    trace = [] if collect_trace else None
    while state.t < config.cap:
        try:
            x = next(it)
        except StopIteration:
            raise ExhaustedStreamError(
                f"stream ended at t = {state.t} before crossing "
                f"(threshold {config.threshold})"
            ) from None
        wlcusum_step(state, x, estimator)
        if collect_trace:
            trace.append((state.t, state.last_llr, state.statistic))
        if state.statistic >= config.threshold:
            state.stopped = True
            state.stopping_time = state.t
            return StoppingRecord(
                time=state.t, statistic=state.statistic, censored=False, trace=trace
            )
    return StoppingRecord(
        time=config.cap, statistic=state.statistic, censored=True, trace=trace
    )
