"""Stream generation and Monte Carlo run-length estimation.

Ground-truth Gaussian streams with a configurable change point, censoring-
aware estimators of the average run length and worst-case detection delay,
the normalized excess-delay loss, and a table-producing experiment driver.

Reproducibility: every replication draws its seed deterministically from
the master seed and its replication index, so results are identical across
runs and across parallelism levels; aggregation is indexed by replication
and insensitive to completion order.
"""

from __future__ import annotations

import math
import os
import warnings
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed

from .detect import (
    DetectorConfig,
    StoppingRecord,
    cusum_run,
    resolve_estimator,
    wlcusum_run,
)
from .divergence import GaussianParams, d_infinity, nhdkl_finite
from .errors import HdqcdError, InvalidInputError, InvalidPairingError
from .estimators import DataWindow, ShrinkageRule, sample_covariance
from .spectra import PopulationSpectrum, draw_population_covariance

THREADS_ENV = "HDQCD_THREADS"


def resolve_n_jobs(n_jobs: int | None = None) -> int:
    """Worker count: explicit argument, capped by the HDQCD_THREADS env var."""
    cap = os.environ.get(THREADS_ENV)
    cap = int(cap) if cap else os.cpu_count() or 1
    if n_jobs is None:
        n_jobs = cap
    return max(1, min(n_jobs, cap))


@dataclass(eq=False)
class ChangeModel:
    """Pre-change standard normal stream switching to N(mu, Sigma) after nu.

    nu = 0 means every sample is post-change; nu = inf means the change
    never happens. The pre-change law is pinned to the standard normal.
    """

    p: int
    nu: float
    post: GaussianParams | None = None

    def __post_init__(self):
        if self.p < 1:
            raise InvalidInputError(f"dimension must be >= 1, got {self.p}")
        if self.nu < 0:
            raise InvalidInputError(f"change point must be >= 0, got {self.nu}")
        if math.isfinite(self.nu):
            if self.post is None:
                raise InvalidInputError("finite change point needs post-change parameters")
            if self.post.p != self.p:
                raise InvalidInputError(
                    f"post-change dimension {self.post.p} != stream dimension {self.p}"
                )
            if self.post.is_standard():
                raise InvalidInputError("post-change parameters equal the pre-change law")

    @classmethod
    def immediate(cls, post: GaussianParams) -> "ChangeModel":
        return cls(p=post.p, nu=0, post=post)

    @classmethod
    def never(cls, p: int) -> "ChangeModel":
        return cls(p=p, nu=math.inf, post=None)


@dataclass
class RunLengthSummary:
    """Monte Carlo estimate of a stopping-time expectation.

    Censored runs are counted at the cap, so the mean is a lower bound
    whenever censored > 0.
    """

    mean: float
    stderr: float
    reps: int
    censored: int
    samples: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def is_lower_bound(self) -> bool:
        return self.censored > 0


@dataclass
class LossEstimate:
    """Excess-delay loss with its propagated standard error."""

    value: float
    stderr: float


@dataclass(frozen=True)
class DetectorSpec:
    """Picklable description of a detector run by the Monte Carlo workers."""

    kind: str  # "cusum" | "wlcusum"
    config: DetectorConfig
    post: GaussianParams | None = None
    estimator_id: object = None  # id string, ShrinkageRule, or estimator instance

    def __post_init__(self):
        if self.kind not in ("cusum", "wlcusum"):
            raise InvalidInputError(f"unknown detector kind {self.kind!r}")
        if self.kind == "cusum" and self.post is None:
            raise InvalidInputError("known-parameter detector needs post parameters")
        if self.kind == "wlcusum" and self.config.window is None:
            raise InvalidInputError("window-limited detector needs a window length")

    def run(self, stream, collect_trace: bool = False) -> StoppingRecord:
        if self.kind == "cusum":
            return cusum_run(stream, self.post, self.config, collect_trace)
        return wlcusum_run(
            stream, self.config, resolve_estimator(self.estimator_id), collect_trace
        )


def _rep_seed(seed: int, *key: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=seed, spawn_key=tuple(key))


def gen_stream(model: ChangeModel, seed, block_size: int = 256):
    """Infinite generator of stream samples under the change model.

    Samples 1..nu are standard normal; later ones are N(mu, Sigma) via the
    Cholesky transform. Identical seeds give identical sequences no matter
    how many samples the consumer draws.
    """
    rng = np.random.default_rng(seed)
    chol = model.post.chol if model.post is not None else None
    mean = model.post.mean if model.post is not None else None
    t = 0
    while True:
        z = rng.standard_normal((block_size, model.p))
        for row in z:
            t += 1
            if t <= model.nu:
                yield row
            else:
                yield mean + chol @ row


def _run_replication(detector: DetectorSpec, model: ChangeModel,
                     seed: int, rep: int) -> tuple[int, bool]:
    stream = gen_stream(model, _rep_seed(seed, rep))
    record = detector.run(stream)
    return record.time, record.censored


def _replicate(detector: DetectorSpec, model: ChangeModel, reps: int, seed: int,
               n_jobs: int | None) -> tuple[np.ndarray, np.ndarray]:
    if reps < 1:
        raise InvalidInputError(f"reps must be >= 1, got {reps}")
    jobs = resolve_n_jobs(n_jobs)
    if jobs == 1:
        results = [_run_replication(detector, model, seed, r) for r in range(reps)]
    else:
        results = Parallel(n_jobs=jobs)(
            delayed(_run_replication)(detector, model, seed, r) for r in range(reps)
        )
    times = np.array([t for t, _ in results], dtype=float)
    censored = np.array([c for _, c in results], dtype=bool)
    return times, censored


def _summarize(values: np.ndarray, censored: np.ndarray, meta: dict,
               keep_samples: bool) -> RunLengthSummary:
    reps = len(values)
    stderr = float(values.std(ddof=1) / np.sqrt(reps)) if reps > 1 else 0.0
    n_cens = int(censored.sum())
    if n_cens == reps:
        warnings.warn(
            "every replication censored at the cap; the estimate is degenerate",
            RuntimeWarning,
            stacklevel=3,
        )
        meta = dict(meta, degenerate=True)
    return RunLengthSummary(
        mean=float(values.mean()),
        stderr=stderr,
        reps=reps,
        censored=n_cens,
        samples=values if keep_samples else None,
        meta=meta,
    )


def estimate_arl(detector: DetectorSpec, p: int, reps: int, seed: int,
                 n_jobs: int | None = None, keep_samples: bool = False) -> RunLengthSummary:
    """Average run length under the no-change stream, censoring-aware."""
    model = ChangeModel.never(p)
    times, censored = _replicate(detector, model, reps, seed, n_jobs)
    meta = {"metric": "arl", "p": p, "b": detector.config.threshold,
            "n": detector.config.window, "seed": seed}
    return _summarize(times, censored, meta, keep_samples)


def estimate_wadd(detector: DetectorSpec, model: ChangeModel, reps: int, seed: int,
                  n_jobs: int | None = None, keep_samples: bool = False) -> RunLengthSummary:
    """Mean detection delay with the change active from the first sample.

    For the window-limited detector the warm-up offset n is subtracted so
    the delay counts from t = n + 1; for the known-parameter detector the
    delay is the raw stopping time.
    """
    if model.nu != 0:
        raise InvalidInputError("worst-case delay is estimated at change point 0")
    times, censored = _replicate(detector, model, reps, seed, n_jobs)
    offset = detector.config.window if detector.kind == "wlcusum" else 0
    delays = times - float(offset or 0)
    meta = {"metric": "wadd", "p": model.p, "b": detector.config.threshold,
            "n": detector.config.window, "seed": seed}
    return _summarize(delays, censored, meta, keep_samples)


def excess_delay_loss(p: int, b: float, wadd_hat: RunLengthSummary,
                      wadd_opt: RunLengthSummary) -> LossEstimate:
    """Normalized excess delay p (WADD_hat - WADD_opt) / b with its stderr."""
    if b <= 0:
        raise InvalidInputError(f"threshold must be positive, got {b}")
    for summary in (wadd_hat, wadd_opt):
        if summary.meta:
            if summary.meta.get("metric") not in (None, "wadd"):
                raise InvalidPairingError("excess delay needs delay summaries")
            if summary.meta.get("p") not in (None, p):
                raise InvalidPairingError(
                    f"summary was estimated at p = {summary.meta['p']}, not {p}"
                )
            if summary.meta.get("b") not in (None, b):
                raise InvalidPairingError(
                    f"summary was estimated at b = {summary.meta['b']}, not {b}"
                )
    value = p * (wadd_hat.mean - wadd_opt.mean) / b
    stderr = p * math.hypot(wadd_hat.stderr, wadd_opt.stderr) / b
    return LossEstimate(value=value, stderr=stderr)


@dataclass(eq=False)
class ExperimentPlan:
    """Grid of problem sizes, estimators, and thresholds to evaluate.

    Exactly one of b (fixed threshold) or b_schedule (beta, exponent;
    threshold beta * n^exponent with exponent > 2 so windows stay short
    relative to sqrt(threshold)) must be given. The post-change mean is
    mean_norm * 1_p / sqrt(p), keeping its Euclidean norm constant across
    sizes.
    """

    gamma: float
    sizes: list[tuple[int, int]]
    spectrum: PopulationSpectrum
    mean_norm: float
    estimators: list[str]
    reps: int
    seed: int
    cap: int = 1_000_000
    b: float | None = None
    b_schedule: tuple[float, float] | None = None
    diagnostic_draws: int = 20

    def __post_init__(self):
        if self.gamma <= 0:
            raise InvalidInputError(f"gamma must be positive, got {self.gamma}")
        if not self.sizes:
            raise InvalidInputError("plan needs at least one (p, n) size")
        self.sizes = [(int(p), int(n)) for p, n in self.sizes]
        for p, n in self.sizes:
            if abs(p / n - self.gamma) > 0.05 * self.gamma:
                raise InvalidInputError(
                    f"size ({p}, {n}) has aspect ratio {p / n:.4f}, "
                    f"more than 5% away from gamma = {self.gamma}"
                )
        if (self.b is None) == (self.b_schedule is None):
            raise InvalidInputError("exactly one of b and b_schedule must be set")
        if self.b is not None and self.b < 0:
            raise InvalidInputError(f"threshold must be >= 0, got {self.b}")
        if self.b_schedule is not None:
            beta, exponent = self.b_schedule
            if beta <= 0 or exponent <= 2:
                raise InvalidInputError(
                    "threshold schedule needs beta > 0 and exponent > 2, "
                    f"got beta = {beta}, exponent = {exponent}"
                )
            thresholds = [self.threshold_for(n) for _, n in self.sizes]
            if any(b2 <= b1 for b1, b2 in zip(thresholds, thresholds[1:])):
                raise InvalidInputError("scheduled thresholds must be increasing")
        if not self.estimators:
            raise InvalidInputError("plan needs at least one estimator id")
        if self.reps < 1 or self.cap < 1 or self.diagnostic_draws < 1:
            raise InvalidInputError("reps, cap, and diagnostic_draws must be >= 1")

    def threshold_for(self, n: int) -> float:
        if self.b is not None:
            return float(self.b)
        beta, exponent = self.b_schedule
        return float(beta * float(n) ** exponent)

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentPlan":
        known = {"gamma", "sizes", "b", "b_schedule", "spectrum", "mean_norm",
                 "estimators", "reps", "seed", "cap", "diagnostic_draws"}
        unknown = set(raw) - known
        if unknown:
            raise InvalidInputError(f"unknown plan keys: {sorted(unknown)}")
        required = {"gamma", "sizes", "spectrum", "mean_norm", "estimators",
                    "reps", "seed"}
        missing = required - set(raw)
        if missing:
            raise InvalidInputError(f"missing plan keys: {sorted(missing)}")
        schedule = raw.get("b_schedule")
        if schedule is not None:
            schedule = (float(schedule["beta"]), float(schedule.get("exponent", 2.5)))
        return cls(
            gamma=float(raw["gamma"]),
            sizes=[tuple(sz) for sz in raw["sizes"]],
            spectrum=PopulationSpectrum([tuple(a) for a in raw["spectrum"]]),
            mean_norm=float(raw["mean_norm"]),
            estimators=list(raw["estimators"]),
            reps=int(raw["reps"]),
            seed=int(raw["seed"]),
            cap=int(raw.get("cap", 1_000_000)),
            b=None if raw.get("b") is None else float(raw["b"]),
            b_schedule=schedule,
            diagnostic_draws=int(raw.get("diagnostic_draws", 20)),
        )

    def to_dict(self) -> dict:
        out = {
            "gamma": self.gamma,
            "sizes": [list(sz) for sz in self.sizes],
            "spectrum": [list(a) for a in self.spectrum.atoms],
            "mean_norm": self.mean_norm,
            "estimators": list(self.estimators),
            "reps": self.reps,
            "seed": self.seed,
            "cap": self.cap,
            "diagnostic_draws": self.diagnostic_draws,
        }
        if self.b is not None:
            out["b"] = self.b
        if self.b_schedule is not None:
            out["b_schedule"] = {"beta": self.b_schedule[0], "exponent": self.b_schedule[1]}
        return out


@dataclass
class CellResult:
    """One metric of one experiment cell, keyed by size, threshold, estimator."""

    p: int
    n: int
    b: float
    estimator: str
    metric: str
    value: float
    stderr: float
    reps: int
    censored: int
    note: str = ""


_RULES = {
    "sample": ShrinkageRule.identity_map,
    "lwise": ShrinkageRule.lwise,
    "identity": lambda: ShrinkageRule.constant(1.0),
}

# spawn-key purpose codes for deterministic per-cell seeding
_SEED_SIGMA, _SEED_ORACLE, _SEED_ARL, _SEED_WADD, _SEED_DIAG = range(5)


def _rule_for(estimator_id: str) -> ShrinkageRule | None:
    maker = _RULES.get(estimator_id)
    return maker() if maker else None


def _diagnostics(plan: ExperimentPlan, size_index: int, p: int, n: int,
                 post: GaussianParams, estimator_id: str):
    """Mean finite-n divergence of window estimates and the plug-in limit."""
    est = resolve_estimator(estimator_id)
    rule = _rule_for(estimator_id)
    nhdkls, dinfs = [], []
    for draw in range(plan.diagnostic_draws):
        rng = np.random.default_rng(_rep_seed(plan.seed, size_index, _SEED_DIAG, draw))
        window = DataWindow(post.mean[:, None] + post.chol @ rng.standard_normal((p, n)))
        fitted = est.estimate(window)
        nhdkls.append(nhdkl_finite(post, fitted).normalized)
        if rule is not None:
            lam = np.linalg.eigvalsh(sample_covariance(window).matrix)[::-1]
            dinfs.append(d_infinity(rule, lam, plan.spectrum, p / n, n))
    return np.array(nhdkls), (np.array(dinfs) if dinfs else None)


ALL_METRICS = ("arl", "wadd", "diagnostics")


def _mean_stderr(values: np.ndarray) -> tuple[float, float]:
    reps = len(values)
    stderr = float(values.std(ddof=1) / np.sqrt(reps)) if reps > 1 else 0.0
    return float(values.mean()), stderr


def run_experiment(plan: ExperimentPlan, n_jobs: int | None = None,
                   metrics: tuple[str, ...] = ALL_METRICS) -> list[CellResult]:
    """Evaluate every (size, estimator) cell of the plan.

    Emits run-length, delay, excess-delay-loss, finite-n divergence, and
    plug-in limit rows (restrictable via `metrics`); per-cell failures are
    recorded in the row note without aborting the remaining cells. Fully
    reproducible from the master seed at any parallelism level. Estimator
    arms of one size share replication streams (common random numbers), so
    delay comparisons between estimators are paired.
    """
    unknown = set(metrics) - set(ALL_METRICS)
    if unknown:
        raise InvalidInputError(f"unknown metrics: {sorted(unknown)}")
    rows: list[CellResult] = []
    for i, (p, n) in enumerate(plan.sizes):
        b = plan.threshold_for(n)
        sigma = draw_population_covariance(plan.spectrum, p, _rep_seed(plan.seed, i, _SEED_SIGMA))
        mean = np.full(p, plan.mean_norm / np.sqrt(p))
        post = GaussianParams(mean=mean, covariance=sigma)
        model = ChangeModel.immediate(post)

        wadd_opt = None
        if "wadd" in metrics:
            oracle = DetectorSpec(
                kind="cusum", config=DetectorConfig(threshold=b, cap=plan.cap), post=post
            )
            oracle_seed = int(_rep_seed(plan.seed, i, _SEED_ORACLE).generate_state(1)[0])
            try:
                wadd_opt = estimate_wadd(oracle, model, plan.reps, oracle_seed, n_jobs)
                rows.append(CellResult(p, n, b, "oracle", "wadd", wadd_opt.mean,
                                       wadd_opt.stderr, wadd_opt.reps, wadd_opt.censored))
            except HdqcdError as exc:
                rows.append(CellResult(p, n, b, "oracle", "wadd", math.nan, math.nan,
                                       plan.reps, 0, note=str(exc)))

        for estimator_id in plan.estimators:
            config = DetectorConfig(threshold=b, window=n, cap=plan.cap)
            spec = DetectorSpec(kind="wlcusum", config=config, estimator_id=estimator_id)
            arl_seed = int(_rep_seed(plan.seed, i, _SEED_ARL).generate_state(1)[0])
            wadd_seed = int(_rep_seed(plan.seed, i, _SEED_WADD).generate_state(1)[0])

            def _cell(metric: str, fn):
                try:
                    rows.extend(fn())
                except HdqcdError as exc:
                    rows.append(CellResult(p, n, b, estimator_id, metric, math.nan,
                                           math.nan, 0, 0, note=str(exc)))

            def _arl():
                s = estimate_arl(spec, p, plan.reps, arl_seed, n_jobs)
                return [CellResult(p, n, b, estimator_id, "arl", s.mean, s.stderr,
                                   s.reps, s.censored)]

            def _wadd():
                s = estimate_wadd(spec, model, plan.reps, wadd_seed, n_jobs)
                out = [CellResult(p, n, b, estimator_id, "wadd", s.mean, s.stderr,
                                  s.reps, s.censored)]
                if wadd_opt is not None and b > 0:
                    loss = excess_delay_loss(p, b, s, wadd_opt)
                    out.append(CellResult(p, n, b, estimator_id, "excess_delay_loss",
                                          loss.value, loss.stderr, s.reps,
                                          s.censored + wadd_opt.censored))
                return out

            def _diag():
                nhdkls, dinfs = _diagnostics(plan, i, p, n, post, estimator_id)
                mean_nh, se_nh = _mean_stderr(nhdkls)
                out = [CellResult(p, n, b, estimator_id, "nhdkl", mean_nh, se_nh,
                                  len(nhdkls), 0)]
                if dinfs is not None:
                    mean_di, se_di = _mean_stderr(dinfs)
                    out.append(CellResult(p, n, b, estimator_id, "d_infinity",
                                          mean_di, se_di, len(dinfs), 0))
                return out

            if "arl" in metrics:
                _cell("arl", _arl)
            if "wadd" in metrics:
                _cell("wadd", _wadd)
            if "diagnostics" in metrics:
                _cell("nhdkl", _diag)
    return rows
