"""Mean and covariance estimation from a sliding data window.

Provides the sample estimators (1/n covariance normalization), the generic
spectral shrinkage framework, and the quadratic inverse-Stein-loss
nonlinear shrinkage estimator (LWISE) that stays positive definite even
when the window is shorter than the dimension.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateWindowError,
    DomainError,
    InvalidInputError,
    InvalidRuleError,
    NumericalGuardError,
    ShrinkageGuardWarning,
)
from .spectra import EPS_SYM, check_symmetric, eig_sym

# Kernel argument conventions for the LWISE shrinkage function. The
# denominator kernels compare atoms on the inverse-square scale of the
# singular values; "inverse_sq" evaluates both kernels there, while
# "literal" evaluates g at omega and h at 1/omega.
KERNEL_SCALE_INVERSE_SQ = "inverse_sq"
KERNEL_SCALE_LITERAL = "literal"

# Relative floor for shrinkage denominators; below it the value is clamped
# and a ShrinkageGuardWarning is emitted.
DENOM_FLOOR = 1e-12


@dataclass(eq=False)
class DataWindow:
    """p x n matrix of the n most recent samples, one sample per column."""

    samples: np.ndarray

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.ndim != 2:
            raise InvalidInputError(f"window must be 2-D, got shape {self.samples.shape}")
        if self.samples.size == 0:
            raise InvalidInputError("window is empty")
        if not np.all(np.isfinite(self.samples)):
            raise InvalidInputError("window has non-finite entries")

    @property
    def p(self) -> int:
        return self.samples.shape[0]

    @property
    def n(self) -> int:
        return self.samples.shape[1]


@dataclass(eq=False)
class CovarianceEstimate:
    """Covariance estimate with provenance and eager numerical caches.

    For nonsingular estimates the Cholesky factor and log-determinant are
    computed at construction; the value is immutable afterwards, so the
    caches can be shared across threads.
    """

    matrix: np.ndarray
    provenance: str
    params: dict = field(default_factory=dict)
    singular: bool = False
    cholesky: np.ndarray | None = None
    logdet: float | None = None

    def __post_init__(self):
        self.matrix = check_symmetric(self.matrix, EPS_SYM)
        if self.singular:
            if not self.provenance.startswith("sample"):
                raise InvalidInputError(
                    "only sample-covariance estimates may be flagged singular"
                )
            return
        try:
            self.cholesky = np.linalg.cholesky(self.matrix)
        except np.linalg.LinAlgError as exc:
            raise InvalidInputError(
                f"{self.provenance} estimate is not positive definite"
            ) from exc
        self.logdet = 2.0 * float(np.log(np.diag(self.cholesky)).sum())

    @property
    def p(self) -> int:
        return self.matrix.shape[0]


@dataclass(eq=False, frozen=True)
class ShrinkageRule:
    """Map from sample-covariance eigenvalues to estimated eigenvalues.

    Kinds: "identity_map" reproduces the sample covariance, "constant"
    yields a scaled identity, "lwise" applies the quadratic
    inverse-Stein-loss shrinkage, "table" interpolates user-supplied knots
    piecewise-linearly with constant extrapolation outside their range.
    """

    kind: str
    value: float | None = None
    knots_x: np.ndarray | None = None
    knots_y: np.ndarray | None = None
    kernel_scale: str = KERNEL_SCALE_INVERSE_SQ

    @classmethod
    def identity_map(cls) -> "ShrinkageRule":
        return cls(kind="identity_map")

    @classmethod
    def constant(cls, value: float) -> "ShrinkageRule":
        if value <= 0:
            raise InvalidRuleError(f"constant rule value must be positive, got {value}")
        return cls(kind="constant", value=float(value))

    @classmethod
    def lwise(cls, kernel_scale: str = KERNEL_SCALE_INVERSE_SQ) -> "ShrinkageRule":
        if kernel_scale not in (KERNEL_SCALE_INVERSE_SQ, KERNEL_SCALE_LITERAL):
            raise InvalidRuleError(f"unknown kernel scale {kernel_scale!r}")
        return cls(kind="lwise", kernel_scale=kernel_scale)

    @classmethod
    def from_table(cls, knots_x, knots_y) -> "ShrinkageRule":
        x = np.asarray(knots_x, dtype=float)
        y = np.asarray(knots_y, dtype=float)
        if x.ndim != 1 or x.size == 0 or x.shape != y.shape:
            raise InvalidRuleError("table knots must be matching nonempty vectors")
        if np.any(np.diff(x) <= 0):
            raise InvalidRuleError("table knots must be strictly increasing in x")
        if np.any(y <= 0) or not np.all(np.isfinite(y)):
            raise InvalidRuleError("table outputs must be positive and finite")
        return cls(kind="table", knots_x=x, knots_y=y)

    def eigenvalue_map(self, eigenvalues, p: int, n: int | None = None) -> np.ndarray:
        """Evaluate the rule at each sample eigenvalue."""
        lam = np.asarray(eigenvalues, dtype=float)
        if self.kind == "identity_map":
            out = lam.copy()
        elif self.kind == "constant":
            out = np.full_like(lam, self.value)
        elif self.kind == "table":
            out = np.interp(lam, self.knots_x, self.knots_y)
        elif self.kind == "lwise":
            if n is None:
                raise InvalidRuleError("lwise rule needs the window sample count n")
            out = _lwise_map(lam, p, n, self.kernel_scale)
        else:
            raise InvalidRuleError(f"unknown rule kind {self.kind!r}")
        if np.any(out <= 0) or not np.all(np.isfinite(out)):
            raise InvalidRuleError(
                f"{self.kind} rule produced a nonpositive or non-finite eigenvalue"
            )
        return out


def sample_mean(window: DataWindow) -> np.ndarray:
    """Row means of the window: n^{-1} W 1_n."""
    return window.samples.mean(axis=1)


def sample_covariance(window: DataWindow) -> CovarianceEstimate:
    """Centered second-moment matrix with 1/n normalization.

    Rank is at most min(p, n-1); the estimate is flagged singular whenever
    p >= n or the data are degenerate.
    """
    if window.n < 2:
        raise InvalidInputError(f"sample covariance needs n >= 2, got n = {window.n}")
    centered = window.samples - sample_mean(window)[:, None]
    S = centered @ centered.T / window.n
    S = 0.5 * (S + S.T)
    singular = window.p >= window.n
    if not singular:
        # degenerate data can lose rank even when p < n
        evals = np.linalg.eigvalsh(S)
        singular = evals[0] <= max(evals[-1], 1.0) * window.p * np.finfo(float).eps
    return CovarianceEstimate(
        matrix=S,
        provenance="sample",
        params={"normalization": "1/n"},
        singular=singular,
    )


def apply_shrinkage(window: DataWindow, rule: ShrinkageRule) -> CovarianceEstimate:
    """Covariance estimate sharing the sample eigenbasis with shrunk eigenvalues."""
    if window.n < 2:
        raise InvalidInputError(f"shrinkage needs n >= 2, got n = {window.n}")
    S = sample_covariance(window)
    dec = eig_sym(S.matrix)
    shrunk = rule.eigenvalue_map(dec.eigenvalues, window.p, window.n)
    A = (dec.eigenvectors * shrunk) @ dec.eigenvectors.T
    return CovarianceEstimate(
        matrix=0.5 * (A + A.T),
        provenance=f"shrinkage:{rule.kind}",
        params={"gamma_n": window.p / window.n},
    )


def _kernel_sums(points: np.ndarray, inv_sq: np.ndarray, p: int, n: int):
    """The g and h kernel sums of the quadratic shrinkage at each point.

    inv_sq holds the inverse squared singular values omega_i^{-2}; the sums
    run over them and are normalized by min(p, n). Regularization scales
    as n^{-1/3} per atom.
    """
    m = min(p, n)
    reg = float(n) ** (-2.0 / 3.0) * inv_sq**2
    diff = inv_sq[None, :] - points[:, None]
    den = diff * diff + reg[None, :]
    g = (inv_sq[None, :] * diff / den).sum(axis=1) / m
    s = (float(n) ** (-1.0 / 3.0) * inv_sq[None, :] ** 2 / den).sum(axis=1) / m
    return g, g * g + s * s


def lwise_kernels(omega_inv_sq: float, singular_values, p: int, n: int) -> tuple[float, float]:
    """Evaluate the quadratic shrinkage kernels g and h at one point.

    The natural argument scale is the inverse squared singular value; h is
    a sum of squares and always dominates g^2.
    """
    if omega_inv_sq < 0:
        raise DomainError(f"kernel argument must be >= 0, got {omega_inv_sq}")
    omega = np.asarray(singular_values, dtype=float)
    if omega.ndim != 1 or omega.size == 0:
        raise DomainError("singular values must form a nonempty vector")
    if np.any(omega <= 0):
        raise DomainError("all singular values must be positive")
    g, h = _kernel_sums(np.array([float(omega_inv_sq)]), omega**-2.0, p, n)
    return float(g[0]), float(h[0])


def _zero_case_value(inv_sq: np.ndarray, p: int, n: int) -> float:
    gamma_n = p / n
    denom = (gamma_n - 1.0) * inv_sq.sum() / min(p, n)
    if denom <= 0:
        raise NumericalGuardError(
            f"zero-eigenvalue shrinkage denominator is nonpositive ({denom:.3e}); "
            "requires p > n"
        )
    return 1.0 / denom


def _branch_values(
    omegas: np.ndarray, inv_sq: np.ndarray, p: int, n: int, kernel_scale: str
) -> np.ndarray:
    """Shrunk eigenvalues for a vector of positive singular values."""
    gamma_n = p / n
    if kernel_scale == KERNEL_SCALE_LITERAL:
        g, _ = _kernel_sums(omegas, inv_sq, p, n)
        _, h = _kernel_sums(1.0 / omegas, inv_sq, p, n)
    else:
        g, h = _kernel_sums(omegas**-2.0, inv_sq, p, n)
    if p <= n - 1:
        denom = (1.0 - gamma_n) ** 2 + 2.0 * gamma_n * (1.0 - gamma_n) * g + gamma_n**2 * h
    else:
        denom = h
    floor = DENOM_FLOOR * omegas**2
    clamped = denom < floor
    if np.any(clamped):
        warnings.warn(
            f"{int(clamped.sum())} shrinkage denominator(s) clamped to the "
            f"{DENOM_FLOOR:g} * omega^2 floor",
            ShrinkageGuardWarning,
            stacklevel=3,
        )
        denom = np.maximum(denom, floor)
    return omegas**2 / denom


def lwise_shrinkage(
    omega: float,
    singular_values,
    p: int,
    n: int,
    kernel_scale: str = KERNEL_SCALE_INVERSE_SQ,
) -> float:
    """Quadratic inverse-Stein-loss shrinkage of one singular value.

    omega lives on the scale where omega^2 is a sample-covariance
    eigenvalue. omega = 0 is permitted only for p > n - 1, where the
    centered window has null directions; there the dedicated zero-case
    formula applies. Uses the aspect ratio gamma_n = p/n throughout.
    """
    if omega < 0:
        raise DomainError(f"singular value must be >= 0, got {omega}")
    pos = np.asarray(singular_values, dtype=float)
    if np.any(pos <= 0):
        raise DomainError("all window singular values must be positive")
    inv_sq = pos**-2.0
    if omega == 0.0:
        if p <= n - 1:
            raise DomainError("omega = 0 is only valid when p > n - 1")
        return _zero_case_value(inv_sq, p, n)
    vals = _branch_values(np.array([float(omega)]), inv_sq, p, n, kernel_scale)
    return float(vals[0])


def _lwise_map(eigenvalues: np.ndarray, p: int, n: int, kernel_scale: str) -> np.ndarray:
    """Apply LWISE shrinkage to a full vector of sample eigenvalues.

    Eigenvalues at numerical zero (null directions of the centered window)
    receive the zero-case value.
    """
    lam = np.clip(eigenvalues, 0.0, None)
    tol = max(p, n) * np.finfo(float).eps * max(lam.max(initial=0.0), 1.0)
    positive = lam > tol
    if not np.any(positive):
        raise DegenerateWindowError("window has no positive sample eigenvalues")
    omegas = np.sqrt(lam[positive])
    inv_sq = omegas**-2.0
    out = np.empty_like(lam)
    out[positive] = _branch_values(omegas, inv_sq, p, n, kernel_scale)
    if np.any(~positive):
        if p <= n - 1:
            raise DegenerateWindowError(
                "rank-deficient window with p <= n - 1 cannot be shrunk"
            )
        out[~positive] = _zero_case_value(inv_sq, p, n)
    return out


def lwise_estimate(
    window: DataWindow, kernel_scale: str = KERNEL_SCALE_INVERSE_SQ
) -> CovarianceEstimate:
    """LWISE covariance estimate of a data window.

    Takes the SVD of the centered window scaled by 1/sqrt(n) so that the
    squared singular values are exactly the sample-covariance eigenvalues,
    shrinks each, and completes the eigenbasis when p > n - 1 with null
    directions at the zero-case value. The result is positive definite for
    every nondegenerate window, including p > n.
    """
    if window.n < 2:
        raise InvalidInputError(f"lwise estimate needs n >= 2, got n = {window.n}")
    p, n = window.p, window.n
    centered = (window.samples - sample_mean(window)[:, None]) / np.sqrt(n)
    U, sv, _ = np.linalg.svd(centered, full_matrices=p > n)
    tol = max(p, n) * np.finfo(float).eps * (sv[0] if sv.size else 0.0)
    rank = int(np.count_nonzero(sv > tol))
    if rank == 0:
        raise DegenerateWindowError("all window columns are equal")
    if rank < min(p, n - 1):
        raise DegenerateWindowError(
            f"window rank {rank} below min(p, n - 1) = {min(p, n - 1)}"
        )
    omegas = sv[:rank]
    inv_sq = omegas**-2.0
    evals = np.empty(p)
    evals[:rank] = _branch_values(omegas, inv_sq, p, n, kernel_scale)
    if rank < p:
        evals[rank:] = _zero_case_value(inv_sq, p, n)
    A = (U * evals) @ U.T
    return CovarianceEstimate(
        matrix=0.5 * (A + A.T),
        provenance="lwise",
        params={"gamma_n": p / n, "kernel_scale": kernel_scale},
    )
