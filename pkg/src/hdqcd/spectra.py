"""Spectral analysis primitives.

Eigendecompositions of symmetric matrices, empirical spectral distribution
functions, Stieltjes transforms and their smoothed real-line boundary
values, and Marchenko-Pastur reference quantities used by the estimator
and divergence layers.

Conventions: eigenvalues are sorted descending, and the k-th column of the
eigenvector matrix pairs with the k-th eigenvalue.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .errors import DomainError, InvalidInputError, SymmetryViolationError

# Relative tolerances for double-precision symmetric eigensolvers.
EPS_SYM = 1e-8
EPS_RECON = 1e-9
EPS_ORTH = 1e-9


@dataclass(eq=False)
class SpectralDecomposition:
    """Eigenvalues (descending) and matching orthonormal eigenvectors."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def p(self) -> int:
        return len(self.eigenvalues)

    def reconstruct(self) -> np.ndarray:
        """V diag(w) V^T for the stored eigenpairs."""
        return (self.eigenvectors * self.eigenvalues) @ self.eigenvectors.T


@dataclass(eq=False)
class PopulationSpectrum:
    """Population eigenvalue law as a finite mixture of point masses.

    Atoms are (value, weight) pairs with positive values and weights
    summing to one.
    """

    atoms: list[tuple[float, float]] = field(default_factory=list)

    def __post_init__(self):
        if not self.atoms:
            raise InvalidInputError("population spectrum needs at least one atom")
        self.atoms = [(float(v), float(w)) for v, w in self.atoms]
        values = np.array([v for v, _ in self.atoms])
        weights = np.array([w for _, w in self.atoms])
        if np.any(values <= 0) or not np.all(np.isfinite(values)):
            raise InvalidInputError("atom values must be positive and finite")
        if np.any(weights < 0):
            raise InvalidInputError("atom weights must be nonnegative")
        if abs(weights.sum() - 1.0) > 1e-9:
            raise InvalidInputError(f"atom weights sum to {weights.sum()}, not 1")

    @property
    def support(self) -> tuple[float, float]:
        values = [v for v, _ in self.atoms]
        return min(values), max(values)

    def log_moment(self) -> float:
        """Integral of log(y) against the spectrum."""
        return sum(w * np.log(v) for v, w in self.atoms)

    def atom_counts(self, p: int) -> np.ndarray:
        """Integer atom multiplicities for dimension p, largest-remainder rounding."""
        weights = np.array([w for _, w in self.atoms])
        quotas = weights * p
        counts = np.floor(quotas).astype(int)
        short = p - counts.sum()
        if short > 0:
            # ties broken toward earlier atoms (stable sort)
            order = np.argsort(-(quotas - np.floor(quotas)), kind="stable")
            counts[order[:short]] += 1
        return counts


def _as_matrix(A) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InvalidInputError(f"expected a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise InvalidInputError("matrix has non-finite entries")
    return A


def check_symmetric(A: np.ndarray, tol: float = EPS_SYM) -> np.ndarray:
    """Validate symmetry within a relative tolerance and return (A + A^T)/2."""
    A = _as_matrix(A)
    scale = max(np.abs(A).max(), 1.0)
    gap = np.abs(A - A.T).max()
    if gap > tol * scale:
        raise SymmetryViolationError(
            f"matrix is not symmetric: max |A - A^T| = {gap:.3e} at scale {scale:.3e}"
        )
    return 0.5 * (A + A.T)


def eig_sym(A) -> SpectralDecomposition:
    """Eigendecomposition of a symmetric matrix, eigenvalues descending."""
    A = check_symmetric(A)
    w, V = np.linalg.eigh(A)
    return SpectralDecomposition(eigenvalues=w[::-1].copy(), eigenvectors=V[:, ::-1].copy())


def esdf(eigenvalues, x: float) -> float:
    """Empirical spectral distribution function: fraction of eigenvalues <= x."""
    lam = np.asarray(eigenvalues, dtype=float)
    if lam.ndim != 1 or lam.size == 0:
        raise InvalidInputError("eigenvalues must be a nonempty vector")
    if not np.all(np.isfinite(lam)):
        raise InvalidInputError("eigenvalues must be finite")
    return float(np.count_nonzero(lam <= x)) / lam.size


def empirical_stieltjes(eigenvalues, z: complex) -> complex:
    """Stieltjes transform of the empirical eigenvalue law at z, Im z > 0.

    Returns p^{-1} sum_k (lambda_k - z)^{-1}; maps the upper half-plane to
    itself and is bounded by 1/Im(z).
    """
    lam = np.asarray(eigenvalues, dtype=float)
    if lam.ndim != 1 or lam.size == 0:
        raise InvalidInputError("eigenvalues must be a nonempty vector")
    z = complex(z)
    if z.imag <= 0:
        raise DomainError(f"z must lie in the open upper half-plane, got Im z = {z.imag}")
    return complex(np.mean(1.0 / (lam - z)))


def real_line_stieltjes(eigenvalues, x: float, n: int) -> complex:
    """Smoothed boundary value of the empirical Stieltjes transform at real x.

    Evaluates the transform just above the real line at bandwidth
    eta(x, n) = n^(-1/3) * max(|x|, mean eigenvalue), consistent with the
    n^(-1/3) regularization inside the quadratic shrinkage kernels.
    """
    if x == 0:
        raise DomainError("real-line Stieltjes transform is not evaluated at x = 0")
    if n < 1:
        raise DomainError("sample count n must be positive")
    lam = np.asarray(eigenvalues, dtype=float)
    eta = float(n) ** (-1.0 / 3.0) * max(abs(x), float(np.mean(lam)))
    return empirical_stieltjes(lam, complex(x, eta))


def mp_support_edges(gamma: float) -> tuple[float, float]:
    """Support edges ((1 - sqrt(g))^2, (1 + sqrt(g))^2) of the Marchenko-Pastur law."""
    if gamma <= 0:
        raise DomainError(f"aspect ratio must be positive, got {gamma}")
    root = np.sqrt(gamma)
    return float((1.0 - root) ** 2), float((1.0 + root) ** 2)


def mp_density(x: float, gamma: float) -> float:
    """Continuous part of the Marchenko-Pastur density (identity population)."""
    lo, hi = mp_support_edges(gamma)
    if x <= lo or x >= hi:
        return 0.0
    return float(np.sqrt((hi - x) * (x - lo)) / (2.0 * np.pi * gamma * x))


def mp_cdf(x: float, gamma: float) -> float:
    """Marchenko-Pastur reference CDF by adaptive quadrature of the density.

    For gamma > 1 the law carries an atom of mass 1 - 1/gamma at zero.
    Intended as a test oracle; accuracy ~1e-8.
    """
    lo, hi = mp_support_edges(gamma)
    atom = max(0.0, 1.0 - 1.0 / gamma)
    if x < 0.0:
        return 0.0
    if x <= lo:
        return atom
    upper = min(x, hi)
    val, _ = integrate.quad(mp_density, lo, upper, args=(gamma,), epsabs=1e-8, limit=200)
    total = atom + val
    return float(min(total, 1.0)) if x < hi else 1.0


def draw_population_covariance(spectrum: PopulationSpectrum, p: int, seed) -> np.ndarray:
    """Symmetric positive-definite matrix realizing the population spectrum.

    Atom weights are rounded to integer eigenvalue multiplicities summing to
    p (largest-remainder method) and the eigenbasis is a Haar-random
    rotation drawn from the seed.
    """
    if p < 1:
        raise InvalidInputError(f"dimension must be >= 1, got {p}")
    counts = spectrum.atom_counts(p)
    values = np.repeat([v for v, _ in spectrum.atoms], counts)
    rng = np.random.default_rng(seed)
    G = rng.standard_normal((p, p))
    Q, R = np.linalg.qr(G)
    Q = Q * np.sign(np.diag(R))  # unique factor, Haar-distributed
    A = (Q * values) @ Q.T
    return 0.5 * (A + A.T)
