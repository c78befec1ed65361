"""Shared test helpers."""

import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


def random_spd(rng, p, spread=1.0):
    """Random symmetric positive-definite matrix with eigenvalues in (0, 1 + spread]."""
    G = rng.standard_normal((p, p))
    Q, R = np.linalg.qr(G)
    Q = Q * np.sign(np.diag(R))
    evals = 0.2 + spread * rng.random(p)
    return (Q * evals) @ Q.T


def gaussian_window(rng, p, n, mean=None, chol=None):
    """p x n matrix of i.i.d. Gaussian columns."""
    Z = rng.standard_normal((p, n))
    if chol is not None:
        Z = chol @ Z
    if mean is not None:
        Z = Z + np.asarray(mean)[:, None]
    return Z
