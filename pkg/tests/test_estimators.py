"""Window estimators.

Oracle checklist:
- spectral-shift rule delta(x) = x + c: checked against S-bar + c I computed
  by direct eigendecomposition.
- scalar shrinkage kernel at a single atom: hand computation.
- gamma -> 0 limit: shrinkage collapses to the sample eigenvalue.
- zero-eigenvalue branch: value recomputed independently in the test.
- shrunk-spectrum concentration and loss dominance at (200, 400): Monte
  Carlo against the known population covariance.
"""

import numpy as np
import pytest

from hdqcd.divergence import inverse_stein_loss
from hdqcd.errors import (
    DegenerateWindowError,
    DomainError,
    InvalidInputError,
    InvalidRuleError,
)
from hdqcd.estimators import (
    DataWindow,
    ShrinkageRule,
    apply_shrinkage,
    lwise_estimate,
    lwise_kernels,
    lwise_shrinkage,
    sample_covariance,
    sample_mean,
)

from conftest import gaussian_window


class TestDataWindow:
    def test_shape_accessors(self, rng):
        w = DataWindow(rng.standard_normal((3, 7)))
        assert (w.p, w.n) == (3, 7)

    def test_rejects_bad_input(self):
        with pytest.raises(InvalidInputError):
            DataWindow(np.array([1.0, 2.0]))
        with pytest.raises(InvalidInputError):
            DataWindow(np.array([[np.inf, 1.0]]))
        with pytest.raises(InvalidInputError):
            DataWindow(np.empty((0, 0)))


class TestSampleMean:
    def test_scalar_rows(self):
        np.testing.assert_allclose(sample_mean(DataWindow([[1.0, 3.0]])), [2.0])

    def test_constant_rows(self):
        np.testing.assert_allclose(
            sample_mean(DataWindow([[1.0, 1.0], [2.0, 2.0]])), [1.0, 2.0]
        )

    def test_zero_window(self):
        np.testing.assert_allclose(sample_mean(DataWindow(np.zeros((3, 4)))), np.zeros(3))

    def test_shift_equivariance(self, rng):
        W = rng.standard_normal((4, 9))
        c = rng.standard_normal(4)
        np.testing.assert_allclose(
            sample_mean(DataWindow(W + c[:, None])),
            sample_mean(DataWindow(W)) + c,
            atol=1e-12,
        )


class TestSampleCovariance:
    def test_scalar_window(self):
        est = sample_covariance(DataWindow([[1.0, 3.0]]))
        np.testing.assert_allclose(est.matrix, [[1.0]])  # ((-1)^2 + 1^2) / 2

    def test_identical_columns_singular(self):
        est = sample_covariance(DataWindow([[2.0, 2.0, 2.0], [1.0, 1.0, 1.0]]))
        np.testing.assert_allclose(est.matrix, np.zeros((2, 2)))
        assert est.singular

    def test_rank_bound_p_ge_n(self, rng):
        est = sample_covariance(DataWindow(rng.standard_normal((3, 2))))
        assert est.singular
        assert np.linalg.matrix_rank(est.matrix, tol=1e-10) <= 1

    def test_rank_min_p_nm1_generic(self, rng):
        for p, n in ((3, 8), (5, 5), (6, 4)):
            est = sample_covariance(DataWindow(rng.standard_normal((p, n))))
            assert np.linalg.matrix_rank(est.matrix, tol=1e-10) == min(p, n - 1)

    def test_shift_invariance(self, rng):
        W = rng.standard_normal((4, 9))
        c = rng.standard_normal(4)
        np.testing.assert_allclose(
            sample_covariance(DataWindow(W + c[:, None])).matrix,
            sample_covariance(DataWindow(W)).matrix,
            atol=1e-12,
        )

    def test_scale_quadratic(self, rng):
        W = rng.standard_normal((3, 12))
        np.testing.assert_array_equal(
            sample_covariance(DataWindow(2.0 * W)).matrix,
            4.0 * sample_covariance(DataWindow(W)).matrix,
        )

    def test_rejects_single_column(self):
        with pytest.raises(InvalidInputError):
            sample_covariance(DataWindow([[1.0]]))


class TestApplyShrinkage:
    def test_constant_rule_gives_identity(self, rng):
        W = DataWindow(rng.standard_normal((4, 10)))
        est = apply_shrinkage(W, ShrinkageRule.constant(1.0))
        np.testing.assert_allclose(est.matrix, np.eye(4), atol=1e-12)

    def test_identity_map_reproduces_sample(self, rng):
        W = DataWindow(rng.standard_normal((4, 12)))
        est = apply_shrinkage(W, ShrinkageRule.identity_map())
        np.testing.assert_allclose(est.matrix, sample_covariance(W).matrix, atol=1e-12)

    def test_spectral_shift_rule(self, rng):
        """Oracle: delta(x) = x + c equals S-bar + c I by direct eigendecomposition."""
        W = DataWindow(rng.standard_normal((5, 20)))
        S = sample_covariance(W).matrix
        lam = np.linalg.eigvalsh(S)
        c = 0.7
        knots = np.array([0.5 * lam.min(), lam.max() + 1.0])
        rule = ShrinkageRule.from_table(knots, knots + c)
        est = apply_shrinkage(W, rule)
        np.testing.assert_allclose(est.matrix, S + c * np.eye(5), atol=1e-10)

    def test_shares_sample_eigenbasis(self, rng):
        W = DataWindow(rng.standard_normal((6, 15)))
        S = sample_covariance(W).matrix
        for rule in (ShrinkageRule.constant(0.5), ShrinkageRule.lwise()):
            A = apply_shrinkage(W, rule).matrix
            comm = A @ S - S @ A
            assert np.linalg.norm(comm) < 1e-8 * np.linalg.norm(S) * np.linalg.norm(A)

    def test_nonpositive_rule_rejected(self, rng):
        W = DataWindow(rng.standard_normal((3, 3)))  # p >= n: zero eigenvalue
        with pytest.raises(InvalidRuleError):
            apply_shrinkage(W, ShrinkageRule.identity_map())


class TestShrinkageRuleValidation:
    def test_table_must_be_sorted_positive(self):
        with pytest.raises(InvalidRuleError):
            ShrinkageRule.from_table([1.0, 0.5], [1.0, 1.0])
        with pytest.raises(InvalidRuleError):
            ShrinkageRule.from_table([0.0, 1.0], [1.0, -2.0])

    def test_constant_must_be_positive(self):
        with pytest.raises(InvalidRuleError):
            ShrinkageRule.constant(0.0)

    def test_table_constant_extrapolation(self):
        rule = ShrinkageRule.from_table([1.0, 2.0], [3.0, 5.0])
        out = rule.eigenvalue_map(np.array([0.0, 1.5, 10.0]), p=3, n=10)
        np.testing.assert_allclose(out, [3.0, 4.0, 5.0])


class TestLwiseKernels:
    def test_single_atom_hand_computation(self):
        """Oracle: one atom at omega = 1, x = 0, n = 1000 gives 1/(1 + n^{-2/3})."""
        g, h = lwise_kernels(0.0, [1.0], p=1, n=1000)
        assert g == pytest.approx(1.0 / (1.0 + 1000.0 ** (-2.0 / 3.0)), rel=1e-12)

    def test_h_dominates_g_squared(self, rng):
        for _ in range(25):
            omegas = 0.1 + rng.random(8)
            x = 2.0 * rng.random()
            g, h = lwise_kernels(x, omegas, p=8, n=50)
            assert h >= g * g - 1e-15

    def test_resonance_zeroes_g(self):
        # x equal to the inverse squared singular value kills the g numerator
        n = 200
        g, h = lwise_kernels(1.0, [1.0], p=1, n=n)
        assert g == 0.0
        assert h == pytest.approx(float(n) ** (2.0 / 3.0), rel=1e-12)

    def test_rejects_bad_inputs(self):
        with pytest.raises(DomainError):
            lwise_kernels(-0.1, [1.0], p=1, n=10)
        with pytest.raises(DomainError):
            lwise_kernels(0.5, [1.0, 0.0], p=2, n=10)


class TestLwiseShrinkage:
    def test_gamma_to_zero_limit(self):
        """Oracle: at p = 1, n = 1e4 the shrunk value is the sample eigenvalue."""
        for omega in (0.5, 1.0, 2.0):
            value = lwise_shrinkage(omega, [omega], p=1, n=10_000)
            assert value == pytest.approx(omega**2, rel=0.01)

    def test_zero_case_formula(self, rng):
        """Oracle: zero-eigenvalue value recomputed from its closed form."""
        p, n = 30, 15
        omegas = 0.5 + rng.random(n - 1)
        value = lwise_shrinkage(0.0, omegas, p=p, n=n)
        gamma_n = p / n
        expected = 1.0 / ((gamma_n - 1.0) * np.sum(omegas**-2.0) / min(p, n))
        assert value == pytest.approx(expected, rel=1e-12)
        assert value > 0

    def test_zero_rejected_when_sample_rank_full(self):
        with pytest.raises(DomainError):
            lwise_shrinkage(0.0, [1.0, 2.0], p=2, n=10)

    def test_negative_rejected(self):
        with pytest.raises(DomainError):
            lwise_shrinkage(-1.0, [1.0], p=1, n=10)

    def test_literal_scale_differs(self, rng):
        # at omega = 1 all evaluation points coincide, so probe elsewhere
        omegas = 0.5 + rng.random(20)
        a = lwise_shrinkage(2.0, omegas, p=20, n=40)
        b = lwise_shrinkage(2.0, omegas, p=20, n=40, kernel_scale="literal")
        assert a != b


class TestLwiseEstimate:
    def test_commutes_with_sample_covariance(self, rng):
        W = DataWindow(rng.standard_normal((20, 50)))
        S = sample_covariance(W).matrix
        A = lwise_estimate(W).matrix
        comm = A @ S - S @ A
        assert np.linalg.norm(comm) < 1e-8 * np.linalg.norm(S) * np.linalg.norm(A)

    def test_spd_when_sample_is_singular(self, rng):
        W = DataWindow(rng.standard_normal((300, 150)))
        assert sample_covariance(W).singular
        est = lwise_estimate(W)
        assert np.linalg.eigvalsh(est.matrix).min() > 0

    def test_spd_across_aspect_ratios(self, rng):
        for p, n in ((5, 50), (20, 21), (20, 20), (30, 15)):
            if p == n:
                continue  # gamma = 1 excluded by the zero-case denominator
            W = DataWindow(rng.standard_normal((p, n)))
            assert np.linalg.eigvalsh(lwise_estimate(W).matrix).min() > 0

    def test_shrunk_spectrum_concentration(self):
        """Monte Carlo at the isotropic population, p = 200, n = 400.

        The spectrum contracts from the sample range [0.08, 2.9] to about
        [0.6, 1.6] with a mild upward bias; bands frozen from 10-draw runs.
        """
        rng = np.random.default_rng(7)
        window = DataWindow(rng.standard_normal((200, 400)))
        lam = np.linalg.eigvalsh(lwise_estimate(window).matrix)
        assert lam.min() > 0.55
        assert lam.max() < 1.7
        assert 1.0 < lam.mean() < 1.3
        assert np.abs(lam - 1.0).mean() < 0.25

    def test_loss_dominance_over_sample(self):
        """Oracle: mean half inverse-Stein loss over 20 draws, truth = I."""
        p, n = 200, 400
        lw, sm = [], []
        for s in range(20):
            rng = np.random.default_rng(1000 + s)
            W = DataWindow(rng.standard_normal((p, n)))
            lw.append(0.5 * inverse_stein_loss(lwise_estimate(W).matrix, np.eye(p)))
            sm.append(0.5 * inverse_stein_loss(sample_covariance(W).matrix, np.eye(p)))
        assert np.mean(lw) < np.mean(sm)

    def test_degenerate_window_rejected(self):
        W = DataWindow(np.ones((3, 5)))
        with pytest.raises(DegenerateWindowError):
            lwise_estimate(W)

    def test_provenance_records_aspect_ratio(self, rng):
        est = lwise_estimate(DataWindow(rng.standard_normal((4, 16))))
        assert est.provenance == "lwise"
        assert est.params["gamma_n"] == pytest.approx(0.25)


class TestCovarianceEstimateCaches:
    def test_cholesky_and_logdet_cached(self, rng):
        W = DataWindow(gaussian_window(rng, 5, 40))
        est = sample_covariance(W)
        assert not est.singular
        assert est.cholesky is not None
        sign, logdet = np.linalg.slogdet(est.matrix)
        assert sign > 0
        assert est.logdet == pytest.approx(logdet, rel=1e-10)
