import math

import numpy as np
import pytest

from smtde.errors import DomainError, NonConvergenceError, TruncationBoundError
from smtde.linalg import mat_norm, mat_pow
from smtde.mlmatrix import (MLParams, QTable, ml_nonperm, ml_nonperm_grid,
                            ml_nonperm_info, ml_perm, q_coeff)
from smtde.specfun import ml_scalar, reciprocal_gamma

from conftest import SEC6_A, SEC6_B

KERNEL_PARAMS = MLParams(rho=0.5, sigma_exp=0.75, delta=0.75)


def random_pair(rng, n=2, commuting=False):
    a = rng.uniform(-0.5, 0.5, size=(n, n))
    if not commuting:
        return a, rng.uniform(-0.5, 0.5, size=(n, n))
    coeffs = rng.uniform(-0.4, 0.4, size=3)
    b = coeffs[0] * np.eye(n) + coeffs[1] * a + coeffs[2] * a @ a
    return a, b


class TestQTable:
    def test_base_cases(self):
        q = QTable(SEC6_A, SEC6_B)
        for k in range(6):
            assert np.array_equal(q_coeff(q, k, 0), mat_pow(SEC6_A, k))
        for m in range(6):
            assert np.allclose(q_coeff(q, 0, m), mat_pow(SEC6_B, m), atol=1e-15)

    def test_q11_is_ab_plus_ba(self):
        q = QTable(SEC6_A, SEC6_B)
        expected = SEC6_A @ SEC6_B + SEC6_B @ SEC6_A
        assert np.allclose(q_coeff(q, 1, 1), expected, atol=1e-15)

    def test_recursion_residual_is_exactly_zero(self):
        # re-derive every cached entry from the recursion definition
        q = QTable(SEC6_A, SEC6_B)
        for k in range(5):
            for m in range(1, 5):
                acc = np.zeros((2, 2))
                for l in range(k + 1):
                    acc = acc + (q.a_power(k - l) @ q.b) @ q_coeff(q, l, m - 1)
                assert np.array_equal(q_coeff(q, k, m), acc)

    def test_commuting_pair_binomial_closed_form(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            a, b = random_pair(rng, commuting=True)
            q = QTable(a, b)
            worst = 0.0
            for k in range(0, 8):
                for m in range(0, 8 - k):
                    closed = math.comb(k + m, m) * mat_pow(a, k) @ mat_pow(b, m)
                    worst = max(worst, mat_norm(q_coeff(q, k, m) - closed))
            assert worst < 1e-10

    def test_truncation_bound(self):
        q = QTable(SEC6_A, SEC6_B, max_total=10)
        q_coeff(q, 4, 6)
        with pytest.raises(TruncationBoundError):
            q_coeff(q, 5, 6)
        with pytest.raises(ValueError):
            q_coeff(q, -1, 0)


class TestMlNonperm:
    def test_identity_at_origin(self):
        q = QTable(SEC6_A, SEC6_B)
        p = MLParams(rho=0.5, sigma_exp=0.75, delta=1.0)
        assert np.array_equal(ml_nonperm(q, p, 0.0), np.eye(2))

    def test_zero_matrices_give_identity(self):
        q = QTable(np.zeros((2, 2)), np.zeros((2, 2)))
        p = MLParams(rho=0.5, sigma_exp=0.75, delta=1.0)
        for t in (0.0, 0.5, 3.0):
            assert np.array_equal(ml_nonperm(q, p, t), np.eye(2))

    def test_single_series_when_b_vanishes(self):
        # independent one-matrix series oracle
        rng = np.random.default_rng(5)
        a = rng.uniform(-0.5, 0.5, size=(2, 2))
        q = QTable(a, np.zeros((2, 2)))
        p = MLParams(rho=0.6, sigma_exp=0.9, delta=1.2)
        for t in (0.5, 1.0, 2.0):
            expected = np.zeros((2, 2))
            term = np.eye(2)
            for k in range(250):
                expected = expected + term * t ** (k * p.rho) * \
                    reciprocal_gamma(k * p.rho + p.delta)
                term = term @ a
            assert mat_norm(ml_nonperm(q, p, t) - expected) < 1e-12

    def test_scalar_case_reduces_to_ml_scalar(self):
        a = 0.37
        q = QTable(np.array([[a]]), np.zeros((1, 1)))
        p = MLParams(rho=0.8, sigma_exp=1.0, delta=1.0)
        for t in (0.25, 1.0, 2.0):
            got = ml_nonperm(q, p, t)[0, 0]
            expected = ml_scalar(p.rho, a * t ** p.rho)
            assert got == pytest.approx(expected, rel=1e-12)

    def test_tail_estimate_bounds_refinement(self):
        q = QTable(SEC6_A, SEC6_B)
        value, info = ml_nonperm_info(q, KERNEL_PARAMS, 1.5)
        deeper = 0.0
        for extra in range(1, 11):
            d = info.diagonals_used + extra
            for m in range(0, d + 1):
                k = d - m
                e = k * KERNEL_PARAMS.rho + m * KERNEL_PARAMS.sigma_exp
                deeper += mat_norm(t_pow(1.5, e) * reciprocal_gamma(e + KERNEL_PARAMS.delta)
                                   * q_coeff(q, k, m))
        assert deeper <= info.tail_estimate

    def test_non_convergence_guard(self):
        q = QTable(SEC6_A, SEC6_B, max_total=400)
        with pytest.raises(NonConvergenceError):
            ml_nonperm(q, KERNEL_PARAMS, 3.0, max_diagonals=5)

    def test_grid_matches_scalar_evaluation(self):
        q = QTable(SEC6_A, SEC6_B)
        ts = np.array([0.0, 0.2, 0.9, 1.4])
        vals, _ = ml_nonperm_grid(q, KERNEL_PARAMS, ts)
        for t, v in zip(ts, vals):
            assert mat_norm(v - ml_nonperm(q, KERNEL_PARAMS, float(t))) < 1e-12

    def test_negative_time_rejected(self):
        q = QTable(SEC6_A, SEC6_B)
        with pytest.raises(DomainError):
            ml_nonperm(q, KERNEL_PARAMS, -0.1)


def t_pow(t, e):
    if t == 0.0:
        return 1.0 if e == 0.0 else 0.0
    return t ** e


class TestMlPerm:
    def test_zero_matrices(self):
        p = MLParams(rho=0.5, sigma_exp=0.75, delta=1.0)
        z = np.zeros((2, 2))
        assert np.array_equal(ml_perm(z, z, p, 1.0), np.eye(2))

    def test_matches_nonperm_for_commuting_pairs(self):
        rng = np.random.default_rng(23)
        for _ in range(20):
            a, b = random_pair(rng, commuting=True)
            q = QTable(a, b)
            t = rng.uniform(0.0, 2.0)
            diff = mat_norm(ml_perm(a, b, KERNEL_PARAMS, t)
                            - ml_nonperm(q, KERNEL_PARAMS, t))
            assert diff < 1e-10

    def test_diagonal_matrices(self):
        a = np.diag([0.3, -0.2])
        b = np.diag([0.1, 0.4])
        q = QTable(a, b)
        diff = mat_norm(ml_perm(a, b, KERNEL_PARAMS, 1.2)
                        - ml_nonperm(q, KERNEL_PARAMS, 1.2))
        assert diff < 1e-12

    def test_rejects_non_commuting(self):
        with pytest.raises(DomainError):
            ml_perm(SEC6_A, SEC6_B, KERNEL_PARAMS, 1.0)

    def test_scalar_reduction(self):
        b = 0.41
        z = np.zeros((1, 1))
        p = MLParams(rho=1.0, sigma_exp=0.7, delta=1.0)
        got = ml_perm(z, np.array([[b]]), p, 1.5)[0, 0]
        assert got == pytest.approx(ml_scalar(0.7, b * 1.5 ** 0.7), rel=1e-12)


def test_mlparams_validation():
    with pytest.raises(DomainError):
        MLParams(rho=0.0, sigma_exp=1.0, delta=1.0)
    with pytest.raises(DomainError):
        MLParams(rho=1.0, sigma_exp=-0.5, delta=1.0)
    with pytest.raises(DomainError):
        MLParams(rho=1.0, sigma_exp=1.0, delta=math.inf)
