import math

import numpy as np
import pytest

from smtde.errors import DomainError, NonConvergenceError
from smtde.specfun import (SampledFunction, caputo_identity_residual, gamma_fn,
                           ml_scalar, ml_scalar_log, reciprocal_gamma,
                           rl_integral, rl_integral_all)


class TestGamma:
    def test_known_values(self):
        assert gamma_fn(1.0) == 1.0
        assert gamma_fn(5.0) == 24.0
        assert gamma_fn(0.5) == pytest.approx(math.sqrt(math.pi), rel=1e-12)

    def test_domain(self):
        for bad in (0.0, -1.0, -0.5):
            with pytest.raises(DomainError):
                gamma_fn(bad)

    def test_reciprocal_poles(self):
        assert reciprocal_gamma(0.0) == 0.0
        assert reciprocal_gamma(-3.0) == 0.0
        assert reciprocal_gamma(2.5) == pytest.approx(1.0 / math.gamma(2.5), rel=1e-15)
        # negative non-integer arguments are fine
        assert reciprocal_gamma(-0.5) == pytest.approx(1.0 / math.gamma(-0.5), rel=1e-14)


class TestMlScalar:
    def test_reduces_to_exp(self):
        for z in (0.0, 1.0, -1.0):
            assert ml_scalar(1.0, z) == pytest.approx(math.exp(z), rel=1e-13)

    def test_zero_argument(self):
        for alpha in (0.3, 0.75, 1.5):
            assert ml_scalar(alpha, 0.0) == 1.0

    def test_order_two_is_cosh_sqrt(self):
        assert ml_scalar(2.0, 1.0) == pytest.approx(math.cosh(1.0), rel=1e-13)
        assert ml_scalar(2.0, 4.0) == pytest.approx(math.cosh(2.0), rel=1e-13)

    def test_monotone_for_nonnegative_arguments(self):
        zs = np.linspace(0.0, 8.0, 40)
        vals = ml_scalar(0.5, zs)
        assert np.all(np.diff(vals) > 0)

    def test_vector_matches_scalar(self):
        zs = np.array([0.0, 0.3, 2.0, 11.0])
        vec = ml_scalar(0.6, zs)
        for z, v in zip(zs, vec):
            assert v == pytest.approx(ml_scalar(0.6, float(z)), rel=1e-14)

    def test_log_variant_handles_overflowing_values(self):
        # E_0.2(5.74) ~ exp(5.74^5) far beyond float64 range
        logv = ml_scalar_log(0.2, 5.74)
        assert logv == pytest.approx(5.74 ** 5, rel=0.01)
        assert np.isinf(ml_scalar(0.2, 5.74))

    def test_divergence_guard(self):
        with pytest.raises(NonConvergenceError):
            ml_scalar(0.05, 50.0, max_terms=5000)

    def test_domain(self):
        with pytest.raises(DomainError):
            ml_scalar(0.0, 1.0)
        with pytest.raises(DomainError):
            ml_scalar(-1.0, 1.0)


class TestSampledFunction:
    def test_validation(self):
        with pytest.raises(ValueError):
            SampledFunction(np.array([0.0, 1.0, 0.5]), np.zeros(3))
        with pytest.raises(ValueError):
            SampledFunction(np.array([0.1, 1.0]), np.zeros(2))
        with pytest.raises(ValueError):
            SampledFunction(np.array([0.0, 1.0]), np.array([0.0, np.inf]))

    def test_uniform_detection(self):
        f = SampledFunction(np.linspace(0, 1, 11), np.zeros(11))
        assert f.is_uniform()
        g = SampledFunction(np.array([0.0, 0.1, 0.5, 1.0]), np.zeros(4))
        assert not g.is_uniform()


def _uniform(fn, t_max=1.0, n=1000):
    grid = np.linspace(0.0, t_max, n + 1)
    return SampledFunction(grid, fn(grid))


class TestRlIntegral:
    def test_constant_is_quadrature_exact(self):
        f = _uniform(lambda t: np.ones_like(t), n=64)
        for alpha in (0.4, 0.75, 1.3):
            for idx in (1, 17, 64):
                t = f.grid[idx]
                expected = t ** alpha / gamma_fn(alpha + 1.0)
                assert rl_integral(alpha, f, idx) == pytest.approx(expected, rel=1e-13)

    def test_order_one_ordinary_integral(self):
        f = _uniform(lambda t: t, n=1000)
        got = rl_integral(1.0, f, 1000)
        assert got == pytest.approx(0.5, abs=1e-3)

    def test_half_order_of_linear_function(self):
        # I^0.5 t at t = 1 equals Gamma(2)/Gamma(2.5)
        expected = 1.0 / gamma_fn(2.5)
        f = _uniform(lambda t: t, n=4096)
        got = rl_integral(0.5, f, 4096)
        assert got == pytest.approx(expected, abs=1e-3)

    def test_linearity_and_positivity(self):
        rng = np.random.default_rng(3)
        grid = np.linspace(0.0, 2.0, 200)
        u = rng.normal(size=200)
        v = rng.normal(size=200)
        fu = SampledFunction(grid, u)
        fv = SampledFunction(grid, v)
        fw = SampledFunction(grid, 2.0 * u - 3.0 * v)
        combo = 2.0 * rl_integral(0.7, fu, 150) - 3.0 * rl_integral(0.7, fv, 150)
        assert rl_integral(0.7, fw, 150) == pytest.approx(combo, rel=1e-12, abs=1e-12)
        fpos = SampledFunction(grid, np.abs(u))
        assert rl_integral(0.7, fpos, 199) >= 0.0

    def test_all_indices_matches_single(self):
        f = _uniform(lambda t: np.sin(t), n=128)
        all_vals = rl_integral_all(0.6, f)
        for idx in (0, 1, 31, 128):
            assert all_vals[idx] == pytest.approx(rl_integral(0.6, f, idx),
                                                  rel=1e-12, abs=1e-14)

    def test_domain_and_bounds(self):
        f = _uniform(lambda t: t, n=8)
        with pytest.raises(DomainError):
            rl_integral(0.0, f, 4)
        with pytest.raises(ValueError):
            rl_integral(0.5, f, 9)


class TestCaputoIdentity:
    def test_quadratic_function(self):
        n = 10_000
        grid = np.linspace(0.0, 1.0, n + 1)
        alpha = 0.75
        f = SampledFunction(grid, grid ** 2)
        df = SampledFunction(grid, 2.0 * grid ** (2.0 - alpha) / gamma_fn(3.0 - alpha))
        assert caputo_identity_residual(alpha, f, df) < 1e-3

    def test_constant_function_exact(self):
        grid = np.linspace(0.0, 1.0, 65)
        f = SampledFunction(grid, np.full(65, 4.2))
        df = SampledFunction(grid, np.zeros(65))
        assert caputo_identity_residual(0.6, f, df) == 0.0

    def test_residual_shrinks_with_refinement(self):
        alpha = 0.5

        def residual(n):
            grid = np.linspace(0.0, 1.0, n + 1)
            f = SampledFunction(grid, grid)
            df = SampledFunction(grid, grid ** 0.5 / gamma_fn(1.5))
            return caputo_identity_residual(alpha, f, df)

        r1, r2 = residual(500), residual(1000)
        assert r2 < r1

    def test_grid_mismatch(self):
        f = SampledFunction(np.linspace(0, 1, 11), np.zeros(11))
        g = SampledFunction(np.linspace(0, 1, 21), np.zeros(21))
        with pytest.raises(ValueError):
            caputo_identity_residual(0.5, f, g)
