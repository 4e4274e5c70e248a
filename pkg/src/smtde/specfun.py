"""Scalar special functions and fractional-order quadrature on sampled functions.

Provides the gamma function, the one-parameter Mittag-Leffler function
E_a(z) = sum_k z^k / Gamma(k*a + 1), and product-rule quadrature for the
Riemann-Liouville fractional integral

    I^a f(t) = (1/Gamma(a)) * integral_0^t (t-r)^(a-1) f(r) dr.

The quadrature is a left-endpoint product rule: f is held piecewise constant
at the left endpoint of each cell while the singular kernel is integrated
exactly, giving the weights [(t-t_j)^a - (t-t_{j+1})^a] / Gamma(a+1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, NonConvergenceError

ML_SERIES_TOL = 1e-14
ML_MAX_TERMS = 100_000
# Consecutive negligible terms required before the series is declared
# converged; guards against alternating-sign false stops.
_CONVERGED_RUN = 4


def gamma_fn(x: float) -> float:
    """Gamma function for x > 0. Raises DomainError otherwise."""
    x = float(x)
    if not math.isfinite(x) or x <= 0.0:
        raise DomainError(f"gamma_fn requires x > 0, got {x!r}")
    return math.gamma(x)


def reciprocal_gamma(x: float) -> float:
    """1/Gamma(x) extended by zero at the poles x = 0, -1, -2, ..."""
    x = float(x)
    if x <= 0.0 and x == int(x):
        return 0.0
    return 1.0 / math.gamma(x)


_LOG_BLOCK = 128


def ml_scalar_log(alpha: float, z, tol: float = ML_SERIES_TOL,
                  max_terms: int = ML_MAX_TERMS):
    """log E_alpha(z) for z >= 0, accumulated in log space.

    Stays accurate when E_alpha(z) itself overflows float64 (small alpha or
    large z; arguments needing hundreds of thousands of terms are routine for
    the contraction weights). Terms are summed in blocks: inside one block the
    series is an ordinary polynomial in z scaled by the block's leading term,
    so the per-term work is a multiply-add; only one log-sum-exp fold happens
    per block. Entries converge at different term counts, and converged
    prefixes of the (sorted) input drop out of the active set so the cost
    tracks the largest argument only.
    """
    if alpha <= 0:
        raise DomainError(f"ml order must be positive, got {alpha!r}")
    zs = np.asarray(z, dtype=float)
    if np.any(zs < 0) or not np.all(np.isfinite(zs)):
        raise DomainError("ml_scalar_log requires finite z >= 0")
    scalar_input = zs.ndim == 0
    flat = np.atleast_1d(zs).ravel()

    order = np.argsort(flat, kind="stable")
    zsorted = flat[order]
    with np.errstate(divide="ignore"):
        logz = np.where(zsorted > 0, np.log(zsorted), -np.inf)

    total = np.zeros_like(zsorted)  # log of the k = 0 term: log(1/Gamma(1)) = 0
    log_tol = math.log(tol)
    max_logz = float(logz[-1]) if logz.size else -np.inf
    # keep z^(block length) within float64 range for the in-block polynomial
    if max_logz > 0:
        block = int(min(_LOG_BLOCK, max(1.0, 600.0 / max_logz)))
    else:
        block = _LOG_BLOCK
    lo = 0  # entries before lo have converged
    k0 = 1
    while k0 <= max_terms:
        depth = min(block, max_terms - k0 + 1)
        lgam = np.array([math.lgamma((k0 + d) * alpha + 1.0)
                         for d in range(depth)])
        coeffs = np.exp(lgam[0] - lgam)  # in-block reciprocal-gamma ratios
        zs_act = zsorted[lo:]
        powers = np.ones((depth, zs_act.size))
        if depth > 1:
            powers[1:] = zs_act[None, :]
            np.cumprod(powers, axis=0, out=powers)
        base = k0 * logz[lo:] - lgam[0]  # log of the block's leading term
        with np.errstate(divide="ignore", invalid="ignore"):
            block_log = base + np.log(coeffs @ powers)
            np.logaddexp(total[lo:], block_log, out=total[lo:])
            # trailing-terms criterion: the last few terms of the block must be
            # negligible against the (still growing) partial sum; terms are
            # nonnegative, so this realizes the consecutive-small-terms rule
            tail = min(_CONVERGED_RUN, depth)
            tail_logs = (base[None, :] + np.log(powers[-tail:])
                         - (lgam[-tail:] - lgam[0])[:, None])
        done = np.all(tail_logs <= total[None, lo:] + log_tol, axis=0)
        if done.all():
            lo = zsorted.size
            break
        lo += int(np.argmin(done))  # advance past the leading converged run
        k0 += depth
    if lo < zsorted.size:
        raise NonConvergenceError(
            f"ml series did not converge within {max_terms} terms "
            f"(alpha={alpha}, max z={zsorted[-1]})")

    out = np.empty_like(flat)
    out[order] = total
    return float(out[0]) if scalar_input else out.reshape(zs.shape)


def _ml_scalar_direct(alpha: float, z: float, tol: float, max_terms: int) -> float:
    # Direct float summation; used for z < 0 where terms alternate in sign.
    total = 1.0
    power = 1.0
    run = 0
    for k in range(1, max_terms + 1):
        power *= z
        term = power * reciprocal_gamma(k * alpha + 1.0)
        total += term
        if not math.isfinite(total):
            raise NonConvergenceError(
                f"ml series overflowed at term {k} (alpha={alpha}, z={z})")
        if abs(term) <= tol * abs(total):
            run += 1
            if run == _CONVERGED_RUN:
                return total
        else:
            run = 0
    raise NonConvergenceError(
        f"ml series did not converge within {max_terms} terms (alpha={alpha}, z={z})")


def ml_scalar(alpha: float, z, tol: float = ML_SERIES_TOL,
              max_terms: int = ML_MAX_TERMS):
    """One-parameter Mittag-Leffler function E_alpha(z).

    Accepts a scalar or an ndarray of arguments. Nonnegative arguments go
    through the log-domain series (may return inf when the value exceeds
    float64 range); negative arguments use direct summation.
    """
    if alpha <= 0:
        raise DomainError(f"ml order must be positive, got {alpha!r}")
    zs = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(zs)):
        raise DomainError("ml_scalar requires finite arguments")
    if zs.ndim == 0:
        zf = float(zs)
        if zf < 0:
            return _ml_scalar_direct(alpha, zf, tol, max_terms)
        with np.errstate(over="ignore"):
            return float(np.exp(ml_scalar_log(alpha, zf, tol, max_terms)))
    out = np.empty_like(zs)
    neg = zs < 0
    if neg.any():
        out[neg] = [_ml_scalar_direct(alpha, float(v), tol, max_terms)
                    for v in zs[neg]]
    if (~neg).any():
        with np.errstate(over="ignore"):
            out[~neg] = np.exp(ml_scalar_log(alpha, zs[~neg], tol, max_terms))
    return out


@dataclass(frozen=True)
class SampledFunction:
    """A real-valued function sampled on a strictly increasing grid from 0."""

    grid: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if grid.ndim != 1 or grid.size < 2:
            raise ValueError("grid must be a 1-d array with at least two points")
        if grid[0] != 0.0:
            raise ValueError("grid must start at 0")
        if not np.all(np.diff(grid) > 0):
            raise ValueError("grid must be strictly increasing")
        if values.shape != grid.shape:
            raise ValueError(
                f"values shape {values.shape} does not match grid shape {grid.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("sampled values must be finite")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)

    @property
    def n_points(self) -> int:
        return self.grid.size

    def is_uniform(self, rtol: float = 1e-12) -> bool:
        steps = np.diff(self.grid)
        return bool(np.all(np.abs(steps - steps[0]) <= rtol * steps[0]))


def rl_integral(alpha: float, f: SampledFunction, t_index: int) -> float:
    """Riemann-Liouville integral I^alpha f at grid point ``t_index``.

    Left-endpoint product rule with exact per-cell kernel integrals, so the
    integrable singularity at r -> t never enters the weights.
    """
    if alpha <= 0:
        raise DomainError(f"fractional order must be positive, got {alpha!r}")
    n = int(t_index)
    if n < 0 or n >= f.n_points:
        raise ValueError(f"t_index {t_index} outside grid of {f.n_points} points")
    if n == 0:
        return 0.0
    t = f.grid[n]
    lags = t - f.grid[: n + 1]  # decreasing, last entry 0
    weights = (lags[:-1] ** alpha - lags[1:] ** alpha) / gamma_fn(alpha + 1.0)
    return float(weights @ f.values[:n])


def rl_integral_all(alpha: float, f: SampledFunction) -> np.ndarray:
    """I^alpha f evaluated at every grid point.

    On uniform grids the weights depend on the lag only, so all values come
    from one discrete convolution; otherwise falls back to per-index sums.
    """
    if alpha <= 0:
        raise DomainError(f"fractional order must be positive, got {alpha!r}")
    n_pts = f.n_points
    if not f.is_uniform():
        return np.array([rl_integral(alpha, f, i) for i in range(n_pts)])
    h = float(f.grid[1] - f.grid[0])
    k = np.arange(n_pts, dtype=float)
    w = np.zeros(n_pts)
    w[1:] = (h ** alpha) * (k[1:] ** alpha - k[:-1] ** alpha) / gamma_fn(alpha + 1.0)
    return np.convolve(f.values, w)[:n_pts]


def caputo_identity_residual(alpha: float, f: SampledFunction,
                             df_caputo: SampledFunction) -> float:
    """Max-norm residual of I^alpha applied to a claimed Caputo derivative.

    For alpha in (0, 1) the fractional integral of the Caputo derivative
    recovers f(t) - f(0); the returned residual is
    max_n | I^alpha df_caputo (t_n) - (f(t_n) - f(0)) |.
    """
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"identity check requires alpha in (0, 1), got {alpha!r}")
    if f.grid.shape != df_caputo.grid.shape or not np.array_equal(f.grid, df_caputo.grid):
        raise ValueError("f and df_caputo must share the same grid")
    recovered = rl_integral_all(alpha, df_caputo)
    return float(np.max(np.abs(recovered - (f.values - f.values[0]))))
