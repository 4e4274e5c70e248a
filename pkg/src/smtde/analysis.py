"""Mean-square estimators, contraction constants, and the separation and
continuity experiments.

The weighted maximum norm used throughout is

    |xi|_w^2 = sup_t  E |xi(t)|^2 / E_{2a-1}(w t^(2a-1)),

whose denominator grows fast enough to make the mild-form integral operator
a contraction once w exceeds the threshold

    w > 4 Gamma(2a-1) M^2 (1 + L_b^2 T + L_s^2),

with M the sup of the kernel norm over [0, T]. At that threshold the
contraction constant

    zeta = 3 Gamma(2a-1) M^2 (1 + L_b^2 T + L_s^2) / w

equals 3/4 by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (DegenerateExperimentError, DomainError, EnsembleError,
                     ValidationError)
from .mlmatrix import MLParams, QTable, ml_nonperm_grid
from .solvers import (BrownianDriver, InitialState, PathEnsemble, ProblemSpec,
                      _simulate_with_tables, constant_ensemble, coupled_pair,
                      em_kernel_tables, mild_kernel_tables, picard_apply)
from .specfun import gamma_fn, ml_scalar_log

FIT_WINDOW_START = 1.0
FITTED_EXPONENT_SLACK = 0.25
BOOTSTRAP_RESAMPLES = 200
SUP_GRID_POINTS = 1000


@dataclass(frozen=True)
class WeightedNormParams:
    omega: float
    alpha: float

    def __post_init__(self):
        if not self.omega > 0:
            raise DomainError(f"omega must be positive, got {self.omega!r}")
        if not 0.5 < self.alpha < 1.0:
            raise DomainError(f"alpha must be in (1/2, 1), got {self.alpha!r}")


def _joint_valid(*ensembles: PathEnsemble) -> np.ndarray:
    mask = ensembles[0].valid_mask
    for e in ensembles[1:]:
        mask = mask & e.valid_mask
    if not mask.any():
        raise EnsembleError("all paths flagged; no valid statistics")
    return mask


def ms_norm(e: PathEnsemble, t_index: int) -> tuple[float, float]:
    """Sample mean of |X(t)|^2 across paths and its standard error."""
    if e.n_paths < 2:
        raise ValidationError("ms_norm needs an ensemble with at least 2 paths")
    n = int(t_index)
    if n < 0 or n > e.n_steps:
        raise ValueError(f"t_index {t_index} outside grid")
    mask = _joint_valid(e)
    sq = np.sum(e.paths[mask, n, :] ** 2, axis=1)
    est = float(np.mean(sq))
    se = float(np.std(sq, ddof=1) / math.sqrt(sq.size)) if sq.size > 1 else 0.0
    return est, se


def ms_distance_series(e: PathEnsemble, e2: PathEnsemble) -> tuple[np.ndarray, np.ndarray]:
    """Per-time mean of |X(t) - Y(t)|^2 with standard errors."""
    if e.paths.shape != e2.paths.shape or not np.array_equal(e.grid, e2.grid):
        raise ValidationError("ensembles must share the same grid and shape")
    mask = _joint_valid(e, e2)
    sq = np.sum((e.paths[mask] - e2.paths[mask]) ** 2, axis=2)  # (n_valid, n_t)
    est = sq.mean(axis=0)
    n_valid = sq.shape[0]
    if n_valid > 1:
        se = sq.std(axis=0, ddof=1) / math.sqrt(n_valid)
    else:
        se = np.zeros_like(est)
    return est, se


# Large contraction weights push the discounting denominators far beyond
# float64 range (log E ~ 10^5 is routine), so the norm is formed in log space.
_DENOM_MAX_TERMS = 10_000_000


def _log_weight_denominators(w: WeightedNormParams, times: np.ndarray) -> np.ndarray:
    order = 2.0 * w.alpha - 1.0
    return ml_scalar_log(order, w.omega * times ** order,
                         max_terms=_DENOM_MAX_TERMS)


def log_weighted_norm(e: PathEnsemble, e2: PathEnsemble,
                      w: WeightedNormParams) -> float:
    """log of the weighted maximum norm; -inf for identical ensembles."""
    d2, _ = ms_distance_series(e, e2)
    log_denom = _log_weight_denominators(w, e.grid)
    with np.errstate(divide="ignore"):
        return float(np.max(np.log(d2) - log_denom))


def weighted_norm(e: PathEnsemble, e2: PathEnsemble, w: WeightedNormParams) -> float:
    """sup_t of the mean-square distance discounted by E_{2a-1}(w t^(2a-1)).

    May underflow to 0.0 for large omega; ratio-style consumers should use
    ``log_weighted_norm``.
    """
    return float(np.exp(log_weighted_norm(e, e2, w)))


def omega_threshold(p: ProblemSpec, m_sup: float) -> float:
    """Weight above which the mild-form operator is a contraction."""
    if m_sup < 0:
        raise DomainError("m_sup must be nonnegative")
    factor = 1.0 + p.lip_b ** 2 * p.horizon + p.lip_sigma ** 2
    return 4.0 * gamma_fn(2.0 * p.alpha - 1.0) * m_sup ** 2 * factor


def zeta_const(p: ProblemSpec, m_sup: float, omega: float) -> float:
    """Contraction constant of the mild-form operator in the omega-norm."""
    if not omega > 0:
        raise DomainError(f"omega must be positive, got {omega!r}")
    factor = 1.0 + p.lip_b ** 2 * p.horizon + p.lip_sigma ** 2
    return 3.0 * gamma_fn(2.0 * p.alpha - 1.0) * m_sup ** 2 * factor / omega


def ml_sup_norm(p: ProblemSpec, n_grid: int = SUP_GRID_POINTS) -> tuple[float, float]:
    """Grid maximum of the kernel norm over [0, T], with a 2x refinement gap.

    Returns (sup at 2*n_grid resolution, relative gap against n_grid).
    """
    q = QTable(p.a_mat, p.b_mat)
    params = MLParams(rho=p.alpha - p.beta, sigma_exp=p.alpha, delta=p.alpha)
    ts = np.linspace(0.0, p.horizon, 2 * n_grid + 1)
    values, _ = ml_nonperm_grid(q, params, ts)
    norms = np.abs(values).sum(axis=2).max(axis=1)
    fine = float(norms.max())
    coarse = float(norms[::2].max())
    gap = abs(fine - coarse) / fine if fine > 0 else 0.0
    return fine, gap


def init_term_sup_sq(p: ProblemSpec, n_grid: int = SUP_GRID_POINTS) -> float:
    """sup_t of |I + t^alpha E_{a+1}(t) B|^2 over [0, T] (scalar bound)."""
    q = QTable(p.a_mat, p.b_mat)
    params = MLParams(rho=p.alpha - p.beta, sigma_exp=p.alpha, delta=p.alpha + 1.0)
    ts = np.linspace(0.0, p.horizon, 2 * n_grid + 1)
    values, _ = ml_nonperm_grid(q, params, ts)
    mats = np.eye(p.dim) + ts[:, None, None] ** p.alpha * (values @ p.b_mat)
    norms = np.abs(mats).sum(axis=2).max(axis=1)
    return float(norms.max()) ** 2


@dataclass(frozen=True)
class LemmaCheck:
    lhs: float
    rhs: float
    holds: bool


def convolution_bound_check(alpha: float, omega: float, t: float, n_quad: int) -> LemmaCheck:
    """Numerical check of the convolution bound

        (w/Gamma(2a-1)) int_0^t (t-r)^(2a-2) E_{2a-1}(w r^(2a-1)) dr
            <= E_{2a-1}(w t^(2a-1)).

    Both sides are evaluated in log space because E can exceed float64 range;
    the returned lhs/rhs floats may be inf in that regime but ``holds`` is
    decided on the logs. The quadrature holds the integrand at left endpoints
    (an underestimate, since it is increasing) and integrates the singular
    kernel exactly per cell.
    """
    if not 0.5 < alpha < 1.0:
        raise DomainError(f"alpha must be in (1/2, 1), got {alpha!r}")
    if not omega > 0:
        raise DomainError(f"omega must be positive, got {omega!r}")
    if not t > 0:
        raise DomainError(f"t must be positive, got {t!r}")
    n_quad = int(n_quad)
    if n_quad < 1:
        raise ValidationError("n_quad must be >= 1")
    order = 2.0 * alpha - 1.0
    r = np.linspace(0.0, t, n_quad + 1)
    lags = t - r
    cells = (lags[:-1] ** order - lags[1:] ** order) / order  # exact kernel integrals
    log_e = ml_scalar_log(order, omega * r[:-1] ** order)
    with np.errstate(divide="ignore"):
        log_terms = np.log(cells) + log_e
    log_lhs = (math.log(omega) - math.lgamma(order)
               + float(np.logaddexp.reduce(log_terms)))
    log_rhs = float(ml_scalar_log(order, omega * t ** order))
    holds = log_lhs <= log_rhs + math.log1p(1e-6)
    with np.errstate(over="ignore"):
        return LemmaCheck(lhs=float(np.exp(log_lhs)), rhs=float(np.exp(log_rhs)),
                          holds=bool(holds))


@dataclass
class ContractionReport:
    """Observed Picard contraction data plus the analytic constants.

    ``log_weighted_diffs`` holds log |Y_{k+1} - Y_k|_w^2 per iterate (-inf for
    an exact fixed point); the ratios are formed from the logs so they stay
    meaningful when the norms themselves underflow.
    """

    m_sup: float
    omega_min: float
    omega_used: float
    zeta: float
    c_const: float
    iterate_ratios: list[float] = field(default_factory=list)
    log_weighted_diffs: list[float] = field(default_factory=list)
    immediate_convergence: bool = False


def contraction_report(p: ProblemSpec, init: InitialState, drv: BrownianDriver,
                       n_iter: int, n_paths: int, omega: float | None = None,
                       threads: int = 1) -> ContractionReport:
    """Run Picard iterates Y_{k+1} = T Y_k from the constant path Y_0 = eta
    and record successive weighted-norm ratios against the analytic constant.
    """
    if n_iter < 3:
        raise ValidationError("n_iter must be >= 3")
    m_sup, _ = ml_sup_norm(p)
    omega_min = omega_threshold(p, m_sup)
    omega_used = float(omega) if omega is not None else omega_min
    zeta = zeta_const(p, m_sup, omega_used)
    c_const = init_term_sup_sq(p)
    w = WeightedNormParams(omega=omega_used, alpha=p.alpha)

    tables = mild_kernel_tables(p, drv.n_steps)
    current = constant_ensemble(p, init, drv, n_paths)
    log_diffs: list[float] = []
    for _ in range(n_iter):
        nxt = picard_apply(p, init, current, threads=threads, tables=tables)
        log_diffs.append(log_weighted_norm(nxt, current, w))
        current = nxt

    report = ContractionReport(m_sup=m_sup, omega_min=omega_min,
                               omega_used=omega_used, zeta=zeta, c_const=c_const,
                               log_weighted_diffs=log_diffs)
    if log_diffs[0] == -math.inf:
        report.immediate_convergence = True
        return report
    for prev, nxt in zip(log_diffs[:-1], log_diffs[1:]):
        if prev == -math.inf:
            break
        report.iterate_ratios.append(math.exp(nxt - prev))
    return report


@dataclass
class SeparationReport:
    """Time-resolved coupled distance and its fitted decay exponent."""

    times: np.ndarray
    ms_distance: np.ndarray
    std_errors: np.ndarray
    scaling_exponent: float
    scaled: np.ndarray
    fitted_exponent: float
    fitted_ci: tuple[float, float]
    kappa_hat: float
    alpha: float
    consistent_with_lower_bound: bool
    lambda_gt_alpha: bool
    lambda_gt_alpha_over_1_minus_alpha: bool
    positive_3se_from_fit_start: bool


def _fit_decay_exponent(times: np.ndarray, d2: np.ndarray) -> tuple[float, float]:
    """OLS fit of log d(t) = log kappa - p log t with d = sqrt(ms distance)."""
    d = np.sqrt(d2)
    slope, intercept = np.polyfit(np.log(times), np.log(d), 1)
    return float(-slope), float(math.exp(intercept))


def separation_experiment(p: ProblemSpec, eta: InitialState, gamma: InitialState,
                          drv: BrownianDriver, scaling_exponent: float,
                          n_paths: int, scheme: str = "em", threads: int = 1,
                          n_boot: int = BOOTSTRAP_RESAMPLES) -> SeparationReport:
    """Coupled two-initial-value run with a log-log decay-rate fit.

    The fit window starts at t = 1 to skip small-t transients; the confidence
    interval comes from a seeded path bootstrap. A fitted exponent p at or
    below alpha + 0.25 is recorded as consistent with the expected lower bound
    on the separation rate (distances should decay no faster than t^(-alpha)
    up to desk-scale slack; growth shows up as negative p).
    """
    if not scaling_exponent > 0:
        raise ValidationError("scaling exponent must be positive")
    if p.horizon < 4.0:
        raise ValidationError("separation experiment needs horizon >= 4 "
                              "for a meaningful fit window")
    if eta.is_deterministic and gamma.is_deterministic and \
            np.array_equal(eta.eta, gamma.eta):
        raise DegenerateExperimentError("eta == gamma yields zero separation")

    e1, e2 = coupled_pair(p, eta, gamma, drv, n_paths, scheme=scheme, threads=threads)
    d2, se = ms_distance_series(e1, e2)
    if not np.any(d2 > 0):
        raise DegenerateExperimentError("coupled distance is identically zero")

    window = e1.grid >= FIT_WINDOW_START
    if window.sum() < 2:
        raise ValidationError("fit window holds fewer than two grid points")
    t_win = e1.grid[window]
    p_hat, kappa_hat = _fit_decay_exponent(t_win, d2[window])

    mask = _joint_valid(e1, e2)
    sq = np.sum((e1.paths[mask][:, window, :] - e2.paths[mask][:, window, :]) ** 2,
                axis=2)
    rng = np.random.Generator(np.random.Philox(key=[drv.seed, 0xB007]))
    n_valid = sq.shape[0]
    boot = np.empty(n_boot)
    for i in range(n_boot):
        idx = rng.integers(0, n_valid, n_valid)
        boot[i], _ = _fit_decay_exponent(t_win, sq[idx].mean(axis=0))
    ci = (float(np.quantile(boot, 0.025)), float(np.quantile(boot, 0.975)))

    with np.errstate(invalid="ignore"):
        scaled = e1.grid ** scaling_exponent * np.sqrt(d2)
    positive = bool(np.all(d2[window] - 3.0 * se[window] > 0))
    return SeparationReport(
        times=e1.grid, ms_distance=d2, std_errors=se,
        scaling_exponent=scaling_exponent, scaled=scaled,
        fitted_exponent=p_hat, fitted_ci=ci, kappa_hat=kappa_hat,
        alpha=p.alpha,
        consistent_with_lower_bound=bool(p_hat <= p.alpha + FITTED_EXPONENT_SLACK),
        lambda_gt_alpha=bool(scaling_exponent > p.alpha),
        lambda_gt_alpha_over_1_minus_alpha=bool(
            scaling_exponent > p.alpha / (1.0 - p.alpha)),
        positive_3se_from_fit_start=positive,
    )


@dataclass(frozen=True)
class ContinuityPoint:
    offset: float
    sup_ms_distance: float
    ratio: float


def continuity_experiment(p: ProblemSpec, eta: InitialState, offsets,
                          drv: BrownianDriver, n_paths: int,
                          direction=None, scheme: str = "em",
                          threads: int = 1) -> list[ContinuityPoint]:
    """sup-t mean-square distance per initial offset, against a shared base run.

    For each offset the perturbed initial value is eta + offset * u along a
    fixed unit direction u; the reported ratio sup_t d^2 / |eta - gamma|^2
    should stay bounded across offsets when the solution map is continuous in
    the initial data.
    """
    offsets = [float(o) for o in offsets]
    if not offsets or any(o <= 0 for o in offsets):
        raise ValidationError("offsets must be positive")
    if any(b >= a for a, b in zip(offsets[:-1], offsets[1:])):
        raise ValidationError("offsets must be strictly decreasing")
    if not eta.is_deterministic:
        raise ValidationError("continuity experiment needs a deterministic eta")

    if direction is None:
        u = np.ones(p.dim) / math.sqrt(p.dim)
    else:
        u = np.asarray(direction, dtype=float)
        norm = float(np.linalg.norm(u))
        if u.shape != (p.dim,) or norm == 0:
            raise ValidationError("direction must be a nonzero vector of problem dim")
        u = u / norm

    if scheme == "em":
        tables = em_kernel_tables(p, drv.n_steps)
    elif scheme == "mild":
        tables = mild_kernel_tables(p, drv.n_steps)
    else:
        raise ValidationError(f"unknown scheme {scheme!r}")

    base = _simulate_with_tables(p, eta, drv, n_paths, tables, threads=threads)
    rows: list[ContinuityPoint] = []
    for off in offsets:
        gamma = InitialState.deterministic(eta.eta + off * u)
        shifted = _simulate_with_tables(p, gamma, drv, n_paths, tables,
                                        threads=threads)
        d2, _ = ms_distance_series(base, shifted)
        sup_d2 = float(np.max(d2))
        rows.append(ContinuityPoint(offset=off, sup_ms_distance=sup_d2,
                                    ratio=sup_d2 / off ** 2))
    return rows
