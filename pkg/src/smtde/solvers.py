"""Problem definition, Brownian drivers, and path-ensemble solvers.

The model is a two-order Caputo stochastic system

    D^alpha X(t) - A D^beta X(t) - B X(t) = b(t, X(t)) + sigma(t, X(t)) dW/dt,
    X(0) = eta,

with 1/2 < alpha < 1 and 0 < beta < alpha, a scalar Brownian motion W, and
globally Lipschitz drift b and diffusion sigma. Two explicit schemes are
provided, both on uniform grids:

* ``simulate_em`` discretizes the equivalent second-kind Volterra equation

      X(t) = eta - A t^(alpha-beta)/Gamma(alpha-beta+1) eta
           + A/Gamma(alpha-beta) int (t-r)^(alpha-beta-1) X dr
           + B/Gamma(alpha)      int (t-r)^(alpha-1)      X dr
           + 1/Gamma(alpha)      int (t-r)^(alpha-1)      b  dr
           + 1/Gamma(alpha)      int (t-r)^(alpha-1)      sigma dW

  with exact-kernel product weights for the memory and drift terms and a
  left-point kernel value inside the Ito sum.

* ``simulate_mild`` discretizes the variation-of-constants (mild) form

      X(t) = (I + t^alpha E_{a+1}(t) B) eta
           + int (t-r)^(alpha-1) E_a(t-r) b(r, X(r)) dr
           + int (t-r)^(alpha-1) E_a(t-r) sigma(r, X(r)) dW(r)

  where E_d is the bivariate matrix Mittag-Leffler kernel with exponents
  (alpha-beta, alpha) and offset d. Drift cells are integrated exactly via
  F(s) = s^alpha E_{a+1}(s), whose lag differences are the exact cell
  integrals of the kernel; the diffusion term keeps the non-anticipating
  left-point kernel value.

Both schemes share one stepping core, so with A = B = 0 they perform
identical floating-point work and produce bit-identical paths.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import EnsembleError, ValidationError
from .linalg import as_matrix
from .mlmatrix import DEFAULT_MAX_DIAGONALS, MLParams, QTable, ml_nonperm_grid
from .specfun import reciprocal_gamma

# Paths are simulated in fixed-size chunks regardless of thread count so that
# results are independent of the parallel partition.
CHUNK_PATHS = 2048
FLAGGED_FRACTION_LIMIT = 0.10


@dataclass(frozen=True)
class ProblemSpec:
    """Coefficients, nonlinearity, and horizon of one problem instance.

    ``drift`` and ``diffusion`` map (t, x) -> vector and must broadcast over
    trailing axes of x (x arrives with shape (dim,) or (dim, n_paths)).
    ``lip_b`` and ``lip_sigma`` are caller-asserted Lipschitz constants.
    """

    alpha: float
    beta: float
    a_mat: np.ndarray
    b_mat: np.ndarray
    drift: Callable
    diffusion: Callable
    lip_b: float
    lip_sigma: float
    horizon: float
    dim: int

    def __post_init__(self):
        if not 0.5 < self.alpha < 1.0:
            raise ValidationError(f"alpha must be in (1/2, 1), got {self.alpha!r}")
        if not 0.0 < self.beta:
            raise ValidationError(f"beta must be positive, got {self.beta!r}")
        if not self.beta < self.alpha:
            raise ValidationError("beta must be < alpha")
        a = as_matrix(self.a_mat)
        b = as_matrix(self.b_mat)
        if a.shape != (self.dim, self.dim) or b.shape != (self.dim, self.dim):
            raise ValidationError(
                f"coefficient matrices must be {self.dim}x{self.dim}")
        if self.lip_b < 0 or self.lip_sigma < 0:
            raise ValidationError("Lipschitz constants must be nonnegative")
        if not self.horizon > 0:
            raise ValidationError(f"horizon must be positive, got {self.horizon!r}")
        object.__setattr__(self, "a_mat", a.copy())
        object.__setattr__(self, "b_mat", b.copy())


class InitialState:
    """Deterministic vector or independent-Gaussian initial condition."""

    def __init__(self, eta=None, mean=None, std=None):
        if (eta is None) == (mean is None):
            raise ValidationError("specify exactly one of eta (deterministic) or mean/std")
        if eta is not None:
            vec = np.asarray(eta, dtype=float)
            if vec.ndim != 1 or not np.all(np.isfinite(vec)):
                raise ValidationError("eta must be a finite vector")
            self.eta = vec.copy()
            self.mean = None
            self.std = None
        else:
            mvec = np.asarray(mean, dtype=float)
            svec = np.broadcast_to(np.asarray(std, dtype=float), mvec.shape).copy()
            if mvec.ndim != 1 or not np.all(np.isfinite(mvec)):
                raise ValidationError("mean must be a finite vector")
            if not np.all(np.isfinite(svec)) or np.any(svec < 0):
                raise ValidationError("std must be finite and nonnegative")
            self.eta = None
            self.mean = mvec
            self.std = svec

    @classmethod
    def deterministic(cls, eta) -> "InitialState":
        return cls(eta=eta)

    @classmethod
    def gaussian(cls, mean, std) -> "InitialState":
        return cls(mean=mean, std=std)

    @property
    def is_deterministic(self) -> bool:
        return self.eta is not None

    @property
    def dim(self) -> int:
        return self.eta.size if self.eta is not None else self.mean.size

    def sample_block(self, driver: "BrownianDriver", path_ids) -> np.ndarray:
        """Initial values for the given paths, shape (dim, n_paths)."""
        n = len(path_ids)
        if self.is_deterministic:
            return np.repeat(self.eta[:, None], n, axis=1)
        z = driver.initial_normals(path_ids, self.dim)  # (n, dim)
        return (self.mean[None, :] + self.std[None, :] * z).T


class BrownianDriver:
    """Deterministic per-path scalar Brownian increment source.

    Each path owns a counter-based RNG stream keyed by (seed, path_id), so
    increments are a pure function of (seed, path_id, step) and do not depend
    on ensemble size or on how paths are partitioned into chunks. Initial-value
    draws come from a disjoint counter region of the same stream.
    """

    def __init__(self, seed: int, n_steps: int):
        seed = int(seed)
        n_steps = int(n_steps)
        if seed < 0 or seed >= 2 ** 63:
            raise ValidationError(f"seed must be in [0, 2^63), got {seed!r}")
        if n_steps < 1:
            raise ValidationError(f"n_steps must be >= 1, got {n_steps!r}")
        self.seed = seed
        self.n_steps = n_steps

    def _generator(self, path_id: int, init_region: bool = False) -> np.random.Generator:
        bitgen = np.random.Philox(key=[self.seed, int(path_id)])
        if init_region:
            bitgen.advance(2 ** 96)
        return np.random.Generator(bitgen)

    def standard_normals(self, path_id: int) -> np.ndarray:
        return self._generator(path_id).standard_normal(self.n_steps)

    def increments_block(self, path_ids, h: float) -> np.ndarray:
        """Brownian increments dW ~ N(0, h) of shape (n_paths, n_steps)."""
        out = np.empty((len(path_ids), self.n_steps))
        for i, pid in enumerate(path_ids):
            out[i] = self.standard_normals(pid)
        out *= math.sqrt(h)
        return out

    def initial_normals(self, path_ids, count: int) -> np.ndarray:
        out = np.empty((len(path_ids), count))
        for i, pid in enumerate(path_ids):
            out[i] = self._generator(pid, init_region=True).standard_normal(count)
        return out


@dataclass
class PathEnsemble:
    """Sample paths on a uniform grid plus the increments that drove them.

    ``paths`` has shape (n_paths, n_steps + 1, dim); ``flags`` marks paths
    that blew up (non-finite values anywhere along the trajectory).
    """

    grid: np.ndarray
    paths: np.ndarray
    increments: np.ndarray
    flags: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def n_paths(self) -> int:
        return self.paths.shape[0]

    @property
    def n_steps(self) -> int:
        return self.paths.shape[1] - 1

    @property
    def dim(self) -> int:
        return self.paths.shape[2]

    @property
    def valid_mask(self) -> np.ndarray:
        return ~self.flags


@dataclass(frozen=True)
class KernelTables:
    """Lag-indexed kernel tables consumed by the shared stepping core.

    ``init_mats[n]`` multiplies eta in the step-n initial term; ``kbig[k]``
    stacks the lag-k weights for the X-memory, drift, and diffusion sums as
    one (dim, 3*dim) block. Lag 0 is never used (explicit scheme) and is zero.
    """

    init_mats: np.ndarray  # (n_steps+1, dim, dim)
    kbig: np.ndarray       # (n_steps+1, dim, 3*dim)
    scheme: str


def _difference_weights(cumulative: np.ndarray) -> np.ndarray:
    w = np.zeros_like(cumulative)
    w[1:] = cumulative[1:] - cumulative[:-1]
    return w


def em_kernel_tables(p: ProblemSpec, n_steps: int) -> KernelTables:
    """Exact-kernel product weights for the Volterra-form scheme."""
    nd = p.dim
    h = p.horizon / n_steps
    s = h * np.arange(n_steps + 1)
    eye = np.eye(nd)

    f_ab = s ** (p.alpha - p.beta) * reciprocal_gamma(p.alpha - p.beta + 1.0)
    f_a = s ** p.alpha * reciprocal_gamma(p.alpha + 1.0)
    w_ab = _difference_weights(f_ab)
    w_a = _difference_weights(f_a)

    kx = w_ab[:, None, None] * p.a_mat + w_a[:, None, None] * p.b_mat
    kb = w_a[:, None, None] * eye
    ks = np.zeros((n_steps + 1, nd, nd))
    ks[1:] = (s[1:] ** (p.alpha - 1.0) * reciprocal_gamma(p.alpha))[:, None, None] * eye

    init_mats = eye - f_ab[:, None, None] * p.a_mat
    kbig = np.concatenate([kx, kb, ks], axis=2)
    return KernelTables(init_mats=init_mats, kbig=kbig, scheme="em")


def mild_kernel_tables(p: ProblemSpec, n_steps: int,
                       max_diagonals: int | None = None) -> KernelTables:
    """Matrix Mittag-Leffler kernel tables for the mild-form scheme."""
    nd = p.dim
    h = p.horizon / n_steps
    s = h * np.arange(n_steps + 1)
    eye = np.eye(nd)

    depth = DEFAULT_MAX_DIAGONALS if max_diagonals is None else int(max_diagonals)
    q = QTable(p.a_mat, p.b_mat, max_total=depth)
    kern = MLParams(rho=p.alpha - p.beta, sigma_exp=p.alpha, delta=p.alpha)
    kern_int = MLParams(rho=p.alpha - p.beta, sigma_exp=p.alpha, delta=p.alpha + 1.0)
    e_a, _ = ml_nonperm_grid(q, kern, s, max_diagonals=depth)      # (n+1, nd, nd)
    e_a1, _ = ml_nonperm_grid(q, kern_int, s, max_diagonals=depth)

    f_ml = s[:, None, None] ** p.alpha * e_a1               # exact cell cumulative
    kb = _difference_weights(f_ml)
    kx = np.zeros_like(kb)
    ks = np.zeros_like(kb)
    ks[1:] = (s[1:] ** (p.alpha - 1.0))[:, None, None] * e_a[1:]

    init_mats = eye + s[:, None, None] ** p.alpha * (e_a1 @ p.b_mat)
    kbig = np.concatenate([kx, kb, ks], axis=2)
    return KernelTables(init_mats=init_mats, kbig=kbig, scheme="mild")


def _advance_chunk(tables: KernelTables, p: ProblemSpec, times: np.ndarray,
                   x0: np.ndarray, dw: np.ndarray) -> np.ndarray:
    """Explicit time stepping for one chunk of paths.

    x0 has shape (dim, n_paths); dw has shape (n_paths, n_steps). Returns
    paths of shape (n_steps + 1, dim, n_paths). The lag sums are evaluated as
    one (dim, n*3*dim) x (n*3*dim, n_paths) product per step over a combined
    [X; b; sigma*dW] history.
    """
    nd = p.dim
    n_steps = times.size - 1
    n_chunk = x0.shape[1]
    x = np.empty((n_steps + 1, nd, n_chunk))
    x[0] = x0
    hist = np.zeros((n_steps, 3 * nd, n_chunk))
    init_vecs = tables.init_mats @ x0  # (n+1, nd, n_chunk)
    kbig = tables.kbig
    with np.errstate(over="ignore", invalid="ignore"):
        for n in range(1, n_steps + 1):
            j = n - 1
            xj = x[j]
            hist[j, :nd] = xj
            hist[j, nd:2 * nd] = p.drift(times[j], xj)
            hist[j, 2 * nd:] = p.diffusion(times[j], xj) * dw[:, j]
            krev = kbig[1:n + 1][::-1]
            a2 = np.ascontiguousarray(krev.transpose(1, 0, 2)).reshape(nd, n * 3 * nd)
            x[n] = init_vecs[n] + a2 @ hist[:n].reshape(n * 3 * nd, n_chunk)
    return x


def _apply_chunk(tables: KernelTables, p: ProblemSpec, times: np.ndarray,
                 y: np.ndarray, dw: np.ndarray) -> np.ndarray:
    """One application of the mild-form operator to known paths (no feedback).

    y has shape (n_steps + 1, dim, n_paths); the history is built from y
    instead of the evolving output, everything else matches _advance_chunk.
    """
    nd = p.dim
    n_steps = times.size - 1
    n_chunk = y.shape[2]
    out = np.empty_like(y)
    hist = np.zeros((n_steps, 3 * nd, n_chunk))
    init_vecs = tables.init_mats @ y[0]
    out[0] = init_vecs[0]
    kbig = tables.kbig
    with np.errstate(over="ignore", invalid="ignore"):
        for j in range(n_steps):
            yj = y[j]
            hist[j, :nd] = yj
            hist[j, nd:2 * nd] = p.drift(times[j], yj)
            hist[j, 2 * nd:] = p.diffusion(times[j], yj) * dw[:, j]
        for n in range(1, n_steps + 1):
            krev = kbig[1:n + 1][::-1]
            a2 = np.ascontiguousarray(krev.transpose(1, 0, 2)).reshape(nd, n * 3 * nd)
            out[n] = init_vecs[n] + a2 @ hist[:n].reshape(n * 3 * nd, n_chunk)
    return out


def _chunk_spans(n_paths: int):
    return [(lo, min(lo + CHUNK_PATHS, n_paths)) for lo in range(0, n_paths, CHUNK_PATHS)]


def _run_chunked(n_paths: int, threads: int, worker) -> None:
    spans = _chunk_spans(n_paths)
    if threads <= 1 or len(spans) == 1:
        for lo, hi in spans:
            worker(lo, hi)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(lambda span: worker(*span), spans))


def _finalize_ensemble(grid, paths, increments, meta) -> PathEnsemble:
    flags = ~np.isfinite(paths).all(axis=(1, 2))
    frac = float(flags.mean()) if flags.size else 0.0
    if frac > FLAGGED_FRACTION_LIMIT:
        raise EnsembleError(
            f"{frac:.1%} of paths blew up (limit {FLAGGED_FRACTION_LIMIT:.0%})")
    return PathEnsemble(grid=grid, paths=paths, increments=increments,
                        flags=flags, meta=meta)


def _simulate_with_tables(p: ProblemSpec, init: InitialState, drv: BrownianDriver,
                          n_paths: int, tables: KernelTables,
                          threads: int = 1) -> PathEnsemble:
    if init.dim != p.dim:
        raise ValidationError(f"initial state dim {init.dim} != problem dim {p.dim}")
    if n_paths < 1:
        raise ValidationError("n_paths must be >= 1")
    n_steps = drv.n_steps
    h = p.horizon / n_steps
    grid = h * np.arange(n_steps + 1)
    paths = np.empty((n_paths, n_steps + 1, p.dim))
    increments = np.empty((n_paths, n_steps))

    def worker(lo: int, hi: int) -> None:
        ids = range(lo, hi)
        dw = drv.increments_block(ids, h)
        x0 = init.sample_block(drv, ids)
        x = _advance_chunk(tables, p, grid, x0, dw)
        paths[lo:hi] = x.transpose(2, 0, 1)
        increments[lo:hi] = dw

    _run_chunked(n_paths, threads, worker)
    meta = {"seed": drv.seed, "scheme": tables.scheme, "n_steps": n_steps}
    return _finalize_ensemble(grid, paths, increments, meta)


def simulate_em(p: ProblemSpec, init: InitialState, drv: BrownianDriver,
                n_paths: int, threads: int = 1) -> PathEnsemble:
    """Explicit Euler-Maruyama scheme on the Volterra integral form."""
    tables = em_kernel_tables(p, drv.n_steps)
    return _simulate_with_tables(p, init, drv, n_paths, tables, threads=threads)


def simulate_mild(p: ProblemSpec, init: InitialState, drv: BrownianDriver,
                  n_paths: int, threads: int = 1) -> PathEnsemble:
    """Explicit scheme on the mild (matrix Mittag-Leffler kernel) form."""
    tables = mild_kernel_tables(p, drv.n_steps)
    return _simulate_with_tables(p, init, drv, n_paths, tables, threads=threads)


def constant_ensemble(p: ProblemSpec, init: InitialState, drv: BrownianDriver,
                      n_paths: int) -> PathEnsemble:
    """Paths frozen at the initial value, with driver increments attached.

    Serves as the Y_0 iterate for Picard iteration: the stochastic term of the
    operator reuses the stored increments.
    """
    if init.dim != p.dim:
        raise ValidationError(f"initial state dim {init.dim} != problem dim {p.dim}")
    n_steps = drv.n_steps
    h = p.horizon / n_steps
    grid = h * np.arange(n_steps + 1)
    paths = np.empty((n_paths, n_steps + 1, p.dim))
    increments = np.empty((n_paths, n_steps))
    for lo, hi in _chunk_spans(n_paths):
        ids = range(lo, hi)
        increments[lo:hi] = drv.increments_block(ids, h)
        x0 = init.sample_block(drv, ids)  # (dim, n)
        paths[lo:hi] = x0.T[:, None, :]
    meta = {"seed": drv.seed, "scheme": "constant", "n_steps": n_steps}
    return _finalize_ensemble(grid, paths, increments, meta)


def picard_apply(p: ProblemSpec, init: InitialState, y: PathEnsemble,
                 threads: int = 1,
                 tables: KernelTables | None = None) -> PathEnsemble:
    """One application of the mild-form integral operator to the ensemble y.

    The operator maps Y to

        (I + t^alpha E_{a+1}(t) B) eta
        + int (t-r)^(alpha-1) E_a(t-r) b(r, Y(r)) dr
        + int (t-r)^(alpha-1) E_a(t-r) sigma(r, Y(r)) dW(r)

    evaluated with the same product quadrature as ``simulate_mild``; the
    stochastic term reuses y's stored increments, and eta is taken from y's
    stored initial values (which must be consistent with ``init``).
    """
    if y.dim != p.dim:
        raise ValidationError(f"ensemble dim {y.dim} != problem dim {p.dim}")
    if init.dim != p.dim:
        raise ValidationError(f"initial state dim {init.dim} != problem dim {p.dim}")
    n_steps = y.n_steps
    h = p.horizon / n_steps
    grid = h * np.arange(n_steps + 1)
    if not np.allclose(y.grid, grid, rtol=0, atol=1e-12 * max(1.0, p.horizon)):
        raise ValidationError("ensemble grid does not match the problem horizon")
    if y.increments.shape != (y.n_paths, n_steps):
        raise ValidationError("ensemble increments do not match its grid")
    if init.is_deterministic:
        if not np.allclose(y.paths[:, 0, :], init.eta[None, :], rtol=0, atol=0):
            raise ValidationError("ensemble initial values differ from init")
    if tables is None:
        tables = mild_kernel_tables(p, n_steps)

    out = np.empty_like(y.paths)

    def worker(lo: int, hi: int) -> None:
        yc = np.ascontiguousarray(y.paths[lo:hi].transpose(1, 2, 0))
        res = _apply_chunk(tables, p, y.grid, yc, y.increments[lo:hi])
        out[lo:hi] = res.transpose(2, 0, 1)

    _run_chunked(y.n_paths, threads, worker)
    meta = dict(y.meta)
    meta["scheme"] = "picard"
    return _finalize_ensemble(y.grid.copy(), out, y.increments, meta)


def coupled_pair(p: ProblemSpec, eta: InitialState, gamma: InitialState,
                 drv: BrownianDriver, n_paths: int, scheme: str = "em",
                 threads: int = 1) -> tuple[PathEnsemble, PathEnsemble]:
    """Two ensembles from distinct initial data driven by identical noise.

    Synchronous coupling: path i of both ensembles consumes the same Brownian
    increments, so the per-path difference isolates the initial-condition
    effect. The default scheme is the Volterra-form integrator, which has no
    series cutoff limiting the horizon.
    """
    if scheme == "em":
        tables = em_kernel_tables(p, drv.n_steps)
    elif scheme == "mild":
        tables = mild_kernel_tables(p, drv.n_steps)
    else:
        raise ValidationError(f"unknown scheme {scheme!r}")
    e1 = _simulate_with_tables(p, eta, drv, n_paths, tables, threads=threads)
    e2 = _simulate_with_tables(p, gamma, drv, n_paths, tables, threads=threads)
    return e1, e2
