"""Alternating active-set minimisation of ``||Y - D B A||_F^2``.

``B`` (library spectra x endmembers) and ``A`` (endmembers x pixels) both
have columns on the probability simplex, so the scene endmembers
``E = D B`` are convex combinations of library spectra.  Each outer
iteration solves the abundance problem exactly, then sweeps the columns of
``B`` once in index order (block coordinate descent).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .actset import SimplexLsqOptions, solve_gram, solve_gram_batch
from .core import (AbundanceMatrix, ContributionMatrix, DataCube, FitResult, ShapeError,
                   SpectralLibrary, as_mat)

log = logging.getLogger(__name__)

DEAD_ROW_TOL = 1e-14


@dataclass(frozen=True)
class SunaaConfig:
    """Fit settings.

    ``seed`` is reserved for randomised restarts; the default path uses
    the deterministic uniform initialisation and never draws numbers.
    """

    r: int
    outer_iters: int = 100
    rel_obj_tol: float = 1e-8
    seed: int = 0
    solver_opts: SimplexLsqOptions = field(default_factory=SimplexLsqOptions)
    threads: int = 1

    def __post_init__(self):
        if self.r < 1:
            raise ValueError("r must be >= 1")
        if self.outer_iters < 1:
            raise ValueError("outer_iters must be >= 1")
        if not self.rel_obj_tol >= 0:
            raise ValueError("rel_obj_tol must be >= 0")


def init_uniform(m: int, r: int, n: int):
    """Uniform starting point: every ``B`` entry ``1/m``, every ``A`` entry ``1/r``."""
    if min(m, r, n) < 1:
        raise ValueError("m, r and n must be positive")
    b = np.full((m, r), 1.0 / m, order="F")
    a = np.full((r, n), 1.0 / r, order="F")
    return ContributionMatrix(b), AbundanceMatrix(a)


def _conform(y, d, b, a):
    y, d, b, a = (np.asarray(v, dtype=np.float64) for v in (y, d, b, a))
    p, n = y.shape
    if d.shape[0] != p:
        raise ShapeError(f"library has {d.shape[0]} bands, data has {p}")
    if b.shape[0] != d.shape[1]:
        raise ShapeError(f"B has {b.shape[0]} rows, library has {d.shape[1]} spectra")
    if a.shape != (b.shape[1], n):
        raise ShapeError(f"A must be {b.shape[1]}x{n}, got {a.shape}")
    return y, d, b, a


def objective(y, d, b, a) -> float:
    """Squared Frobenius norm of the residual ``y - d @ b @ a``."""
    y, d, b, a = _conform(y, d, b, a)
    res = y - (d @ b) @ a
    return float(np.sum(res * res))


class _Counter:
    uncertified = 0


def a_step(y, d, b, warm=None, opts: Optional[SimplexLsqOptions] = None, *,
           threads: int = 1, _stats: Optional[_Counter] = None) -> np.ndarray:
    """Exact abundance update for fixed ``b`` (columnwise simplex least squares).

    ``warm`` (a feasible abundance matrix) seeds every pixel's active set.
    """
    opts = opts or SimplexLsqOptions()
    r = np.asarray(b).shape[1]
    if warm is None:
        warm = np.full((r, np.asarray(y).shape[1]), 1.0 / r)
    y, d, b, warm = _conform(y, d, b, warm)
    e = d @ b
    G = e.T @ e
    C = e.T @ y
    a, nbad = solve_gram_batch(G, C, warm=warm, max_iter=opts.budget(r),
                               kkt_tol=opts.kkt_tol, threads=threads)
    if _stats is not None:
        _stats.uncertified += nbad
    return a


def b_step(y, d, b_old, a, opts: Optional[SimplexLsqOptions] = None, *,
           gram: Optional[np.ndarray] = None,
           on_column: Optional[Callable[[int, np.ndarray], None]] = None,
           _stats: Optional[_Counter] = None) -> np.ndarray:
    """One sweep of column updates of ``B`` for fixed abundances ``a``.

    Column ``j`` is replaced by the simplex least-squares fit of
    ``(y - d B a) a_j^T / ||a_j||^2 + d b_j`` over the library, with ``B``
    the current (partially updated) matrix.  Columns whose abundance row
    is (numerically) zero are left unchanged.  ``on_column(j, B)`` is
    called after each column update.
    """
    opts = opts or SimplexLsqOptions()
    y, d, b, a = _conform(y, d, b_old, a)
    b = np.array(b, order="F")
    m, r = b.shape
    G = d.T @ d if gram is None else gram
    ya = y @ a.T
    aa = a @ a.T
    for j in range(r):
        nrm = aa[j, j]
        if nrm < DEAD_ROW_TOL:
            log.debug("skipping column %d: empty abundance row", j)
        else:
            dbj = d @ b[:, j]
            target = (ya[:, j] - d @ (b @ aa[:, j])) / nrm + dbj
            x, _, _, ok = solve_gram(G, d.T @ target, x0=b[:, j],
                                     max_iter=opts.budget(m), kkt_tol=opts.kkt_tol)
            b[:, j] = x
            if not ok and _stats is not None:
                _stats.uncertified += 1
        if on_column is not None:
            on_column(j, b.copy(order="F"))
    return b


def _as_cube(y) -> DataCube:
    return y if isinstance(y, DataCube) else DataCube.flat(y)


def _as_library(d) -> SpectralLibrary:
    return d if isinstance(d, SpectralLibrary) else SpectralLibrary(d)


def fit(y, d, cfg: SunaaConfig, *, on_column=None, on_iteration=None) -> FitResult:
    """Run the alternating scheme from the uniform start for up to ``cfg.outer_iters`` sweeps.

    Stops early once the relative objective decrease between two outer
    iterations falls below ``cfg.rel_obj_tol``.  ``on_column(t, j, B, A)``
    and ``on_iteration(t, objective)`` are optional instrumentation hooks.
    """
    cube, lib = _as_cube(y), _as_library(d)
    Y, D = cube.y, lib.d
    if lib.bands != cube.bands:
        raise ShapeError(f"library has {lib.bands} bands, data has {cube.bands}")
    if cfg.r > lib.size:
        raise ValueError(f"r={cfg.r} exceeds library size m={lib.size}")
    b0, a0 = init_uniform(lib.size, cfg.r, cube.pixels)
    b, a = np.array(b0.b), np.array(a0.a)
    gram = D.T @ D
    stats = _Counter()
    trace = []
    early = False
    for t in range(cfg.outer_iters):
        a = a_step(Y, D, b, warm=a, opts=cfg.solver_opts, threads=cfg.threads, _stats=stats)
        hook = None
        if on_column is not None:
            hook = (lambda j, bj, _t=t, _a=a: on_column(_t, j, bj, _a))
        b = b_step(Y, D, b, a, cfg.solver_opts, gram=gram, on_column=hook, _stats=stats)
        obj = objective(Y, D, b, a)
        trace.append(obj)
        if on_iteration is not None:
            on_iteration(t, obj)
        log.debug("iteration %d objective %.6e", t + 1, obj)
        if t > 0:
            prev = trace[-2]
            if prev <= 0.0 or (prev - obj) < cfg.rel_obj_tol * prev:
                early = t + 1 < cfg.outer_iters
                break
    if stats.uncertified:
        log.warning("%d simplex solves were uncertified", stats.uncertified)
    return FitResult(b=ContributionMatrix(b), a=AbundanceMatrix(a), e=D @ b,
                     objective_trace=trace, iterations_run=len(trace),
                     converged_early=early, uncertified_solves=stats.uncertified)


def fit_blind_aa(y, cfg: SunaaConfig, **hooks) -> FitResult:
    """Classic archetypal analysis: archetypes are convex combinations of pixels.

    Same scheme as :func:`fit` with the data itself as the library, so the
    returned ``b`` is the pixels x archetypes contribution matrix.
    """
    cube = _as_cube(y)
    if cube.pixels < cfg.r:
        raise ValueError(f"r={cfg.r} exceeds pixel count n={cube.pixels}")
    return fit(cube, SpectralLibrary(cube.y), cfg, **hooks)


def drop_and_renormalize(a, index: int) -> np.ndarray:
    """Remove abundance row ``index`` and rescale columns to sum to one.

    Pixels explained only by the dropped endmember get uniform abundances.
    """
    a = np.asarray(a, dtype=np.float64)
    r = a.shape[0]
    if r < 2:
        raise ValueError("need at least two endmembers to drop one")
    if not 0 <= index < r:
        raise IndexError(f"row {index} out of range for {r} endmembers")
    kept = np.delete(a, index, axis=0)
    s = kept.sum(axis=0)
    out = np.full_like(kept, 1.0 / (r - 1))
    nz = s > 0
    out[:, nz] = kept[:, nz] / s[nz]
    return np.asfortranarray(out)
