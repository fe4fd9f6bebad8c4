"""Least squares over the probability simplex by a primal active-set method.

Solves ``min_x ||y - E x||^2`` subject to ``x >= 0`` and ``sum(x) = 1``.
Everything runs on the Gram form ``G = E^T E``, ``c = E^T y`` so that
batched callers can factor the dictionary once.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import ShapeError, as_mat

log = logging.getLogger(__name__)

# ridge on the support Gram block, relative to its mean diagonal
KKT_REG = 1e-12


@dataclass(frozen=True)
class SimplexLsqOptions:
    """Solver knobs.

    ``max_inner_iters=None`` means ``10 * r + 50`` for an ``r``-column
    dictionary.  ``warm_start`` is an initial support (indices); the solver
    then starts from the uniform point on that support.
    """

    max_inner_iters: Optional[int] = None
    kkt_tol: float = 1e-10
    warm_start: Optional[frozenset] = None

    def __post_init__(self):
        if self.max_inner_iters is not None and self.max_inner_iters < 1:
            raise ValueError("max_inner_iters must be >= 1")
        if not self.kkt_tol > 0:
            raise ValueError("kkt_tol must be positive")
        if self.warm_start is not None:
            object.__setattr__(self, "warm_start", frozenset(int(i) for i in self.warm_start))

    def budget(self, r: int) -> int:
        return self.max_inner_iters if self.max_inner_iters is not None else 10 * r + 50


@dataclass(frozen=True, eq=False)
class SimplexSolution:
    x: np.ndarray
    support: tuple
    kkt_multiplier: float
    inner_iters: int
    certified: bool


class SolverError(ValueError):
    """Bad input to a simplex least-squares solve."""

    def __init__(self, msg, column=None):
        if column is not None:
            msg = f"column {column}: {msg}"
        super().__init__(msg)
        self.column = column


def kkt_violation(g: np.ndarray, x: np.ndarray, mu: float):
    """Return (on-support residual, off-support deficit, scale) for gradient ``g``.

    Certified when both numbers are ``<= kkt_tol * scale``.
    """
    on = x > 0
    scale = 1.0 + float(np.abs(g).max())
    red = g - mu
    on_res = float(np.abs(red[on]).max()) if on.any() else 0.0
    off = ~on
    off_def = float(max(0.0, -red[off].min())) if off.any() else 0.0
    return on_res, off_def, scale


def _kkt_matrix(G, S):
    s = len(S)
    K = np.empty((s + 1, s + 1))
    K[:s, :s] = G[np.ix_(S, S)]
    diag = K[:s, :s].flat[:: s + 2]
    K[:s, :s].flat[:: s + 2] += KKT_REG * max(1.0, float(diag.mean()))
    K[:s, s] = 1.0
    K[s, :s] = 1.0
    K[s, s] = 0.0
    return K


def _eqp(G, c, S):
    """Minimise over the affine hull of support ``S``; returns (z_S, mu)."""
    s = len(S)
    rhs = np.empty(s + 1)
    rhs[:s] = c[S]
    rhs[s] = 1.0
    K = _kkt_matrix(G, S)
    try:
        sol = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError:
        sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    return sol[:s], -sol[s]


def _start(G, c, x0, support):
    r = c.shape[0]
    if x0 is not None:
        x = np.maximum(np.asarray(x0, dtype=np.float64), 0.0)
        tot = x.sum()
        if tot > 0:
            return x / tot
    if support:
        S = sorted(support)
        if S[0] < 0 or S[-1] >= r:
            raise SolverError(f"warm-start index out of range [0, {r})")
        x = np.zeros(r)
        x[S] = 1.0 / len(S)
        return x
    # best single column: ||y - e_i||^2 = G_ii - 2 c_i + const
    i = int(np.argmin(np.diag(G) - 2.0 * c))
    x = np.zeros(r)
    x[i] = 1.0
    return x


def solve_gram(G, c, *, x0=None, support=None, max_iter=None, kkt_tol=1e-10):
    """Active-set core on the Gram form; see :func:`solve_simplex_lsq_column`.

    Returns ``(x, mu, iterations, certified)``.
    """
    r = c.shape[0]
    if max_iter is None:
        max_iter = 10 * r + 50
    x = _start(G, c, x0, support)
    S = [int(i) for i in np.flatnonzero(x > 0)]
    mu = 0.0
    for it in range(1, max_iter + 1):
        z, mu_eqp = _eqp(G, c, S)
        if z.min() > 0.0:
            x = np.zeros(r)
            x[S] = z / z.sum()
            g = G @ x - c
            mu = float(g[S].mean())
            red = g - mu
            red[S] = np.inf
            thr = kkt_tol * (1.0 + float(np.abs(g).max()))
            j = int(np.argmin(red))
            if red[j] >= -thr:
                on_res, _, scale = kkt_violation(g, x, mu)
                certified = on_res <= kkt_tol * scale
                return x, mu, it, certified
            S.append(j)
            S.sort()
            continue
        # step towards z until the first coordinate hits zero
        xs = x[S]
        blk = np.flatnonzero(z <= 0.0)
        ratios = xs[blk] / (xs[blk] - z[blk])
        k = int(blk[np.argmin(ratios)])
        alpha = float(ratios.min())
        xs = xs + alpha * (z - xs)
        xs[k] = 0.0
        np.maximum(xs, 0.0, out=xs)
        x[S] = xs
        x /= x.sum()
        S = [i for i in S if x[i] > 0.0]
        mu = mu_eqp
    log.debug("active set budget of %d iterations exhausted", max_iter)
    g = G @ x - c
    S = np.flatnonzero(x > 0)
    mu = float(g[S].mean())
    return x, mu, max_iter, False


def certify(G, c, x, mu, kkt_tol=1e-10) -> bool:
    """Check the KKT certificate for ``x`` with multiplier ``mu``."""
    g = G @ x - c
    on_res, off_def, scale = kkt_violation(g, x, mu)
    return on_res <= kkt_tol * scale and off_def <= kkt_tol * scale


def solve_simplex_lsq_column(y, e, opts: Optional[SimplexLsqOptions] = None) -> SimplexSolution:
    """Project ``y`` onto the convex hull of the columns of ``e`` (least squares).

    The returned ``kkt_multiplier`` ``mu`` certifies optimality: with
    ``g = e.T @ (e @ x - y)``, ``g_i == mu`` on the support and ``g_i >= mu``
    elsewhere, both up to ``kkt_tol * (1 + max|g|)``.  When the iteration
    budget runs out the best feasible iterate is returned with
    ``certified=False``.
    """
    opts = opts or SimplexLsqOptions()
    try:
        e = as_mat(e, "dictionary")
        y = np.asarray(y, dtype=np.float64).ravel()
        if not np.all(np.isfinite(y)):
            raise ValueError("target contains non-finite entries")
    except ValueError as exc:
        raise SolverError(str(exc)) from exc
    if y.shape[0] != e.shape[0]:
        raise ShapeError(f"target has {y.shape[0]} bands, dictionary has {e.shape[0]}")
    G = e.T @ e
    c = e.T @ y
    x, mu, it, ok = solve_gram(G, c, support=opts.warm_start,
                               max_iter=opts.budget(e.shape[1]), kkt_tol=opts.kkt_tol)
    return SimplexSolution(x=x, support=tuple(int(i) for i in np.flatnonzero(x > 0)),
                           kkt_multiplier=mu, inner_iters=it, certified=ok)


def _settle_groups(G, C, X0, kkt_tol):
    """Certify columns whose starting support is already optimal.

    Columns sharing a support are solved together with one multi-RHS KKT
    solve.  Returns ``(X, done)``; columns not done need the full loop.
    """
    r, k = C.shape
    X = np.zeros((r, k), order="F")
    done = np.zeros(k, dtype=bool)
    keys = np.packbits(X0 > 0, axis=0)
    _, inverse = np.unique(keys, axis=1, return_inverse=True)
    inverse = inverse.ravel()
    for grp in np.unique(inverse):
        cols = np.flatnonzero(inverse == grp)
        if cols.size < 2:
            continue
        S = np.flatnonzero(X0[:, cols[0]] > 0)
        s = S.size
        rhs = np.empty((s + 1, cols.size))
        rhs[:s] = C[np.ix_(S, cols)]
        rhs[s] = 1.0
        try:
            Z = np.linalg.solve(_kkt_matrix(G, S), rhs)[:s]
        except np.linalg.LinAlgError:
            continue
        pos = Z.min(axis=0) > 0.0
        if not pos.any():
            continue
        cols, Z = cols[pos], Z[:, pos]
        Z = Z / Z.sum(axis=0)
        g = G[:, S] @ Z - C[:, cols]
        mu = g[S].mean(axis=0)
        red = g - mu
        scale = 1.0 + np.abs(g).max(axis=0)
        on_ok = np.abs(red[S]).max(axis=0) <= kkt_tol * scale
        red[S] = np.inf
        off_ok = red.min(axis=0) >= -kkt_tol * scale
        ok = on_ok & off_ok
        good = cols[ok]
        X[np.ix_(S, good)] = Z[:, ok]
        done[good] = True
    return X, done


def solve_gram_batch(G, C, *, warm=None, max_iter=None, kkt_tol=1e-10, threads=1):
    """Solve every column of ``C`` against Gram matrix ``G``.

    Returns ``(X, n_uncertified)``.  Column results do not depend on
    ``threads``: the grouped first pass runs before any fan-out.
    """
    r, k = C.shape
    if warm is not None:
        X0 = np.maximum(np.asarray(warm, dtype=np.float64), 0.0)
        X, done = _settle_groups(G, C, X0, kkt_tol)
    else:
        X0 = None
        X = np.zeros((r, k), order="F")
        done = np.zeros(k, dtype=bool)
    bad = np.zeros(k, dtype=bool)

    def run(cols):
        for j in cols:
            x0 = None if X0 is None else X0[:, j]
            x, _, _, ok = solve_gram(G, C[:, j], x0=x0, max_iter=max_iter, kkt_tol=kkt_tol)
            X[:, j] = x
            bad[j] = not ok

    todo = np.flatnonzero(~done)
    threads = max(1, int(threads or 1))
    if threads == 1 or todo.size < 2 * threads:
        run(todo)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run, np.array_split(todo, threads)))
    return X, int(bad.sum())


def solve_simplex_lsq_batch(targets, e, opts: Optional[SimplexLsqOptions] = None,
                            warm=None, *, threads=1, return_info=False):
    """Columnwise :func:`solve_simplex_lsq_column` over ``targets`` (p x k).

    ``warm`` (r x k) supplies feasible starting points per column.  With
    ``return_info=True`` the number of uncertified columns is returned too.
    """
    opts = opts or SimplexLsqOptions()
    e = as_mat(e, "dictionary")
    targets = np.asarray(targets, dtype=np.float64)
    if targets.ndim == 1:
        targets = targets[:, None]
    if targets.shape[0] != e.shape[0]:
        raise ShapeError(f"targets have {targets.shape[0]} bands, dictionary has {e.shape[0]}")
    finite = np.isfinite(targets).all(axis=0)
    if not finite.all():
        raise SolverError("target contains non-finite entries", column=int(np.argmin(finite)))
    r, k = e.shape[1], targets.shape[1]
    if warm is not None:
        warm = np.asarray(warm, dtype=np.float64)
        if warm.shape != (r, k):
            raise ShapeError(f"warm start must be {r}x{k}, got {warm.shape}")
    elif opts.warm_start is not None:
        x0 = _start(None, np.zeros(r), None, opts.warm_start)
        warm = np.repeat(x0[:, None], k, axis=1)
    G = e.T @ e
    C = e.T @ targets
    X, nbad = solve_gram_batch(G, C, warm=warm, max_iter=opts.budget(r),
                               kkt_tol=opts.kkt_tol, threads=threads)
    if nbad:
        log.warning("%d of %d simplex solves uncertified", nbad, k)
    return (X, nbad) if return_info else X
