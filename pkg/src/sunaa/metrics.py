"""Signal-to-reconstruction error and permutation alignment of endmembers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ShapeError

SRE_CAP_DB = 300.0


@dataclass(frozen=True)
class Alignment:
    """``perm[j]`` is the true slot matched to estimated slot ``j``."""

    perm: tuple
    score: float

    def inverse(self) -> tuple:
        inv = [0] * len(self.perm)
        for j, i in enumerate(self.perm):
            inv[i] = j
        return tuple(inv)


def sre_db(x_true, x_hat) -> float:
    """``20 log10(||X|| / ||X - X_hat||)`` in dB, capped at 300 dB for exact matches."""
    x_true = np.asarray(x_true, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x_true.shape != x_hat.shape:
        raise ShapeError(f"shape mismatch: {x_true.shape} vs {x_hat.shape}")
    num = np.linalg.norm(x_true)
    if num == 0.0:
        raise ValueError("SRE is undefined for an all-zero reference")
    den = np.linalg.norm(x_true - x_hat)
    if den == 0.0:
        return SRE_CAP_DB
    return float(min(SRE_CAP_DB, 20.0 * np.log10(num / den)))


def _correlations(e_true, e_hat):
    nt = np.linalg.norm(e_true, axis=0)
    nh = np.linalg.norm(e_hat, axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        corr = (e_hat.T @ e_true) / np.outer(nh, nt)
    corr[~np.isfinite(corr)] = 0.0
    return corr


def align_endmembers(e_true, e_hat) -> Alignment:
    """Greedy max-correlation matching of estimated to true endmember columns.

    Pairs are taken in decreasing normalised inner product; ties go to the
    lowest estimated index, then the lowest true index.  Zero columns
    correlate 0 with everything.
    """
    e_true = np.asarray(e_true, dtype=np.float64)
    e_hat = np.asarray(e_hat, dtype=np.float64)
    if e_true.shape != e_hat.shape:
        raise ShapeError(f"shape mismatch: {e_true.shape} vs {e_hat.shape}")
    corr = _correlations(e_true, e_hat)
    r = corr.shape[0]
    perm = [-1] * r
    free_hat, free_true = set(range(r)), set(range(r))
    scores = []
    # row-major flat order gives the lowest-index tie-break
    order = np.argsort(-corr, axis=None, kind="stable")
    for flat in order:
        j, i = divmod(int(flat), r)
        if j in free_hat and i in free_true:
            perm[j] = i
            scores.append(corr[j, i])
            free_hat.discard(j)
            free_true.discard(i)
            if not free_hat:
                break
    return Alignment(perm=tuple(perm), score=float(np.mean(scores)))


def apply_alignment(x_hat, alignment: Alignment) -> np.ndarray:
    """Reorder the rows of ``x_hat`` into true-slot order."""
    x_hat = np.asarray(x_hat, dtype=np.float64)
    out = np.empty_like(x_hat)
    out[list(alignment.perm)] = x_hat
    return out


def aligned_sre_db(x_true, x_hat, alignment: Alignment) -> float:
    return sre_db(x_true, apply_alignment(x_hat, alignment))
