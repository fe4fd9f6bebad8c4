"""Matrix helpers and the domain containers shared across the package.

Matrices are plain ``numpy`` float64 arrays stored in Fortran (column-major)
order, so per-pixel and per-endmember column views are contiguous.  The
container classes validate their invariants once at construction and freeze
the underlying arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

NEG_TOL = 1e-12
SUM_TOL = 1e-9


class ShapeError(ValueError):
    """Raised when matrix shapes do not conform."""


def as_mat(x, name: str = "matrix") -> np.ndarray:
    """Return ``x`` as a finite, 2-D, column-major float64 array."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")
    return np.asfortranarray(a)


def mat_from_rows(rows: int, cols: int, values: Sequence[float]) -> np.ndarray:
    """Build a ``rows x cols`` matrix from row-major ``values``."""
    vals = np.asarray(values, dtype=np.float64).ravel()
    if vals.size != rows * cols:
        raise ShapeError(
            f"expected {rows * cols} values for a {rows}x{cols} matrix, got {vals.size}")
    if not np.all(np.isfinite(vals)):
        raise ValueError("non-finite entry in matrix values")
    return np.asfortranarray(vals.reshape(rows, cols))


def row_major_values(x: np.ndarray) -> np.ndarray:
    return np.asarray(x).ravel(order="C")


def frobenius_norm(x) -> float:
    a = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix contains non-finite entries")
    return float(np.sqrt(np.sum(a * a)))


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.asfortranarray(a, dtype=np.float64)
    if a.flags.writeable:
        a = a.copy(order="F")
        a.flags.writeable = False
    return a


def check_simplex_columns(x: np.ndarray, name: str) -> None:
    """Raise ``ValueError`` unless every column of ``x`` lies on the simplex."""
    if x.size == 0:
        return
    if x.min() < -NEG_TOL:
        raise ValueError(f"{name} has negative entries (min {x.min():.3e})")
    dev = np.abs(x.sum(axis=0) - 1.0).max()
    if dev > SUM_TOL:
        raise ValueError(f"{name} columns do not sum to one (max deviation {dev:.3e})")


class _ArrayBacked:
    """Lets ``np.asarray`` see through the containers."""

    _field = ""

    def __array__(self, dtype=None, copy=None):
        a = getattr(self, self._field)
        return a if dtype is None else a.astype(dtype)

    @property
    def shape(self):
        return getattr(self, self._field).shape


@dataclass(frozen=True, eq=False)
class SpectralLibrary(_ArrayBacked):
    """Candidate spectra as columns of ``d`` (bands x spectra)."""

    d: np.ndarray
    names: Optional[tuple] = None
    _field = "d"

    def __post_init__(self):
        d = as_mat(self.d, "library")
        if d.shape[0] < 1 or d.shape[1] < 1:
            raise ShapeError("library must have at least one band and one spectrum")
        object.__setattr__(self, "d", _frozen(d))
        if self.names is not None:
            names = tuple(str(s) for s in self.names)
            if len(names) != d.shape[1]:
                raise ShapeError(f"{len(names)} names for {d.shape[1]} spectra")
            object.__setattr__(self, "names", names)

    @property
    def bands(self) -> int:
        return self.d.shape[0]

    @property
    def size(self) -> int:
        return self.d.shape[1]


@dataclass(frozen=True, eq=False)
class DataCube(_ArrayBacked):
    """Observed spectra ``y`` (bands x pixels) of a ``height x width`` image.

    Pixel ``k`` sits at image row ``k // width`` and column ``k % width``.
    """

    y: np.ndarray
    height: int
    width: int
    _field = "y"

    def __post_init__(self):
        y = as_mat(self.y, "cube")
        if self.height < 1 or self.width < 1:
            raise ShapeError("image dimensions must be positive")
        if y.shape[1] != self.height * self.width:
            raise ShapeError(
                f"cube has {y.shape[1]} pixels but height*width = {self.height * self.width}")
        object.__setattr__(self, "y", _frozen(y))

    @classmethod
    def flat(cls, y) -> "DataCube":
        """Wrap a bands x pixels matrix as a one-row image."""
        y = as_mat(y, "cube")
        return cls(y, 1, y.shape[1])

    @property
    def bands(self) -> int:
        return self.y.shape[0]

    @property
    def pixels(self) -> int:
        return self.y.shape[1]


@dataclass(frozen=True, eq=False)
class ContributionMatrix(_ArrayBacked):
    """Columnwise-simplex weights ``b`` (library spectra x scene endmembers)."""

    b: np.ndarray
    _field = "b"

    def __post_init__(self):
        b = as_mat(self.b, "contribution matrix")
        check_simplex_columns(b, "contribution matrix")
        object.__setattr__(self, "b", _frozen(b))


@dataclass(frozen=True, eq=False)
class AbundanceMatrix(_ArrayBacked):
    """Columnwise-simplex fractional abundances ``a`` (endmembers x pixels)."""

    a: np.ndarray
    _field = "a"

    def __post_init__(self):
        a = as_mat(self.a, "abundance matrix")
        check_simplex_columns(a, "abundance matrix")
        object.__setattr__(self, "a", _frozen(a))


@dataclass(frozen=True, eq=False)
class FitResult:
    """Output of an unmixing run.

    ``e`` is the endmember matrix ``d @ b``.  ``uncertified_solves`` counts
    simplex subproblems that hit their iteration budget without a KKT
    certificate.
    """

    b: ContributionMatrix
    a: AbundanceMatrix
    e: np.ndarray
    objective_trace: tuple = field(default_factory=tuple)
    iterations_run: int = 0
    converged_early: bool = False
    uncertified_solves: int = 0

    def __post_init__(self):
        object.__setattr__(self, "e", _frozen(as_mat(self.e, "endmembers")))
        object.__setattr__(self, "objective_trace", tuple(float(v) for v in self.objective_trace))

    @property
    def final_objective(self) -> float:
        return self.objective_trace[-1] if self.objective_trace else float("nan")
