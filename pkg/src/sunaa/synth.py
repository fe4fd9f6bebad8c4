"""Synthetic scenes under the linear mixing model.

Random numbers come from ``numpy.random.Generator`` over the PCG64 bit
generator seeded with the caller's integer, which numpy keeps stable
across platforms and releases.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import AbundanceMatrix, DataCube, ShapeError, SpectralLibrary


def rng_from_seed(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed)))


class Layout(str, enum.Enum):
    SQUARE_GRID = "grid"
    DIRICHLET = "dirichlet"


@dataclass(frozen=True)
class SceneSpec:
    """Scene geometry and endmember selection.

    ``patch_size`` (grid layout only) defaults to the full grid cell;
    smaller patches sit centred in their cell and the margin becomes
    background.
    """

    height: int
    width: int
    endmember_indices: tuple
    layout: Layout = Layout.SQUARE_GRID
    seed: int = 0
    patch_size: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "endmember_indices", tuple(int(i) for i in self.endmember_indices))
        object.__setattr__(self, "layout", Layout(self.layout))
        idx = self.endmember_indices
        if not idx:
            raise ValueError("need at least one endmember index")
        if len(set(idx)) != len(idx):
            raise ValueError("endmember indices must be distinct")
        if self.height < 1 or self.width < 1:
            raise ValueError("image dimensions must be positive")
        if self.height * self.width < len(idx):
            raise ValueError("scene has fewer pixels than endmembers")

    @property
    def r(self) -> int:
        return len(self.endmember_indices)


@dataclass(frozen=True, eq=False)
class GroundTruth:
    x_true: AbundanceMatrix
    cube: DataCube
    endmembers: np.ndarray


def grid_schedule(r: int) -> list:
    """Patch mixtures row by row: row ``k`` holds ``r`` uniform ``k``-way mixtures.

    Patch ``i`` of row ``k`` mixes endmembers ``i, i+1, ..., i+k-1`` (mod r),
    so the first row is pure and the last is the full uniform mixture.
    """
    rows = []
    for k in range(1, r + 1):
        row = []
        for i in range(r):
            v = np.zeros(r)
            v[[(i + t) % r for t in range(k)]] = 1.0 / k
            row.append(v)
        rows.append(row)
    return rows


def grid_abundances(height: int, width: int, r: int, patch_size: Optional[int] = None) -> np.ndarray:
    cell_h, cell_w = height // r, width // r
    if cell_h < 1 or cell_w < 1:
        raise ValueError(f"a {height}x{width} image is too small for an {r}x{r} patch grid")
    cell = min(cell_h, cell_w)
    size = cell if patch_size is None else int(patch_size)
    if not 1 <= size <= cell:
        raise ValueError(f"patch size must be in [1, {cell}]")
    img = np.full((height, width, r), 1.0 / r)
    off = (cell - size) // 2
    for k, row in enumerate(grid_schedule(r)):
        for i, mix in enumerate(row):
            r0, c0 = k * cell_h + off, i * cell_w + off
            img[r0:r0 + size, c0:c0 + size] = mix
    return np.asfortranarray(img.reshape(height * width, r).T)


def generate_scene(d, spec: SceneSpec) -> GroundTruth:
    """Ground-truth abundances and the exact noiseless cube ``D_sel @ X``."""
    lib = d if isinstance(d, SpectralLibrary) else SpectralLibrary(d)
    idx = spec.endmember_indices
    if min(idx) < 0 or max(idx) >= lib.size:
        raise IndexError(f"endmember indices must lie in [0, {lib.size})")
    r, n = spec.r, spec.height * spec.width
    if r == 1:
        x = np.ones((1, n), order="F")
    elif spec.layout is Layout.SQUARE_GRID:
        x = grid_abundances(spec.height, spec.width, r, spec.patch_size)
    else:
        x = np.asfortranarray(rng_from_seed(spec.seed).dirichlet(np.ones(r), size=n).T)
        x /= x.sum(axis=0)
    e = np.asfortranarray(lib.d[:, list(idx)])
    return GroundTruth(x_true=AbundanceMatrix(x), cube=DataCube(e @ x, spec.height, spec.width),
                       endmembers=e)


def add_noise(cube, snr_db: float, seed: int):
    """Add seeded white Gaussian noise rescaled to hit ``snr_db`` exactly.

    Accepts a :class:`DataCube` or a plain matrix and returns the same kind.
    """
    snr_db = float(snr_db)
    if not np.isfinite(snr_db):
        raise ValueError("snr_db must be finite; skip the call for a clean cube")
    y = np.asarray(cube, dtype=np.float64)
    power = float(np.sum(y * y))
    if power == 0.0:
        raise ValueError("SNR is undefined for an all-zero cube")
    noise = rng_from_seed(seed).standard_normal(y.shape)
    noise *= np.sqrt(power / 10.0 ** (snr_db / 10.0) / np.sum(noise * noise))
    out = np.asfortranarray(y + noise)
    if isinstance(cube, DataCube):
        return DataCube(out, cube.height, cube.width)
    return out


def measured_snr_db(clean, noisy) -> float:
    clean = np.asarray(clean, dtype=np.float64)
    diff = np.asarray(noisy, dtype=np.float64) - clean
    return float(10.0 * np.log10(np.sum(clean * clean) / np.sum(diff * diff)))


def spectral_angle_deg(u, v) -> float:
    cos = np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v))
    return float(np.degrees(np.arccos(np.clip(cos, -1.0, 1.0))))


def make_library(m: int, p: int, seed: int = 0, min_angle_deg: float = 4.44,
                 max_tries: int = 10000) -> SpectralLibrary:
    """Smooth reflectance-like spectra with a minimum pairwise spectral angle.

    Each spectrum is a sloped continuum with a handful of Gaussian
    absorption dips, clipped to ``[0.01, 1]``.  Candidates closer than
    ``min_angle_deg`` to an accepted spectrum are rejected.
    """
    if m < 1 or p < 1:
        raise ValueError("m and p must be positive")
    rng = rng_from_seed(seed)
    wl = np.linspace(0.0, 1.0, p)
    cos_max = np.cos(np.radians(min_angle_deg))
    accepted, units = [], []
    tries = 0
    while len(accepted) < m:
        tries += 1
        if tries > max_tries:
            raise RuntimeError(f"could only place {len(accepted)} of {m} spectra "
                               f"at {min_angle_deg} degrees separation")
        s = rng.uniform(0.2, 0.8) + rng.uniform(-0.3, 0.3) * (wl - 0.5)
        for _ in range(rng.integers(1, 6)):
            s -= rng.uniform(0.05, 0.4) * np.exp(-0.5 * ((wl - rng.uniform()) / rng.uniform(0.02, 0.15)) ** 2)
        s = np.clip(s, 0.01, 1.0)
        u = s / np.linalg.norm(s)
        if all(np.dot(u, w) < cos_max for w in units):
            accepted.append(s)
            units.append(u)
    d = np.asfortranarray(np.column_stack(accepted))
    return SpectralLibrary(d, names=[f"s{i:03d}" for i in range(m)])


def append_scaled_duplicates(d, indices: Sequence[int], scales: Sequence[float]) -> SpectralLibrary:
    """Append ``scales[k] * d[:, indices[k]]`` as extra library columns."""
    lib = d if isinstance(d, SpectralLibrary) else SpectralLibrary(d)
    if len(indices) != len(scales):
        raise ShapeError("indices and scales must have equal length")
    extra = np.column_stack([float(s) * lib.d[:, int(i)] for i, s in zip(indices, scales)])
    names = None
    if lib.names is not None:
        names = lib.names + tuple(f"{lib.names[int(i)]}*{float(s):g}" for i, s in zip(indices, scales))
    return SpectralLibrary(np.hstack([lib.d, extra]), names=names)
