"""On-disk formats: SMX1 binary matrices, CSV matrices and PGM abundance maps.

SMX1 layout (little-endian)::

    bytes 0-3   b"SMX1"
    byte  4     dtype code, 0 = float64
    bytes 5-8   rows   (uint32)
    bytes 9-12  cols   (uint32)
    then rows*cols float64 values in row-major order
"""

from __future__ import annotations

import csv
import os
import struct
from pathlib import Path

import numpy as np

from .core import ShapeError, as_mat

SMX_MAGIC = b"SMX1"
SMX_HEADER = struct.Struct("<4sBII")
DTYPE_F64 = 0


class SmxError(ValueError):
    """Malformed SMX file."""


class BadMagicError(SmxError):
    pass


class UnsupportedDtypeError(SmxError):
    pass


class TruncatedPayloadError(SmxError):
    pass


class CsvFormatError(ValueError):
    pass


def smx_header(rows: int, cols: int) -> bytes:
    return SMX_HEADER.pack(SMX_MAGIC, DTYPE_F64, rows, cols)


def smx_bytes(m) -> bytes:
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"SMX stores 2-D matrices, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("refusing to write non-finite values")
    return smx_header(*a.shape) + np.ascontiguousarray(a, dtype="<f8").tobytes(order="C")


def write_smx(path, m) -> None:
    data = smx_bytes(m)
    with open(path, "wb") as fh:
        fh.write(data)


def parse_smx(data: bytes) -> np.ndarray:
    if len(data) < SMX_HEADER.size:
        if not SMX_MAGIC.startswith(data[:4]):
            raise BadMagicError("not an SMX1 file")
        raise TruncatedPayloadError("truncated header")
    magic, dtype, rows, cols = SMX_HEADER.unpack_from(data)
    if magic != SMX_MAGIC:
        raise BadMagicError(f"bad magic {magic!r}")
    if dtype != DTYPE_F64:
        raise UnsupportedDtypeError(f"unsupported dtype code {dtype}")
    need = rows * cols * 8
    payload = data[SMX_HEADER.size:]
    if len(payload) < need:
        raise TruncatedPayloadError(f"truncated payload: expected {need} bytes, found {len(payload)}")
    if len(payload) > need:
        raise SmxError(f"{len(payload) - need} trailing bytes after payload")
    a = np.frombuffer(payload, dtype="<f8").reshape(rows, cols)
    return np.asfortranarray(a, dtype=np.float64)


def read_smx(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return parse_smx(fh.read())


def _is_number(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def read_csv_matrix(path) -> np.ndarray:
    """Parse a rectangular numeric CSV; a non-numeric first row is a header."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if rows and not all(_is_number(c) for c in rows[0]):
        rows = rows[1:]
        first = 2
    else:
        first = 1
    if not rows:
        raise CsvFormatError("no numeric rows")
    width = len(rows[0])
    values = []
    for k, row in enumerate(rows):
        lineno = k + first
        if len(row) != width:
            raise CsvFormatError(f"ragged row {lineno}: {len(row)} cells, expected {width}")
        try:
            values.append([float(c) for c in row])
        except ValueError:
            col = next(i for i, c in enumerate(row) if not _is_number(c))
            raise CsvFormatError(f"unparsable cell {row[col]!r} at row {lineno}, column {col + 1}") from None
    return as_mat(np.array(values), "CSV matrix")


def write_csv_matrix(path, m, header=None) -> None:
    """Write ``m`` with 17 significant digits so it reloads exactly."""
    a = np.asarray(m, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if header is not None:
            w.writerow(header)
        for row in a:
            w.writerow([format(v, ".17g") for v in row])


def read_matrix(path) -> np.ndarray:
    """Load ``.csv`` files as CSV and anything else as SMX1."""
    if os.fspath(path).lower().endswith(".csv"):
        return read_csv_matrix(path)
    return read_smx(path)


def pgm_bytes(img) -> bytes:
    """Binary P5 greymap of values in [0, 1], scaled absolutely to 0..255."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    # round half away from zero; inputs are clamped non-negative
    pix = np.floor(255.0 * np.clip(img, 0.0, 1.0) + 0.5).astype(np.uint8)
    return f"P5\n{w} {h}\n255\n".encode("ascii") + pix.tobytes(order="C")


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise ValueError("only 8-bit PGM supported")
    pix = data[len(data) - w * h:]
    return np.frombuffer(pix, dtype=np.uint8).reshape(h, w)


def export_abundance_maps(a, height: int, width: int, out_dir, prefix: str = "abundance") -> list:
    """Write one PGM per abundance row; returns the written paths.

    Pixel ``k`` maps to image row ``k // width``, column ``k % width``.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] != height * width:
        raise ShapeError(f"abundances of shape {a.shape} do not fit a {height}x{width} image")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for j in range(a.shape[0]):
        p = out / f"{prefix}_{j:02d}.pgm"
        p.write_bytes(pgm_bytes(a[j].reshape(height, width)))
        paths.append(p)
    return paths
