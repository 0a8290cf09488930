"""Matrix Market input/output and matrix-level reference footprints.

Only nonzero positions enter the footprint model, so :class:`SparseMatrix`
keeps coordinates and nothing else. Numeric values are returned separately
by :func:`read_matrix_market_values` for callers (the codec) that need them.
"""
from __future__ import annotations

import io
import os
from dataclasses import dataclass
from dataclasses import field as dc_field
from typing import Mapping

import numpy as np

PRECISIONS = (32, 64)
CSR32_INDEX_BITS = 32

_SUPPORTED_FIELDS = ("real", "integer", "pattern")
_SUPPORTED_SYMMETRY = ("general", "symmetric")


class MatrixMarketError(ValueError):
    """Malformed Matrix Market input."""


class UnsupportedMatrixError(MatrixMarketError):
    """Well-formed input of a kind this package does not handle."""


def check_precision(b: int) -> int:
    if b not in PRECISIONS:
        raise ValueError(f"precision must be 32 or 64 bits, got {b!r}")
    return int(b)


def _frozen(a) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.int64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SparseMatrix:
    """Nonzero structure of an ``m x n`` matrix in stored-element form.

    ``rows``/``cols`` are 0-based, unique and sorted lexicographically.
    Symmetric matrices keep the lower triangle (``r >= c``) only.
    """

    m: int
    n: int
    rows: np.ndarray
    cols: np.ndarray
    symmetry: str = "general"
    field: str = "real"
    meta: Mapping[str, str] = dc_field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "rows", _frozen(self.rows))
        object.__setattr__(self, "cols", _frozen(self.cols))
        if self.m <= 0 or self.n <= 0:
            raise ValueError("matrix dimensions must be positive")
        if self.symmetry not in _SUPPORTED_SYMMETRY:
            raise UnsupportedMatrixError(f"unsupported symmetry {self.symmetry!r}")
        if self.symmetry == "symmetric" and self.m != self.n:
            raise ValueError("a symmetric matrix must be square")
        if self.rows.shape != self.cols.shape or self.rows.ndim != 1:
            raise ValueError("rows and cols must be 1-D arrays of equal length")

    @classmethod
    def from_coords(cls, m, n, rows, cols, symmetry="general", **kw) -> "SparseMatrix":
        """Build from arbitrary coordinates: reflects, sorts and dedups."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        if rows.size and (rows.min() < 0 or rows.max() >= m or cols.min() < 0 or cols.max() >= n):
            raise ValueError("element coordinates out of range")
        if symmetry == "symmetric":
            rows, cols = np.maximum(rows, cols), np.minimum(rows, cols)
        key = np.unique(rows * n + cols)
        return cls(int(m), int(n), key // n, key % n, symmetry, **kw)

    @property
    def nnz_stored(self) -> int:
        return int(self.rows.size)

    @property
    def nnz_diagonal(self) -> int:
        return int(np.count_nonzero(self.rows == self.cols))

    @property
    def nnz_all(self) -> int:
        if self.symmetry == "symmetric":
            return 2 * self.nnz_stored - self.nnz_diagonal
        return self.nnz_stored

    @property
    def elements(self) -> list[tuple[int, int]]:
        return list(zip(self.rows.tolist(), self.cols.tolist()))

    def same_structure(self, other: "SparseMatrix") -> bool:
        return (
            self.m == other.m
            and self.n == other.n
            and self.symmetry == other.symmetry
            and np.array_equal(self.rows, other.rows)
            and np.array_equal(self.cols, other.cols)
        )

    def __repr__(self):
        return (
            f"SparseMatrix({self.m}x{self.n}, {self.symmetry}, "
            f"nnz_stored={self.nnz_stored})"
        )


# --------------------------------------------------------------------------
# Matrix Market


def _read_text(source) -> str:
    if isinstance(source, (str, os.PathLike)) and not str(source).lstrip().startswith("%%"):
        with open(source, "r", encoding="ascii", errors="replace") as fh:
            return fh.read()
    if hasattr(source, "read"):
        data = source.read()
        return data.decode("ascii", errors="replace") if isinstance(data, bytes) else data
    return str(source)


def _parse(text: str):
    lines = io.StringIO(text)
    header = lines.readline().split()
    if len(header) != 5 or header[0].lower() != "%%matrixmarket" or header[1].lower() != "matrix":
        raise MatrixMarketError("missing or malformed %%MatrixMarket header")
    fmt, fld, sym = (h.lower() for h in header[2:])
    if fmt != "coordinate":
        raise UnsupportedMatrixError(f"unsupported Matrix Market format {fmt!r} (only 'coordinate')")
    if fld not in _SUPPORTED_FIELDS:
        raise UnsupportedMatrixError(f"unsupported field {fld!r} (complex matrices are not handled)")
    if sym not in _SUPPORTED_SYMMETRY:
        raise UnsupportedMatrixError(f"unsupported symmetry {sym!r} ({sym} matrices are not handled)")

    meta = {}
    size_line = None
    for line in lines:
        s = line.strip()
        if not s:
            continue
        if s.startswith("%"):
            key, sep, value = s.lstrip("%").partition(":")
            if sep and key.strip() and " " not in key.strip():
                meta.setdefault(key.strip(), value.strip())
            continue
        size_line = s
        break
    if size_line is None:
        raise MatrixMarketError("missing size line")
    try:
        m, n, nnz = (int(t) for t in size_line.split())
    except ValueError:
        raise MatrixMarketError(f"malformed size line {size_line!r}") from None
    if m <= 0 or n <= 0 or nnz < 0:
        raise MatrixMarketError(f"invalid dimensions {m}x{n} with {nnz} entries")

    width = 2 if fld == "pattern" else 3
    tokens = [ln.split() for ln in lines if ln.strip() and not ln.lstrip().startswith("%")]
    if len(tokens) != nnz:
        raise MatrixMarketError(f"expected {nnz} entries, found {len(tokens)}")
    if any(len(t) != width for t in tokens):
        raise MatrixMarketError(f"every entry line must have {width} fields")
    arr = np.array(tokens, dtype=str).reshape(nnz, width)
    try:
        rows = arr[:, 0].astype(np.int64) - 1
        cols = arr[:, 1].astype(np.int64) - 1
        vals = np.ones(nnz) if fld == "pattern" else arr[:, 2].astype(np.float64)
    except ValueError as exc:
        raise MatrixMarketError(f"malformed entry: {exc}") from None
    if nnz and (rows.min() < 0 or rows.max() >= m or cols.min() < 0 or cols.max() >= n):
        raise MatrixMarketError(f"entry index out of range for a {m}x{n} matrix")
    return m, n, fld, sym, meta, rows, cols, vals


def _normalize(m, n, sym, rows, cols, vals):
    if sym == "symmetric":
        if m != n:
            raise MatrixMarketError("symmetric matrix must be square")
        rows, cols = np.maximum(rows, cols), np.minimum(rows, cols)
    key = rows * n + cols
    uniq, inv = np.unique(key, return_inverse=True)
    summed = np.zeros(uniq.size)
    np.add.at(summed, inv, vals)
    keep = summed != 0  # NaN survives
    uniq, summed = uniq[keep], summed[keep]
    return uniq // n, uniq % n, summed


def read_matrix_market_values(source) -> tuple[SparseMatrix, np.ndarray]:
    """Parse a Matrix Market coordinate file, keeping values aligned with elements.

    ``source`` is a path, a file object, or the file text itself. Duplicate
    entries are summed and entries whose value is zero are dropped; symmetric
    inputs are reflected into the lower triangle first. Pattern files get the
    value 1.0 for every entry.
    """
    m, n, fld, sym, meta, rows, cols, vals = _parse(_read_text(source))
    if fld == "pattern":
        vals = np.ones(rows.size)
    r, c, v = _normalize(m, n, sym, rows, cols, vals)
    if fld == "pattern":
        v = np.ones(r.size)
    return SparseMatrix(m, n, r, c, sym, fld, meta), v


def parse_matrix_market(source) -> SparseMatrix:
    return read_matrix_market_values(source)[0]


def write_matrix_market(A: SparseMatrix, values=None, comments=()) -> str:
    """Render ``A`` as Matrix Market text (pattern field when ``values`` is None)."""
    fld = "pattern" if values is None else "real"
    out = io.StringIO()
    out.write(f"%%MatrixMarket matrix coordinate {fld} {A.symmetry}\n")
    for line in comments:
        out.write(f"% {line}\n")
    out.write(f"{A.m} {A.n} {A.nnz_stored}\n")
    if values is None:
        for r, c in zip(A.rows.tolist(), A.cols.tolist()):
            out.write(f"{r + 1} {c + 1}\n")
    else:
        values = np.asarray(values, dtype=np.float64)
        if values.shape != A.rows.shape:
            raise ValueError("values must align with the stored elements")
        for r, c, v in zip(A.rows.tolist(), A.cols.tolist(), values.tolist()):
            out.write(f"{r + 1} {c + 1} {v!r}\n")
    return out.getvalue()


# --------------------------------------------------------------------------
# Reference quantities


def csr32_footprint(A: SparseMatrix, b: int) -> int:
    """Bits of whole-matrix CSR with 32-bit column indices and ``m + 1`` row pointers."""
    b = check_precision(b)
    nnz = A.nnz_stored
    return nnz * b + nnz * CSR32_INDEX_BITS + (A.m + 1) * CSR32_INDEX_BITS


def lower_bound(A: SparseMatrix, b: int) -> int:
    return A.nnz_stored * check_precision(b)


def row_counts(A: SparseMatrix, variant: str = "stored") -> np.ndarray:
    """Nonzeros per row; the ``"all"`` variant also counts mirrored elements."""
    counts = np.bincount(A.rows, minlength=A.m)
    if variant == "all" and A.symmetry == "symmetric":
        off = A.rows != A.cols
        counts = counts + np.bincount(A.cols[off], minlength=A.m)
    elif variant not in ("all", "stored"):
        raise ValueError(f"unknown variant {variant!r}")
    return counts


def density(A: SparseMatrix) -> tuple[float, float]:
    """Nonzero density in percent as ``(all, stored)``."""
    area = A.m * A.n
    return A.nnz_all / area * 100.0, A.nnz_stored / area * 100.0


def row_uniformity(A: SparseMatrix) -> tuple[float, float]:
    """Population std-dev of per-row nonzero percentages as ``(all, stored)``."""
    return tuple(
        float(np.std(row_counts(A, v) / A.n * 100.0)) for v in ("all", "stored")
    )
