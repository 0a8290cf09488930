"""Block partitioning and the bit-exact footprint model.

A matrix is cut into aligned ``2**k x 2**l`` blocks. Nonzero blocks are kept
in lexicographic order; each stores its block-column index, every block row
stores its count of nonzero blocks, and every index over ``n`` entities takes
``ceil(log2 n)`` bits. Block bodies use one of four formats.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping

import numpy as np

from . import kernels
from .kernels import bits_for
from .matrix_io import SparseMatrix, check_precision

KMAX = LMAX = 8
TAG_BITS = 2


@dataclass(frozen=True, order=True)
class BlockSize:
    """Block of ``h = 2**k`` rows by ``w = 2**l`` columns."""

    k: int
    l: int

    def __post_init__(self):
        if not (1 <= self.k <= KMAX and 1 <= self.l <= LMAX):
            raise ValueError(f"block exponents must lie in 1..8, got k={self.k}, l={self.l}")

    @property
    def h(self) -> int:
        return 1 << self.k

    @property
    def w(self) -> int:
        return 1 << self.l

    @property
    def label(self) -> str:
        return f"{self.h}x{self.w}"

    @classmethod
    def parse(cls, text: str) -> "BlockSize":
        try:
            h, w = (int(t) for t in text.lower().replace("×", "x").split("x"))
        except ValueError:
            raise ValueError(f"block size must look like '8x16', got {text!r}") from None
        if h & (h - 1) or w & (w - 1) or h < 2 or w < 2:
            raise ValueError(f"block size {text!r} is not a power-of-two size >= 2")
        return cls(h.bit_length() - 1, w.bit_length() - 1)

    def __str__(self):
        return self.label


B64 = tuple(BlockSize(k, l) for k in range(1, KMAX + 1) for l in range(1, LMAX + 1))


class BlockFormat(enum.IntEnum):
    """Block formats; the integer value doubles as the 2-bit format tag."""

    COO = 0
    CSR = 1
    BITMAP = 2
    DENSE = 3

    @property
    def label(self) -> str:
        return "bitmap" if self is BlockFormat.BITMAP else (
            "dense" if self is BlockFormat.DENSE else self.name)


ALL_FORMATS = tuple(BlockFormat)
FORMATS_WITHOUT_CSR = (BlockFormat.COO, BlockFormat.BITMAP, BlockFormat.DENSE)


class SchemeKind(enum.Enum):
    FIXED = "fixed"
    MIN_FIXED = "min-fixed"
    ADAPTIVE = "adaptive"


@dataclass(frozen=True)
class Scheme:
    kind: SchemeKind
    formats: tuple[BlockFormat, ...]

    def __post_init__(self):
        fmts = tuple(sorted({BlockFormat(f) for f in self.formats}))
        if not fmts:
            raise ValueError("a scheme needs at least one candidate format")
        if self.kind is SchemeKind.FIXED and len(fmts) != 1:
            raise ValueError("a fixed scheme prescribes exactly one format")
        object.__setattr__(self, "formats", fmts)

    @classmethod
    def fixed(cls, f) -> "Scheme":
        return cls(SchemeKind.FIXED, (BlockFormat(f),))

    @classmethod
    def min_fixed(cls, formats=ALL_FORMATS) -> "Scheme":
        return cls(SchemeKind.MIN_FIXED, tuple(formats))

    @classmethod
    def adaptive(cls, formats=ALL_FORMATS) -> "Scheme":
        return cls(SchemeKind.ADAPTIVE, tuple(formats))

    @property
    def format_mask(self) -> int:
        return sum(1 << int(f) for f in self.formats)

    @property
    def name(self) -> str:
        if self.kind is SchemeKind.FIXED:
            return self.formats[0].label
        if self.formats == ALL_FORMATS:
            return self.kind.value
        if self.formats == FORMATS_WITHOUT_CSR:
            return f"{self.kind.value}-w/o-CSR"
        return f"{self.kind.value}[{'+'.join(f.label for f in self.formats)}]"

    def __str__(self):
        return self.name


S6 = (
    Scheme.fixed(BlockFormat.COO),
    Scheme.fixed(BlockFormat.CSR),
    Scheme.fixed(BlockFormat.BITMAP),
    Scheme.fixed(BlockFormat.DENSE),
    Scheme.min_fixed(),
    Scheme.adaptive(),
)
MIN_FIXED_WO_CSR = Scheme.min_fixed(FORMATS_WITHOUT_CSR)
ADAPTIVE_WO_CSR = Scheme.adaptive(FORMATS_WITHOUT_CSR)
EXTENDED_SCHEMES = S6 + (MIN_FIXED_WO_CSR, ADAPTIVE_WO_CSR)


def scheme_from_name(name: str) -> Scheme:
    for s in EXTENDED_SCHEMES:
        if s.name.lower() == name.lower():
            return s
    kind, _, rest = name.partition("[")
    if rest.endswith("]"):
        fmts = [_format_from_label(t) for t in rest[:-1].split("+")]
        return Scheme(SchemeKind(kind), tuple(fmts))
    raise ValueError(f"unknown scheme {name!r}")


def _format_from_label(label: str) -> BlockFormat:
    for f in BlockFormat:
        if f.label.lower() == label.lower():
            return f
    raise ValueError(f"unknown block format {label!r}")


def scheme_order(s: Scheme) -> int:
    """Position used for deterministic tie-breaking (S6 order first)."""
    try:
        return EXTENDED_SCHEMES.index(s)
    except ValueError:
        return len(EXTENDED_SCHEMES)


# --------------------------------------------------------------------------
# Block nonzero maps


@dataclass(frozen=True, eq=False)
class BlockNnzMap:
    """Nonzero blocks of one partition, sorted by ``(R, C)``, with their counts ``z``."""

    size: BlockSize
    M: int
    N: int
    R: np.ndarray
    C: np.ndarray
    z: np.ndarray

    @property
    def nblocks(self) -> int:
        return int(self.z.size)

    @cached_property
    def row_counts(self) -> np.ndarray:
        return np.bincount(self.R, minlength=self.M).astype(np.int64)

    @property
    def blocks(self) -> list[tuple[int, int, int]]:
        return list(zip(self.R.tolist(), self.C.tolist(), self.z.tolist()))

    def __eq__(self, other):
        if not isinstance(other, BlockNnzMap):
            return NotImplemented
        return (
            self.size == other.size and self.M == other.M and self.N == other.N
            and np.array_equal(self.R, other.R) and np.array_equal(self.C, other.C)
            and np.array_equal(self.z, other.z)
        )

    __hash__ = None


def _grid(A: SparseMatrix, bs: BlockSize) -> tuple[int, int]:
    return -(-A.m // bs.h), -(-A.n // bs.w)


def block_nnz_map(A: SparseMatrix, bs: BlockSize) -> BlockNnzMap:
    """Count stored elements per nonzero block (shift-based bucketing)."""
    M, N = _grid(A, bs)
    R, C, z = kernels.bucket(A.rows, A.cols, None, bs.k, bs.l, N)
    return BlockNnzMap(bs, M, N, R, C, z)


def aggregate_rows(bm: BlockNnzMap) -> BlockNnzMap:
    """Merge block rows ``2R`` and ``2R + 1``: the map for ``k + 1``."""
    bs = BlockSize(bm.size.k + 1, bm.size.l)
    R, C, z = kernels.bucket(bm.R, bm.C, bm.z, 1, 0, bm.N)
    return BlockNnzMap(bs, -(-bm.M // 2), bm.N, R, C, z)


def aggregate_cols(bm: BlockNnzMap) -> BlockNnzMap:
    """Merge block columns ``2C`` and ``2C + 1``: the map for ``l + 1``."""
    bs = BlockSize(bm.size.k, bm.size.l + 1)
    N = -(-bm.N // 2)
    R, C, z = kernels.bucket(bm.R, bm.C, bm.z, 0, 1, N)
    return BlockNnzMap(bs, bm.M, N, R, C, z)


def block_maps(A: SparseMatrix, sizes: Iterable[BlockSize] = B64) -> dict[BlockSize, BlockNnzMap]:
    """Maps for all requested sizes, coarser ones derived from finer ones."""
    wanted = set(sizes)
    if not wanted:
        return {}
    kmax = max(s.k for s in wanted)
    lmax = max(s.l for s in wanted)
    out = {}
    base = block_nnz_map(A, BlockSize(1, 1))
    column = base
    for l in range(1, lmax + 1):
        if l > 1:
            column = aggregate_cols(column)
        cur = column
        for k in range(1, kmax + 1):
            if k > 1:
                cur = aggregate_rows(cur)
            if cur.size in wanted:
                out[cur.size] = cur
    return {s: out[s] for s in sorted(wanted)}


# --------------------------------------------------------------------------
# Bit accounting


def format_bits_array(f: BlockFormat, bs: BlockSize, z: np.ndarray, b: int) -> np.ndarray:
    """Vectorised :func:`block_format_bits` over an array of block counts."""
    z = np.asarray(z, dtype=np.int64)
    h, w = bs.h, bs.w
    if f == BlockFormat.COO:
        return z * (bs.k + bs.l + b)
    if f == BlockFormat.CSR:
        # h cumulative end offsets, each holding a value in 0..z:
        # ceil(log2(z + 1)) == bit_length(z), which frexp yields exactly
        return z * (b + bs.l) + h * np.frexp(z)[1].astype(np.int64)
    if f == BlockFormat.BITMAP:
        return z * b + h * w
    if f == BlockFormat.DENSE:
        return np.full(z.shape, h * w * b, dtype=np.int64)
    raise ValueError(f"unknown block format {f!r}")


def block_format_bits(f: BlockFormat, bs: BlockSize, z: int, b: int) -> int:
    """Bits of one block body holding ``z`` nonzeros in format ``f``."""
    b = check_precision(b)
    if not 1 <= z <= bs.h * bs.w:
        raise ValueError(f"block nonzero count must lie in 1..{bs.h * bs.w}, got {z}")
    return int(format_bits_array(BlockFormat(f), bs, np.array([z]), b)[0])


def structure_overhead(bm: BlockNnzMap) -> int:
    """Block-column indices plus per-block-row counts of nonzero blocks."""
    return bm.nblocks * bits_for(bm.N) + bm.M * bits_for(bm.N + 1)


class _Evaluation:
    """Per-block bits of all four formats for one map and precision."""

    def __init__(self, bm: BlockNnzMap, b: int):
        self.bm = bm
        self.b = b
        self.per_block = np.stack(
            [format_bits_array(f, bm.size, bm.z, b) for f in ALL_FORMATS]
        )
        self.totals = [int(t) for t in self.per_block.sum(axis=1)]
        self.overhead = structure_overhead(bm)

    def chosen_formats(self, scheme: Scheme) -> np.ndarray:
        idx = np.array([int(f) for f in scheme.formats])
        if scheme.kind is SchemeKind.ADAPTIVE:
            # argmin takes the first minimum: COO < CSR < bitmap < dense
            return idx[np.argmin(self.per_block[idx], axis=0)]
        if scheme.kind is SchemeKind.MIN_FIXED:
            best = min(idx, key=lambda i: (self.totals[i], i))
            return np.full(self.bm.nblocks, best, dtype=np.int64)
        return np.full(self.bm.nblocks, idx[0], dtype=np.int64)

    def bits(self, scheme: Scheme) -> int:
        idx = [int(f) for f in scheme.formats]
        if scheme.kind is SchemeKind.FIXED:
            return self.overhead + self.totals[idx[0]]
        if scheme.kind is SchemeKind.MIN_FIXED:
            return self.overhead + min(self.totals[i] for i in idx) + TAG_BITS
        body = int(self.per_block[idx].min(axis=0).sum())
        return self.overhead + body + TAG_BITS * self.bm.nblocks


def _as_map(source, bs: BlockSize | None) -> BlockNnzMap:
    if isinstance(source, BlockNnzMap):
        if bs is not None and bs != source.size:
            raise ValueError("block size does not match the given map")
        return source
    if bs is None:
        raise ValueError("a block size is required when passing a matrix")
    if source.nnz_stored == 0:
        raise ValueError("footprints are defined for nonempty matrices only")
    return block_nnz_map(source, bs)


def mmf(source, scheme: Scheme, bs: BlockSize | None, b: int) -> int:
    """Footprint in bits of a matrix (or its block map) under ``scheme``."""
    b = check_precision(b)
    bm = _as_map(source, bs)
    if bm.nblocks == 0:
        raise ValueError("footprints are defined for nonempty matrices only")
    return _Evaluation(bm, b).bits(scheme)


def chosen_formats(source, scheme: Scheme, bs: BlockSize | None, b: int) -> np.ndarray:
    """Format code of every nonzero block under ``scheme`` (lexicographic block order)."""
    return _Evaluation(_as_map(source, bs), check_precision(b)).chosen_formats(scheme)


# --------------------------------------------------------------------------
# Footprint tables


@dataclass
class FootprintTable:
    """Bits for every (scheme, block size) cell, for one matrix and precision."""

    matrix_id: str
    b: int
    cells: dict[tuple[Scheme, BlockSize], int] = field(default_factory=dict)

    @property
    def schemes(self) -> list[Scheme]:
        return sorted({s for s, _ in self.cells}, key=scheme_order)

    @property
    def sizes(self) -> list[BlockSize]:
        return sorted({bs for _, bs in self.cells})

    def __getitem__(self, key: tuple[Scheme, BlockSize]) -> int:
        return self.cells[key]

    def minimum(self, schemes: Iterable[Scheme] = S6, sizes: Iterable[BlockSize] = B64) -> int:
        sizes = list(sizes)
        try:
            return min(self.cells[(s, bs)] for s in schemes for bs in sizes)
        except KeyError as exc:
            raise KeyError(f"footprint table lacks cell {exc.args[0]}") from None

    def to_dict(self) -> dict:
        return {
            "matrix": self.matrix_id,
            "precision": self.b,
            "cells": [
                {"scheme": s.name, "block_size": bs.label, "k": bs.k, "l": bs.l, "bits": bits}
                for (s, bs), bits in sorted(
                    self.cells.items(), key=lambda kv: (scheme_order(kv[0][0]), kv[0][1])
                )
            ],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "FootprintTable":
        cells = {
            (scheme_from_name(c["scheme"]), BlockSize(c["k"], c["l"])): int(c["bits"])
            for c in d["cells"]
        }
        return cls(d["matrix"], int(d["precision"]), cells)


def footprint_tables(
    A: SparseMatrix,
    precisions: Iterable[int] = (32, 64),
    schemes: Iterable[Scheme] = EXTENDED_SCHEMES,
    sizes: Iterable[BlockSize] = B64,
    matrix_id: str = "",
    maps: Mapping[BlockSize, BlockNnzMap] | None = None,
) -> dict[int, FootprintTable]:
    """Evaluate every cell of ``schemes x sizes`` for each precision."""
    if A.nnz_stored == 0:
        raise ValueError("footprints are defined for nonempty matrices only")
    schemes = list(schemes)
    precisions = [check_precision(b) for b in precisions]
    if maps is None:
        maps = block_maps(A, sizes)
    tables = {b: FootprintTable(matrix_id, b) for b in precisions}
    for bs in sorted(set(sizes)):
        for b in precisions:
            ev = _Evaluation(maps[bs], b)
            for s in schemes:
                tables[b].cells[(s, bs)] = ev.bits(s)
    return tables


def footprint_table(A: SparseMatrix, b: int, **kw) -> FootprintTable:
    return footprint_tables(A, (b,), **kw)[b]
