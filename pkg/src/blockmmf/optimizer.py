"""Searching scheme x block-size spaces and measuring how much a restricted space loses."""
from __future__ import annotations

import statistics
from dataclasses import dataclass
from decimal import ROUND_HALF_EVEN, Decimal
from typing import Iterable, Sequence

import numpy as np

from .blocks import (
    B64,
    S6,
    BlockSize,
    FootprintTable,
    Scheme,
    SchemeKind,
    chosen_formats,
    footprint_table,
    scheme_order,
)
from .matrix_io import SparseMatrix


def _squares():
    return tuple(BlockSize(k, k) for k in range(1, 9))


def _rect(lo, hi):
    return tuple(BlockSize(k, l) for k in range(lo, hi + 1) for l in range(lo, hi + 1))


def reduced_sets() -> dict[str, tuple[BlockSize, ...]]:
    """Square sizes (B8) extended by the rectangular 4..16 (B14) or 4..32 (B20) grid."""
    b8 = _squares()
    b14 = tuple(sorted(set(b8) | set(_rect(2, 4))))
    b20 = tuple(sorted(set(b8) | set(_rect(2, 5))))
    return {"B8": b8, "B14": b14, "B20": b20}


SIZE_SETS = {"B64": B64, **reduced_sets()}


def parse_size_set(text: str) -> tuple[BlockSize, ...]:
    """``B64``/``B20``/``B14``/``B8`` or a comma list such as ``8x8,4x16``."""
    key = text.strip().upper()
    if key in SIZE_SETS:
        return SIZE_SETS[key]
    sizes = tuple(sorted({BlockSize.parse(t) for t in text.split(",") if t.strip()}))
    if not sizes:
        raise ValueError(f"empty block size set {text!r}")
    return sizes


@dataclass(frozen=True)
class SearchSpace:
    schemes: tuple[Scheme, ...] = S6
    sizes: tuple[BlockSize, ...] = B64

    def __post_init__(self):
        schemes = tuple(self.schemes)
        sizes = tuple(sorted(set(self.sizes)))
        if not schemes or not sizes:
            raise ValueError("a search space needs at least one scheme and one block size")
        if not set(sizes) <= set(B64):
            raise ValueError("block sizes must come from the 2^k x 2^l grid, 1 <= k, l <= 8")
        object.__setattr__(self, "schemes", schemes)
        object.__setattr__(self, "sizes", sizes)

    def cells(self):
        for s in self.schemes:
            for bs in self.sizes:
                yield s, bs


FULL_SPACE = SearchSpace()


@dataclass
class OptimalConfig:
    scheme: Scheme
    size: BlockSize
    bits: int
    formats: np.ndarray | None = None  # per-block format codes when adaptive


def _best_cell(table: FootprintTable, space: SearchSpace) -> tuple[Scheme, BlockSize, int]:
    best = min(
        space.cells(),
        key=lambda c: (table[c], scheme_order(c[0]), c[1].k, c[1].l),
    )
    return best[0], best[1], table[best]


def optimal_config(
    A: SparseMatrix | None,
    space: SearchSpace = FULL_SPACE,
    b: int = 64,
    table: FootprintTable | None = None,
) -> OptimalConfig:
    """Minimum-footprint cell of ``space``.

    Ties go to the earlier scheme (COO, CSR, bitmap, dense, min-fixed,
    adaptive, then the w/o-CSR variants), then to the smaller ``(k, l)``.
    """
    if table is None:
        table = footprint_table(A, b, schemes=space.schemes, sizes=space.sizes)
    s, bs, bits = _best_cell(table, space)
    formats = None
    if A is not None and s.kind is SchemeKind.ADAPTIVE:
        formats = chosen_formats(A, s, bs, table.b)
    return OptimalConfig(s, bs, bits, formats)


def delta(table: FootprintTable, space: SearchSpace) -> float:
    """Percent by which the best cell of ``space`` exceeds the best over S6 x B64."""
    best = table.minimum(S6, B64)
    return (table.minimum(space.schemes, space.sizes) / best - 1.0) * 100.0


@dataclass(frozen=True)
class Stats:
    min: float
    mean: float
    max: float

    @classmethod
    def of(cls, values: Sequence[float]) -> "Stats":
        values = list(values)
        if not values:
            raise ValueError("statistics of an empty set")
        return cls(min(values), statistics.fmean(values), max(values))


def u_set(tables: Iterable[FootprintTable], space: SearchSpace) -> Stats:
    """Min/mean/max of per-matrix deltas over a corpus."""
    return Stats.of([delta(t, space) for t in tables])


def rank_block_sizes(tables: Sequence[FootprintTable]) -> list[tuple[BlockSize, float, float]]:
    """All 64 sizes as ``(size, avg, max)`` of single-size deltas, best average first."""
    if not tables:
        raise ValueError("ranking needs at least one matrix")
    ranked = []
    for bs in B64:
        st = u_set(tables, SearchSpace(S6, (bs,)))
        ranked.append((bs, st.mean, st.max))
    ranked.sort(key=lambda r: (r[1], r[0].k, r[0].l))
    return ranked


def c_set(ranking, n: int) -> tuple[BlockSize, ...]:
    """The first ``n`` sizes of a ranking."""
    return tuple(sorted(r[0] for r in ranking[:n]))


def optimal_scheme_counts(tables: Iterable[FootprintTable], schemes=S6) -> dict[str, int]:
    """How many matrices each scheme is optimal for (after tie-breaking)."""
    counts = {s.name: 0 for s in schemes}
    for t in tables:
        s, _, _ = _best_cell(t, SearchSpace(tuple(schemes), B64))
        counts[s.name] += 1
    return counts


def optimal_size_counts(tables: Iterable[FootprintTable]) -> dict[str, int]:
    counts = {bs.label: 0 for bs in B64}
    for t in tables:
        _, bs, _ = _best_cell(t, FULL_SPACE)
        counts[bs.label] += 1
    return counts


def fmt_percent(x: float) -> str:
    """Two decimals, round-half-to-even on the exact binary value; never ``-0.00``."""
    q = Decimal(x).quantize(Decimal("0.01"), rounding=ROUND_HALF_EVEN)
    return str(q.copy_abs() if q.is_zero() else q)
