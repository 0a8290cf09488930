"""Corpus-level metrics: selection, savings against CSR32, lower-bound gaps, consistency."""
from __future__ import annotations

import hashlib
import statistics
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .blocks import B64, EXTENDED_SCHEMES, S6, FootprintTable, Scheme, footprint_tables
from .matrix_io import (
    SparseMatrix,
    csr32_footprint,
    density,
    lower_bound,
    row_uniformity,
)
from .optimizer import FULL_SPACE, SearchSpace, Stats, _best_cell, delta

NNZ_THRESHOLD = 10**5
UNKNOWN_KIND = "unknown"


def lambda_savings(optimal_bits: int, csr32_bits: int) -> float:
    """Percent of the CSR32 footprint saved by the optimal blocked layout."""
    return (1.0 - optimal_bits / csr32_bits) * 100.0


def gamma(bits: int, lower_bound_bits: int) -> float:
    """Percent by which a footprint exceeds the values-only lower bound."""
    return (bits / lower_bound_bits - 1.0) * 100.0


def structure_fingerprint(A: SparseMatrix) -> str:
    h = hashlib.sha256()
    h.update(np.array([A.m, A.n], dtype="<i8").tobytes())
    h.update(A.rows.astype("<i8").tobytes())
    h.update(A.cols.astype("<i8").tobytes())
    return h.hexdigest()


@dataclass
class PrecisionMetrics:
    optimal_bits: int
    optimal_scheme: str
    optimal_size: str
    csr32_bits: int
    lower_bound_bits: int
    savings: float          # Lambda
    gamma_blocked: float
    gamma_csr32: float


@dataclass
class CorpusRecord:
    matrix_id: str
    kind: str
    m: int
    n: int
    symmetry: str
    field: str
    nnz_all: int
    nnz_stored: int
    fingerprint: str
    density_all: float
    density_stored: float
    prnnz_std_all: float
    prnnz_std_stored: float
    metrics: dict[int, PrecisionMetrics] = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["metrics"] = {str(b): asdict(pm) for b, pm in self.metrics.items()}
        return d

    @classmethod
    def from_dict(cls, d) -> "CorpusRecord":
        d = dict(d)
        metrics = {int(b): PrecisionMetrics(**pm) for b, pm in d.pop("metrics").items()}
        return cls(**d, metrics=metrics)


def build_record(
    A: SparseMatrix,
    matrix_id: str,
    kind: str | None = None,
    precisions: Iterable[int] = (32, 64),
    schemes: Iterable[Scheme] = EXTENDED_SCHEMES,
) -> tuple[CorpusRecord, dict[int, FootprintTable]]:
    """Evaluate a matrix over S6 x B64 (plus extra schemes) and derive its metrics."""
    schemes = list(dict.fromkeys(list(S6) + list(schemes)))
    tables = footprint_tables(A, precisions, schemes=schemes, sizes=B64, matrix_id=matrix_id)
    rho = density(A)
    std = row_uniformity(A)
    rec = CorpusRecord(
        matrix_id=matrix_id,
        kind=kind or A.meta.get("kind", UNKNOWN_KIND),
        m=A.m,
        n=A.n,
        symmetry=A.symmetry,
        field=A.field,
        nnz_all=A.nnz_all,
        nnz_stored=A.nnz_stored,
        fingerprint=structure_fingerprint(A),
        density_all=rho[0],
        density_stored=rho[1],
        prnnz_std_all=std[0],
        prnnz_std_stored=std[1],
    )
    for b, table in tables.items():
        s, bs, bits = _best_cell(table, FULL_SPACE)
        csr = csr32_footprint(A, b)
        lb = lower_bound(A, b)
        rec.metrics[b] = PrecisionMetrics(
            optimal_bits=bits,
            optimal_scheme=s.name,
            optimal_size=bs.label,
            csr32_bits=csr,
            lower_bound_bits=lb,
            savings=lambda_savings(bits, csr),
            gamma_blocked=gamma(bits, lb),
            gamma_csr32=gamma(csr, lb),
        )
    return rec, tables


# --------------------------------------------------------------------------
# Selection


@dataclass
class Selection:
    kept: list[CorpusRecord]
    excluded: list[tuple[CorpusRecord, str]]

    def kind_counts(self) -> dict[str, int]:
        return dict(sorted(Counter(r.kind for r in self.kept).items()))


def filter_corpus(
    records: Sequence[CorpusRecord],
    thresholds: bool = True,
    min_nnz: int = NNZ_THRESHOLD,
) -> Selection:
    """Keep real matrices with more than ``min_nnz`` nonzeros and a unique structure.

    With ``thresholds=False`` only the unique-structure rule applies.
    """
    kept, excluded, seen = [], [], {}
    for rec in records:
        if thresholds and rec.field not in ("real", "integer"):
            excluded.append((rec, f"field {rec.field} is not real"))
        elif thresholds and rec.nnz_all <= min_nnz:
            excluded.append((rec, f"nnz_all {rec.nnz_all} <= {min_nnz}"))
        elif rec.fingerprint in seen:
            excluded.append((rec, f"same structure as {seen[rec.fingerprint]}"))
        else:
            seen[rec.fingerprint] = rec.matrix_id
            kept.append(rec)
    return Selection(kept, excluded)


# --------------------------------------------------------------------------
# Criteria


def metric_stats(records: Sequence[CorpusRecord], b: int, name: str) -> Stats:
    return Stats.of([getattr(r.metrics[b], name) for r in records])


def lower_bound_counts(records: Sequence[CorpusRecord], b: int, limits=(1, 2, 5)) -> dict:
    """How many matrices come within ``limit`` percent of their lower bound."""
    return {lim: sum(r.metrics[b].gamma_blocked <= lim for r in records) for lim in limits}


def criterion_breakdown(records: Sequence[CorpusRecord], b: int) -> dict:
    """Savings grouped by problem kind, plus (density, savings) and (row std-dev, savings) series."""
    groups: dict[str, list[float]] = {}
    for r in records:
        groups.setdefault(r.kind, []).append(r.metrics[b].savings)
    scatter = {
        variant: [
            {
                "matrix": r.matrix_id,
                "density": getattr(r, f"density_{variant}"),
                "prnnz_std": getattr(r, f"prnnz_std_{variant}"),
                "savings": r.metrics[b].savings,
            }
            for r in records
        ]
        for variant in ("all", "stored")
    }
    return {
        "groups": {k: (len(v), Stats.of(v)) for k, v in sorted(groups.items())},
        "scatter": scatter,
    }


# --------------------------------------------------------------------------
# Consistency


def sample_indices(rng: np.random.Generator, population: int, size: int) -> list[int]:
    """Uniform ``size``-subset of ``range(population)``.

    Partial Fisher-Yates over raw 64-bit PCG64 outputs with rejection, so the
    draw depends only on the bit generator stream (stable across numpy
    releases), not on ``Generator`` method internals.
    """
    idx = list(range(population))
    bg = rng.bit_generator
    for i in range(size):
        span = population - i
        limit = (1 << 64) - ((1 << 64) % span)
        while True:
            x = int(bg.random_raw())
            if x < limit:
                break
        j = i + x % span
        idx[i], idx[j] = idx[j], idx[i]
    return idx[:size]


@dataclass(frozen=True)
class ConsistencyResult:
    scheme: str
    size_set: str
    b: int
    trials: int
    subset_size: int
    seed: int
    std_avg: float
    std_max: float
    corpus_avg: float
    corpus_max: float

    @property
    def normalized_std_avg(self) -> float:
        """``std_avg`` as a percent of the whole-corpus average delta."""
        return self.std_avg / self.corpus_avg * 100.0 if self.corpus_avg else 0.0

    @property
    def normalized_std_max(self) -> float:
        return self.std_max / self.corpus_max * 100.0 if self.corpus_max else 0.0


def consistency_experiment(
    tables: Sequence[FootprintTable],
    scheme: Scheme,
    sizes: Sequence,
    size_set: str = "",
    subset_size: int = 200,
    trials: int = 50,
    seed: int = 0,
) -> ConsistencyResult:
    """Spread of the average and maximum delta across random matrix subsets."""
    if not tables:
        raise ValueError("consistency needs a nonempty corpus")
    if subset_size > len(tables):
        raise ValueError(f"subset size {subset_size} exceeds corpus size {len(tables)}")
    if subset_size < 1 or trials < 1:
        raise ValueError("subset size and trial count must be positive")
    space = SearchSpace((scheme,), tuple(sizes))
    deltas = [delta(t, space) for t in tables]
    rng = np.random.Generator(np.random.PCG64(seed))
    avgs, maxs = [], []
    for _ in range(trials):
        pick = [deltas[i] for i in sample_indices(rng, len(deltas), subset_size)]
        avgs.append(statistics.fmean(pick))
        maxs.append(max(pick))
    return ConsistencyResult(
        scheme=scheme.name,
        size_set=size_set,
        b=tables[0].b,
        trials=trials,
        subset_size=subset_size,
        seed=seed,
        std_avg=statistics.pstdev(avgs),
        std_max=statistics.pstdev(maxs),
        corpus_avg=statistics.fmean(deltas),
        corpus_max=max(deltas),
    )
