"""Per-matrix analysis files and corpus report directories.

Every JSON document carries ``schema_version``; CSV files use ``.`` as the
decimal separator and two-decimal percents (round half to even). Report
contents depend only on the inputs and the job configuration, never on
timing or the degree of parallelism.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .blocks import (
    ADAPTIVE_WO_CSR,
    B64,
    EXTENDED_SCHEMES,
    MIN_FIXED_WO_CSR,
    S6,
    BlockSize,
    FootprintTable,
    Scheme,
)
from .corpus import (
    CorpusRecord,
    build_record,
    consistency_experiment,
    criterion_breakdown,
    filter_corpus,
    lower_bound_counts,
    metric_stats,
)
from .fetch import fetch
from .matrix_io import SparseMatrix, parse_matrix_market
from .optimizer import (
    SIZE_SETS,
    SearchSpace,
    _best_cell,
    fmt_percent,
    optimal_scheme_counts,
    rank_block_sizes,
    u_set,
)

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
MIN_FIXED, ADAPTIVE = S6[4], S6[5]


@dataclass
class JobConfig:
    inputs: list[str] = field(default_factory=list)
    precisions: tuple[int, ...] = (32, 64)
    schemes: tuple[Scheme, ...] = S6
    sizes: tuple[BlockSize, ...] = B64
    size_set: str = "B64"
    output: str = "."
    thresholds: bool = True
    seed: int = 0
    jobs: int = 0                  # 0: all available cores
    subset_size: int = 200
    trials: int = 50
    offline: bool = False
    cache: str | None = None
    strict: bool = False           # exit 1 instead of 0 when some inputs fail

    def __post_init__(self):
        if not self.precisions:
            raise ValueError("at least one precision is required")
        if not set(self.sizes) <= set(B64):
            raise ValueError("custom block sizes must come from B64")

    def describe(self) -> dict:
        return {
            "inputs": list(self.inputs),
            "precisions": list(self.precisions),
            "schemes": [s.name for s in self.schemes],
            "size_set": self.size_set,
            "sizes": [bs.label for bs in self.sizes],
            "thresholds": self.thresholds,
            "seed": self.seed,
            "subset_size": self.subset_size,
            "trials": self.trials,
        }


def load_input(ident: str, offline=False, cache=None) -> tuple[SparseMatrix, str, Path]:
    """Parse a path, or fetch a collection id first. Returns (matrix, id, path)."""
    path = Path(ident)
    if not path.is_file():
        path = fetch(ident, cache=cache, offline=offline)
        matrix_id = ident
    else:
        matrix_id = path.stem
    try:
        A = parse_matrix_market(path)
    except ValueError as exc:
        raise type(exc)(f"{path}: {exc}") from None
    return A, A.meta.get("name", matrix_id), path


# --------------------------------------------------------------------------
# Single-matrix analysis


def analyze_matrix(A: SparseMatrix, matrix_id: str, config: JobConfig) -> dict:
    """JSON-ready document: requested cells, their optimum, and whole-space metrics."""
    extra = [s for s in config.schemes if s not in S6]
    rec, tables = build_record(A, matrix_id, precisions=config.precisions, schemes=extra)
    space = SearchSpace(tuple(config.schemes), tuple(config.sizes))
    doc = {
        "schema_version": SCHEMA_VERSION,
        "matrix": matrix_id,
        "kind": rec.kind,
        "m": A.m,
        "n": A.n,
        "symmetry": A.symmetry,
        "field": A.field,
        "nnz_all": A.nnz_all,
        "nnz_stored": A.nnz_stored,
        "density": {"all": rec.density_all, "stored": rec.density_stored},
        "prnnz_std": {"all": rec.prnnz_std_all, "stored": rec.prnnz_std_stored},
        "precisions": {},
    }
    for b, table in tables.items():
        s, bs, bits = _best_cell(table, space)
        pm = rec.metrics[b]
        doc["precisions"][str(b)] = {
            "cells": [
                {"scheme": c["scheme"], "block_size": c["block_size"], "bits": c["bits"]}
                for c in table.to_dict()["cells"]
                if (c["scheme"], c["block_size"]) in {(x.name, y.label) for x, y in space.cells()}
            ],
            "optimum": {"scheme": s.name, "block_size": bs.label, "bits": bits},
            "optimal_full_space": {
                "scheme": pm.optimal_scheme, "block_size": pm.optimal_size, "bits": pm.optimal_bits,
            },
            "csr32_bits": pm.csr32_bits,
            "lower_bound_bits": pm.lower_bound_bits,
            "savings": pm.savings,
            "gamma_blocked": pm.gamma_blocked,
            "gamma_csr32": pm.gamma_csr32,
        }
    return doc


# --------------------------------------------------------------------------
# Corpus runs


def _process(args):
    ident, precisions, offline, cache = args
    try:
        A, matrix_id, path = load_input(ident, offline, cache)
        rec, tables = build_record(A, matrix_id, precisions=precisions)
        digest = hashlib.sha256(Path(path).read_bytes()).hexdigest()
        return ("ok", ident, rec.to_dict(), {b: t.to_dict() for b, t in tables.items()}, digest)
    except Exception as exc:  # recorded per matrix; the run continues
        return ("error", ident, f"{type(exc).__name__}: {exc}", None, None)


def process_inputs(config: JobConfig):
    jobs = config.jobs or os.cpu_count() or 1
    args = [(i, tuple(config.precisions), config.offline, config.cache) for i in config.inputs]
    if jobs == 1 or len(args) <= 1:
        return [_process(a) for a in args]
    with ProcessPoolExecutor(max_workers=min(jobs, len(args))) as pool:
        return list(pool.map(_process, args))


def _csv(rows: Sequence[Sequence], header: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _p(x: float) -> str:
    return fmt_percent(x)


class _Writer:
    def __init__(self, out: Path):
        self.out = out
        self.files: list[str] = []
        out.mkdir(parents=True, exist_ok=True)

    def text(self, name: str, content: str):
        (self.out / name).write_text(content, encoding="utf-8", newline="\n")
        self.files.append(name)

    def csv(self, name: str, header, rows):
        self.text(name, _csv(rows, header))

    def json(self, name: str, obj):
        self.text(name, json.dumps(obj, indent=1, sort_keys=True) + "\n")


def corpus_tables(records: Sequence[CorpusRecord], tables: dict[int, list[FootprintTable]],
                  config: JobConfig, w: _Writer):
    precisions = sorted(tables)
    w.csv("table1_problem_kinds.csv", ["kind", "matrices"],
          sorted(_kind_counts(records).items()))

    counts = {b: optimal_scheme_counts(tables[b]) for b in precisions}
    w.csv("optimal_schemes.csv", ["scheme"] + [f"b{b}_matrices" for b in precisions],
          [[s.name] + [counts[b][s.name] for b in precisions] for s in S6])

    rows = []
    for s in S6:
        row = [s.name]
        for b in precisions:
            st = u_set(tables[b], SearchSpace((s,), B64))
            row += [_p(st.min), _p(st.mean), _p(st.max)]
        rows.append(row)
    w.csv("table2_schemes.csv",
          ["scheme"] + [f"b{b}_{x}" for b in precisions for x in ("min", "avg", "max")], rows)

    for b in precisions:
        ranking = rank_block_sizes(tables[b])
        w.csv(f"ranking_b{b}.csv", ["rank", "block_size", "avg", "max"],
              [[i + 1, bs.label, _p(a), _p(mx)] for i, (bs, a, mx) in enumerate(ranking)])

    for name, pair in (("table5_reduced.csv", (MIN_FIXED, ADAPTIVE)),
                       ("table9_reduced_wo_csr.csv", (MIN_FIXED_WO_CSR, ADAPTIVE_WO_CSR))):
        rows = []
        for b in precisions:
            for set_name in ("B64", "B20", "B14", "B8"):
                row = [b, set_name]
                for s in pair:
                    st = u_set(tables[b], SearchSpace((s,), SIZE_SETS[set_name]))
                    row += [_p(st.mean), _p(st.max)]
                rows.append(row)
        w.csv(name, ["precision", "size_set"] + [f"{s.name}_{x}" for s in pair for x in ("avg", "max")], rows)

    stat_rows = []
    for label, attr in (("Minimum", "min"), ("Average", "mean"), ("Maximum", "max")):
        stat_rows.append([label] + [_p(getattr(metric_stats(records, b, "savings"), attr)) for b in precisions])
    w.csv("table7_savings.csv", ["statistic"] + [f"b{b}" for b in precisions], stat_rows)

    stat_rows = []
    for label, attr in (("Minimum", "min"), ("Average", "mean"), ("Maximum", "max")):
        row = [label]
        for b in precisions:
            row += [_p(getattr(metric_stats(records, b, "gamma_blocked"), attr)),
                    _p(getattr(metric_stats(records, b, "gamma_csr32"), attr))]
        stat_rows.append(row)
    w.csv("table8_lower_bounds.csv",
          ["statistic"] + [f"b{b}_{x}" for b in precisions for x in ("blocked", "csr32")], stat_rows)
    w.csv("lower_bound_counts.csv", ["precision", "within_percent", "matrices"],
          [[b, lim, c] for b in precisions for lim, c in lower_bound_counts(records, b).items()])

    fig2, fig3 = [], []
    for b in precisions:
        br = criterion_breakdown(records, b)
        for kind, (count, st) in br["groups"].items():
            fig2.append([b, kind, count, _p(st.min), _p(st.mean), _p(st.max)])
        for variant, series in br["scatter"].items():
            for pt in series:
                fig3.append([b, variant, pt["matrix"], repr(pt["density"]),
                             repr(pt["prnnz_std"]), _p(pt["savings"])])
    w.csv("fig2_savings_by_kind.csv", ["precision", "kind", "matrices", "min", "avg", "max"], fig2)
    w.csv("fig3_savings_scatter.csv",
          ["precision", "variant", "matrix", "density", "prnnz_std", "savings"], fig3)

    subset = min(config.subset_size, len(records))
    rows = []
    for b in precisions:
        for s in (MIN_FIXED, ADAPTIVE):
            for set_name in ("B64", "B20", "B14", "B8"):
                r = consistency_experiment(tables[b], s, SIZE_SETS[set_name], set_name,
                                           subset, config.trials, config.seed)
                rows.append([b, s.name, set_name, r.trials, r.subset_size, r.seed,
                             _p(r.std_avg), _p(r.std_max),
                             _p(r.normalized_std_avg), _p(r.normalized_std_max)])
    w.csv("consistency.csv",
          ["precision", "scheme", "size_set", "trials", "subset_size", "seed",
           "std_avg", "std_max", "normalized_std_avg", "normalized_std_max"], rows)


def _kind_counts(records):
    out = {}
    for r in records:
        out[r.kind] = out.get(r.kind, 0) + 1
    return out


RECORD_COLUMNS = [
    "matrix", "kind", "m", "n", "symmetry", "field", "nnz_all", "nnz_stored",
    "density_all", "density_stored", "prnnz_std_all", "prnnz_std_stored",
]


def _record_rows(records, precisions):
    header = list(RECORD_COLUMNS)
    for b in precisions:
        header += [f"b{b}_{x}" for x in ("optimal_bits", "optimal_scheme", "optimal_size",
                                         "csr32_bits", "lower_bound_bits", "savings",
                                         "gamma_blocked", "gamma_csr32")]
    rows = []
    for r in records:
        row = [r.matrix_id, r.kind, r.m, r.n, r.symmetry, r.field, r.nnz_all, r.nnz_stored,
               repr(r.density_all), repr(r.density_stored),
               repr(r.prnnz_std_all), repr(r.prnnz_std_stored)]
        for b in precisions:
            pm = r.metrics[b]
            row += [pm.optimal_bits, pm.optimal_scheme, pm.optimal_size, pm.csr32_bits,
                    pm.lower_bound_bits, _p(pm.savings), _p(pm.gamma_blocked), _p(pm.gamma_csr32)]
        rows.append(row)
    return header, rows


def corpus_run(config: JobConfig) -> int:
    """Analyse every input and write the report directory. Returns the exit code.

    Failing inputs land in ``errors.csv`` and the run goes on; the exit code
    is 2 when nothing survives, otherwise 0 (1 under ``strict``).
    """
    out = Path(config.output)
    w = _Writer(out)
    results = process_inputs(config)
    ok = [r for r in results if r[0] == "ok"]
    errors = [r for r in results if r[0] == "error"]

    records = [CorpusRecord.from_dict(r[2]) for r in ok]
    table_docs = {r[2]["matrix_id"]: r[3] for r in ok}
    digests = {r[1]: r[4] for r in ok}
    selection = filter_corpus(records, thresholds=config.thresholds)
    kept = selection.kept
    precisions = sorted(config.precisions)

    header, rows = _record_rows(kept, precisions)
    w.csv("records.csv", header, rows)
    w.csv("excluded.csv", ["matrix", "reason"],
          [[rec.matrix_id, why] for rec, why in selection.excluded])
    if errors:
        w.csv("errors.csv", ["input", "error"], [[e[1], e[2]] for e in errors])
    w.json("records.json", {"schema_version": SCHEMA_VERSION,
                            "records": [r.to_dict() for r in kept]})
    w.json("tables.json", {"schema_version": SCHEMA_VERSION,
                           "tables": [table_docs[r.matrix_id][b] for r in kept for b in precisions]})
    if kept:
        tables = {b: [FootprintTable.from_dict(table_docs[r.matrix_id][b]) for r in kept]
                  for b in precisions}
        corpus_tables(kept, tables, config, w)
    else:
        log.error("no matrix survived processing and selection")

    manifest = {
        "schema_version": SCHEMA_VERSION,
        "package_version": __version__,
        "numpy_version": np.__version__,
        "rng": "PCG64 raw stream, partial Fisher-Yates with rejection",
        "config": config.describe(),
        "inputs": [{"input": r[1], "sha256": digests.get(r[1])} for r in results],
        "matrices_processed": len(ok),
        "matrices_failed": len(errors),
        "matrices_selected": len(kept),
        "outputs": sorted(w.files + ["manifest.json"]),
    }
    w.json("manifest.json", manifest)
    if not ok or not kept:
        return 2
    return 1 if errors and config.strict else 0


def load_tables(report_dir) -> dict[int, list[FootprintTable]]:
    """Footprint tables saved by :func:`corpus_run`, grouped by precision."""
    doc = json.loads((Path(report_dir) / "tables.json").read_text())
    out: dict[int, list[FootprintTable]] = {}
    for d in doc["tables"]:
        t = FootprintTable.from_dict(d)
        out.setdefault(t.b, []).append(t)
    return out
