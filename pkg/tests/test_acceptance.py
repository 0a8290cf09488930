"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v`` (lines appear in the
terminal summary) or ``python tests/test_acceptance.py``.

Real-matrix criteria read from the fetch cache (``BLOCKMMF_CACHE``) and
download on a miss; ``BLOCKMMF_ACCEPTANCE_IDS`` overrides the id list with a
comma-separated one.
"""
from __future__ import annotations

import functools
import os
import sys
import tempfile
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from blockmmf.blocks import (  # noqa: E402
    ADAPTIVE_WO_CSR,
    B64,
    MIN_FIXED_WO_CSR,
    S6,
    BlockFormat,
    BlockSize,
    _Evaluation,
    block_format_bits,
    block_maps,
    block_nnz_map,
    mmf,
)
from blockmmf.codec import Container, decode, encode  # noqa: E402
from blockmmf.corpus import build_record, consistency_experiment  # noqa: E402
from blockmmf.fetch import FetchError, fetch  # noqa: E402
from blockmmf.matrix_io import SparseMatrix, parse_matrix_market, write_matrix_market  # noqa: E402
from blockmmf.optimizer import SIZE_SETS, SearchSpace, delta  # noqa: E402
from blockmmf.report import JobConfig, corpus_run  # noqa: E402

from conftest import record_criterion  # noqa: E402

MIN_FIXED, ADAPTIVE = S6[4], S6[5]
B8 = SIZE_SETS["B8"]
NON_SQUARE = [bs for bs in B64 if bs.k != bs.l]
REAL_IDS = ["HB/bcsstk17", "HB/bcsstk25", "Bai/af23560", "HB/psmigr_1", "Simon/olafu", "FIDAP/ex11"]


def _matrix(rng, max_dim, dmin=1e-4, dmax=0.5, symmetric=None):
    m = int(np.exp(rng.uniform(0, np.log(max_dim)))) or 1
    sym = bool(rng.integers(2)) if symmetric is None else symmetric
    n = m if sym else max(1, int(np.exp(rng.uniform(0, np.log(max_dim)))))
    dens = float(np.exp(rng.uniform(np.log(dmin), np.log(dmax))))
    nnz = max(1, int(round(dens * m * n)))
    key = rng.choice(m * n, size=min(nnz, m * n), replace=False)
    return SparseMatrix.from_coords(m, n, key // n, key % n, "symmetric" if sym else "general")


def _random_values(rng, count, b):
    # arbitrary bit patterns: NaN payloads, infinities, subnormals, signed zeros
    if b == 32:
        bits = rng.integers(0, 2**32, count, dtype=np.uint64).astype(np.uint32)
        bits[bits == 0] = 1
        return bits.view(np.float32)
    bits = rng.integers(0, 2**64, count, dtype=np.uint64)
    bits[bits == 0] = 1
    return bits.view(np.float64)


@functools.lru_cache(maxsize=None)
def synthetic_corpus(count=80, seed=2024):
    rng = np.random.default_rng(seed)
    return [_matrix(rng, 400, 1e-3, 0.4) for _ in range(count)]


@functools.lru_cache(maxsize=None)
def synthetic_records():
    return [build_record(A, f"s{i}") for i, A in enumerate(synthetic_corpus())]


@functools.lru_cache(maxsize=None)
def real_matrices():
    env = os.environ.get("BLOCKMMF_ACCEPTANCE_IDS")
    ids = [s.strip() for s in env.split(",") if s.strip()] if env else REAL_IDS
    got, missing = [], []
    for ident in ids:
        try:
            got.append((ident, parse_matrix_market(fetch(ident, timeout=120))))
        except FetchError as exc:
            missing.append(f"{ident}: {exc}")
    return got, missing


def _check(n, ok, detail):
    record_criterion(n, ok, detail)
    assert ok, f"criterion {n}: {detail}"


# --------------------------------------------------------------------------


def criterion_1():
    rng = np.random.default_rng(1)
    count = configs = 0
    kinds = set()
    for i in range(200):
        A = _matrix(rng, 1024)
        kinds.add(A.symmetry)
        sizes = list(B8) + [NON_SQUARE[j] for j in rng.choice(len(NON_SQUARE), 4, replace=False)]
        for b in (32, 64):
            vals = _random_values(rng, A.nnz_stored, b)
            ut = np.uint32 if b == 32 else np.uint64
            for bs in sizes:
                ev = _Evaluation(block_nnz_map(A, bs), b)
                for s in S6:
                    cont = encode(A, s, bs, b, vals)
                    if cont.payload_bits != ev.bits(s):
                        return False, f"matrix {i} {s.name} {bs.label} b={b}: payload {cont.payload_bits} != model {ev.bits(s)}"
                    B, v = decode(Container.from_bytes(cont.to_bytes()))
                    if not B.same_structure(A) or not np.array_equal(v.view(ut), vals.view(ut)):
                        return False, f"matrix {i} {s.name} {bs.label} b={b}: round trip differs"
                    configs += 1
        count += 1
    ok = kinds == {"general", "symmetric"}
    return ok, f"{count} matrices, {configs} configurations, payload == model and round trip exact"


def _division_oracle(A, bs):
    N = -(-A.n // bs.w)
    key = (A.rows // bs.h) * N + (A.cols // bs.w)
    uniq, z = np.unique(key, return_counts=True)
    return uniq // N, uniq % N, z


def criterion_2():
    rng = np.random.default_rng(2)
    for i in range(50):
        A = _matrix(rng, 512, 1e-3, 0.3)
        maps = block_maps(A)
        for bs in B64:
            R, C, z = _division_oracle(A, bs)
            for bm in (block_nnz_map(A, bs), maps[bs]):
                if not (np.array_equal(bm.R, R) and np.array_equal(bm.C, C) and np.array_equal(bm.z, z)):
                    return False, f"matrix {i} at {bs.label} differs from the division oracle"
    return True, "50 matrices x 64 sizes, shift and hierarchy paths equal the oracle"


def criterion_3():
    eye = SparseMatrix.from_coords(16, 16, np.arange(16), np.arange(16))
    bs = BlockSize(2, 2)
    got = [mmf(eye, s, bs, 32) for s in (S6[0], S6[2], MIN_FIXED, ADAPTIVE, S6[3])]
    blocks = [block_format_bits(f, BlockSize(3, 3), 4, 64) for f in BlockFormat]
    ok = got == [596, 596, 598, 604, 2068] and blocks == [280, 292, 320, 4096]
    return ok, f"identity cells {got}, 8x8 z=4 b=64 blocks {blocks}"


def criterion_4():
    worst = {32: np.inf, 64: np.inf}
    low = np.inf
    recs = [r for r, _ in synthetic_records()]
    for rec in recs:
        for b in (32, 64):
            worst[b] = min(worst[b], rec.metrics[b].gamma_csr32)
            low = min(low, rec.metrics[b].gamma_blocked)
    ok = worst[32] >= 100 and worst[64] >= 50 and low >= 0
    return ok, (f"{len(recs)} matrices: min Gamma_CSR32 {worst[32]:.2f} (b=32), "
                f"{worst[64]:.2f} (b=64); min Gamma_blocked {low:.2f}")


def criterion_5():
    checked = 0
    for (rec, tables), A in zip(synthetic_records(), synthetic_corpus()):
        maps = block_maps(A)
        for b, t in tables.items():
            if delta(t, SearchSpace(S6, B64)) != 0:
                return False, f"{rec.matrix_id} b={b}: Delta(S6, B64) != 0"
            for s in S6:
                chain = [delta(t, SearchSpace((s,), SIZE_SETS[n])) for n in ("B64", "B20", "B14", "B8")]
                if min(chain) < 0 or chain != sorted(chain):
                    return False, f"{rec.matrix_id} b={b} {s.name}: chain {chain} not antitone"
            for bs in B64:
                nb = maps[bs].nblocks
                if t[(ADAPTIVE, bs)] - 2 * nb > t[(MIN_FIXED, bs)] - 2:
                    return False, f"{rec.matrix_id} b={b} {bs.label}: tag-free adaptive > min-fixed"
            checked += 1
    return True, f"{checked} (matrix, precision) tables: Delta >= 0, zero on S6xB64, antitone, tag-free adaptive <= min-fixed"


def _csr_bits(A, bs, b, scheme):
    ev = _Evaluation(block_nnz_map(A, bs), b)
    fmt = ev.chosen_formats(scheme)
    sel = fmt == int(BlockFormat.CSR)
    return int(ev.per_block[int(BlockFormat.CSR)][sel].sum())


def criterion_6_synthetic():
    for (rec, t64), A in zip(synthetic_records(), synthetic_corpus()):
        for b, t in t64.items():
            for bs in B64:
                for full, wo in ((MIN_FIXED, MIN_FIXED_WO_CSR), (ADAPTIVE, ADAPTIVE_WO_CSR)):
                    growth = t[(wo, bs)] - t[(full, bs)]
                    if growth < 0 or growth > _csr_bits(A, bs, b, full):
                        return False, f"{rec.matrix_id} b={b} {bs.label} {full.name}: growth {growth}"
    return True, f"{len(synthetic_corpus())} synthetic matrices: w/o-CSR >= full, growth <= CSR-block bits"


def criterion_6_real():
    mats, missing = real_matrices()
    if len(mats) < 5:
        return False, f"only {len(mats)} real matrices available (need 5); " + (missing[0] if missing else "")
    worst = 0.0
    for ident, A in mats:
        _, tables = build_record(A, ident)
        for b, t in tables.items():
            for full, wo in ((MIN_FIXED, MIN_FIXED_WO_CSR), (ADAPTIVE, ADAPTIVE_WO_CSR)):
                g = delta(t, SearchSpace((wo,), B64)) - delta(t, SearchSpace((full,), B64))
                worst = max(worst, g)
                if g < 0 or g > 1.0:
                    return False, f"{ident} b={b} {full.name}: Delta growth {g:.4f} pp"
    return True, f"{len(mats)} real matrices: max Delta growth {worst:.4f} pp"


def criterion_6():
    ok_s, detail_s = criterion_6_synthetic()
    ok_r, detail_r = criterion_6_real()
    return ok_s and ok_r, f"synthetic {'ok' if ok_s else 'FAILED'}: {detail_s} | real {'ok' if ok_r else 'FAILED'}: {detail_r}"


def criterion_7():
    mats, missing = real_matrices()
    mats = [(i, A) for i, A in mats if A.nnz_all > 10**5]
    if len(mats) < 5:
        return False, f"only {len(mats)} real matrices with nnz > 1e5 available (need 5); " + (missing[0] if missing else "")
    for ident, A in mats:
        rec, _ = build_record(A, ident)
        l32, l64 = rec.metrics[32].savings, rec.metrics[64].savings
        if not (l32 > 0 and l64 > 0 and l32 > l64):
            return False, f"{ident}: Lambda32 {l32:.2f}, Lambda64 {l64:.2f}"
    return True, f"{len(mats)} real matrices: Lambda > 0 and Lambda32 > Lambda64"


def criterion_8():
    tables = [t[64] for _, t in synthetic_records()]
    a = consistency_experiment(tables, MIN_FIXED, B64, "B64", 40, 50, seed=11)
    b = consistency_experiment(tables, MIN_FIXED, B64, "B64", 40, 50, seed=11)
    one = consistency_experiment(tables, ADAPTIVE, B8, "B8", 40, 1, seed=3)
    if a != b or one.std_avg != 0 or one.std_max != 0:
        return False, "consistency experiment not deterministic or trials=1 spread nonzero"
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        inputs = []
        for i, A in enumerate(synthetic_corpus()[:8]):
            p = tmp / f"s{i}.mtx"
            p.write_text(write_matrix_market(A))
            inputs.append(str(p))
        outs = []
        for run, jobs in (("r1", 1), ("r2", 2)):
            cfg = JobConfig(inputs=inputs, output=str(tmp / run), thresholds=False, jobs=jobs,
                            subset_size=5, trials=10, seed=5)
            if corpus_run(cfg) != 0:
                return False, "corpus run failed"
            outs.append({p.name: p.read_bytes() for p in (tmp / run).iterdir()})
    if outs[0] != outs[1]:
        return False, "corpus reruns differ"
    return True, f"consistency reproducible, trials=1 gives zero spread, {len(outs[0])} report files byte-identical"


# --------------------------------------------------------------------------


def test_criterion_1_codec_matches_model():
    _check(1, *criterion_1())


def test_criterion_2_counting_oracle():
    _check(2, *criterion_2())


def test_criterion_3_hand_computed_cells():
    _check(3, *criterion_3())


def test_criterion_4_algebraic_floors():
    _check(4, *criterion_4())


def test_criterion_5_delta_properties():
    _check(5, *criterion_5())


def test_criterion_6_without_csr():
    _check(6, *criterion_6())


def test_criterion_7_real_savings():
    _check(7, *criterion_7())


def test_criterion_8_determinism():
    _check(8, *criterion_8())


def test_criterion_9_full_reproduction():
    """Optional: a user-supplied id list (``BLOCKMMF_REPRO_LIST``) through the whole pipeline."""
    listing = os.environ.get("BLOCKMMF_REPRO_LIST")
    if not listing:
        record_criterion(9, None, "optional, not gating: set BLOCKMMF_REPRO_LIST to run")
        pytest.skip("optional full-reproduction run; BLOCKMMF_REPRO_LIST not set")
    ids = [s.split("#")[0].strip() for s in Path(listing).read_text().splitlines()]
    ids = [s for s in ids if s]
    with tempfile.TemporaryDirectory() as tmp:
        code = corpus_run(JobConfig(inputs=ids, output=tmp))
        present = {p.name for p in Path(tmp).iterdir()}
    need = {"table2_schemes.csv", "table5_reduced.csv", "table7_savings.csv", "table8_lower_bounds.csv"}
    _check(9, code in (0, 1) and need <= present, f"{len(ids)} ids, exit code {code}")


if __name__ == "__main__":
    failed = 0
    for n, fn in enumerate([criterion_1, criterion_2, criterion_3, criterion_4, criterion_5,
                            criterion_6, criterion_7, criterion_8], 1):
        ok, detail = fn()
        failed += not ok
        print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}", flush=True)
    print("criterion 9: SKIP  optional, not gating")
    sys.exit(1 if failed else 0)
