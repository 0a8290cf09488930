from __future__ import annotations

import io

import numpy as np
import pytest
import scipy.io
import scipy.sparse
from hypothesis import given, settings

from blockmmf.matrix_io import (
    MatrixMarketError,
    SparseMatrix,
    UnsupportedMatrixError,
    csr32_footprint,
    density,
    lower_bound,
    parse_matrix_market,
    read_matrix_market_values,
    row_counts,
    row_uniformity,
    write_matrix_market,
)

from conftest import identity, matrices, random_matrix

GENERAL_2X2 = """%%MatrixMarket matrix coordinate real general
2 2 2
1 1 1.0
2 2 3.5
"""

SYM_3X3 = """%%MatrixMarket matrix coordinate real symmetric
% kind: structural problem
3 3 3
1 1 2.0
3 1 -1.0
3 3 4.0
"""

DUPS = """%%MatrixMarket matrix coordinate real general
3 3 5
2 2 1.5
2 2 2.5
1 2 0.0
3 1 7
1 1 1
"""


def test_general_2x2():
    A = parse_matrix_market(GENERAL_2X2)
    assert (A.m, A.n, A.nnz_stored) == (2, 2, 2)
    assert A.elements == [(0, 0), (1, 1)]


def test_symmetric_bookkeeping():
    A = parse_matrix_market(SYM_3X3)
    # one off-diagonal element mirrored: 2 * 3 - 2 diagonal entries
    assert A.nnz_stored == 3 and A.nnz_all == 4
    assert all(r >= c for r, c in A.elements)
    assert A.meta["kind"] == "structural problem"
    assert lower_bound(A, 64) == 192


def test_upper_triangle_input_is_reflected():
    text = SYM_3X3.replace("3 1 -1.0", "1 3 -1.0")
    assert parse_matrix_market(text).elements == [(0, 0), (2, 0), (2, 2)]


def _scipy_reference(text):
    ref = scipy.sparse.coo_matrix(scipy.io.mmread(io.StringIO(text))).tocsr()
    ref.sum_duplicates()
    ref.eliminate_zeros()
    ref = scipy.sparse.tril(ref) if "symmetric" in text.splitlines()[0] else ref.tocoo()
    ref = scipy.sparse.coo_matrix(ref)
    order = np.lexsort((ref.col, ref.row))
    return ref.row[order], ref.col[order], ref.data[order]


def test_duplicates_and_zeros_against_scipy():
    A, vals = read_matrix_market_values(DUPS)
    r, c, v = _scipy_reference(DUPS)
    assert A.elements == [(0, 0), (1, 1), (2, 0)]
    assert np.array_equal(A.rows, r) and np.array_equal(A.cols, c)
    assert np.array_equal(vals, v)
    assert (0, 1) not in A.elements


@settings(max_examples=40, deadline=None)
@given(matrices(max_dim=40))
def test_reader_agrees_with_scipy(A):
    rng = np.random.default_rng(A.nnz_stored)
    vals = rng.integers(-3, 4, A.nnz_stored).astype(float)  # some zeros get dropped
    text = write_matrix_market(A, np.where(vals == 0, 1.0, vals))
    B, bv = read_matrix_market_values(text)
    r, c, v = _scipy_reference(text)
    assert np.array_equal(B.rows, r) and np.array_equal(B.cols, c)
    assert np.array_equal(bv, v)


@settings(max_examples=60, deadline=None)
@given(matrices())
def test_write_parse_roundtrip(A):
    B = parse_matrix_market(write_matrix_market(A))
    assert B.same_structure(A)


@settings(max_examples=60, deadline=None)
@given(matrices())
def test_structural_invariants(A):
    key = A.rows * A.n + A.cols
    assert np.all(np.diff(key) > 0)
    if A.symmetry == "symmetric":
        assert np.all(A.rows >= A.cols)
        assert A.nnz_all == 2 * A.nnz_stored - A.nnz_diagonal
    else:
        assert A.nnz_all == A.nnz_stored
        assert density(A)[0] == density(A)[1]
        assert row_uniformity(A)[0] == row_uniformity(A)[1]
    for b in (32, 64):
        lb, csr = lower_bound(A, b), csr32_footprint(A, b)
        assert lb <= csr
        assert (csr / lb - 1) * 100 >= (100 if b == 32 else 50)


@pytest.mark.parametrize("header, word", [
    ("%%MatrixMarket matrix coordinate complex general", "complex"),
    ("%%MatrixMarket matrix coordinate real skew-symmetric", "skew-symmetric"),
    ("%%MatrixMarket matrix coordinate real hermitian", "hermitian"),
    ("%%MatrixMarket matrix array real general", "array"),
])
def test_unsupported_kinds_named(header, word):
    with pytest.raises(UnsupportedMatrixError, match=word):
        parse_matrix_market(header + "\n2 2 1\n1 1 1\n")


@pytest.mark.parametrize("text", [
    "%%MatrixMarket tensor coordinate real general\n2 2 1\n1 1 1\n",
    "%%MatrixMarket matrix coordinate real general\n2 2 1\n3 1 1\n",
    "%%MatrixMarket matrix coordinate real general\n2 2 1\n0 1 1\n",
    "%%MatrixMarket matrix coordinate real general\n2 2 2\n1 1 1\n",
    "%%MatrixMarket matrix coordinate real general\n2 x 1\n1 1 1\n",
    "%%MatrixMarket matrix coordinate real symmetric\n2 3 1\n1 1 1\n",
])
def test_malformed_inputs(text):
    with pytest.raises(MatrixMarketError):
        parse_matrix_market(text)


def test_pattern_files_get_unit_values():
    A, v = read_matrix_market_values(
        "%%MatrixMarket matrix coordinate pattern general\n3 3 2\n1 1\n3 2\n")
    assert A.field == "pattern" and np.array_equal(v, [1.0, 1.0])


def test_reference_quantities():
    eye = identity(16)
    assert csr32_footprint(eye, 32) == 1568
    assert lower_bound(eye, 32) == 512
    assert density(eye) == (6.25, 6.25)
    assert row_uniformity(eye) == (0.0, 0.0)
    full = SparseMatrix.from_coords(10, 10, np.repeat(np.arange(10), 10), np.tile(np.arange(10), 10))
    assert density(full) == (100.0, 100.0)
    empty = SparseMatrix(10, 10, [], [])
    assert density(empty) == (0.0, 0.0)
    assert lower_bound(SparseMatrix(1, 1, [0] * 0, []), 64) == 0
    two_rows = SparseMatrix.from_coords(2, 4, [0, 0, 0, 0], [0, 1, 2, 3])
    assert row_uniformity(two_rows) == (50.0, 50.0)


def test_stored_variant_counts_lower_triangle_only():
    A = parse_matrix_market(SYM_3X3)
    assert row_counts(A, "stored").tolist() == [1, 0, 2]
    assert row_counts(A, "all").tolist() == [2, 0, 2]


def test_precision_is_checked():
    with pytest.raises(ValueError):
        lower_bound(identity(4), 16)


def test_file_and_path_sources(tmp_path):
    p = tmp_path / "a.mtx"
    p.write_text(GENERAL_2X2)
    assert parse_matrix_market(p).same_structure(parse_matrix_market(GENERAL_2X2))
    with open(p) as fh:
        assert parse_matrix_market(fh).nnz_stored == 2


def test_large_random_roundtrip():
    A = random_matrix(np.random.default_rng(3), 700, 500, 0.01, symmetric=False)
    assert parse_matrix_market(write_matrix_market(A)).same_structure(A)
