from __future__ import annotations

import numpy as np
import pytest
from hypothesis import strategies as st

from blockmmf import kernels
from blockmmf.matrix_io import SparseMatrix


def random_matrix(rng, m, n, dens, symmetric=False):
    nnz = max(1, int(round(dens * m * n)))
    rows = rng.integers(0, m, nnz)
    cols = rng.integers(0, n, nnz)
    sym = "symmetric" if symmetric else "general"
    return SparseMatrix.from_coords(m, n, rows, cols, sym)


def identity(n):
    return SparseMatrix.from_coords(n, n, np.arange(n), np.arange(n))


@st.composite
def matrices(draw, max_dim=96, symmetric=None):
    m = draw(st.integers(1, max_dim))
    sym = draw(st.booleans()) if symmetric is None else symmetric
    n = m if sym else draw(st.integers(1, max_dim))
    coords = draw(st.lists(st.tuples(st.integers(0, m - 1), st.integers(0, n - 1)),
                           min_size=1, max_size=200))
    r, c = zip(*coords)
    return SparseMatrix.from_coords(m, n, r, c, "symmetric" if sym else "general")


@pytest.fixture(params=sorted(kernels.IMPLEMENTATIONS))
def kernel_impl(request, monkeypatch):
    """Run a test once per available kernel implementation."""
    mod = kernels.IMPLEMENTATIONS[request.param]
    for name in ("bucket", "pack_fields", "read_fields", "scan_blocks"):
        monkeypatch.setattr(kernels, name, getattr(mod, name))
    return request.param


# -- acceptance reporting ---------------------------------------------------

ACCEPTANCE: dict[int, tuple] = {}


def record_criterion(n: int, ok, detail: str) -> None:
    ACCEPTANCE[n] = (ok, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        status = "SKIP" if ok is None else ("PASS" if ok else "FAIL")
        terminalreporter.write_line(f"criterion {n}: {status}  {detail}")
