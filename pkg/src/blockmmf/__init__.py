"""Memory footprints of sparse matrices stored in uniform power-of-two blocks."""
from __future__ import annotations

__version__ = "0.1.0"

from .blocks import (  # noqa: E402
    ADAPTIVE_WO_CSR,
    B64,
    EXTENDED_SCHEMES,
    MIN_FIXED_WO_CSR,
    S6,
    BlockFormat,
    BlockNnzMap,
    BlockSize,
    FootprintTable,
    Scheme,
    SchemeKind,
    block_format_bits,
    block_maps,
    block_nnz_map,
    chosen_formats,
    footprint_table,
    footprint_tables,
    mmf,
    structure_overhead,
)
from .codec import Container, decode, encode, verify  # noqa: E402
from .matrix_io import (  # noqa: E402
    SparseMatrix,
    csr32_footprint,
    density,
    lower_bound,
    parse_matrix_market,
    read_matrix_market_values,
    row_uniformity,
    write_matrix_market,
)
from .optimizer import SIZE_SETS, SearchSpace, delta, optimal_config, rank_block_sizes  # noqa: E402
