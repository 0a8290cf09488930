"""Hot-kernel dispatch: the compiled extension when importable, else numpy.

Set ``BLOCKMMF_PURE_PYTHON=1`` to force the fallback. Both implementations
expose the same functions:

``bucket(rows, cols, weights, rshift, cshift, ncols_out)``
    Group coordinates (rows sorted ascending) into cells
    ``(row >> rshift, col >> cshift)`` and sum weights (1 when None).
    Returns lexicographically sorted ``(R, C, z)`` arrays.
``pack_fields(values, widths)``
    Concatenate unsigned fields MSB-first; returns ``(bytes_array, nbits)``.
``read_fields(buf, offsets, widths)``
    Vectorised inverse: read fields at arbitrary bit offsets.
``scan_blocks(...)``
    Walk the nonzero-block sequence of a container payload.
"""
from __future__ import annotations

import os

from . import _fallback

try:
    if os.environ.get("BLOCKMMF_PURE_PYTHON"):
        raise ImportError("pure-python mode requested")
    from . import _speedups as _impl
    COMPILED = True
except ImportError:
    _impl = _fallback
    COMPILED = False

bucket = _impl.bucket
pack_fields = _impl.pack_fields
read_fields = _impl.read_fields
scan_blocks = _impl.scan_blocks
bits_for = _fallback.bits_for

IMPLEMENTATIONS = {"python": _fallback}
if COMPILED:
    IMPLEMENTATIONS["compiled"] = _impl
