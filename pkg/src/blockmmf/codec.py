"""Bit-exact blocked container (``.sbm``).

File layout::

    magic      8 bytes   b"SBMCNTR1"
    header     14 x u32  little-endian, see ``_HEADER``
    side table ceil(side_bits / 8) bytes
    payload    ceil(payload_bits / 8) bytes

The payload is an MSB-first bitstream whose length equals the modelled
footprint exactly::

    [min-fixed: 2-bit format tag]
    M x row count                      ceil(log2(N + 1)) bits each
    for every nonzero block, lexicographic order:
        block column index             ceil(log2 N) bits
        [adaptive: 2-bit format tag]
        body
            COO     z x (row k bits, col l bits, value b bits)
            CSR     h end offsets (ceil(log2(z + 1)) bits), z cols, z values
            bitmap  h*w occupancy bits row-major, then z values
            dense   h*w values row-major, absent elements as all-zero bits

The footprint model does not record how many elements a COO or CSR block
holds, yet a reader needs that number to find where the block ends. Those
counts travel in the side table (``z - 1`` in ``ceil(log2(h*w))`` bits per
COO/CSR block), which, like the header, is reported separately and never
counted in the payload.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .blocks import (
    BlockFormat,
    BlockNnzMap,
    BlockSize,
    Scheme,
    SchemeKind,
    _Evaluation,
    block_nnz_map,
)
from .kernels import bits_for
from .matrix_io import SparseMatrix, check_precision

MAGIC = b"SBMCNTR1"
VERSION = 1
_HEADER = struct.Struct("<8s14I")
HEADER_BYTES = _HEADER.size

_KIND_CODES = {SchemeKind.FIXED: 0, SchemeKind.MIN_FIXED: 1, SchemeKind.ADAPTIVE: 2}
_SYMMETRY_CODES = {"general": 0, "symmetric": 1}

COO, CSR, BITMAP, DENSE = (int(f) for f in BlockFormat)


class ContainerError(ValueError):
    """Base class for container encode/decode failures."""


class BadMagicError(ContainerError):
    pass


class UnsupportedVersionError(ContainerError):
    pass


class TruncatedPayloadError(ContainerError):
    pass


class CorruptContainerError(ContainerError):
    pass


@dataclass(frozen=True)
class Container:
    m: int
    n: int
    symmetry: str
    size: BlockSize
    b: int
    scheme: Scheme
    nnz: int
    payload_bits: int
    payload: bytes
    side_bits: int
    side: bytes
    version: int = VERSION

    @property
    def header_bytes(self) -> int:
        return HEADER_BYTES

    def to_bytes(self) -> bytes:
        head = _HEADER.pack(
            MAGIC,
            self.version,
            self.m,
            self.n,
            _SYMMETRY_CODES[self.symmetry],
            self.size.k,
            self.size.l,
            self.b,
            _KIND_CODES[self.scheme.kind],
            self.scheme.format_mask,
            self.nnz,
            self.payload_bits & 0xFFFFFFFF,
            self.payload_bits >> 32,
            self.side_bits & 0xFFFFFFFF,
            self.side_bits >> 32,
        )
        return head + self.side + self.payload

    @classmethod
    def from_bytes(cls, data: bytes) -> "Container":
        data = bytes(data)
        if len(data) < len(MAGIC) or data[: len(MAGIC)] != MAGIC:
            raise BadMagicError("not a blocked-matrix container (bad magic)")
        if len(data) < HEADER_BYTES:
            raise TruncatedPayloadError("container header truncated")
        (_, version, m, n, sym, k, l, b, kind, mask, nnz,
         pb_lo, pb_hi, sb_lo, sb_hi) = _HEADER.unpack_from(data)
        if version != VERSION:
            raise UnsupportedVersionError(f"unsupported container version {version}")
        try:
            symmetry = {v: key for key, v in _SYMMETRY_CODES.items()}[sym]
            kind = {v: key for key, v in _KIND_CODES.items()}[kind]
            fmts = tuple(f for f in BlockFormat if mask >> int(f) & 1)
            scheme = Scheme(kind, fmts)
            size = BlockSize(k, l)
            b = check_precision(b)
        except (KeyError, ValueError) as exc:
            raise CorruptContainerError(f"invalid header field: {exc}") from None
        payload_bits = pb_lo | (pb_hi << 32)
        side_bits = sb_lo | (sb_hi << 32)
        side_len = (side_bits + 7) // 8
        pay_len = (payload_bits + 7) // 8
        body = data[HEADER_BYTES:]
        if len(body) < side_len + pay_len:
            raise TruncatedPayloadError(
                f"container holds {len(body)} body bytes, header announces {side_len + pay_len}"
            )
        if len(body) > side_len + pay_len:
            raise CorruptContainerError("trailing bytes after the payload")
        return cls(m, n, symmetry, size, b, scheme, nnz, payload_bits,
                   body[side_len:], side_bits, body[:side_len], version)


def _value_bits(values, b: int) -> np.ndarray:
    dtype, utype = (np.float32, np.uint32) if b == 32 else (np.float64, np.uint64)
    arr = np.asarray(values)
    if arr.dtype != dtype:
        arr = arr.astype(dtype)
    return np.ascontiguousarray(arr).view(utype).astype(np.uint64)


def _spread(starts: np.ndarray, counts: np.ndarray) -> np.ndarray:
    """Concatenated ranges ``starts[i] .. starts[i] + counts[i]``."""
    counts = np.asarray(counts, dtype=np.int64)
    total = int(counts.sum())
    if total == 0:
        return np.zeros(0, dtype=np.int64)
    first = np.cumsum(counts) - counts
    return np.repeat(np.asarray(starts, dtype=np.int64) - first, counts) + np.arange(total)


def encode(A: SparseMatrix, scheme: Scheme, bs: BlockSize, b: int, values=None) -> Container:
    """Serialise ``A`` with its ``values`` (aligned with ``A.rows``/``A.cols``)."""
    b = check_precision(b)
    if A.nnz_stored == 0:
        raise ContainerError("cannot encode an empty matrix")
    if values is None:
        values = np.ones(A.nnz_stored)
    vbits = _value_bits(values, b)
    if vbits.shape != (A.nnz_stored,):
        raise ContainerError(
            f"expected {A.nnz_stored} values, got {np.asarray(values).size}"
        )
    k, l, h, w = bs.k, bs.l, bs.h, bs.w
    bm = block_nnz_map(A, bs)
    ev = _Evaluation(bm, b)
    fmt = ev.chosen_formats(scheme)
    nb = bm.nblocks
    z = bm.z

    # element -> block index; stable sort keeps row-major order inside blocks
    keys = bm.R * bm.N + bm.C
    bidx = np.searchsorted(keys, (A.rows >> k) * bm.N + (A.cols >> l))
    order = np.argsort(bidx, kind="stable")
    eb = bidx[order]
    lr = (A.rows[order] & (h - 1)).astype(np.uint64)
    lc = (A.cols[order] & (w - 1)).astype(np.uint64)
    ev_bits = vbits[order]
    block_first = np.cumsum(z) - z
    rank = np.arange(eb.size) - block_first[eb]
    efmt = fmt[eb]

    if np.any((efmt == DENSE) & (ev_bits == 0)):
        raise ContainerError("explicit +0.0 values cannot be stored in dense-format blocks")

    chunks = -(-w // 64)
    chunk_w = min(w, 64)
    body_fields = np.select(
        [fmt == COO, fmt == CSR, fmt == BITMAP],
        [3 * z, h + 2 * z, h * chunks + z],
        h * w,
    )
    adaptive = scheme.kind is SchemeKind.ADAPTIVE
    per_block = 1 + int(adaptive) + body_fields
    lead = int(scheme.kind is SchemeKind.MIN_FIXED) + bm.M
    block_start = lead + np.cumsum(per_block) - per_block
    total = lead + int(per_block.sum())
    vals = np.zeros(total, dtype=np.uint64)
    wid = np.zeros(total, dtype=np.int64)

    pos = 0
    if scheme.kind is SchemeKind.MIN_FIXED:
        vals[0], wid[0] = int(fmt[0]), 2
        pos = 1
    vals[pos:pos + bm.M] = bm.row_counts
    wid[pos:pos + bm.M] = bits_for(bm.N + 1)

    vals[block_start] = bm.C
    wid[block_start] = bits_for(bm.N)
    body = block_start + 1
    if adaptive:
        vals[body] = fmt
        wid[body] = 2
        body = body + 1
    ebody = body[eb]

    sel = efmt == COO
    base = ebody[sel] + 3 * rank[sel]
    vals[base], wid[base] = lr[sel], k
    vals[base + 1], wid[base + 1] = lc[sel], l
    vals[base + 2], wid[base + 2] = ev_bits[sel], b

    blk = np.flatnonzero(fmt == CSR)
    if blk.size:
        pos_of = np.full(nb, -1, dtype=np.int64)
        pos_of[blk] = np.arange(blk.size)
        sel = efmt == CSR
        per_row = np.bincount(pos_of[eb[sel]] * h + lr[sel].astype(np.int64),
                              minlength=blk.size * h).reshape(blk.size, h)
        offs = _spread(body[blk], np.full(blk.size, h))
        vals[offs] = np.cumsum(per_row, axis=1).ravel()
        wid[offs] = np.repeat(np.frexp(z[blk])[1].astype(np.int64), h)
        zs = z[eb[sel]]
        cpos = ebody[sel] + h + rank[sel]
        vals[cpos], wid[cpos] = lc[sel], l
        vpos = ebody[sel] + h + zs + rank[sel]
        vals[vpos], wid[vpos] = ev_bits[sel], b

    blk = np.flatnonzero(fmt == BITMAP)
    if blk.size:
        occ = _spread(body[blk], np.full(blk.size, h * chunks))
        wid[occ] = chunk_w
        sel = efmt == BITMAP
        cpos = ebody[sel] + lr[sel].astype(np.int64) * chunks + (lc[sel] >> np.uint64(6)).astype(np.int64)
        bit = np.uint64(1) << (np.uint64(chunk_w - 1) - (lc[sel] & np.uint64(63)))
        np.bitwise_or.at(vals, cpos, bit)
        vpos = ebody[sel] + h * chunks + rank[sel]
        vals[vpos], wid[vpos] = ev_bits[sel], b

    blk = np.flatnonzero(fmt == DENSE)
    if blk.size:
        wid[_spread(body[blk], np.full(blk.size, h * w))] = b
        sel = efmt == DENSE
        dpos = ebody[sel] + (lr[sel] * np.uint64(w) + lc[sel]).astype(np.int64)
        vals[dpos] = ev_bits[sel]

    payload, nbits = kernels.pack_fields(vals, wid)
    expected = ev.bits(scheme)
    if nbits != expected:
        raise AssertionError(f"payload has {nbits} bits but the model predicts {expected}")

    side_mask = (fmt == COO) | (fmt == CSR)
    side_w = bits_for(h * w)
    side, side_bits = kernels.pack_fields(
        (z[side_mask] - 1).astype(np.uint64), np.full(int(side_mask.sum()), side_w)
    )
    return Container(
        A.m, A.n, A.symmetry, bs, b, scheme, A.nnz_stored,
        nbits, payload.tobytes(), side_bits, side.tobytes(),
    )


def _block_elements(cont: Container, buf, col, body, fmt, z):
    """Per-element (block index, local row, local col, value bits) in block order."""
    size, b = cont.size, cont.b
    k, l, h, w = size.k, size.l, size.h, size.w
    pieces = []

    blk = np.flatnonzero(fmt == COO)
    if blk.size:
        eb = np.repeat(blk, z[blk])
        start = _spread(np.zeros(blk.size, dtype=np.int64), z[blk])
        base = body[eb] + start * (k + l + b)
        lr = kernels.read_fields(buf, base, np.full(base.size, k))
        lc = kernels.read_fields(buf, base + k, np.full(base.size, l))
        vb = kernels.read_fields(buf, base + k + l, np.full(base.size, b))
        pieces.append((eb, lr, lc, vb))
        # canonical row-major order inside each block
        key = (lr << np.uint64(l)) | lc
        same = eb[1:] == eb[:-1]
        if np.any(same & (key[1:] <= key[:-1])):
            raise CorruptContainerError("COO block elements are not strictly row-major")

    blk = np.flatnonzero(fmt == CSR)
    if blk.size:
        ow = np.frexp(z[blk])[1].astype(np.int64)
        row_t = np.tile(np.arange(h, dtype=np.int64), blk.size)
        offs_pos = np.repeat(body[blk], h) + row_t * np.repeat(ow, h)
        offs = kernels.read_fields(buf, offs_pos, np.repeat(ow, h)).astype(np.int64)
        offs = offs.reshape(blk.size, h)
        counts = np.diff(offs, axis=1, prepend=0)
        if np.any(counts < 0) or np.any(offs[:, -1] != z[blk]):
            raise CorruptContainerError("CSR block row offsets are inconsistent")
        lr = np.repeat(np.tile(np.arange(h, dtype=np.uint64), blk.size), counts.ravel())
        eb = np.repeat(blk, z[blk])
        rank = _spread(np.zeros(blk.size, dtype=np.int64), z[blk])
        cbase = body[eb] + h * np.repeat(ow, z[blk])
        lc = kernels.read_fields(buf, cbase + rank * l, np.full(eb.size, l))
        vb = kernels.read_fields(buf, cbase + z[eb] * l + rank * b, np.full(eb.size, b))
        key = (lr << np.uint64(l)) | lc
        same = eb[1:] == eb[:-1]
        if np.any(same & (key[1:] <= key[:-1])):
            raise CorruptContainerError("CSR block columns are not strictly increasing")
        pieces.append((eb, lr, lc, vb))

    blk = np.flatnonzero(fmt == BITMAP)
    if blk.size:
        cells = _spread(body[blk], np.full(blk.size, h * w))
        occupied = kernels.read_fields(buf, cells, np.ones(cells.size, dtype=np.int64))
        hit = np.flatnonzero(occupied.reshape(blk.size, h * w))
        eb = blk[hit // (h * w)]
        cell = (hit % (h * w)).astype(np.uint64)
        rank = _spread(np.zeros(blk.size, dtype=np.int64), z[blk])
        vb = kernels.read_fields(buf, body[eb] + h * w + rank * b, np.full(eb.size, b))
        pieces.append((eb, cell >> np.uint64(l), cell & np.uint64(w - 1), vb))

    blk = np.flatnonzero(fmt == DENSE)
    if blk.size:
        cells = _spread(np.zeros(blk.size, dtype=np.int64), np.full(blk.size, h * w))
        vb_all = kernels.read_fields(buf, np.repeat(body[blk], h * w) + cells * b,
                                     np.full(cells.size, b))
        present = vb_all != 0
        if np.any(present.reshape(blk.size, h * w).sum(axis=1) == 0):
            raise CorruptContainerError("dense block holds no nonzero element")
        cell = cells[present].astype(np.uint64)
        eb = np.repeat(blk, h * w)[present]
        pieces.append((eb, cell >> np.uint64(l), cell & np.uint64(w - 1), vb_all[present]))

    return pieces


def decode(cont: Container) -> tuple[SparseMatrix, np.ndarray]:
    """Rebuild the stored elements and their values from a container."""
    size, b, scheme = cont.size, cont.b, cont.scheme
    h, w = size.h, size.w
    M, N = -(-cont.m // h), -(-cont.n // w)
    if len(cont.payload) * 8 < cont.payload_bits or len(cont.side) * 8 < cont.side_bits:
        raise TruncatedPayloadError("container payload truncated")
    buf = np.frombuffer(cont.payload, dtype=np.uint8)
    total = cont.payload_bits

    side_w = bits_for(h * w)
    nside = cont.side_bits // side_w if side_w else 0
    if nside * side_w != cont.side_bits:
        raise CorruptContainerError("side table length is not a whole number of entries")
    side_z = kernels.read_fields(
        np.frombuffer(cont.side, dtype=np.uint8),
        np.arange(nside, dtype=np.int64) * side_w,
        np.full(nside, side_w),
    ).astype(np.int64) + 1

    try:
        off = 0
        fixed_fmt = int(scheme.formats[0])
        if scheme.kind is SchemeKind.MIN_FIXED:
            fixed_fmt = int(kernels.read_fields(buf, [0], [2])[0])
            off = 2
            if not scheme.format_mask >> fixed_fmt & 1:
                raise CorruptContainerError("min-fixed tag names a format outside the set")
        rc_w = bits_for(N + 1)
        row_counts = kernels.read_fields(
            buf, off + np.arange(M, dtype=np.int64) * rc_w, np.full(M, rc_w)
        ).astype(np.int64)
        off += M * rc_w
        if off > total:
            raise TruncatedPayloadError("payload truncated")
        if np.any(row_counts > N):
            raise CorruptContainerError("block row count exceeds the number of block columns")
        nb = int(row_counts.sum())
        col, body, fmt, z, used, end = kernels.scan_blocks(
            buf, off, total, nb, bits_for(N), scheme.kind is SchemeKind.ADAPTIVE,
            fixed_fmt, scheme.format_mask, side_z, size.k, size.l, b,
        )
    except ContainerError:
        raise
    except ValueError as exc:
        msg = str(exc)
        if "truncated" in msg or "past the end" in msg:
            raise TruncatedPayloadError(msg) from None
        raise CorruptContainerError(msg) from None
    if used != nside:
        raise CorruptContainerError("side table has unused entries")
    if end != total:
        raise CorruptContainerError(
            f"payload announces {total} bits but the blocks end at bit {end}"
        )
    R = np.repeat(np.arange(M, dtype=np.int64), row_counts)
    if nb and (np.any(col >= N) or np.any((R[1:] == R[:-1]) & (col[1:] <= col[:-1]))):
        raise CorruptContainerError("block column indices are not strictly increasing")

    pieces = _block_elements(cont, buf, col, body, fmt, z)
    eb = np.concatenate([p[0] for p in pieces]).astype(np.int64)
    lr = np.concatenate([p[1] for p in pieces]).astype(np.int64)
    lc = np.concatenate([p[2] for p in pieces]).astype(np.int64)
    vb = np.concatenate([p[3] for p in pieces])
    rows = R[eb] * h + lr
    cols = col[eb] * w + lc
    if rows.size and (rows.max() >= cont.m or cols.max() >= cont.n):
        raise CorruptContainerError("decoded element lies outside the matrix")
    if cont.symmetry == "symmetric" and np.any(rows < cols):
        raise CorruptContainerError("symmetric container holds an upper-triangle element")
    order = np.lexsort((cols, rows))
    rows, cols, vb = rows[order], cols[order], vb[order]
    if rows.size != cont.nnz:
        raise CorruptContainerError(f"decoded {rows.size} elements, header announces {cont.nnz}")

    A = SparseMatrix(cont.m, cont.n, rows, cols, cont.symmetry)
    bm = BlockNnzMap(size, M, N, R, col, np.bincount(eb, minlength=nb).astype(np.int64))
    if nb == 0 or _Evaluation(bm, b).bits(scheme) != total:
        raise CorruptContainerError("payload length disagrees with the footprint model")
    if scheme.kind is not SchemeKind.ADAPTIVE:
        best = _Evaluation(bm, b).chosen_formats(scheme)
        if nb and int(best[0]) != fixed_fmt:
            raise CorruptContainerError("min-fixed tag is not the minimising format")

    if b == 32:
        values = vb.astype(np.uint32).view(np.float32)
    else:
        values = vb.astype(np.uint64).view(np.float64)
    return A, values


def write_container(path, cont: Container) -> int:
    data = cont.to_bytes()
    Path(path).write_bytes(data)
    return len(data)


def read_container(path) -> Container:
    return Container.from_bytes(Path(path).read_bytes())


def verify(A: SparseMatrix, scheme: Scheme, bs: BlockSize, b: int, values=None) -> dict:
    """Encode, measure and decode; report payload bits against the model."""
    cont = encode(A, scheme, bs, b, values)
    model = _Evaluation(block_nnz_map(A, bs), b).bits(scheme)
    A2, v2 = decode(Container.from_bytes(cont.to_bytes()))
    sent = _value_bits(values if values is not None else np.ones(A.nnz_stored), b)
    back = _value_bits(v2, b)
    return {
        "scheme": scheme.name,
        "block_size": bs.label,
        "precision": b,
        "model_bits": model,
        "payload_bits": cont.payload_bits,
        "side_bits": cont.side_bits,
        "header_bytes": HEADER_BYTES,
        "payload_matches_model": cont.payload_bits == model,
        "roundtrip": A2.same_structure(A) and np.array_equal(sent, back),
    }
