"""Pure numpy / Python implementations of the hot kernels.

Semantics are identical to the compiled ``_speedups`` module; see
:mod:`blockmmf.kernels` for the selection logic and argument contracts.
"""
from __future__ import annotations

import numpy as np

COO, CSR, BITMAP, DENSE = 0, 1, 2, 3

_PACK_CHUNK = 1 << 22  # bits expanded per step


def bits_for(count: int) -> int:
    """Bits needed to index ``count`` entities: ceil(log2(count)), 0 for count <= 1."""
    return (int(count) - 1).bit_length() if count > 1 else 0


def bucket(rows, cols, weights, rshift, cshift, ncols_out):
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    if rows.size == 0:
        e = np.zeros(0, dtype=np.int64)
        return e, e.copy(), e.copy()
    key = (rows >> rshift) * ncols_out + (cols >> cshift)
    uniq, inv = np.unique(key, return_inverse=True)
    if weights is None:
        z = np.bincount(inv, minlength=uniq.size)
    else:
        z = np.zeros(uniq.size, dtype=np.int64)
        np.add.at(z, inv, np.asarray(weights, dtype=np.int64))
    return uniq // ncols_out, uniq % ncols_out, z.astype(np.int64)


def pack_fields(values, widths):
    values = np.asarray(values, dtype=np.uint64)
    widths = np.asarray(widths, dtype=np.int64)
    total = int(widths.sum())
    out = np.zeros((total + 7) // 8, dtype=np.uint8)
    if total == 0:
        return out, 0
    ends = np.cumsum(widths)
    starts = ends - widths
    lo = 0
    while lo < values.size:
        # fields [lo, hi) expanding to at most ~_PACK_CHUNK bits
        hi = int(np.searchsorted(ends, starts[lo] + _PACK_CHUNK, side="right"))
        hi = max(hi, lo + 1)
        w = widths[lo:hi]
        nbits = int(w.sum())
        if nbits:
            fi = np.repeat(np.arange(lo, hi), w)
            pos = np.arange(nbits, dtype=np.int64) - np.repeat(starts[lo:hi] - starts[lo], w)
            shift = (widths[fi] - 1 - pos).astype(np.uint64)
            bits = ((values[fi] >> shift) & np.uint64(1)).astype(np.uint8)
            first = int(starts[lo])
            # place bits at absolute positions first .. first+nbits
            head = first % 8
            packed = np.packbits(np.concatenate([np.zeros(head, np.uint8), bits]))
            base = first // 8
            out[base:base + packed.size] |= packed
        lo = hi
    return out, total


def read_fields(buf, offsets, widths):
    buf = np.asarray(buf, dtype=np.uint8)
    offsets = np.asarray(offsets, dtype=np.int64)
    widths = np.asarray(widths, dtype=np.int64)
    if offsets.size == 0:
        return np.zeros(0, dtype=np.uint64)
    if np.any(offsets + widths > buf.size * 8):
        raise ValueError("bit field extends past the end of the buffer")
    padded = np.concatenate([buf, np.zeros(9, dtype=np.uint8)])
    byte0 = offsets >> 3
    window = padded[byte0[:, None] + np.arange(9)].astype(np.uint64)
    hi = np.zeros(offsets.size, dtype=np.uint64)
    for j in range(8):
        hi = (hi << np.uint64(8)) | window[:, j]
    sh = (offsets & 7).astype(np.uint64)
    word = (hi << sh) | (window[:, 8] >> (np.uint64(8) - sh))
    out = np.zeros(offsets.size, dtype=np.uint64)
    nz = widths > 0
    out[nz] = word[nz] >> (np.uint64(64) - widths[nz].astype(np.uint64))
    return out


def _read(buf: bytes, off: int, width: int, total: int) -> int:
    if width == 0:
        return 0
    if off + width > total:
        raise ValueError("payload truncated")
    first, last = off >> 3, (off + width - 1) >> 3
    chunk = int.from_bytes(buf[first:last + 1], "big")
    return (chunk >> ((last + 1) * 8 - off - width)) & ((1 << width) - 1)


def _popcount(buf: bytes, off: int, width: int, total: int) -> int:
    if off + width > total:
        raise ValueError("payload truncated")
    first, last = off >> 3, (off + width - 1) >> 3
    chunk = int.from_bytes(buf[first:last + 1], "big")
    chunk >>= (last + 1) * 8 - off - width
    return bin(chunk & ((1 << width) - 1)).count("1")


def scan_blocks(buf, start, total_bits, nblocks, col_bits, adaptive, fixed_fmt,
                allowed_mask, side_z, k, l, b):
    buf = bytes(np.asarray(buf, dtype=np.uint8))
    h, w = 1 << k, 1 << l
    body_off = np.zeros(nblocks, dtype=np.int64)
    col = np.zeros(nblocks, dtype=np.int64)
    fmt = np.zeros(nblocks, dtype=np.int64)
    zs = np.zeros(nblocks, dtype=np.int64)
    side_z = np.asarray(side_z, dtype=np.int64)
    si = 0
    off = int(start)
    for i in range(nblocks):
        col[i] = _read(buf, off, col_bits, total_bits)
        off += col_bits
        f = fixed_fmt
        if adaptive:
            f = _read(buf, off, 2, total_bits)
            off += 2
            if not (allowed_mask >> f) & 1:
                raise ValueError(f"block {i} carries format tag {f} outside the format set")
        if f == COO or f == CSR:
            if si >= side_z.size:
                raise ValueError("block nonzero side table exhausted")
            z = int(side_z[si])
            si += 1
            if f == COO:
                length = z * (k + l + b)
            else:
                length = z * (b + l) + h * bits_for(z + 1)
        elif f == BITMAP:
            z = _popcount(buf, off, h * w, total_bits)
            if z == 0:
                raise ValueError(f"bitmap block {i} is empty")
            length = h * w + z * b
        else:
            z = -1  # resolved from the values
            length = h * w * b
        if off + length > total_bits:
            raise ValueError("payload truncated")
        body_off[i], fmt[i], zs[i] = off, f, z
        off += length
    return col, body_off, fmt, zs, si, off
