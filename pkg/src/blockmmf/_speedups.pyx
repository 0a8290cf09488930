# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels; drop-in twins of ``blockmmf._fallback``."""
import numpy as np
cimport numpy as cnp
from libc.stdint cimport int64_t, uint64_t, uint8_t
from libc.stdlib cimport qsort

cnp.import_array()

DEF COO = 0
DEF CSR = 1
DEF BITMAP = 2
DEF DENSE = 3


cdef inline int bits_for(int64_t count) nogil:
    cdef int n = 0
    cdef int64_t x
    if count <= 1:
        return 0
    x = count - 1
    while x:
        n += 1
        x >>= 1
    return n


cdef int cmp_i64(const void* a, const void* b) noexcept nogil:
    cdef int64_t x = (<int64_t*>a)[0]
    cdef int64_t y = (<int64_t*>b)[0]
    return (x > y) - (x < y)


def bucket(rows, cols, weights, int rshift, int cshift, int64_t ncols_out):
    cdef const int64_t[::1] r = np.ascontiguousarray(rows, dtype=np.int64)
    cdef const int64_t[::1] c = np.ascontiguousarray(cols, dtype=np.int64)
    cdef int64_t n = r.shape[0]
    cdef bint weighted = weights is not None
    cdef const int64_t[::1] wt = np.ascontiguousarray(weights if weighted else np.zeros(1), dtype=np.int64)
    cdef int64_t[::1] acc = np.zeros(max(ncols_out, 1), dtype=np.int64)
    cdef int64_t[::1] touched = np.empty(max(min(n, ncols_out), 1), dtype=np.int64)
    out_r = np.empty(n, dtype=np.int64)
    out_c = np.empty(n, dtype=np.int64)
    out_z = np.empty(n, dtype=np.int64)
    cdef int64_t[::1] orr = out_r
    cdef int64_t[::1] occ = out_c
    cdef int64_t[::1] ozz = out_z
    cdef int64_t i = 0, j, t, nt, row, cc, nout = 0
    with nogil:
        while i < n:
            row = r[i] >> rshift
            nt = 0
            while i < n and (r[i] >> rshift) == row:
                cc = c[i] >> cshift
                if acc[cc] == 0:
                    touched[nt] = cc
                    nt += 1
                acc[cc] += wt[i] if weighted else 1
                i += 1
            qsort(&touched[0], nt, sizeof(int64_t), cmp_i64)
            for t in range(nt):
                cc = touched[t]
                orr[nout] = row
                occ[nout] = cc
                ozz[nout] = acc[cc]
                acc[cc] = 0
                nout += 1
    return out_r[:nout].copy(), out_c[:nout].copy(), out_z[:nout].copy()


def pack_fields(values, widths):
    cdef const uint64_t[::1] v = np.ascontiguousarray(values, dtype=np.uint64)
    cdef const int64_t[::1] w = np.ascontiguousarray(widths, dtype=np.int64)
    cdef int64_t n = v.shape[0]
    cdef int64_t total = 0, i
    for i in range(n):
        total += w[i]
    out = np.zeros((total + 7) // 8 + 1, dtype=np.uint8)
    cdef uint8_t[::1] o = out
    cdef int64_t pos = 0
    cdef int fill = 0          # bits held in acc
    cdef uint64_t acc = 0, x
    cdef int wi, take
    with nogil:
        for i in range(n):
            wi = <int>w[i]
            x = v[i]
            while wi > 0:
                take = 8 - fill
                if take > wi:
                    take = wi
                acc = (acc << take) | ((x >> (wi - take)) & ((1ULL << take) - 1))
                fill += take
                wi -= take
                if fill == 8:
                    o[pos] = <uint8_t>acc
                    pos += 1
                    acc = 0
                    fill = 0
        if fill:
            o[pos] = <uint8_t>(acc << (8 - fill))
    return out[:(total + 7) // 8].copy(), total


cdef inline uint64_t read_bits(const uint8_t* buf, int64_t off, int width) nogil:
    cdef uint64_t val = 0
    cdef int64_t byte
    cdef int bit, take
    while width > 0:
        byte = off >> 3
        bit = off & 7
        take = 8 - bit
        if take > width:
            take = width
        val = (val << take) | ((buf[byte] >> (8 - bit - take)) & ((1 << take) - 1))
        off += take
        width -= take
    return val


cdef inline int64_t popcount_range(const uint8_t* buf, int64_t off, int64_t width) nogil:
    cdef int64_t cnt = 0
    cdef int take
    while width > 0 and (off & 7):
        cnt += read_bits(buf, off, 1)
        off += 1
        width -= 1
    while width >= 8:
        cnt += __builtin_popcount(buf[off >> 3])
        off += 8
        width -= 8
    while width > 0:
        cnt += read_bits(buf, off, 1)
        off += 1
        width -= 1
    return cnt


cdef extern from *:
    int __builtin_popcount(unsigned int) nogil


def read_fields(buf, offsets, widths):
    cdef const uint8_t[::1] bb = np.ascontiguousarray(buf, dtype=np.uint8)
    cdef const int64_t[::1] off = np.ascontiguousarray(offsets, dtype=np.int64)
    cdef const int64_t[::1] w = np.ascontiguousarray(widths, dtype=np.int64)
    cdef int64_t n = off.shape[0], i
    cdef int64_t limit = bb.shape[0] * 8
    out = np.zeros(n, dtype=np.uint64)
    cdef uint64_t[::1] o = out
    if n == 0:
        return out
    for i in range(n):
        if off[i] + w[i] > limit or off[i] < 0:
            raise ValueError("bit field extends past the end of the buffer")
    with nogil:
        for i in range(n):
            o[i] = read_bits(&bb[0], off[i], <int>w[i])
    return out


def scan_blocks(buf, int64_t start, int64_t total_bits, int64_t nblocks, int col_bits,
                bint adaptive, int fixed_fmt, int allowed_mask, side_z, int k, int l, int b):
    cdef const uint8_t[::1] bb = np.ascontiguousarray(buf, dtype=np.uint8)
    cdef const int64_t[::1] sz = np.ascontiguousarray(side_z, dtype=np.int64)
    cdef int64_t nside = sz.shape[0]
    col = np.zeros(nblocks, dtype=np.int64)
    body = np.zeros(nblocks, dtype=np.int64)
    fmt = np.zeros(nblocks, dtype=np.int64)
    zz = np.zeros(nblocks, dtype=np.int64)
    cdef int64_t[::1] cv = col
    cdef int64_t[::1] bv = body
    cdef int64_t[::1] fv = fmt
    cdef int64_t[::1] zv = zz
    cdef int64_t h = 1 << k, w = 1 << l
    cdef int64_t off = start, i, z, length, si = 0
    cdef int f
    cdef const uint8_t* p
    cdef int err = 0
    cdef int64_t err_block = 0
    if total_bits > bb.shape[0] * 8:
        raise ValueError("payload truncated")
    if nblocks and bb.shape[0] == 0:
        raise ValueError("payload truncated")
    p = &bb[0] if bb.shape[0] else NULL
    with nogil:
        for i in range(nblocks):
            if off + col_bits > total_bits:
                err = 1
                break
            cv[i] = <int64_t>read_bits(p, off, col_bits)
            off += col_bits
            f = fixed_fmt
            if adaptive:
                if off + 2 > total_bits:
                    err = 1
                    break
                f = <int>read_bits(p, off, 2)
                off += 2
                if not ((allowed_mask >> f) & 1):
                    err = 2
                    err_block = i
                    break
            if f == COO or f == CSR:
                if si >= nside:
                    err = 3
                    break
                z = sz[si]
                si += 1
                if f == COO:
                    length = z * (k + l + b)
                else:
                    length = z * (b + l) + h * bits_for(z + 1)
            elif f == BITMAP:
                if off + h * w > total_bits:
                    err = 1
                    break
                z = popcount_range(p, off, h * w)
                if z == 0:
                    err = 4
                    err_block = i
                    break
                length = h * w + z * b
            else:
                z = -1
                length = h * w * b
            if off + length > total_bits:
                err = 1
                break
            bv[i] = off
            fv[i] = f
            zv[i] = z
            off += length
    if err == 1:
        raise ValueError("payload truncated")
    if err == 2:
        raise ValueError(f"block {err_block} carries a format tag outside the format set")
    if err == 3:
        raise ValueError("block nonzero side table exhausted")
    if err == 4:
        raise ValueError(f"bitmap block {err_block} is empty")
    return col, body, fmt, zz, si, off
