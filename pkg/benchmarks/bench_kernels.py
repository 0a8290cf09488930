"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--size 2000] [--density 0.01] [--repeat 5]

Each kernel runs on identical inputs under both implementations; the
end-to-end rows swap the whole kernel set and time ``block_maps`` (all 64
sizes) and an encode/decode round trip.
"""
from __future__ import annotations

import argparse
import contextlib
import time

import numpy as np

from blockmmf import _fallback, kernels
from blockmmf.blocks import S6, BlockSize, block_maps
from blockmmf.codec import decode, encode
from blockmmf.matrix_io import SparseMatrix

NAMES = ("bucket", "pack_fields", "read_fields", "scan_blocks")


@contextlib.contextmanager
def use(impl):
    saved = {n: getattr(kernels, n) for n in NAMES}
    for n in NAMES:
        setattr(kernels, n, getattr(impl, n))
    try:
        yield
    finally:
        for n, f in saved.items():
            setattr(kernels, n, f)


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=2000)
    ap.add_argument("--density", type=float, default=0.01)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    if not kernels.COMPILED:
        print("compiled extension not available; only the fallback can be timed")
    impls = {"python": _fallback}
    if kernels.COMPILED:
        impls["compiled"] = kernels.IMPLEMENTATIONS["compiled"]

    rng = np.random.default_rng(args.seed)
    n = args.size
    key = rng.choice(n * n, int(args.density * n * n), replace=False)
    A = SparseMatrix.from_coords(n, n, key // n, key % n)
    vals = rng.standard_normal(A.nnz_stored)
    widths = rng.integers(1, 65, 200_000)
    fields = rng.integers(0, 2**63, widths.size, dtype=np.uint64) & (
        (np.uint64(1) << widths.astype(np.uint64)) - np.uint64(1))
    buf, nbits = _fallback.pack_fields(fields, widths)
    offs = np.concatenate([[0], np.cumsum(widths)[:-1]])
    bs = BlockSize(3, 3)

    cases = {
        "bucket (1x1 map)": lambda m: m.bucket(A.rows, A.cols, None, 0, 0, n),
        "pack_fields (200k)": lambda m: m.pack_fields(fields, widths),
        "read_fields (200k)": lambda m: m.read_fields(buf, offs, widths),
        "block_maps (B64)": None,
        "encode+decode adaptive 8x8": None,
    }
    print(f"matrix {n}x{n}, nnz {A.nnz_stored}; best of {args.repeat}")
    print(f"{'case':<30}" + "".join(f"{k:>12}" for k in impls) + f"{'speedup':>10}")
    for name, fn in cases.items():
        row = {}
        for label, impl in impls.items():
            if fn is not None:
                row[label] = best_of(lambda: fn(impl), args.repeat)
            else:
                with use(impl):
                    if name.startswith("block_maps"):
                        row[label] = best_of(lambda: block_maps(A), args.repeat)
                    else:
                        row[label] = best_of(lambda: decode(encode(A, S6[5], bs, 64, vals)), args.repeat)
        speed = row["python"] / row["compiled"] if "compiled" in row else float("nan")
        print(f"{name:<30}" + "".join(f"{row[k] * 1e3:>10.2f}ms" for k in impls) + f"{speed:>9.1f}x")


if __name__ == "__main__":
    main()
