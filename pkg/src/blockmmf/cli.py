"""``blockmmf`` command line.

Exit codes: 0 success, 1 partial failure, 2 fatal error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .blocks import B64, EXTENDED_SCHEMES, S6, BlockSize, scheme_from_name
from .codec import ContainerError, decode, encode, read_container, verify, write_container
from .corpus import consistency_experiment
from .fetch import FetchError, fetch
from .matrix_io import read_matrix_market_values, write_matrix_market
from .optimizer import SIZE_SETS, SearchSpace, fmt_percent, optimal_config, parse_size_set, rank_block_sizes
from .report import JobConfig, analyze_matrix, corpus_run, load_input, load_tables

log = logging.getLogger("blockmmf")

EXIT_OK, EXIT_PARTIAL, EXIT_FATAL = 0, 1, 2


def _precisions(text: str) -> tuple[int, ...]:
    if text == "both":
        return (32, 64)
    if text in ("32", "64"):
        return (int(text),)
    raise argparse.ArgumentTypeError("precision must be 32, 64 or both")


def _schemes(text: str):
    key = text.strip().lower()
    if key == "s6":
        return S6
    if key in ("all", "extended"):
        return EXTENDED_SCHEMES
    try:
        return tuple(scheme_from_name(t.strip()) for t in text.split(",") if t.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _sizes(text: str):
    try:
        return parse_size_set(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _size(text: str) -> BlockSize:
    try:
        return BlockSize.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _scheme(text: str):
    try:
        return scheme_from_name(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _inputs(args) -> list[str]:
    items = list(args.inputs)
    if getattr(args, "list", None):
        for line in Path(args.list).read_text().splitlines():
            line = line.split("#", 1)[0].strip()
            if line:
                items.append(line)
    return items


def _status(failed: int, total: int) -> int:
    if failed == 0:
        return EXIT_OK
    return EXIT_FATAL if failed == total else EXIT_PARTIAL


# --------------------------------------------------------------------------
# Subcommands


def cmd_fetch(args) -> int:
    failed = 0
    for ident in args.inputs:
        try:
            print(fetch(ident, cache=args.cache, offline=args.offline, base_url=args.base_url))
        except FetchError as exc:
            log.error("%s", exc)
            failed += 1
    return _status(failed, len(args.inputs))


def cmd_analyze(args) -> int:
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    config = JobConfig(
        inputs=_inputs(args), precisions=args.precision, schemes=args.schemes,
        sizes=args.sizes, output=str(out), offline=args.offline, cache=args.cache,
    )
    failed = 0
    for ident in config.inputs:
        try:
            A, matrix_id, _ = load_input(ident, config.offline, config.cache)
            doc = analyze_matrix(A, matrix_id, config)
        except (OSError, ValueError, FetchError) as exc:
            log.error("%s: %s", ident, exc)
            failed += 1
            continue
        target = out / (matrix_id.replace("/", "_") + ".json")
        target.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
        for b, p in doc["precisions"].items():
            o = p["optimum"]
            print(f"{matrix_id} b={b}: {o['scheme']} {o['block_size']} {o['bits']} bits, "
                  f"savings {fmt_percent(p['savings'])}%")
    return _status(failed, len(config.inputs))


def cmd_encode(args) -> int:
    A, values = read_matrix_market_values(args.input)
    scheme, bs = args.scheme, args.block_size
    if scheme is None or bs is None:
        cfg = optimal_config(A, SearchSpace(S6 if scheme is None else (scheme,),
                                            B64 if bs is None else (bs,)), args.precision)
        scheme, bs = cfg.scheme, cfg.size
    cont = encode(A, scheme, bs, args.precision, values)
    size = write_container(args.output, cont)
    print(f"{args.output}: {scheme.name} {bs.label} b={args.precision}, "
          f"payload {cont.payload_bits} bits, side table {cont.side_bits} bits, {size} bytes")
    return EXIT_OK


def cmd_decode(args) -> int:
    A, values = decode(read_container(args.input))
    text = write_matrix_market(A, values)
    if args.output == "-":
        sys.stdout.write(text)
    else:
        Path(args.output).write_text(text)
    return EXIT_OK


def cmd_verify(args) -> int:
    A, values = read_matrix_market_values(args.input)
    schemes = (args.scheme,) if args.scheme else S6
    sizes = (args.block_size,) if args.block_size else args.sizes
    ok = True
    results = []
    for b in args.precision:
        for s in schemes:
            for bs in sizes:
                r = verify(A, s, bs, b, values)
                ok &= r["payload_matches_model"] and r["roundtrip"]
                results.append(r)
    print(json.dumps(results if len(results) > 1 else results[0], indent=1))
    return EXIT_OK if ok else EXIT_FATAL


def cmd_corpus(args) -> int:
    config = JobConfig(
        inputs=_inputs(args), precisions=args.precision, output=args.output,
        thresholds=not args.no_thresholds, seed=args.seed, jobs=args.jobs,
        subset_size=args.subset_size, trials=args.trials, offline=args.offline,
        cache=args.cache, strict=args.strict,
    )
    if not config.inputs:
        log.error("no inputs given")
        return EXIT_FATAL
    code = corpus_run(config)
    print(f"report written to {args.output}")
    return code


def cmd_rank(args) -> int:
    tables = load_tables(args.report)
    for b in args.precision:
        if b not in tables:
            log.error("report holds no tables for b=%d", b)
            return EXIT_FATAL
        print(f"b={b}")
        for i, (bs, avg, mx) in enumerate(rank_block_sizes(tables[b])[: args.top]):
            print(f"{i + 1:3d}  {bs.label:>9}  avg {fmt_percent(avg):>7}  max {fmt_percent(mx):>7}")
    return EXIT_OK


def cmd_consistency(args) -> int:
    tables = load_tables(args.report)
    out = []
    for b in args.precision:
        ts = tables.get(b)
        if not ts:
            log.error("report holds no tables for b=%d", b)
            return EXIT_FATAL
        r = consistency_experiment(ts, args.scheme, args.sizes, args.size_set_name,
                                   min(args.subset_size, len(ts)), args.trials, args.seed)
        out.append({
            "precision": b, "scheme": r.scheme, "size_set": r.size_set,
            "trials": r.trials, "subset_size": r.subset_size, "seed": r.seed,
            "std_avg": r.std_avg, "std_max": r.std_max,
            "normalized_std_avg": r.normalized_std_avg,
            "normalized_std_max": r.normalized_std_max,
        })
    print(json.dumps(out, indent=1))
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="blockmmf", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def net(sp):
        sp.add_argument("--cache", help="cache directory (default: $BLOCKMMF_CACHE)")
        sp.add_argument("--offline", action="store_true", help="use cached matrices only")

    def prec(sp, default="both"):
        sp.add_argument("--precision", type=_precisions, default=_precisions(default),
                        help="32, 64 or both (default: %(default)s)")

    sp = sub.add_parser("fetch", help="download matrices into the cache")
    sp.add_argument("inputs", nargs="+", metavar="ID", help="Group/Name or URL")
    sp.add_argument("--base-url")
    net(sp)
    sp.set_defaults(func=cmd_fetch)

    sp = sub.add_parser("analyze", help="footprint table and optimum per matrix")
    sp.add_argument("inputs", nargs="*", metavar="INPUT", help=".mtx path or collection id")
    sp.add_argument("--list", help="file with one input per line")
    sp.add_argument("-o", "--output", default=".")
    sp.add_argument("--schemes", type=_schemes, default=S6)
    sp.add_argument("--sizes", type=_sizes, default=B64, help="B64, B20, B14, B8 or e.g. 8x8,4x16")
    prec(sp)
    net(sp)
    sp.set_defaults(func=cmd_analyze)

    sp = sub.add_parser("encode", help="write a blocked container")
    sp.add_argument("input")
    sp.add_argument("-o", "--output", required=True)
    sp.add_argument("--scheme", type=_scheme, help="default: optimal over S6")
    sp.add_argument("--block-size", type=_size, help="default: optimal over B64")
    sp.add_argument("--precision", type=int, choices=(32, 64), default=64)
    sp.set_defaults(func=cmd_encode)

    sp = sub.add_parser("decode", help="container back to Matrix Market")
    sp.add_argument("input")
    sp.add_argument("-o", "--output", default="-")
    sp.set_defaults(func=cmd_decode)

    sp = sub.add_parser("verify", help="check payload bits against the model")
    sp.add_argument("input")
    sp.add_argument("--scheme", type=_scheme)
    sp.add_argument("--block-size", type=_size)
    sp.add_argument("--sizes", type=_sizes, default=SIZE_SETS["B8"])
    prec(sp)
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("corpus", help="full corpus report")
    sp.add_argument("inputs", nargs="*", metavar="INPUT")
    sp.add_argument("--list", help="file with one input per line")
    sp.add_argument("-o", "--output", required=True)
    sp.add_argument("--no-thresholds", action="store_true", help="keep small and pattern matrices")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("-j", "--jobs", type=int, default=0, help="worker processes (0: all cores)")
    sp.add_argument("--subset-size", type=int, default=200)
    sp.add_argument("--trials", type=int, default=50)
    sp.add_argument("--strict", action="store_true", help="exit 1 when some inputs fail")
    prec(sp)
    net(sp)
    sp.set_defaults(func=cmd_corpus)

    sp = sub.add_parser("rank", help="rank block sizes from a corpus report")
    sp.add_argument("report")
    sp.add_argument("--top", type=int, default=64)
    prec(sp)
    sp.set_defaults(func=cmd_rank)

    sp = sub.add_parser("consistency", help="subset-sampling spread from a corpus report")
    sp.add_argument("report")
    sp.add_argument("--scheme", type=_scheme, default=S6[4])
    sp.add_argument("--sizes", default="B64")
    sp.add_argument("--subset-size", type=int, default=200)
    sp.add_argument("--trials", type=int, default=50)
    sp.add_argument("--seed", type=int, default=0)
    prec(sp)
    sp.set_defaults(func=cmd_consistency)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s: %(message)s",
    )
    if args.command == "consistency":
        args.size_set_name = args.sizes.upper() if args.sizes.upper() in SIZE_SETS else "custom"
        args.sizes = _sizes(args.sizes)
    try:
        return args.func(args)
    except (OSError, ValueError, FetchError, ContainerError) as exc:
        log.error("%s", exc)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
