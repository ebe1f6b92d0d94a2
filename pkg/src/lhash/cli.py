"""``lhash`` command line: gen | train | throughput | collisions | probe | gaps."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import bench
from .batch import BatchConfig
from .keyset import KeySetError, dataset, load_keyset, write_keyset
from .models import ModelError, model_size_bytes, save_model
from .tables import DEFAULT_MAX_KICKS, PAYLOAD_SIZES

log = logging.getLogger("lhash")


def _csv_list(text: str) -> list[str]:
    return [t for t in (s.strip() for s in text.split(",")) if t]


def _int_list(text: str) -> list[int]:
    return [int(float(t)) for t in _csv_list(text)]


def _common(p: argparse.ArgumentParser, hashers: str = "murmur,rmi") -> None:
    p.add_argument("--dataset", type=_csv_list, default=["seq10"],
                   help="comma-separated dataset names (seq0, seq1, seq10, uniform, "
                        "heavytail) or KeyFile paths")
    p.add_argument("--n", type=lambda s: int(float(s)), default=bench.DEFAULT_N)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--hasher", type=_csv_list, default=_csv_list(hashers),
                   help="comma-separated subset of murmur, mshift, rmi, rs")
    p.add_argument("--leaves", type=int, default=bench.DEFAULT_LEAVES)
    p.add_argument("--max-error", type=int, default=32)
    p.add_argument("--radix-bits", type=int, default=18)
    p.add_argument("--out", type=Path, default=None, help="output file (default stdout)")


def _timing(p: argparse.ArgumentParser) -> None:
    p.add_argument("--repetitions", type=int, default=bench.DEFAULT_REPETITIONS)
    p.add_argument("--raw", action="store_true", help="also emit one row per repetition")
    p.add_argument("--include-build", action="store_true",
                   help="add amortised build time to per-key timings")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lhash", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="write a synthetic key set as a KeyFile")
    g.add_argument("--dataset", default="seq10")
    g.add_argument("--n", type=lambda s: int(float(s)), default=bench.DEFAULT_N)
    g.add_argument("--seed", type=int, default=42)
    g.add_argument("--out", type=Path, required=True)

    t = sub.add_parser("train", help="train a CDF model and save it")
    t.add_argument("--keys", required=True, help="KeyFile path or dataset name")
    t.add_argument("--model", choices=("rmi", "rs"), default="rmi")
    t.add_argument("--n", type=lambda s: int(float(s)), default=bench.DEFAULT_N)
    t.add_argument("--seed", type=int, default=42)
    t.add_argument("--leaves", type=int, default=bench.DEFAULT_LEAVES)
    t.add_argument("--max-error", type=int, default=32)
    t.add_argument("--radix-bits", type=int, default=18)
    t.add_argument("--out", type=Path, required=True)

    th = sub.add_parser("throughput", help="hashing throughput in ns/key")
    _common(th, "murmur,mshift,rmi,rs")
    _timing(th)
    th.add_argument("--models", type=_int_list, default=list(bench.DEFAULT_LEAF_GRID),
                    help="comma-separated RMI leaf counts")
    th.add_argument("--batch-s", type=int, default=8, help="interleaved state machines")
    th.add_argument("--batch-w", type=int, default=8, help="keys per state machine")
    th.add_argument("--no-prefetch", action="store_true")

    c = sub.add_parser("collisions", help="empirical vs predicted empty-slot fraction")
    _common(c, "murmur,rmi,rs")

    pr = sub.add_parser("probe", help="build a table and time lookups")
    _common(pr)
    _timing(pr)
    pr.add_argument("--table", choices=("chain", "cuckoo"), default="chain")
    pr.add_argument("--bucket-size", type=int, default=1)
    pr.add_argument("--payload", type=int, choices=PAYLOAD_SIZES, default=8)
    pr.add_argument("--kicking", choices=("balanced", "biased"), default="biased")
    pr.add_argument("--load-factor", type=float, default=None,
                    help="keys / (buckets * bucket size); default 1.0 chain, 0.95 cuckoo")
    pr.add_argument("--max-kicks", type=int, default=DEFAULT_MAX_KICKS)
    pr.add_argument("--strict", action="store_true",
                    help="exit non-zero if any cuckoo insert fails")

    ga = sub.add_parser("gaps", help="gap histogram of hash outputs as CSV")
    _common(ga, "rmi")
    ga.add_argument("--bins", type=int, default=1000)
    ga.add_argument("--g-max", type=float, default=5.0)
    ga.add_argument("--report", type=Path, default=None,
                    help="also write empty-slot rows for each dataset here")
    return parser


def _spec(args: argparse.Namespace) -> bench.ExperimentSpec:
    spec = bench.ExperimentSpec(
        datasets=args.dataset, n=args.n, seed=args.seed, hashers=args.hasher,
        leaves=args.leaves, max_error=args.max_error, radix_bits=args.radix_bits,
    )
    for name in ("repetitions", "raw", "include_build", "table", "bucket_size", "payload",
                 "kicking", "load_factor", "max_kicks", "bins", "g_max"):
        if hasattr(args, name):
            setattr(spec, name, getattr(args, name))
    if hasattr(args, "models"):
        spec.leaf_grid = args.models
        spec.batch = BatchConfig(args.batch_s, args.batch_w)
        spec.prefetch = not args.no_prefetch
    return spec


def _emit(text: str, out: Path | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        out.write_text(text)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "gen":
            ks = dataset(args.dataset, args.n, args.seed)
            write_keyset(ks, args.out)
            log.info("wrote %d keys to %s", ks.count, args.out)
            return 0
        if args.command == "train":
            path = Path(args.keys)
            ks = load_keyset(path) if path.is_file() else dataset(args.keys, args.n, args.seed)
            spec = bench.ExperimentSpec(leaves=args.leaves, max_error=args.max_error,
                                        radix_bits=args.radix_bits)
            model = bench.train_for(args.model, ks, spec)
            save_model(model, args.out)
            log.info("saved %s model (%d bytes) to %s", args.model, model_size_bytes(model),
                     args.out)
            return 0
        spec = _spec(args)
        if args.command == "gaps":
            histogram, rows = bench.cmd_gaps(spec)
            _emit(histogram, args.out)
            if args.report is not None:
                args.report.write_text(bench.rows_to_csv(rows))
            return 0
        runner = {"throughput": bench.cmd_throughput, "collisions": bench.cmd_collisions,
                  "probe": bench.cmd_probe}[args.command]
        rows = runner(spec)
        _emit(bench.rows_to_csv(rows), args.out)
        if args.command == "probe" and args.strict and any(r.metric == "error" for r in rows):
            print("lhash: cuckoo insertion failed for some keys", file=sys.stderr)
            return 3
        return 0
    except (bench.SpecError, KeySetError, ModelError, ValueError, OSError) as exc:
        print(f"lhash: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
