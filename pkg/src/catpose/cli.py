"""Command-line interface: gen / train / eval / selftest / bench.

Heavy imports happen inside the subcommands so that the CATPOSE_THREADS
environment variable can cap BLAS thread counts before numpy loads.
"""

from __future__ import annotations

import argparse
import os
import sys

THREAD_ENV = "CATPOSE_THREADS"


def _apply_thread_env():
    threads = os.environ.get(THREAD_ENV)
    if not threads:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, threads)


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="catpose",
        description="Category-level pose estimation pipeline with a synthetic ground-truth harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate a synthetic dataset")
    gen.add_argument("--categories", required=True,
                     help="comma-separated category names, e.g. can,bowl")
    gen.add_argument("--per-cat", type=int, required=True, help="samples per category")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--profile", default="desk", choices=("desk", "paper"))
    gen.add_argument("--out", required=True, help="output dataset directory")

    train = sub.add_parser("train", help="train the unified model on a dataset")
    train.add_argument("--manifest", required=True)
    train.add_argument("--epochs", type=int, default=12)
    train.add_argument("--lr", type=float, default=1e-3)
    train.add_argument("--seed", type=int, default=0)
    train.add_argument("--weights", required=True, help="output weights file")
    train.add_argument("--curve", default=None, help="optional loss-curve CSV path")

    ev = sub.add_parser("eval", help="evaluate weights over a dataset manifest")
    ev.add_argument("--manifest", required=True)
    ev.add_argument("--weights", required=True)
    ev.add_argument("--report", required=True, help="output CSV path")
    ev.add_argument("--limit", type=int, default=None, help="evaluate only the first N samples")

    sub.add_parser("selftest", help="run the oracle/property self-checks")

    bench = sub.add_parser("bench", help="time attention forwards across reduction ratios")
    bench.add_argument("--tokens", type=int, default=4096)
    bench.add_argument("--channels", type=int, default=32)
    bench.add_argument("--ratios", default="1,2,4,8")
    bench.add_argument("--repeats", type=int, default=3)
    return parser


def _cmd_gen(args):
    from .dataio import generate_dataset

    categories = [c.strip() for c in args.categories.split(",") if c.strip()]
    path = generate_dataset(args.out, categories, args.per_cat, args.seed, args.profile)
    total = len(categories) * args.per_cat
    print(f"wrote {total} samples for {len(categories)} categories to {path}")
    return 0


def _cmd_train(args):
    from . import pipeline
    from .dataio import load_manifest, write_weights
    from .pipeline import TrainConfig
    from .profiles import get_profile
    from .rng import Prng

    dataset = load_manifest(args.manifest)
    profile = get_profile(dataset.profile_name)
    params = pipeline.init_pipeline(Prng(args.seed), profile)
    # stream from disk; closures keep memory flat for large datasets
    samples = [(lambda i=i: dataset.load(i)) for i in range(len(dataset))]
    curve = pipeline.toy_train(
        samples, dataset.priors, params, profile,
        TrainConfig(epochs=args.epochs, lr=args.lr, seed=args.seed),
        log=print,
    )
    write_weights(args.weights, pipeline.state_dict(params))
    print(f"wrote weights to {args.weights}")
    if args.curve:
        with open(args.curve, "w", encoding="ascii") as fh:
            fh.write("epoch,lr,total,reconstruction,correspondence,deformation,sparsity\n")
            for row in curve:
                fh.write(
                    f"{row['epoch']},{row['lr']:.8g},{row['total']:.10g},"
                    f"{row['reconstruction']:.10g},{row['correspondence']:.10g},"
                    f"{row['deformation']:.10g},{row['sparsity']:.10g}\n"
                )
        print(f"wrote loss curve to {args.curve}")
    return 0


def _cmd_eval(args):
    from . import pipeline
    from .dataio import load_manifest, read_weights
    from .metrics import precision_report
    from .profiles import get_profile
    from .rng import Prng

    dataset = load_manifest(args.manifest)
    profile = get_profile(dataset.profile_name)
    params = pipeline.init_pipeline(Prng(0), profile)
    pipeline.load_state_dict(params, read_weights(args.weights))
    records, cd_by_cat = pipeline.evaluate_dataset(params, profile, dataset, limit=args.limit)
    if not records:
        print("no poses recovered; nothing to report", file=sys.stderr)
        return 1
    report = precision_report(records)
    print(report.to_text())
    print("reconstruction CD (mean mode, x1e-3):")
    for cat, cd in cd_by_cat.items():
        print(f"  {cat}: {cd * 1e3:.3f}")
    with open(args.report, "w", encoding="ascii") as fh:
        fh.write(report.to_csv())
    print(f"wrote report to {args.report}")
    return 0


def _cmd_selftest(_args):
    from .selftest import run_selftest

    return 0 if run_selftest(log=print) else 1


def _cmd_bench(args):
    import time

    import numpy as np

    from . import ops, pixelformer as pf
    from .rng import Prng
    from .tensor import Tensor, no_grad

    ratios = [int(r) for r in args.ratios.split(",")]
    tokens, c = args.tokens, args.channels
    side = int(round(tokens**0.5))
    if side * side != tokens:
        print(f"--tokens must be a perfect square, got {tokens}", file=sys.stderr)
        return 1
    x = Tensor(np.random.default_rng(0).normal(size=(tokens, c)))
    print(f"attention forward, {tokens} tokens x {c} channels (median of {args.repeats})")
    rows = []
    for r in ratios:
        if side % r:
            print(f"skipping ratio {r}: grid {side} not divisible", file=sys.stderr)
            continue
        p = Prng(16).derive(r)
        attn = pf.SrmaParams(
            query=ops.init_linear(p.derive(0), c, c),
            key=ops.init_linear(p.derive(1), c, c),
            value=ops.init_linear(p.derive(2), c, c),
            out=ops.init_linear(p.derive(3), c, c),
            sr_norm=ops.init_norm(c),
            sr_proj=ops.init_linear(p.derive(4), r * r * c, c),
        )
        times = []
        for _ in range(args.repeats):
            t0 = time.perf_counter()
            with no_grad():
                pf.srma_attention(attn, x, (side, side), 1, r)
            times.append(time.perf_counter() - t0)
        rows.append((r, sorted(times)[len(times) // 2]))
        print(f"  R={r:<3d} {rows[-1][1] * 1e3:9.2f} ms")
    ok = all(rows[i][1] >= rows[i + 1][1] for i in range(len(rows) - 1))
    print(f"monotone nonincreasing with R: {ok}")
    return 0


def main(argv=None):
    _apply_thread_env()
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "gen": _cmd_gen,
        "train": _cmd_train,
        "eval": _cmd_eval,
        "selftest": _cmd_selftest,
        "bench": _cmd_bench,
    }
    try:
        return handlers[args.command](args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        from .dataio import FileFormatError

        if isinstance(exc, FileFormatError):
            print(f"error: {exc}", file=sys.stderr)
            return 1
        raise


if __name__ == "__main__":
    sys.exit(main())
