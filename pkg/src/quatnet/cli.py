"""The ``quatnet`` command line."""
from __future__ import annotations

import argparse
import csv
import json
import sys

import numpy as np

from . import __version__
from .config import ExperimentConfig, load_config
from .init import SCHEMES, InitSpec, chi4_pdf, chi4_sample
from .models import INPUT_MODES, MODEL_PRESETS, ResNet, count_params


def _cmd_train(args) -> int:
    from .train import train

    config = load_config(
        args.config, seed=args.seed, epochs=args.epochs, model=args.model, task=args.task,
        data=args.data, out_dir=args.out,
    )
    result = train(config, resume=args.resume, log=print)
    print(f"metrics: {result.out_dir / 'metrics.csv'}")
    print(f"best checkpoint: {result.best_path}")
    return 0


def _cmd_eval(args) -> int:
    from .train import evaluate

    print(json.dumps(evaluate(args.checkpoint, args.data, args.task)))
    return 0


def _cmd_verify(args) -> int:
    from . import verify

    results = verify.run(args.suite, seed=args.seed, threads=args.threads)
    for r in results:
        print(f"{'PASS' if r.ok else 'FAIL'}  {r.suite}/{r.name}: {r.detail}")
    failed = sum(not r.ok for r in results)
    print(f"{len(results) - failed}/{len(results)} passed")
    return 1 if failed else 0


def _cmd_count_params(args) -> int:
    if args.config:
        config = load_config(args.config, model=args.model, task=args.task)
    else:
        config = ExperimentConfig.from_preset(args.model or "shallow", task=args.task or "classify",
                                              input_mode=args.input_mode)
    model = ResNet(config.task, config.blocks, config.base_filters, config.input_mode,
                   num_classes=config.num_classes, algebra=args.algebra, bn_granularity=config.bn_granularity)
    n = count_params(model)
    print(f"{config.model} {args.algebra} ({config.task}, {config.input_mode}): {n} parameters")
    if args.compare is not None:
        print(f"delta to {args.compare}: {n - args.compare:+d} ({(n - args.compare) / args.compare:+.1%})")
    return 0


def _cmd_sample_init(args) -> int:
    spec = InitSpec(args.scheme, args.n_in, args.n_out)
    rng = np.random.default_rng(args.seed)
    mags = chi4_sample(spec.sigma, rng, args.samples)
    counts, edges = np.histogram(mags, bins=args.bins, range=(0.0, float(mags.max())))
    width = np.diff(edges)
    centers = 0.5 * (edges[:-1] + edges[1:])
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["bin_left", "bin_right", "count", "density", "pdf"])
        for lo, hi, c, d, x in zip(edges[:-1], edges[1:], counts, counts / (counts.sum() * width), centers):
            w.writerow([f"{lo:.8g}", f"{hi:.8g}", int(c), f"{d:.8g}", f"{chi4_pdf(x, spec.sigma):.8g}"])
    finally:
        if args.out:
            out.close()
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="quatnet", description="Quaternion residual networks on numpy.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model from a config file")
    t.add_argument("--config", help="key = value config file")
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--model", choices=sorted(MODEL_PRESETS))
    t.add_argument("--task", choices=["classify", "segment"])
    t.add_argument("--data", help="CIFAR-10 directory, or 'synthetic' for segmentation")
    t.add_argument("--out", help="output directory")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.set_defaults(func=_cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", help="CIFAR-10 directory or 'synthetic' (default: the training data)")
    e.add_argument("--task", choices=["classify", "segment"])
    e.set_defaults(func=_cmd_eval)

    v = sub.add_parser("verify", help="run the built-in property suites")
    v.add_argument("--suite", action="append", choices=["algebra", "conv", "bn", "init", "grad"],
                   help="suite to run (repeatable; default all)")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--threads", type=int, help="worker threads (default: QUATNET_THREADS or CPU count)")
    v.set_defaults(func=_cmd_verify)

    c = sub.add_parser("count-params", help="count learnable parameters of a model")
    c.add_argument("--config")
    c.add_argument("--model", choices=sorted(MODEL_PRESETS))
    c.add_argument("--task", choices=["classify", "segment"])
    c.add_argument("--input-mode", choices=INPUT_MODES, default="learned-imaginary")
    c.add_argument("--algebra", choices=["quaternion", "real"], default="quaternion")
    c.add_argument("--compare", type=int, help="reference count to report the delta against")
    c.set_defaults(func=_cmd_count_params)

    s = sub.add_parser("sample-init", help="histogram CSV of sampled weight magnitudes")
    s.add_argument("--scheme", choices=SCHEMES, default="glorot")
    s.add_argument("--n-in", type=int, default=64)
    s.add_argument("--n-out", type=int, default=64)
    s.add_argument("--samples", type=int, default=100_000)
    s.add_argument("--bins", type=int, default=50)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", help="CSV path (default stdout)")
    s.set_defaults(func=_cmd_sample_init)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, FloatingPointError) as e:
        print(f"quatnet {args.command}: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
