"""Command line entry point: ``cnnsgd <command> [--config PATH] [--out DIR] [--seed N]``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import harness
from .model import ConfigError


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cnnsgd", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", type=Path, default=None, help="JSON experiment document")
        sp.add_argument("--out", type=Path, default=Path("out"), help="output directory")
        sp.add_argument("--seed", type=int, default=0, help="base seed")

    for name, helptext in [("generate", "sample a labeled dataset"),
                           ("train", "train an ensemble on the dataset named in the config"),
                           ("evaluate", "regret of the checkpoint named in the config"),
                           ("rate-sweep", "train/evaluate over a grid of n and seeds"),
                           ("bounds", "formula and empirical capacity bounds")]:
        common(sub.add_parser(name, help=helptext))
    v = sub.add_parser("verify", help="run a verification suite")
    v.add_argument("suite", choices=sorted(harness.SUITES))
    common(v)
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = harness.load_config(args.config)
        if args.command == "generate":
            print(harness.cmd_generate(cfg, args.out, args.seed))
        elif args.command == "train":
            print(harness.cmd_train(cfg, args.out, args.seed))
        elif args.command == "evaluate":
            print(harness.cmd_evaluate(cfg, args.out, args.seed))
        elif args.command == "bounds":
            print(harness.cmd_bounds(cfg, args.out, args.seed))
        elif args.command == "rate-sweep":
            if "cnn" not in cfg:
                print(harness.CONSTANTS_NOTICE, file=sys.stderr)
            res = harness.run_rate_sweep(
                cfg, args.seed, progress=lambda r: print(f"n={r[0]} seed={r[1]} regret={r[5]:.4f}",
                                                         file=sys.stderr))
            harness.write_sweep(res, args.out)
            seeds = [args.seed + i for i in range(int(cfg["sweep"]["seeds"]))]
            harness.write_manifest(args.out, "rate-sweep", cfg, seeds)
            for n, med, _, _ in res.summary:
                print(f"n={n} median_regret={med:.4f}")
            print(f"log-log slope {res.slope:.4f}")
        elif args.command == "verify":
            rep = harness.run_verify(args.suite, args.seed, args.out)
            harness.write_manifest(args.out, f"verify {args.suite}", cfg, [args.seed])
            print(rep.summary())
            return 0 if rep.ok else 1
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
