"""Command-line entry point: ``darcy <experiment> --config <path>``."""

from __future__ import annotations

import argparse
import sys

from .errors import ConfigInvalid
from .harness import CONFIG_HELP, EXPERIMENTS, load_config, run


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="darcy",
        description="Monte Carlo experiments on randomly perforated domains.",
        epilog=CONFIG_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    ap.add_argument("experiment", choices=EXPERIMENTS)
    ap.add_argument("--config", required=True, help="flat key=value file")
    ap.add_argument("--out", default=None, help="output directory (default: config 'out')")
    ap.add_argument("--threads", type=int, default=1, help="worker threads over (eps, seed) cells")
    ap.add_argument("--master-seed", type=int, default=None, help="override master_seed")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, experiment=args.experiment,
                          master_seed=args.master_seed)
    except (ConfigInvalid, OSError) as exc:
        print(f"darcy: invalid config: {exc}", file=sys.stderr)
        return 2
    out = args.out if args.out is not None else cfg.out
    summary = run(cfg, out=out, threads=max(1, args.threads))
    for name, verdict in summary.verdicts.items():
        print(f"{name}: {verdict}")
    for f in summary.failures:
        print(f"failed cell: {f}", file=sys.stderr)
    print(f"wrote {out}/summary.json")
    return 0 if summary.passed else 1


if __name__ == "__main__":
    sys.exit(main())
