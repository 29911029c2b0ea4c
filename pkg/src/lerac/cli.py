"""Command-line entry point: ``lerac {train,compare,timing,presets}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .errors import LeracError
from .experiment import (REGIMES, compare_regimes, from_preset, load_config,
                         regime_uses_cbs, run_experiment, timing_report, timing_sweep)
from .presets import DESK_PRESETS, TABLE_PRESETS

DEFAULT_PRESET = "mlp-spirals"


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="INI config file (sections: experiment, dataset, "
                   "optimizer, lerac, cbs, plateau)")
    p.add_argument("--preset", help="named preset; see `lerac presets`")
    p.add_argument("--regime", help="regime name (comma-separated list for compare/timing)")
    p.add_argument("--seed", type=int, help="base seed; repeat i uses seed + i")
    p.add_argument("--repeats", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--out", help="output directory for metrics, checkpoints and tables")
    p.add_argument("--deterministic", action="store_true",
                   help="single-threaded BLAS; wall-clock kept out of metrics.csv")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lerac", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    _common(sub.add_parser("train", help="train one configuration"))
    _common(sub.add_parser("compare", help="compare training regimes"))
    _common(sub.add_parser("timing", help="serial wall-clock comparison of regimes"))
    sub.add_parser("presets", help="list named presets")
    return parser


def _config(args):
    base = from_preset(args.preset or DEFAULT_PRESET) if (args.preset or not args.config) else None
    cfg = load_config(args.config, base) if args.config else base
    if args.seed is not None:
        cfg.base_seed = args.seed
    if args.repeats is not None:
        cfg.repeats = args.repeats
    if args.epochs is not None:
        cfg.epochs = args.epochs
    if args.out:
        cfg.out_dir = args.out
    if args.deterministic:
        cfg.deterministic = True
    return cfg


def _regimes(args, cfg):
    if args.regime:
        return [r.strip() for r in args.regime.split(",") if r.strip()]
    return [r for r in REGIMES if cfg.architecture == "cnn" or not regime_uses_cbs(r)]


def _print_presets():
    print("desk-scale experiments:")
    for name, spec in sorted(DESK_PRESETS.items()):
        ex, ds = spec["experiment"], spec["dataset"]
        print(f"  {name:<18} {ex['architecture']} on {ds['kind']} "
              f"({ds['classes']} classes, {ex['epochs']} epochs)")
    print("hyperparameter presets (applied to a desk-scale experiment):")
    for name, p in sorted(TABLE_PRESETS.items()):
        print(f"  {name:<18} {p.optimizer:<7} eta={p.eta_base:g} "
              f"lerac k={p.k[0]}-{p.k[1]} range={p.eta_range[0]:g}..{p.eta_range[1]:g} "
              f"cbs sigma={p.sigma:g} d={p.d:g} u={p.u[0]}-{p.u[1]} -> {p.desk_base}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "presets":
        _print_presets()
        return 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        if args.command == "train":
            if args.regime:
                cfg.regime = args.regime
            result = run_experiment(cfg)
            accs = ", ".join(f"{a:.2f}" for a in result.accuracies)
            print(f"{cfg.regime}: {result.mean:.2f} ± {result.std:.2f} (runs: {accs})")
        elif args.command == "compare":
            cfgs = [cfg.with_regime(r) for r in _regimes(args, cfg)]
            table, _ = compare_regimes(cfgs)
            print(table.to_text(), end="")
        else:
            cfgs = [cfg.with_regime(r) for r in _regimes(args, cfg)]
            results = timing_sweep(cfgs)
            out = Path(cfg.out_dir) if cfg.out_dir else None
            if out:
                out.mkdir(parents=True, exist_ok=True)
            table = timing_report(results,
                                  series_path=out / "timing_series.csv" if out else None,
                                  table_path=out / "timing.csv" if out else None)
            print(table.to_text(), end="")
    except LeracError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
