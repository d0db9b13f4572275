"""Command-line entry point: ``airdp {run,sweep,threshold,verify,mnist}``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace

from .errors import AirdpError
from .experiments import (SweepSpec, emit_config, make_problem, parse_config, run_sweep,
                          threshold_report, write_trace, verify_trace)
from .mnist import MnistConfig, run_mnist, with_overrides
from .trainer import TrainConfig, run

log = logging.getLogger("airdp")


def _load(path, want):
    cfg = TrainConfig() if path is None else parse_config(path)
    if want is TrainConfig and isinstance(cfg, SweepSpec):
        raise AirdpError("this subcommand takes a single-run config (no 'axis' key)")
    if want is SweepSpec and not isinstance(cfg, SweepSpec):
        raise AirdpError("sweep needs a config with 'axis' and 'values'")
    return cfg


def _with_seed(cfg, seed):
    if seed is None:
        return cfg
    if isinstance(cfg, SweepSpec):
        return replace(cfg, base=replace(cfg.base, seed=seed))
    return replace(cfg, seed=seed)


def cmd_run(args):
    cfg = _with_seed(_load(args.config, TrainConfig), args.seed)
    dataset, partition, ctx = make_problem(cfg)
    trace = run(cfg, dataset, partition, args.realization, ctx)
    if args.out:
        write_trace(trace, args.out)
    gap = trace.final_gap
    print(f"protocol={cfg.protocol} pa_mode={cfg.pa_mode} T={trace.T} "
          f"final_loss={trace.final_loss:.6g} "
          + (f"final_gap={gap:.6g} " if gap is not None else "")
          + f"max_privacy={trace.final_privacy().max():.6g} budget={trace.budget:.6g}")
    return 0


def cmd_sweep(args):
    spec = _with_seed(_load(args.config, SweepSpec), args.seed)
    if args.realizations is not None:
        spec = replace(spec, realizations=args.realizations)
    out = args.out or "sweep.csv"
    rows = run_sweep(spec, out=out, workers=args.workers)
    log.info("wrote %d rows to %s", len(rows), out)
    return 0


def cmd_threshold(args):
    cfg = _with_seed(_load(args.config, TrainConfig), args.seed)
    n = args.realizations or 1
    for t in threshold_report(cfg, n):
        print(f"{t.protocol}: free-privacy sum={t.lhs:.6g} epsilon_threshold={t.epsilon:.6g} "
              f"snr_threshold_db={t.snr_db:.4f}")
    return 0


def cmd_verify(args):
    result = verify_trace(args.trace)
    print(f"ledger_match={result.ledger_match} within_budget={result.within_budget} "
          f"slack={result.slack!r}")
    return 0 if result.ok else 1


def cmd_mnist(args):
    cfg = with_overrides(MnistConfig(), data_dir=args.data_dir, n_train=args.n_train,
                         realizations=args.realizations, seed=args.seed, protocol=args.protocol)
    if args.I:
        cfg = replace(cfg, I_grid=tuple(args.I))
    rows = run_mnist(cfg, out=args.out or "mnist.csv")
    for r in rows:
        print(f"I={r['I']} {r['pa_mode']}: train_loss={r['train_loss_mean']:.4f} "
              f"test_error={r['test_error_mean']:.4f}")
    return 0


def cmd_show_config(args):
    sys.stdout.write(emit_config(_load(args.config, None)))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="airdp", description="Private federated learning over wireless channels.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, realizations=True):
        p.add_argument("--config", help="key = value config file (defaults if omitted)")
        p.add_argument("--seed", type=int)
        if realizations:
            p.add_argument("--realizations", type=int)
        p.add_argument("--out")

    p = sub.add_parser("run", help="single realization; --out writes a trace CSV")
    common(p, realizations=False)
    p.add_argument("--realization", type=int, default=0)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="Monte Carlo sweep over one axis")
    common(p)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("threshold", help="epsilon/SNR beyond which privacy is free")
    common(p)
    p.set_defaults(func=cmd_threshold)

    p = sub.add_parser("verify", help="replay the privacy ledger of a trace CSV")
    p.add_argument("trace")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("mnist", help="logistic regression on MNIST IDX files")
    common(p)
    p.add_argument("--data-dir")
    p.add_argument("--n-train", type=int)
    p.add_argument("--protocol", choices=("oma", "noma"))
    p.add_argument("--I", type=int, nargs="+", help="communication budgets")
    p.set_defaults(func=cmd_mnist)

    p = sub.add_parser("show-config", help="print the effective configuration")
    p.add_argument("--config")
    p.set_defaults(func=cmd_show_config)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (AirdpError, OSError) as exc:
        print(f"airdp: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
