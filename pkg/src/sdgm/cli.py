"""Command-line entry points: ``sdgm train|eval|gradcheck|ablate|report``."""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys

from . import checks
from .autodiff import inject_adjoint_fault
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, format_config, load_config, override
from .errors import SDGMError, ShapeMismatch
from .evaluation import (embed, evaluate_verification, nn_accuracy_from_units, render_table,
                         stats_report)
from .experiment import ablate, evaluation_data, parse_cells, training_data
from .stats import write_stats_csv
from .trainer import run, write_log

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2

log = logging.getLogger("sdgm")


def _resolve(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    cfg = override(cfg, seed=getattr(args, "seed", None))
    print("# resolved configuration")
    print(format_config(cfg), end="", flush=True)
    return cfg


def _out_dir(args) -> str:
    out = args.out or "runs"
    os.makedirs(out, exist_ok=True)
    return out


def cmd_train(args) -> int:
    cfg = _resolve(args)
    out = _out_dir(args)
    with open(os.path.join(out, "config.txt"), "w") as fh:
        fh.write(format_config(cfg))
    enc, tcfg = cfg.encoder(), cfg.train()
    state = None
    if args.resume:
        state, ck_enc, _ = load_checkpoint(args.resume)
        if ck_enc != enc:
            raise ShapeMismatch(f"checkpoint encoder {ck_enc} does not match configuration {enc}")
        print(f"# resuming at iteration {state.iteration}")
    dataset = training_data(cfg)
    ckpt_path = os.path.join(out, "checkpoint.npz")

    def on_step(result, st):
        every = cfg.checkpoint_interval
        if every and st.iteration % every == 0 and st.iteration < tcfg.total_iterations:
            save_checkpoint(os.path.join(out, f"checkpoint_{st.iteration:07d}.npz"), st, enc, tcfg)

    state, rows = run(tcfg, dataset, enc, state=state, log_interval=cfg.log_interval, callback=on_step)
    save_checkpoint(ckpt_path, state, enc, tcfg)
    write_log(os.path.join(out, "metrics.csv"), rows)
    write_stats_csv(os.path.join(out, "stats.csv"), rows)
    print(f"trained to iteration {state.iteration}; checkpoint {ckpt_path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _resolve(args)
    out = _out_dir(args)
    state, enc, _ = load_checkpoint(args.checkpoint)
    test, pairs = evaluation_data(cfg, args.pairs)
    if test.patch_size ** 2 != enc.input_dim:
        raise ShapeMismatch(f"patches of size {test.patch_size} do not fit encoder input_dim {enc.input_dim}")
    fpr = evaluate_verification(state.params, enc, test, pairs)
    units = embed(state.params, enc, test.patches)
    ref, query = _split_views(test)
    nn_acc = nn_accuracy_from_units(units[ref], test.labels[ref], units[query], test.labels[query])
    with open(os.path.join(out, "eval.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("checkpoint", "iteration", "pairs", "fpr95", "nn_accuracy"))
        w.writerow((args.checkpoint, state.iteration, len(pairs), repr(fpr), repr(nn_acc)))
    summary = f"FPR@95 = {fpr:.4f} over {len(pairs)} pairs; NN matching accuracy = {nn_acc:.4f}"
    with open(os.path.join(out, "eval.txt"), "w") as fh:
        fh.write(summary + "\n")
    print(summary)
    return EXIT_OK


def _split_views(dataset):
    """First patch of every class as reference, the rest as queries."""
    ref, query = [], []
    for c in dataset.classes:
        idx = dataset.index[int(c)]
        ref.append(idx[0])
        query.extend(idx[1:])
    return ref, query


def cmd_gradcheck(args) -> int:
    if args.config:
        _resolve(args)
    if args.inject_fault:
        with inject_adjoint_fault(1.01):
            results = checks.run_all(quick=args.quick)
    else:
        results = checks.run_all(quick=args.quick)
    for r in results:
        status = "ok  " if r.passed else "FAIL"
        print(f"{status} {r.name:45s} max_rel_err={r.max_rel_error:.3e} tol={r.tolerance:.0e}")
    return EXIT_OK if all(r.passed for r in results) else EXIT_NUMERIC


def cmd_ablate(args) -> int:
    cfg = _resolve(args)
    out = _out_dir(args)
    rows = ablate(cfg, parse_cells(args.cells))
    path = os.path.join(out, "ablation.csv")
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    for r in rows:
        print(f"{r['cell']:10s} FPR@95 {r['fpr95']:.4f} (initial {r['fpr95_initial']:.4f})")
    return EXIT_OK


def cmd_report(args) -> int:
    epochs = [int(e) for e in args.epochs.split(",")] if args.epochs else None
    table = stats_report(args.log, epochs, args.iterations_per_epoch)
    print(render_table(table))
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "stats_table.csv"), "w", newline="") as fh:
            csv.writer(fh).writerows(table)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sdgm", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="key = value run configuration")
        p.add_argument("--seed", type=int, help="override the configured seed")
        p.add_argument("--out", help="output directory (default: runs)")

    p = sub.add_parser("train", help="train an encoder")
    common(p)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="FPR@95 and nearest-neighbour accuracy of a checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--pairs", help="verification pair list (UBC layout)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    common(p, config_required=False)
    p.add_argument("--quick", action="store_true", help="fewer random instances")
    p.add_argument("--inject-fault", action="store_true",
                   help="test hook: scale the arccos adjoint by 1.01 so the checks must fail")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ablate", help="self-weight x power-adjustment ablation matrix")
    common(p)
    p.add_argument("--cells", help="comma list such as af+pa,theta-pa (default: all 8)")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("report", help="statistics table from a metrics log")
    p.add_argument("--log", required=True)
    p.add_argument("--epochs", help="comma list of epochs")
    p.add_argument("--iterations-per-epoch", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except SDGMError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
