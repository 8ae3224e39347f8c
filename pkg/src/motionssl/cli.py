"""Command-line entry point.

Subcommands: generate, pretrain, finetune, eval, plot.  Every run takes
an optional config file (``--config``, key=value text) plus dotted-key
overrides (``--set section.key=value``).  Relative output paths resolve
under ``$MOTIONSSL_OUT`` when it is set.

Exit codes: 0 success, 1 configuration error, 2 data error,
3 numeric failure (non-finite loss).
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .config import ConfigError, load_config
from .scene import DataError, SceneFormatError, generate_corpus, get_dialect

OUT_ROOT_ENV = "MOTIONSSL_OUT"

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


def _resolve(path: str) -> Path:
    p = Path(path)
    root = os.environ.get(OUT_ROOT_ENV)
    if root and not p.is_absolute():
        return Path(root) / p
    return p


def _add_config_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key=value config file")
    parser.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="SECTION.KEY=VALUE", help="override one config key")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="motionssl",
        description="Self-supervised pre-training and joint prediction of traffic motion.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a deterministic synthetic scene corpus")
    _add_config_args(p)
    p.add_argument("out", help="corpus directory to create")

    p = sub.add_parser("pretrain", help="pre-train encoders on a corpus")
    _add_config_args(p)
    p.add_argument("corpus", help="input corpus directory")
    p.add_argument("out", help="run directory for checkpoint + record")

    p = sub.add_parser("finetune", help="train the joint predictor, from scratch or a checkpoint")
    _add_config_args(p)
    p.add_argument("corpus", help="training corpus directory")
    p.add_argument("out", help="run directory")
    p.add_argument("--init", help="pre-trained checkpoint to start from (omit for scratch)")
    p.add_argument("--val-corpus", help="held-out corpus for per-epoch validation metrics")

    p = sub.add_parser("eval", help="evaluate a fine-tuned checkpoint on a corpus")
    _add_config_args(p)
    p.add_argument("checkpoint", help="fine-tuned checkpoint file")
    p.add_argument("corpus", help="evaluation corpus directory")
    p.add_argument("out", help="directory for metrics report + history")
    p.add_argument("--dump-predictions", action="store_true",
                   help="also write the full prediction set")
    p.add_argument("--threshold", type=float, default=2.0,
                   help="hit threshold in meters for miss rate / mAP")

    p = sub.add_parser("plot", help="render loss curves or run comparisons from records")
    _add_config_args(p)
    p.add_argument("kind", choices=["losses", "compare"],
                   help="losses: per-modality pre-training curves; "
                        "compare: metric over wall time across fine-tune runs")
    p.add_argument("runs", nargs="+", help="run directories")
    p.add_argument("out", help="output directory for SVGs + tables")
    p.add_argument("--metric", default="min_fde",
                   help="validation metric for compare plots")
    return parser


def _cmd_generate(args, configs) -> int:
    _, _, gcfg = configs
    dialect = get_dialect(gcfg.dialect)
    out = _resolve(args.out)
    manifest = generate_corpus(out, dialect, n_scenes=gcfg.scenes, base_seed=gcfg.seed,
                               counts=(gcfg.agents, gcfg.lanes, gcfg.lights),
                               lane_points=gcfg.lane_points, overwrite=gcfg.overwrite)
    print(f"wrote {len(manifest['scenes'])} scenes to {out}")
    return EXIT_OK


def _cmd_pretrain(args, configs) -> int:
    from . import training
    mcfg, tcfg, _ = configs
    out = _resolve(args.out)
    _, record = training.pretrain(mcfg, tcfg, _resolve(args.corpus), out)
    last = record.rows[-1]
    total = last[record.columns.index("loss_total")]
    print(f"pre-trained {tcfg.epochs} epochs ({len(record.rows)} steps), "
          f"final total loss {total:.6f}; checkpoint in {out}")
    return EXIT_OK


def _cmd_finetune(args, configs) -> int:
    from . import training
    mcfg, tcfg, _ = configs
    out = _resolve(args.out)
    init = _resolve(args.init) if args.init else None
    val = _resolve(args.val_corpus) if args.val_corpus else None
    _, record, report = training.finetune(mcfg, tcfg, _resolve(args.corpus), out,
                                          init_checkpoint=init, val_corpus_dir=val)
    if report is not None:
        for line in report.summary_lines():
            print(line)
    last = record.rows[-1]
    total = last[record.columns.index("loss_total")]
    print(f"fine-tuned {tcfg.epochs} epochs ({len(record.rows)} steps), "
          f"final loss {total:.6f}; checkpoint in {out}")
    return EXIT_OK


def _cmd_eval(args, configs) -> int:
    from . import training
    report = training.evaluate_checkpoint(
        _resolve(args.checkpoint), _resolve(args.corpus), _resolve(args.out),
        dump_predictions=args.dump_predictions, threshold=args.threshold)
    for line in report.summary_lines():
        print(line)
    return EXIT_OK


def _cmd_plot(args, configs) -> int:
    from . import plots
    from .training import RunRecord
    out = _resolve(args.out)
    if args.kind == "losses":
        if len(args.runs) != 1:
            raise DataError("losses plot takes exactly one pre-training run directory")
        record = RunRecord.load(_resolve(args.runs[0]) / "record.csv")
        written = plots.plot_modality_losses(record, out)
    else:
        entries = [plots.load_run_for_comparison(_resolve(r)) for r in args.runs]
        written = plots.plot_metric_comparison(entries, out, metric=args.metric)
    for path in written:
        print(f"wrote {path}")
    return EXIT_OK


_COMMANDS = {"generate": _cmd_generate, "pretrain": _cmd_pretrain,
             "finetune": _cmd_finetune, "eval": _cmd_eval, "plot": _cmd_plot}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        configs = load_config(args.config, args.overrides)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return _COMMANDS[args.command](args, configs)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, SceneFormatError, FileNotFoundError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except RuntimeError as e:
        from .training import NonFiniteLossError
        if isinstance(e, NonFiniteLossError):
            print(f"numeric failure: {e}", file=sys.stderr)
            return EXIT_NUMERIC
        raise


if __name__ == "__main__":
    sys.exit(main())
