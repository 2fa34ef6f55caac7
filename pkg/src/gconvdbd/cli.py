"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 transport error.
"""

from __future__ import annotations

import argparse
import datetime as dt
import json
import logging
import os
import sys
from dataclasses import asdict

from .dataset import DataError
from .evaluation import evaluate_checkpoint, run_experiment, write_report
from .nn import CheckpointError, ModelConfig, load_checkpoint, save_checkpoint
from .stream import TransportError, open_sink, open_source, replay, serve, tail
from .stream.messages import KINDS

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_TRANSPORT = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _positive_or_zero(text: str) -> float:
    v = float(text)
    if v < 0:
        raise argparse.ArgumentTypeError("must be >= 0")
    return v


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="gconvdbd", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("replay", help="publish recorded frames at 1 Hz (scaled by --speed)")
    p.add_argument("--data", required=True)
    p.add_argument("--subset", required=True, choices=["A", "B", "C", "full"])
    p.add_argument("--speed", type=_positive_or_zero, default=1.0,
                   help="time compression factor; 0 = as fast as possible")
    p.add_argument("--out", required=True, help="tcp:HOST:PORT | file:PATH | -")
    p.add_argument("--limit", type=int, default=None, help="stop after this many frames")

    p = sub.add_parser("serve", help="run the edge inference service")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--in", dest="source", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--min-alert-gap", type=float, default=0.0,
                   help="suppress alerts closer than this many seconds")
    p.add_argument("--start-date", type=dt.date.fromisoformat, default=dt.date(1970, 1, 1),
                   help="calendar date of stream second 0, for daily reports")

    p = sub.add_parser("tail", help="print messages in human-readable form")
    p.add_argument("--in", dest="source", required=True)
    p.add_argument("--kinds", default="", help=f"comma list from {sorted(KINDS)}")

    p = sub.add_parser("train", help="train on a recording and write a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--subset", required=True, choices=["A", "B", "C", "full"])
    p.add_argument("--config", help="JSON file with ModelConfig keys")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--report", help="write the JSON experiment report here")
    p.add_argument("--roc-csv", help="write ROC points here")

    p = sub.add_parser("evaluate", help="score a checkpoint on a recording")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--all", action="store_true",
                   help="score every window instead of the rebuilt test split")
    return ap


def _cmd_replay(args) -> int:
    sink = open_sink(args.out)
    summary = replay(args.data, args.subset, args.speed, sink, limit=args.limit)
    logging.getLogger(__name__).info("replayed %d frames in %.2fs", summary.frames_sent, summary.elapsed_s)
    return EXIT_OK if summary.completed else EXIT_TRANSPORT


def _cmd_serve(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    source = open_source(args.source)
    sink = open_sink(args.out)
    serve(ckpt, source, sink, min_alert_gap=args.min_alert_gap, start_date=args.start_date)
    return EXIT_OK


def _cmd_tail(args) -> int:
    kinds = [k.strip() for k in args.kinds.split(",") if k.strip()]
    bad = set(kinds) - KINDS
    if bad:
        raise UsageError(f"unknown kinds {sorted(bad)}")
    tail(open_source(args.source), kinds or None)
    return EXIT_OK


def _cmd_train(args) -> int:
    try:
        config = ModelConfig.load(args.config) if args.config else ModelConfig()
    except (OSError, json.JSONDecodeError, ValueError, TypeError) as exc:
        raise UsageError(f"bad config {args.config}: {exc}") from None
    report, ckpt = run_experiment(args.data, args.subset, config)
    save_checkpoint(args.out, ckpt)
    print(report.table())
    if args.report:
        write_report(report, args.report)
    if args.roc_csv and report.roc is not None:
        report.roc.to_csv(args.roc_csv)
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    cm, met, roc, _ = evaluate_checkpoint(ckpt, args.data, all_windows=args.all)
    out = {"confusion": asdict(cm), "metrics": met.as_dict(), "auc": roc.auc if roc else None}
    print(json.dumps(out, indent=2))
    return EXIT_OK


COMMANDS = {
    "replay": _cmd_replay,
    "serve": _cmd_serve,
    "tail": _cmd_tail,
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"gconvdbd: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CheckpointError) as exc:
        print(f"gconvdbd: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TransportError as exc:
        print(f"gconvdbd: transport error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    except ValueError as exc:
        print(f"gconvdbd: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except BrokenPipeError:
        # downstream reader (e.g. ``head``) went away; silence the flush at exit
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return EXIT_OK
    except KeyboardInterrupt:
        return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
