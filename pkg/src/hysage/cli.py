"""``hysage prepare|embed|train|evaluate|ablate|sweep --config <path> [--seed N] [--out DIR]``.

On failure the last line on stderr is ``error<TAB><category><TAB><message>`` and the
exit code is nonzero (2 for input, config, data and checkpoint problems, 1 otherwise).
"""
from __future__ import annotations

import argparse
import logging
import sys

from . import pipeline
from .config import default_config_text, load_config
from .errors import HysageError


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hysage", description="graph-embedding recommender pipeline")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    def command(name, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=name != "prepare", help="INI run configuration")
        p.add_argument("--seed", type=int, help="root seed (overrides [run] seed)")
        p.add_argument("--out", help="run directory (overrides [run] out)")
        return p

    command("prepare", "parse, split and check inputs").add_argument(
        "--print-defaults", action="store_true", help="print the default configuration and exit")
    command("embed", "train static user and item graph embeddings")
    command("train", "train the ranking model").add_argument(
        "--resume", action="store_true", help="continue from the saved model checkpoint")
    ev = command("evaluate", "leave-one-out HR/NDCG report")
    ev.add_argument("--checkpoint", help="model checkpoint (default <out>/model.ckpt)")
    command("ablate", "train and evaluate every model variant").add_argument(
        "--variants", help="comma-separated subset of variants")
    sw = command("sweep", "one run per value of a hyperparameter")
    sw.add_argument("--axis", required=True, choices=pipeline.SWEEP_AXES)
    sw.add_argument("--values", required=True, help="comma-separated values")
    return ap


def _report(report) -> None:
    for line in report.lines():
        print(line)


def run(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "prepare" and args.print_defaults:
        sys.stdout.write(default_config_text())
        return 0
    if args.config is None:
        raise SystemExit("hysage prepare: --config is required unless --print-defaults is given")
    cfg = load_config(args.config).with_overrides(args.seed, args.out)

    if args.command == "prepare":
        for key, value in pipeline.prepare(cfg).items():
            print(f"{key}\t{value}")
    elif args.command == "embed":
        print(f"checkpoint\t{pipeline.embed(cfg)}")
    elif args.command == "train":
        print(f"checkpoint\t{pipeline.train(cfg, resume=args.resume)}")
    elif args.command == "evaluate":
        _report(pipeline.evaluate(cfg, model_path=args.checkpoint))
    elif args.command == "ablate":
        variants = [v.strip() for v in args.variants.split(",")] if args.variants else None
        for name, report in pipeline.ablate(cfg, variants=variants).items():
            for line in report.lines():
                print(f"{name}\t{line}")
    elif args.command == "sweep":
        values = [v.strip() for v in args.values.split(",") if v.strip()]
        for value, report in pipeline.sweep(cfg, args.axis, values).items():
            for line in report.lines():
                print(f"{value}\t{line}")
    return 0


def main(argv=None) -> int:
    try:
        return run(argv)
    except HysageError as exc:
        print(f"error\t{exc.category}\t{_one_line(exc)}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error\tio\t{_one_line(exc)}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001  (one parsable line instead of a traceback)
        logging.getLogger(__name__).debug("unhandled", exc_info=True)
        print(f"error\tinternal\t{type(exc).__name__}: {_one_line(exc)}", file=sys.stderr)
        return 1


def _one_line(exc: Exception) -> str:
    return " ".join(str(exc).split()) or type(exc).__name__


if __name__ == "__main__":
    sys.exit(main())
