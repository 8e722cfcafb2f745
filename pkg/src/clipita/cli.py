"""Command-line entry point.

    clipita [--config FILE] [--seed N] [--verbose] <command> [options]

Commands: clean, fetch, train, eval-retrieval, eval-zeroshot, agreement, and
synth (writes the procedural toy dataset). Every config field can also be set
with ``--<section>-<field>`` (e.g. ``--train-batch-size 32``); flags win over
the config file. The config file defaults to ``$CLIPITA_CONFIG``.

Exit codes: 0 ok, 2 bad configuration, 3 bad input data, 4 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from clipita import config as C
from clipita import encoders as E
from clipita import pipeline as P
from clipita.data.agreement import RatingsError
from clipita.data.fetch import FetchError
from clipita.data.filters import UntaggedRecordError
from clipita.data.manifest import ManifestError
from clipita.optim import TrainingError

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4

# short flags -> (section, field)
ALIASES = {
    "threshold": ("filters", "propn_threshold"),
    "min_lang_score": ("filters", "min_lang_score"),
    "concurrency": ("fetch", "concurrency"),
    "timeout_ms": ("fetch", "timeout_ms"),
}


def _parse_bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


_TYPES = {"int": int, "float": float, "bool": _parse_bool, "str": str}


def _section_parent() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    group = parent.add_argument_group("config overrides")
    for section in C.SECTIONS:
        for f in C.section_fields(section):
            group.add_argument(f"--{section}-{f.name.replace('_', '-')}", dest=f"cfg__{section}__{f.name}",
                               type=_TYPES.get(str(f.type), str), default=None, metavar=str(f.type).upper())
    return parent


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="clipita", description="Toy Italian CLIP pipeline.")
    parser.add_argument("--config", help=f"JSON config file (default: ${C.CONFIG_ENV})")
    parser.add_argument("--seed", type=int, default=None, help="global seed, overrides config seeds")
    parser.add_argument("--verbose", "-v", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    parent = _section_parent()

    p = sub.add_parser("clean", parents=[parent], help="PROPN + language filtering")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="cleaned manifest path")
    p.add_argument("--report", required=True)
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--min-lang-score", type=float, default=None)

    p = sub.add_parser("fetch", parents=[parent], help="download remote images")
    p.add_argument("--manifest", required=True)
    p.add_argument("--dest", required=True)
    p.add_argument("--out", required=True, help="manifest rewritten to local paths")
    p.add_argument("--report", required=True)
    p.add_argument("--concurrency", type=int, default=None)
    p.add_argument("--timeout-ms", type=int, default=None)

    p = sub.add_parser("train", parents=[parent], help="two-phase contrastive training")
    p.add_argument("--manifest", default=None)
    p.add_argument("--checkpoint-dir", default=None)

    p = sub.add_parser("eval-retrieval", parents=[parent], help="caption -> image MRR@k")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--dump-top", action="store_true", help="append per-query top-10 ids")

    p = sub.add_parser("eval-zeroshot", parents=[parent], help="prompt classification accuracy@k")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--classes", required=True, help="TSV: class_id, article, label")
    p.add_argument("--manifest", required=True, help="manifest whose records carry a 'label'")
    p.add_argument("--report", required=True)

    p = sub.add_parser("agreement", parents=[parent], help="rating mean and Gwet coefficient")
    p.add_argument("--ratings", required=True)
    p.add_argument("--weighting", choices=("ordinal", "identity"), default="ordinal")
    p.add_argument("--report", default=None)

    p = sub.add_parser("synth", parents=[parent], help="write the procedural toy dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--pairs", type=int, default=256)
    return parser


def collect_overrides(args: argparse.Namespace) -> dict[str, dict]:
    overrides: dict[str, dict] = {}
    for key, value in vars(args).items():
        if key.startswith("cfg__") and value is not None:
            _, section, name = key.split("__")
            overrides.setdefault(section, {})[name] = value
    for alias, (section, name) in ALIASES.items():
        value = getattr(args, alias, None)
        if value is not None:
            overrides.setdefault(section, {})[name] = value
    return overrides


def _require_inputs(*paths) -> None:
    for p in paths:
        if p is not None and not Path(p).exists():
            raise FileNotFoundError(f"input not found: {p}")


def run(args: argparse.Namespace) -> int:
    cfg = C.build_config(C.load_config_file(args.config), collect_overrides(args), args.seed)
    cmd = args.command
    if cmd == "clean":
        _require_inputs(args.manifest)
        summary = P.cmd_clean(args.manifest, args.out, args.report, cfg)
    elif cmd == "fetch":
        _require_inputs(args.manifest)
        summary = P.cmd_fetch(args.manifest, args.dest, args.out, args.report, cfg)
    elif cmd == "train":
        manifest = args.manifest or cfg.paths.get("manifest")
        ckdir = args.checkpoint_dir or cfg.paths.get("checkpoint_dir")
        if not manifest or not ckdir:
            raise C.ConfigError("train needs --manifest and --checkpoint-dir (or paths in the config)")
        _require_inputs(manifest)
        result = P.cmd_train(manifest, ckdir, cfg)
        summary = {"best_eval_loss": result.best_eval_loss, "best_step": result.best_step,
                   "checkpoint": str(Path(ckdir) / "best.ckpt")}
    elif cmd == "eval-retrieval":
        _require_inputs(args.checkpoint, args.manifest)
        summary = P.cmd_eval_retrieval(args.checkpoint, args.manifest, args.report, args.dump_top)
        summary = {f"MRR@{k}": round(v, 4) for k, v in summary.items()}
    elif cmd == "eval-zeroshot":
        _require_inputs(args.checkpoint, args.classes, args.manifest)
        summary = P.cmd_eval_zeroshot(args.checkpoint, args.classes, args.manifest, args.report)
        summary = {f"Accuracy@{k}": round(v, 4) for k, v in summary.items()}
    elif cmd == "agreement":
        _require_inputs(args.ratings)
        summary = P.cmd_agreement(args.ratings, args.weighting, args.report)
    elif cmd == "synth":
        from clipita.synthetic import write_dataset

        path = write_dataset(args.out, args.pairs, cfg.seed, cfg.model.image_size)
        summary = {"manifest": str(path)}
    else:  # pragma: no cover - argparse rejects unknown commands
        raise C.ConfigError(f"unknown command {cmd}")
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


DATA_ERRORS = (P.DataError, ManifestError, RatingsError, UntaggedRecordError, E.CheckpointError,
               E.EmptyCaptionError, FileNotFoundError)
CONFIG_ERRORS = (C.ConfigError, E.ConfigError)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except CONFIG_ERRORS as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DATA_ERRORS as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingError, FetchError, OSError, RuntimeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
