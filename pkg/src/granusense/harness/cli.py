"""``granusense`` command-line entry point."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path

from ..classify.dataset import worker_count
from ..classify.model import ModelConfigError, ModelFormatError
from ..imageio import ImageDecodeError
from . import commands
from .config import SCHEMA_DOC, ConfigError, config_hash, default_config, load_config

log = logging.getLogger("granusense")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
NEEDS_OUT = {"vibration-sweep", "analyze-vibration", "gen-dataset", "train", "evaluate",
             "pipeline"}


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, help="JSON experiment config; flags override it")
    p.add_argument("--seed", type=int, help="global seed (overrides the config)")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--force", action="store_true", help="write into a non-empty output directory")
    p.add_argument("--dry-run", action="store_true",
                   help="print the resolved config and planned outputs, write nothing")
    p.add_argument("--deterministic", action="store_true",
                   help="single-threaded execution with bitwise reproducible outputs")
    p.add_argument("--print-defaults", action="store_true",
                   help="print the default config with field notes and exit")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="granusense",
        description="Granular penetration, tactile imaging and buried-shape classification.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("vibration-sweep", help="force-vs-depth runs for media x motor voltages")
    _common(p)

    p = sub.add_parser("analyze-vibration", help="fundamental frequency table from accelerometer CSVs")
    _common(p)
    p.add_argument("inputs", nargs="*", type=Path, help="t,value CSV files (name_trialN groups)")
    p.add_argument("--bundled", action="store_true", help="analyse the bundled synthetic fixtures")

    p = sub.add_parser("gen-dataset", help="render the nine-class synthetic corpus")
    _common(p)
    p.add_argument("--per-class", type=int, help="images per class (default 300)")

    p = sub.add_parser("train", help="train the classifier on a generated dataset")
    _common(p)
    p.add_argument("--dataset", type=Path, required=True, help="dataset directory")
    p.add_argument("--epochs", type=int)

    p = sub.add_parser("evaluate", help="confusion matrix of a trained model")
    _common(p)
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--split", choices=("Train", "Val", "Test"))

    p = sub.add_parser("predict", help="classify one PNG image; prints label,confidence")
    _common(p)
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--image", type=Path, required=True)

    p = sub.add_parser("pipeline", help="gen-dataset -> train -> evaluate")
    _common(p)
    p.add_argument("--per-class", type=int)
    p.add_argument("--epochs", type=int)
    return parser


def _overrides(args) -> dict:
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if getattr(args, "per_class", None) is not None:
        over.setdefault("dataset", {})["per_class"] = args.per_class
    if getattr(args, "epochs", None) is not None:
        over.setdefault("train", {})["epochs"] = args.epochs
    if getattr(args, "split", None) is not None:
        over["evaluate"] = {"split": args.split}
    return over


def _limit_threads():
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover - optional at runtime
        return None
    return threadpool_limits(limits=1)


def _plan(args, cfg) -> list:
    out = args.out
    return {
        "vibration-sweep": lambda: commands.plan_vibration_sweep(cfg, out),
        "analyze-vibration": lambda: commands.plan_analyze(out),
        "gen-dataset": lambda: commands.plan_gen_dataset(cfg, out),
        "train": lambda: commands.plan_train(out),
        "evaluate": lambda: commands.plan_evaluate(out),
        "pipeline": lambda: commands.plan_pipeline(out),
        "predict": lambda: [],
    }[args.command]()


def _execute(args, cfg, workers: int) -> list:
    out = args.out
    if args.command == "vibration-sweep":
        return commands.run_vibration_sweep(cfg, out)
    if args.command == "analyze-vibration":
        inputs = list(args.inputs) + (commands.bundled_fixtures() if args.bundled else [])
        paths = commands.run_analyze(inputs, out)
        sys.stdout.write(paths[0].read_text())
        return paths
    if args.command == "gen-dataset":
        return commands.run_gen_dataset(cfg, out, workers)
    if args.command == "train":
        return commands.run_train(cfg, args.dataset, out)
    if args.command == "evaluate":
        paths = commands.run_evaluate(cfg, args.model, args.dataset, out)
        report = json.loads((out / "report.json").read_text())
        print(f"accuracy {report['accuracy']:.4f} on {report['total']} {report['split']} images; "
              f"same-shape Clean/Sand share of errors: {report['same_shape_share_of_errors']}")
        return paths
    if args.command == "pipeline":
        paths = commands.run_pipeline(cfg, out, workers)
        report = json.loads((out / "evaluation" / "report.json").read_text())
        print(f"test accuracy {report['accuracy']:.4f}; same-shape Clean/Sand share of errors: "
              f"{report['same_shape_share_of_errors']}")
        return paths
    if args.command == "predict":
        for path in (args.model, args.image):
            if not path.exists():
                raise FileNotFoundError(f"no such file: {path}")
        print(commands.predict_file(args.model, args.image))
        return []
    raise AssertionError(args.command)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")

    if args.print_defaults:
        print(json.dumps({"_doc": SCHEMA_DOC, **default_config()}, indent=2))
        return EXIT_OK
    try:
        cfg = load_config(args.config, _overrides(args))
    except (ConfigError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    if args.command in NEEDS_OUT and args.out is None:
        print(f"{args.command}: --out is required", file=sys.stderr)
        return EXIT_USAGE
    if args.command == "analyze-vibration" and not args.inputs and not args.bundled:
        print("analyze-vibration: give input CSVs or --bundled", file=sys.stderr)
        return EXIT_USAGE

    if args.dry_run:
        planned = [str(p) for p in _plan(args, cfg)]
        print(json.dumps({"command": args.command, "config_hash": config_hash(cfg),
                          "config": cfg, "planned_outputs": planned}, indent=2))
        return EXIT_OK

    out = args.out
    if out is not None and out.exists() and any(out.iterdir()) and not args.force:
        print(f"refusing to write into non-empty output directory {out}; "
              f"pass --force to overwrite", file=sys.stderr)
        return EXIT_USAGE

    workers = 1 if args.deterministic else worker_count()
    limiter = _limit_threads() if args.deterministic else None
    started = datetime.now(timezone.utc).isoformat()
    try:
        outputs = _execute(args, cfg, workers)
    except commands.StageError as exc:
        print(f"error in stage {exc.stage}: {type(exc.cause).__name__}: {exc.cause}",
              file=sys.stderr)
        return EXIT_FAIL
    except (ModelConfigError, ConfigError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ModelFormatError, ImageDecodeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    finally:
        if limiter is not None:
            limiter.unregister()

    missing = [str(p) for p in outputs if not Path(p).exists()]
    if missing:
        print(f"declared outputs missing: {missing}", file=sys.stderr)
        return EXIT_FAIL
    if out is not None:
        record = commands.run_record(args.command, cfg, outputs, started,
                                     datetime.now(timezone.utc).isoformat())
        (out / "run.json").write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
