"""Command-line entry point: generate, train, evaluate, predict, report, ablation.

Exit codes: 0 success, 1 validation error, 2 I/O error, 3 numerical divergence.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from . import tables
from .data import PerformanceRecord, SegmentLabeling, load_dataset, split
from .errors import DatasetError, DivergenceError, IrisError, MetricError, VariantError
from .model_io import load_model, save_model
from .pipeline import (
    ModelParams,
    ModelVariant,
    ScorePrediction,
    TrainConfig,
    TrainingLog,
    evaluate_predictions,
    predict,
    predict_scores,
    run_ablation,
    train,
)
from .report import judgment_to_dict, render
from .rubric import ActionType
from .synthetic import SyntheticConfig, generate_synthetic, write_dataset

log = logging.getLogger("iris_aqa")

EXIT_OK, EXIT_VALIDATION, EXIT_IO, EXIT_DIVERGENCE = 0, 1, 2, 3

PREDICTION_COLUMNS = ("performance_id", "tes", "pcs", "total", "timeline", "missing")


# --------------------------------------------------------------------------
# helpers


def _writable_parent(path: Path) -> Path:
    """Fail before any work if ``path`` cannot be created."""
    parent = path.resolve().parent
    if not parent.is_dir():
        raise FileNotFoundError(f"output directory does not exist: {parent}")
    return path


def _write_text(path: Path, text: str) -> None:
    Path(path).write_text(text, encoding="utf-8")


def _load(path: Path) -> list[PerformanceRecord]:
    records = load_dataset(path, require_labels=False)
    if not records:
        raise DatasetError("dataset contains no records", str(path))
    return records


def _train_config(args: argparse.Namespace, variant: ModelVariant) -> TrainConfig:
    cfg = TrainConfig(variant=variant, seed=args.seed)
    overrides = {
        "max_epochs": args.epochs,
        "learning_rate": args.lr,
        "batch_size": args.batch_size,
        "patience": args.patience,
    }
    cfg = replace(cfg, **{k: v for k, v in overrides.items() if v is not None})
    cfg.validate()
    return cfg


def _split(records: list[PerformanceRecord], args: argparse.Namespace):
    if args.train_count >= len(records):
        raise DatasetError(f"--train-count {args.train_count} leaves no test records out of {len(records)}")
    return split(records, args.train_count, args.split_seed)


def _select_for_eval(params: ModelParams, records: list[PerformanceRecord], use_all: bool) -> list[PerformanceRecord]:
    held_out = set(params.meta.get("train_ids", ()))
    if use_all or not held_out:
        return records
    return [r for r in records if r.id not in held_out]


def _prediction_row(p: ScorePrediction) -> list[str]:
    def cell(v):
        return "" if v is None else repr(float(v))

    missing = ""
    if p.judgment is not None:
        missing = ";".join(str(e.seq) for e in p.judgment.elements if e.missing)
    timeline = p.labels.timeline() if p.labels is not None else ""
    return [p.performance_id, cell(p.tes), cell(p.pcs), cell(p.total), timeline, missing]


def predictions_csv(preds: Sequence[ScorePrediction]) -> str:
    lines = [",".join(PREDICTION_COLUMNS)]
    for p in preds:
        lines.append(",".join(_prediction_row(p)))
    return "\n".join(lines) + "\n"


def read_predictions(path: Path) -> list[ScorePrediction]:
    """Parse a predictions CSV (``performance_id`` and ``total`` required)."""
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"performance_id", "total"} <= set(reader.fieldnames):
            raise DatasetError("predictions file needs performance_id and total columns", str(path))
        for i, row in enumerate(reader, start=2):
            try:
                vals = {k: float(row[k]) if row.get(k) else None for k in ("tes", "pcs", "total")}
                strip = row.get("timeline") or ""
                labels = SegmentLabeling.from_actions(ActionType.from_code(c) for c in strip) if strip else None
            except (ValueError, KeyError) as exc:
                raise DatasetError(f"line {i}: {exc}", str(path)) from None
            if vals["total"] is None:
                raise DatasetError(f"line {i}: empty total", str(path))
            out.append(ScorePrediction(row["performance_id"], vals["total"], vals["tes"], vals["pcs"], labels))
    return out


# --------------------------------------------------------------------------
# commands


def cmd_generate(args: argparse.Namespace) -> int:
    config = SyntheticConfig(n_records=args.n, dim=args.dim, noise=args.noise)
    records = generate_synthetic(config, seed=args.seed)
    path = write_dataset(Path(args.out), records, config, args.seed)
    print(f"wrote {len(records)} records and {path}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    variant = ModelVariant(args.variant)
    cfg = _train_config(args, variant)
    out = _writable_parent(Path(args.out))
    log_path = _writable_parent(Path(args.log)) if args.log else None
    records = _load(Path(args.data))
    train_set, test_set = _split(records, args) if args.train_count else (records, [])

    log_fh = open(log_path, "w", encoding="utf-8", newline="") if log_path else None
    try:
        if log_fh:
            log_fh.write(TrainingLog.csv_header())
            log_fh.flush()

        def on_epoch(row):
            if log_fh:
                log_fh.write(TrainingLog.csv_row(row))
                log_fh.flush()
            log.info("epoch %d total %.6f", int(row["epoch"]), row["total"])

        params, tlog = train(train_set, cfg, on_epoch)
    finally:
        if log_fh:
            log_fh.close()
    params.meta["train_ids"] = sorted(r.id for r in train_set)
    params.meta["test_ids"] = sorted(r.id for r in test_set)
    save_model(out, params)
    note = " (early stop)" if tlog.stopped_early else ""
    print(f"trained {variant.value} for {len(tlog)} epochs{note}; final loss {tlog.rows[-1]['total']:.6f}; saved {out}")
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    records = _load(Path(args.data))
    if args.predictions:
        preds = read_predictions(Path(args.predictions))
        wanted = {p.performance_id for p in preds}
        unknown = wanted - {r.id for r in records}
        if unknown:
            raise DatasetError(f"predictions for unknown records: {sorted(unknown)[:5]}", args.predictions)
        chosen = [r for r in records if r.id in wanted]
        variant = "predictions"
    else:
        params = load_model(Path(args.model))
        chosen = _select_for_eval(params, records, args.all)
        if len(chosen) < 3:
            raise MetricError(f"evaluation needs at least 3 records, got {len(chosen)}")
        preds = [predict_scores(params, r.embeddings, r.sheet) for r in chosen]
        variant = params.variant.value
    report = evaluate_predictions(preds, chosen, variant)
    text = tables.evaluation_text(report)
    print(text, end="")
    if args.out:
        _write_text(Path(args.out), tables.evaluation_csv(report))
    if args.records_out:
        _write_text(Path(args.records_out), tables.records_csv(report))
    if args.table_out:
        _write_text(Path(args.table_out), text)
    return EXIT_OK


def cmd_predict(args: argparse.Namespace) -> int:
    params = load_model(Path(args.model))
    out = _writable_parent(Path(args.out))
    records = _load(Path(args.data))
    preds = [predict_scores(params, r.embeddings, r.sheet) for r in records]
    _write_text(out, predictions_csv(preds))
    if args.judgments:
        jdir = Path(args.judgments)
        jdir.mkdir(parents=True, exist_ok=True)
        for p in preds:
            if p.judgment is not None:
                doc = json.dumps(judgment_to_dict(p.judgment), indent=2, sort_keys=True) + "\n"
                _write_text(jdir / f"{p.performance_id}.judgment.json", doc)
    print(f"wrote {len(preds)} predictions to {out}")
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    params = load_model(Path(args.model))
    if params.variant.element_mode is None:
        raise VariantError(f"variant {params.variant.value!r} produces no score sheet; use a full model")
    records = {r.id: r for r in _load(Path(args.data))}
    if args.record not in records:
        raise DatasetError(f"no record with id {args.record!r}", args.data)
    r = records[args.record]
    text = render(predict(params, r.embeddings, r.sheet), args.format)
    if args.out:
        _write_text(Path(args.out), text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_ablation(args: argparse.Namespace) -> int:
    cfg = _train_config(args, ModelVariant.DeltaSubscoresWithSegments)
    records = _load(Path(args.data))
    train_set, test_set = _split(records, args)
    variants = [ModelVariant(v) for v in args.variants] if args.variants else list(ModelVariant)
    rows = run_ablation(train_set, test_set, cfg, variants, on_variant=lambda v: log.info("training %s", v.value))
    text = tables.ablation_text(rows)
    print(text, end="")
    if args.out:
        _write_text(Path(args.out), tables.ablation_csv(rows))
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def _add_training_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epochs", type=int, help="epoch budget (default 300)")
    p.add_argument("--lr", type=float, help="Adam learning rate (default 0.0005)")
    p.add_argument("--batch-size", type=int, help="mini-batch size (default 60)")
    p.add_argument("--patience", type=int, help="early-stop patience in epochs (default 20)")
    p.add_argument("--seed", type=int, default=0, help="initialisation and shuffling seed")
    p.add_argument("--split-seed", type=int, default=0, help="seed of the train/test permutation")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="iris-aqa", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="JSON file whose keys set defaults for the chosen command")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic dataset")
    p.add_argument("--n", type=int, default=150)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--noise", type=float, default=1.0)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train a model variant")
    p.add_argument("--data", required=True)
    p.add_argument("--variant", choices=[v.value for v in ModelVariant], default="full")
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--log", help="CSV training log, flushed every epoch")
    p.add_argument("--train-count", type=int, default=120, help="training records; 0 trains on everything")
    _add_training_options(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a model (or a predictions file) against ground truth")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--model")
    src.add_argument("--predictions", help="CSV with performance_id,total[,tes,pcs,timeline]")
    p.add_argument("--data", required=True)
    p.add_argument("--all", action="store_true", help="also evaluate the model's training records")
    p.add_argument("--out", help="metrics CSV")
    p.add_argument("--records-out", help="per-record CSV")
    p.add_argument("--table-out", help="copy of the printed table")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="write predicted scores for every record")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="predictions CSV")
    p.add_argument("--judgments", help="directory for per-record judgment JSON")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("report", help="render the score sheet of one record")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--record", required=True)
    p.add_argument("--format", choices=("text", "html"), default="text")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("ablation", help="train every variant on one split and tabulate")
    p.add_argument("--data", required=True)
    p.add_argument("--train-count", type=int, default=120)
    p.add_argument("--variants", nargs="+", choices=[v.value for v in ModelVariant])
    p.add_argument("--out", help="ablation CSV")
    _add_training_options(p)
    p.set_defaults(func=cmd_ablation)
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: Sequence[str]) -> None:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, rest = pre.parse_known_args(argv)
    if not known.config:
        return
    doc = json.loads(Path(known.config).read_text(encoding="utf-8"))
    if not isinstance(doc, dict):
        raise DatasetError("config file must hold a JSON object", known.config)
    command = next((a for a in rest if not a.startswith("-")), None)
    for action in parser._subparsers._group_actions:  # the subcommand dispatcher
        if command in action.choices:
            sp = action.choices[command]
            valid = {a.dest for a in sp._actions}
            unknown = set(doc) - valid
            if unknown:
                raise DatasetError(f"unknown config keys for {command}: {sorted(unknown)}", known.config)
            sp.set_defaults(**doc)
            for a in sp._actions:
                if a.dest in doc:
                    a.required = False


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
        args = parser.parse_args(argv)
        logging.basicConfig(
            level=logging.INFO if args.verbose else logging.WARNING,
            format="%(levelname)s: %(message)s",
            stream=sys.stderr,
        )
        return args.func(args)
    except DivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (IrisError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
