"""Command-line entry point: ``vrdre {ingest,train,eval,ablate,sweep-tau}``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from .config import ConfigError, ExperimentConfig, load_config
from .core import SchemaError, ValidationError, validate_document

EXIT_OK, EXIT_IO, EXIT_SCHEMA, EXIT_USAGE, EXIT_INTERNAL = 0, 2, 3, 64, 70
DATA_ROOT_ENV = "VRDRE_DATA_ROOT"

log = logging.getLogger("vrdre")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _write_json(path: Path, data) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _resolve_root(config: ExperimentConfig, override: Optional[str]) -> ExperimentConfig:
    root = override or config.dataset.root or os.environ.get(DATA_ROOT_ENV)
    if config.dataset.name != "SYNTHETIC" and not root:
        raise UsageError(f"no data root: pass --data-root or set {DATA_ROOT_ENV}")
    if root and root != config.dataset.root:
        config = config.with_overrides({"dataset": {"root": root}})
    return config


# -- commands -----------------------------------------------------------------------

def cmd_ingest(args) -> int:
    from .ingest import DatasetName, DatasetSpec, Split, document_to_dict, load_split

    root = args.root or os.environ.get(DATA_ROOT_ENV)
    if not root:
        raise UsageError(f"--root is required unless {DATA_ROOT_ENV} is set")
    if not Path(root).is_dir():
        raise FileNotFoundError(f"data root {root} is not a readable directory")
    spec = DatasetSpec(DatasetName(args.dataset.upper()), root, Split(args.split), group_key=args.group_key)
    docs = load_split(spec, spec.split)
    problems = []
    for doc in docs:
        problems.extend((doc.doc_id, v) for v in validate_document(doc, spec.label_set))
    if problems:
        for doc_id, v in problems:
            print(f"{doc_id}: {v.code} at {v.location} {v.message}", file=sys.stderr)
        print(f"{len(problems)} schema violation(s); nothing written", file=sys.stderr)
        return EXIT_SCHEMA
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for doc in docs:
        _write_json(out / f"{doc.doc_id}.json", document_to_dict(doc))
    n_rel = sum(len(d.gold_matrix().pairs()) for d in docs)
    print(f"{args.dataset} {args.split}: {len(docs)} documents, {n_rel} gold relations -> {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .train import evaluate, load_documents, save_model, train

    config = load_config(args.config)
    if args.seed is not None:
        config = config.with_overrides({"seed": args.seed})
    config = _resolve_root(config, args.data_root)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = train(config, log_path=out / "train_log.ndjson")
    save_model(out / "model.ckpt", result)
    summary = {
        "config": config.to_dict(),
        "best_step": result.best_step,
        "best_held_out_f1": result.best_val_f1,
        "selection_rule": result.selection_rule,
        "final_loss": result.log[-1]["loss"],
    }
    if args.eval:
        docs = load_documents(config.dataset, config.dataset.eval_split)
        report, _ = evaluate(result.model, docs)
        summary["eval"] = {"split": config.dataset.eval_split, **report.to_dict()}
    _write_json(out / "train_summary.json", summary)
    print(f"checkpoint {out / 'model.ckpt'}; best step {result.best_step}; held-out F1 {result.best_val_f1}")
    return EXIT_OK


def _load_for_eval(args):
    from .train import load_documents, load_model

    model, meta = load_model(args.checkpoint)
    config = _resolve_root(model.config, args.data_root)
    model.config = config
    docs = load_documents(config.dataset, args.split or config.dataset.eval_split)
    return model, meta, docs


def cmd_eval(args) -> int:
    from .train import evaluate

    if args.tau is not None and not args.rsf:
        raise UsageError("--tau only makes sense together with --rsf")
    model, meta, docs = _load_for_eval(args)
    report, predictions = evaluate(model, docs, rsf=args.rsf, tau=args.tau)
    out = Path(args.out)
    split = args.split or model.config.dataset.eval_split
    _write_json(out / "metrics.json", {
        "config": model.config.to_dict(),
        "checkpoint": str(args.checkpoint),
        "selection": meta.get("selection"),
        "split": split,
        "rsf": report.extra["rsf"],
        "tau": report.extra["tau"] if args.rsf else None,
        "metrics": report.to_dict(),
    })
    _write_json(out / "predictions.json", {
        "split": split,
        "documents": [predictions[d.doc_id].to_dict() for d in docs],
    })
    print(f"{split}: F1 {report.f1:.4f}  P {report.precision:.4f}  R {report.recall:.4f}  "
          f"(cross-window FN {report.cross_window_fn})")
    return EXIT_OK


def cmd_sweep_tau(args) -> int:
    from .train import evaluate, score_documents

    try:
        taus = [float(t) for t in args.taus.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"--taus must be a comma-separated list of numbers, got {args.taus!r}") from None
    if not taus or any(t <= 0 for t in taus):
        raise UsageError("--taus needs at least one value, all > 0")
    model, _, docs = _load_for_eval(args)
    scores = score_documents(model, docs)
    rows = []
    for tau in taus:
        report, _ = evaluate(model, docs, rsf=True, tau=tau, scores=scores)
        rows.append({"tau": tau, "f1": f"{report.f1:.6f}", "precision": f"{report.precision:.6f}",
                     "recall": f"{report.recall:.6f}"})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "tau_sweep.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=["tau", "f1", "precision", "recall"], lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    _write_json(out / "tau_sweep.json", {"config": model.config.to_dict(), "rows": rows})
    for row in rows:
        print(f"tau={row['tau']:<8g} F1 {row['f1']}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    from .ablation import load_grid, run_ablation, to_csv, to_text

    grid = load_grid(args.grid)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.data_root:
        overrides["dataset"] = {"root": args.data_root}
    if overrides:
        grid = [(name, cfg.with_overrides(overrides)) for name, cfg in grid]
    grid = [(name, _resolve_root(cfg, None)) for name, cfg in grid]
    rows = run_ablation(grid)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "ablation.csv").write_text(to_csv(rows), encoding="utf-8")
    text = to_text(rows)
    (out / "ablation.txt").write_text(text, encoding="utf-8")
    _write_json(out / "ablation.json", {
        "rows": [{"name": r.name, "config": r.config.to_dict(), "error": r.error, "delta_f1": r.delta_f1,
                  "metrics": r.report.to_dict() if r.report else None} for r in rows],
    })
    print(text, end="")
    return EXIT_OK


# -- parser ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vrdre", description="Relation extraction on visually-rich documents.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", help="parse a dataset split into canonical document JSON")
    p.add_argument("--dataset", required=True, choices=["funsd", "cord"])
    p.add_argument("--root", help=f"dataset directory (default: ${DATA_ROOT_ENV})")
    p.add_argument("--split", required=True, choices=["train", "validation", "test"])
    p.add_argument("--out", required=True)
    p.add_argument("--group-key", default="group_id", help="CORD field holding group membership")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--data-root")
    p.add_argument("--eval", action="store_true", help="also evaluate on the config's eval split")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split")
    p.add_argument("--rsf", action="store_true")
    p.add_argument("--tau", type=float)
    p.add_argument("--out", required=True)
    p.add_argument("--data-root")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run a grid of configs")
    p.add_argument("--grid", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--data-root")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("sweep-tau", help="F1 of RSF decoding for several margins")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--taus", required=True, help="comma-separated, e.g. 0.01,0.05,0.1,0.2")
    p.add_argument("--split")
    p.add_argument("--out", required=True)
    p.add_argument("--data-root")
    p.set_defaults(func=cmd_sweep_tau)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"vrdre: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"vrdre: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SchemaError, ValidationError) as exc:
        print(f"vrdre: schema error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except OSError as exc:
        print(f"vrdre: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except Exception as exc:
        log.exception("internal error")
        print(f"vrdre: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
