"""Run a grid of named experiment configs and tabulate relation metrics."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Optional, Sequence, Union

from .config import ConfigError, ExperimentConfig, deep_merge, load_structured
from .metrics import MetricsReport

logger = logging.getLogger(__name__)

CSV_HEADER = ("config", "f1", "precision", "recall", "delta_f1", "entity_f1", "cross_window_fn")


@dataclass
class AblationRow:
    name: str
    config: ExperimentConfig
    report: Optional[MetricsReport] = None
    error: Optional[str] = None
    delta_f1: Optional[float] = None

    @property
    def failed(self) -> bool:
        return self.report is None


# grid entries are (row name, overrides applied on top of the grid's base config)
Grid = Sequence[tuple[str, dict]]

TABLE2_ROWS: Grid = [
    ("Baseline", {}),
    ("EEF", {"strategies": {"eef": True}}),
    ("EM", {"strategies": {"em": "SIMPLE"}}),
    ("LC", {"strategies": {"lc": True}}),
    ("BBO", {"strategies": {"bbo": True}}),
    ("BBS", {"strategies": {"bbs": True}}),
]


def combination_rows(first: str, first_overrides: dict) -> list[tuple[str, dict]]:
    """One block of the combined-strategy study: X, X+BBO, X+BBO+RSF, X+LC, X+LC+RSF, X+BBS, X+BBS+RSF."""
    rows = [(first, first_overrides)]
    for geo in ("bbo", "lc", "bbs"):
        for rsf in (False, True):
            name = f"{first} + {geo.upper()}" + (" + RSF" if rsf else "")
            rows.append((name, deep_merge(first_overrides, {"strategies": {geo: True, "rsf": rsf}})))
    return rows


EM_ROWS = combination_rows("EM", {"strategies": {"em": "SIMPLE"}})
EEF_ROWS = combination_rows("EEF", {"strategies": {"eef": True}})


def build_grid(base: Union[ExperimentConfig, dict], rows: Grid) -> list[tuple[str, ExperimentConfig]]:
    base_dict = base.to_dict() if isinstance(base, ExperimentConfig) else dict(base)
    grid = []
    for name, overrides in rows:
        merged = deep_merge(base_dict, overrides)
        merged["name"] = name
        grid.append((name, ExperimentConfig.from_dict(merged)))
    return grid


def load_grid(path: Union[str, Path]) -> list[tuple[str, ExperimentConfig]]:
    """Read a grid file: ``{base: {...}, rows: [{name, overrides}] | "table2" | "em" | "eef"}``."""
    data = load_structured(path)
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: grid file must be a mapping")
    unknown = set(data) - {"base", "rows"}
    if unknown:
        raise ConfigError(f"{path}: unknown grid keys {sorted(unknown)}")
    rows = data.get("rows")
    presets = {"table2": TABLE2_ROWS, "em": EM_ROWS, "eef": EEF_ROWS}
    if isinstance(rows, str):
        if rows not in presets:
            raise ConfigError(f"{path}: unknown row preset {rows!r}, expected one of {sorted(presets)}")
        rows = presets[rows]
    elif isinstance(rows, list):
        try:
            rows = [(str(r["name"]), r.get("overrides") or {}) for r in rows]
        except (TypeError, KeyError):
            raise ConfigError(f"{path}: every row needs a name") from None
    else:
        raise ConfigError(f"{path}: rows must be a list or a preset name")
    return build_grid(data.get("base") or {}, rows)


def _default_runner(config: ExperimentConfig, cache: dict) -> MetricsReport:
    from .train import evaluate, load_documents, score_documents, train

    key = config.training_key()
    if key not in cache:
        result = train(config)
        docs = load_documents(config.dataset, config.dataset.eval_split)
        cache[key] = (result.model, docs, score_documents(result.model, docs))
    model, docs, scores = cache[key]
    report, _ = evaluate(model, docs, rsf=config.strategies.rsf, tau=config.tau, scores=scores)
    return report


def run_ablation(grid: Sequence[tuple[str, ExperimentConfig]],
                 runner: Optional[Callable[[ExperimentConfig, dict], MetricsReport]] = None,
                 baseline: Optional[str] = None) -> list[AblationRow]:
    """Train and evaluate every config; the first row (or ``baseline``) is the reference.

    Rows that differ only in decoding (RSF flag, tau) reuse one trained model.
    A failing row is kept and marked FAILED; the rest of the grid still runs.
    """
    if not grid:
        raise ValueError("ablation grid is empty")
    names = [name for name, _ in grid]
    if len(set(names)) != len(names):
        raise ValueError("ablation row names must be unique")
    runner = runner or _default_runner
    cache: dict[str, Any] = {}
    rows = []
    for name, config in grid:
        row = AblationRow(name, config)
        try:
            row.report = runner(config, cache)
        except Exception as exc:  # keep going, the row is reported as FAILED
            logger.exception("ablation row %s failed", name)
            row.error = f"{type(exc).__name__}: {exc}"
        rows.append(row)
    ref_name = baseline or names[0]
    if ref_name not in names:
        raise ValueError(f"baseline {ref_name!r} is not a row of the grid")
    ref = rows[names.index(ref_name)]
    for row in rows:
        if not row.failed and not ref.failed:
            row.delta_f1 = row.report.f1 - ref.report.f1
    return rows


def _fmt(value: Optional[float], signed: bool = False) -> str:
    if value is None:
        return ""
    return f"{value:+.4f}" if signed else f"{value:.4f}"


def table_records(rows: Sequence[AblationRow]) -> list[dict[str, str]]:
    records = []
    for row in rows:
        if row.failed:
            records.append({"config": row.name, "f1": "FAILED", "precision": "", "recall": "",
                            "delta_f1": "", "entity_f1": "", "cross_window_fn": ""})
            continue
        r = row.report
        records.append({
            "config": row.name,
            "f1": _fmt(r.f1),
            "precision": _fmt(r.precision),
            "recall": _fmt(r.recall),
            "delta_f1": _fmt(row.delta_f1, signed=True),
            "entity_f1": _fmt(r.entity_f1),
            "cross_window_fn": str(r.cross_window_fn),
        })
    return records


def to_csv(rows: Sequence[AblationRow]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_HEADER, lineterminator="\n")
    writer.writeheader()
    writer.writerows(table_records(rows))
    return buf.getvalue()


def to_text(rows: Sequence[AblationRow]) -> str:
    records = table_records(rows)
    widths = {col: max(len(col), *(len(rec[col]) for rec in records)) for col in CSV_HEADER}
    lines = ["  ".join(col.ljust(widths[col]) for col in CSV_HEADER)]
    lines.append("  ".join("-" * widths[col] for col in CSV_HEADER))
    for rec in records:
        cells = [rec["config"].ljust(widths["config"])]
        cells += [rec[col].rjust(widths[col]) for col in CSV_HEADER[1:]]
        lines.append("  ".join(cells))
    return "\n".join(lines) + "\n"
