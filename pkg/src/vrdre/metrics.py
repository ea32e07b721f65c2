"""Relation and entity scoring."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Any, Iterable, Mapping, Optional, Sequence, Union

from .core import Document, RelationKind, RelationMatrix
from .preprocess import iob_spans


class EvaluationConfigError(ValueError):
    pass


def prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


@dataclass
class DocPrediction:
    doc_id: str
    n_entities: int
    # (child, parent, probability) for every predicted relation
    relations: list[tuple[int, int, float]] = field(default_factory=list)
    # entity ids of each model window; pairs never sharing one were unscorable
    windows: Optional[list[list[int]]] = None

    def pairs(self) -> set[tuple[int, int]]:
        return {(c, p) for c, p, _ in self.relations}

    def to_dict(self) -> dict[str, Any]:
        return {
            "doc_id": self.doc_id,
            "n_entities": self.n_entities,
            "relations": [[c, p, prob] for c, p, prob in self.relations],
            "windows": self.windows,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DocPrediction":
        return cls(
            data["doc_id"],
            data["n_entities"],
            [(int(c), int(p), float(prob)) for c, p, prob in data["relations"]],
            data.get("windows"),
        )


@dataclass
class EntityMetrics:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    no_spans: bool = False


@dataclass
class MetricsReport:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    cross_window_fn: int
    n_docs: int
    macro_f1: float
    per_doc: list[dict] = field(default_factory=list)
    entity: Optional[EntityMetrics] = None
    extra: dict = field(default_factory=dict)

    @property
    def entity_f1(self) -> Optional[float]:
        return None if self.entity is None else self.entity.f1

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def _canonical(pairs: Iterable[tuple[int, int]], kind: RelationKind) -> set[tuple[int, int]]:
    if kind is RelationKind.GROUP:
        return {(min(a, b), max(a, b)) for a, b in pairs if a != b}
    return {(int(a), int(b)) for a, b in pairs}


def _predicted_pairs(pred) -> set[tuple[int, int]]:
    if isinstance(pred, DocPrediction):
        return pred.pairs()
    if isinstance(pred, RelationMatrix):
        return pred.pairs()
    return {(int(a), int(b)) for a, b in pred}


def evaluate_relations(
    predictions: Mapping[str, Union[DocPrediction, RelationMatrix, Iterable[tuple[int, int]]]],
    gold_documents: Sequence[Document],
    kind: Union[RelationKind, str],
) -> MetricsReport:
    """Micro-averaged precision / recall / F1 over (child, parent) pairs.

    GROUP relations are compared as unordered pairs. A document without a
    prediction contributes only false negatives. Gold pairs whose entities
    never shared a model window are reported in ``cross_window_fn``.
    """
    kind = RelationKind(kind)
    tp = fp = fn = cross = 0
    per_doc = []
    for doc in gold_documents:
        if doc.relation_kind is not kind:
            raise EvaluationConfigError(
                f"{doc.doc_id} is {doc.relation_kind.value}, evaluation requested {kind.value}"
            )
        gold = _canonical(doc.gold_matrix().pairs(), kind)
        pred_obj = predictions.get(doc.doc_id)
        pred = _canonical(_predicted_pairs(pred_obj), kind) if pred_obj is not None else set()
        d_tp = len(gold & pred)
        d_fp = len(pred - gold)
        d_fn = len(gold - pred)
        d_cross = 0
        if isinstance(pred_obj, DocPrediction) and pred_obj.windows is not None:
            together = set()
            for members in pred_obj.windows:
                together.update((a, b) for a in members for b in members)
            d_cross = sum(1 for a, b in gold if (a, b) not in together)
        tp, fp, fn, cross = tp + d_tp, fp + d_fp, fn + d_fn, cross + d_cross
        p, r, f = prf(d_tp, d_fp, d_fn)
        per_doc.append({"doc_id": doc.doc_id, "tp": d_tp, "fp": d_fp, "fn": d_fn,
                        "cross_window_fn": d_cross, "f1": f})
    precision, recall, f1 = prf(tp, fp, fn)
    macro = sum(d["f1"] for d in per_doc) / len(per_doc) if per_doc else 0.0
    return MetricsReport(precision, recall, f1, tp, fp, fn, cross, len(per_doc), macro, per_doc)


def evaluate_entities(predicted_tags: Sequence, gold_tags: Sequence) -> EntityMetrics:
    """Exact-match (boundaries and class) span scoring of IOB sequences, micro-averaged."""
    if predicted_tags and isinstance(predicted_tags[0], str):
        predicted_tags, gold_tags = [predicted_tags], [gold_tags]
    if len(predicted_tags) != len(gold_tags):
        raise ValueError("predicted and gold tag sequences are not aligned")
    tp = n_pred = n_gold = 0
    for pred_seq, gold_seq in zip(predicted_tags, gold_tags):
        if len(pred_seq) != len(gold_seq):
            raise ValueError("predicted and gold tag sequences differ in length")
        pred_spans = set(iob_spans(pred_seq))
        gold_spans = set(iob_spans(gold_seq))
        tp += len(pred_spans & gold_spans)
        n_pred += len(pred_spans)
        n_gold += len(gold_spans)
    p, r, f = prf(tp, n_pred - tp, n_gold - tp)
    return EntityMetrics(p, r, f, tp, n_pred - tp, n_gold - tp, no_spans=(n_pred == 0 and n_gold == 0))
