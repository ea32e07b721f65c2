import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_document
from vrdre.core import BBox, Document, Entity, RelationKind, RelationMatrix, Segment
from vrdre.metrics import DocPrediction, EvaluationConfigError, evaluate_entities, evaluate_relations, prf


def _doc(doc_id, n, links=(), kind=RelationKind.KEY_VALUE, groups=None):
    box = BBox(0, 0, 10, 10)
    segs = [Segment(k, ["w"], box, [box]) for k in range(n)]
    ents = [Entity(k, (k, 0, 0), "question", None if groups is None else groups[k]) for k in range(n)]
    return Document(doc_id, segs, ents, links, kind)


class TestRelations:
    def test_hand_counts(self):
        # gold link parent 1 -> child 0, i.e. pair (child 0, parent 1)
        doc = _doc("a", 4, [(1, 0)])
        report = evaluate_relations({"a": [(0, 1), (2, 3)]}, [doc], RelationKind.KEY_VALUE)
        assert (report.tp, report.fp, report.fn) == (1, 1, 0)
        assert report.precision == 0.5 and report.recall == 1.0
        assert report.f1 == pytest.approx(2 / 3)

    def test_identity(self):
        doc = _doc("a", 4, [(1, 0), (1, 2)])
        report = evaluate_relations({"a": doc.gold_matrix()}, [doc], "KEY_VALUE")
        assert (report.precision, report.recall, report.f1) == (1.0, 1.0, 1.0)

    def test_empty_prediction(self):
        doc = _doc("a", 3, [(1, 0)])
        report = evaluate_relations({"a": []}, [doc], RelationKind.KEY_VALUE)
        assert (report.precision, report.recall, report.f1) == (0.0, 0.0, 0.0)

    def test_missing_document_counts_as_fn(self):
        docs = [_doc("a", 3, [(1, 0)]), _doc("b", 3, [(2, 0), (2, 1)])]
        report = evaluate_relations({"a": [(0, 1)]}, docs, RelationKind.KEY_VALUE)
        assert (report.tp, report.fp, report.fn) == (1, 0, 2)

    def test_direction_matters(self):
        doc = _doc("a", 2, [(1, 0)])
        report = evaluate_relations({"a": [(1, 0)]}, [doc], RelationKind.KEY_VALUE)
        assert (report.tp, report.fp, report.fn) == (0, 1, 1)

    def test_group_unordered(self):
        doc = _doc("a", 3, kind=RelationKind.GROUP, groups=[0, 0, 1])
        report = evaluate_relations({"a": [(1, 0)]}, [doc], RelationKind.GROUP)
        assert (report.tp, report.fp, report.fn) == (1, 0, 0)

    def test_kind_mismatch(self):
        with pytest.raises(EvaluationConfigError):
            evaluate_relations({}, [_doc("a", 2, [(1, 0)])], RelationKind.GROUP)

    def test_cross_window(self):
        doc = _doc("a", 4, [(1, 0), (3, 2), (2, 0)])
        pred = DocPrediction("a", 4, [(0, 1, 0.9)], windows=[[0, 1], [2, 3]])
        report = evaluate_relations({"a": pred}, [doc], RelationKind.KEY_VALUE)
        assert report.fn == 2
        assert report.cross_window_fn == 1

    def test_prediction_json_roundtrip(self):
        pred = DocPrediction("a", 3, [(0, 1, 0.75)], [[0, 1, 2]])
        assert DocPrediction.from_dict(pred.to_dict()) == pred

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_micro_f1_consistent(self, seed):
        rng = np.random.default_rng(seed)
        docs, preds = [], {}
        for k in range(3):
            doc = random_document(rng)
            doc = Document(f"d{k}", doc.segments, doc.entities, doc.links, doc.relation_kind)
            docs.append(doc)
            n = doc.n_entities
            preds[doc.doc_id] = RelationMatrix(((rng.random((n, n)) < 0.2) & ~np.eye(n, dtype=bool)))
        report = evaluate_relations(preds, docs, RelationKind.KEY_VALUE)
        assert report.f1 == prf(report.tp, report.fp, report.fn)[2]
        assert sum(d["tp"] for d in report.per_doc) == report.tp
        assert min(report.tp, report.fp, report.fn) >= 0
        self_report = evaluate_relations({d.doc_id: d.gold_matrix() for d in docs}, docs, RelationKind.KEY_VALUE)
        assert self_report.fp == self_report.fn == 0


class TestEntities:
    def test_identical(self):
        tags = ["B-Q", "I-Q", "O", "B-A"]
        assert evaluate_entities(tags, tags).f1 == 1.0

    def test_split_span(self):
        m = evaluate_entities(["B-Q", "B-Q"], ["B-Q", "I-Q"])
        assert (m.tp, m.fp, m.fn) == (0, 2, 1)
        assert m.precision == 0 and m.recall == 0

    def test_all_outside(self):
        m = evaluate_entities(["O", "O"], ["O", "O"])
        assert (m.precision, m.recall, m.f1) == (0.0, 0.0, 0.0)
        assert m.no_spans

    def test_malformed(self):
        with pytest.raises(ValueError):
            evaluate_entities(["B-Q", "X"], ["B-Q", "O"])

    def test_misaligned(self):
        with pytest.raises(ValueError):
            evaluate_entities(["O"], ["O", "O"])
