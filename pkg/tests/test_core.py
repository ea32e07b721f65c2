import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vrdre.core import (
    BBox,
    Document,
    Entity,
    RelationKind,
    RelationMatrix,
    SchemaError,
    Segment,
    ValidationError,
    build_gold_matrix,
    validate_document,
)


def entities(groups):
    return [Entity(i, (i, 0, 0), "x", g) for i, g in enumerate(groups)]


def two_entity_doc(links=((0, 1),)):
    box = BBox(0, 0, 10, 10)
    segs = [Segment(0, ["Date:"], box, [box]), Segment(1, ["today"], box, [box])]
    ents = [Entity(0, (0, 0, 0), "question"), Entity(1, (1, 0, 0), "answer")]
    return Document("d", segs, ents, links, RelationKind.KEY_VALUE)


class TestBuildGoldMatrix:
    def test_group_two_groups(self):
        M = build_gold_matrix(entities(["A", "A", "B"]), kind=RelationKind.GROUP)
        expected = np.zeros((3, 3), dtype=np.int8)
        expected[0, 1] = expected[1, 0] = 1
        np.testing.assert_array_equal(M.cells, expected)

    def test_key_value_direction(self):
        # entity 0 is the key of entity 1 -> row 1 (child), column 0 (parent)
        M = build_gold_matrix(entities([None, None]), [(0, 1)], RelationKind.KEY_VALUE)
        assert M.pairs() == {(1, 0)}

    def test_group_clique_count(self):
        M = build_gold_matrix(entities([3, 3, 3]), kind=RelationKind.GROUP)
        clique = {(i, j) for i, j in itertools.permutations(range(3), 2)}
        assert M.pairs() == clique
        assert int(M.cells.sum()) == 6

    def test_out_of_range_link(self):
        with pytest.raises(SchemaError):
            build_gold_matrix(entities([None, None]), [(0, 5)])

    def test_self_link_rejected(self):
        with pytest.raises(ValidationError):
            build_gold_matrix(entities([None, None]), [(1, 1)])

    def test_ids_must_be_dense(self):
        with pytest.raises(SchemaError):
            build_gold_matrix([Entity(1, (0, 0, 0), "x")])

    def test_duplicate_links_counted_once(self):
        M = build_gold_matrix(entities([None] * 3), [(0, 1), (0, 1), (2, 1)])
        assert int(M.cells.sum()) == 2

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.one_of(st.none(), st.integers(0, 4)), min_size=1, max_size=12))
    def test_group_symmetric_zero_diagonal(self, groups):
        M = build_gold_matrix(entities(groups), kind=RelationKind.GROUP)
        assert M.is_symmetric()
        assert not np.diag(M.cells).any()
        for i, j in itertools.permutations(range(len(groups)), 2):
            same = groups[i] is not None and groups[i] == groups[j]
            assert M.cells[i, j] == int(same)

    @settings(max_examples=200, deadline=None)
    @given(st.data())
    def test_permutation_equivariance(self, data):
        n = data.draw(st.integers(2, 10))
        pairs = data.draw(st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)), max_size=20))
        links = [(a, b) for a, b in pairs if a != b]
        perm = data.draw(st.permutations(range(n)))
        M = build_gold_matrix(entities([None] * n), links)
        M_perm = build_gold_matrix(entities([None] * n), [(perm[a], perm[b]) for a, b in links])
        P = np.eye(n, dtype=np.int8)[list(perm)].T  # P[perm[i], i] = 1
        np.testing.assert_array_equal(M_perm.cells, P @ M.cells @ P.T)

    @settings(max_examples=200, deadline=None)
    @given(st.data())
    def test_ones_equal_distinct_links(self, data):
        n = data.draw(st.integers(2, 10))
        pairs = data.draw(st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)), max_size=30))
        links = [(a, b) for a, b in pairs if a != b]
        M = build_gold_matrix(entities([None] * n), links)
        assert int(M.cells.sum()) == len(set(links))


class TestRelationMatrix:
    def test_from_pairs_roundtrip(self):
        M = RelationMatrix.from_pairs(4, [(1, 0), (3, 2)])
        assert M.pairs() == {(1, 0), (3, 2)}
        assert M == RelationMatrix.from_pairs(4, [(3, 2), (1, 0)])

    def test_must_be_square(self):
        with pytest.raises(ValidationError):
            RelationMatrix(np.zeros((2, 3)))


class TestValidateDocument:
    def test_well_formed(self):
        assert validate_document(two_entity_doc()) == []

    def test_dangling_link(self):
        report = validate_document(two_entity_doc(links=[(0, 99)]))
        assert [v.code for v in report] == ["DANGLING_LINK"]
        assert report[0].location == "links[0]"

    def test_span_crossing_segments(self):
        doc = two_entity_doc()
        bad = Document(doc.doc_id, doc.segments,
                       [Entity(0, (0, 0, 1), "question"), doc.entities[1]], doc.links, doc.relation_kind)
        assert [v.code for v in validate_document(bad)] == ["NONCONTIGUOUS_SPAN"]

    def test_box_out_of_range_and_word_count(self):
        box = BBox(0, 0, 1200, 10)
        seg = Segment(0, ["a", "b"], box, [box])
        doc = Document("d", [seg], [Entity(0, (0, 0, 0), "other")], [], RelationKind.KEY_VALUE)
        codes = {v.code for v in validate_document(doc)}
        assert {"BBOX_RANGE", "WORD_BOX_COUNT"} <= codes

    def test_unknown_label(self):
        report = validate_document(two_entity_doc(), label_set=["question"])
        assert [v.code for v in report] == ["UNKNOWN_LABEL"]
