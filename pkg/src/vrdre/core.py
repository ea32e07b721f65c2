"""Document, entity and relation data model.

Relation matrices use the child-row / parent-column convention:
``M[child, parent] == 1`` means ``parent`` is the key (or a group partner)
of ``child``. The diagonal is always zero.
"""

from __future__ import annotations

import enum
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

COORD_MAX = 1000


class SchemaError(ValueError):
    """Input data does not follow the expected schema."""


class ValidationError(ValueError):
    """A value is well-formed but violates a model invariant."""


def coerce_enum(cls, value):
    """Accept an enum member or its (case-insensitive) name."""
    if isinstance(value, cls):
        return value
    return cls(str(value).upper())


class RelationKind(str, enum.Enum):
    KEY_VALUE = "KEY_VALUE"
    GROUP = "GROUP"


@dataclass(frozen=True)
class BBox:
    x0: int
    y0: int
    x1: int
    y1: int

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.x0, self.y0, self.x1, self.y1)

    def is_normalized(self) -> bool:
        return 0 <= self.x0 <= self.x1 <= COORD_MAX and 0 <= self.y0 <= self.y1 <= COORD_MAX

    def contains(self, other: "BBox", tol: int = 1) -> bool:
        return (
            other.x0 >= self.x0 - tol
            and other.y0 >= self.y0 - tol
            and other.x1 <= self.x1 + tol
            and other.y1 <= self.y1 + tol
        )

    @classmethod
    def union(cls, boxes: Iterable["BBox"]) -> "BBox":
        boxes = list(boxes)
        return cls(
            min(b.x0 for b in boxes),
            min(b.y0 for b in boxes),
            max(b.x1 for b in boxes),
            max(b.y1 for b in boxes),
        )


@dataclass(frozen=True)
class Segment:
    segment_id: int
    tokens: tuple[str, ...]
    box: BBox
    word_boxes: tuple[BBox, ...]

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "word_boxes", tuple(self.word_boxes))


@dataclass(frozen=True)
class Entity:
    entity_id: int
    # (segment_id, first_word_index, last_word_index), inclusive
    span: tuple[int, int, int]
    label: str
    group_id: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "span", tuple(self.span))


@dataclass(frozen=True)
class Document:
    doc_id: str
    segments: tuple[Segment, ...]
    entities: tuple[Entity, ...]
    # directed (parent_entity_id, child_entity_id) pairs
    links: tuple[tuple[int, int], ...]
    relation_kind: RelationKind
    page_size: tuple[float, float] = (COORD_MAX, COORD_MAX)
    image_path: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        object.__setattr__(self, "entities", tuple(self.entities))
        object.__setattr__(self, "links", tuple(tuple(link) for link in self.links))
        object.__setattr__(self, "relation_kind", RelationKind(self.relation_kind))
        object.__setattr__(self, "page_size", tuple(self.page_size))

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    def segment_index(self) -> dict[int, int]:
        return {seg.segment_id: i for i, seg in enumerate(self.segments)}

    def words(self) -> list[str]:
        return [w for seg in self.segments for w in seg.tokens]

    def text(self) -> str:
        return " ".join(self.words())

    def gold_matrix(self) -> "RelationMatrix":
        return build_gold_matrix(self.entities, self.links, self.relation_kind)


@dataclass(frozen=True, eq=False)
class RelationMatrix:
    cells: np.ndarray

    def __post_init__(self):
        cells = np.asarray(self.cells, dtype=np.int8)
        if cells.ndim != 2 or cells.shape[0] != cells.shape[1]:
            raise ValidationError(f"relation matrix must be square, got {cells.shape}")
        cells.setflags(write=False)
        object.__setattr__(self, "cells", cells)

    @property
    def n(self) -> int:
        return self.cells.shape[0]

    def pairs(self) -> set[tuple[int, int]]:
        """Set of (child, parent) index pairs with a relation."""
        rows, cols = np.nonzero(self.cells)
        return set(zip(rows.tolist(), cols.tolist()))

    def is_symmetric(self) -> bool:
        return bool(np.array_equal(self.cells, self.cells.T))

    def __eq__(self, other):
        if not isinstance(other, RelationMatrix):
            return NotImplemented
        return np.array_equal(self.cells, other.cells)

    def __hash__(self):
        return hash(self.cells.tobytes())

    @classmethod
    def from_pairs(cls, n: int, pairs: Iterable[tuple[int, int]]) -> "RelationMatrix":
        cells = np.zeros((n, n), dtype=np.int8)
        for child, parent in pairs:
            cells[child, parent] = 1
        return cls(cells)


def build_gold_matrix(
    entities: Sequence[Entity],
    links: Iterable[tuple[int, int]] = (),
    kind: RelationKind = RelationKind.KEY_VALUE,
) -> RelationMatrix:
    """Build the n x n gold relation matrix.

    KEY_VALUE: each ``(parent, child)`` link sets ``M[child, parent]``.
    GROUP: every pair of distinct entities sharing a ``group_id`` is linked
    in both directions; explicit links, if given, are symmetrized as well.
    """
    kind = RelationKind(kind)
    n = len(entities)
    ids = {e.entity_id for e in entities}
    if ids != set(range(n)):
        raise SchemaError("entity ids must be dense 0..n-1")
    cells = np.zeros((n, n), dtype=np.int8)
    for parent, child in links:
        if not (0 <= parent < n and 0 <= child < n):
            raise SchemaError(f"link ({parent}, {child}) references an entity outside 0..{n - 1}")
        if parent == child:
            raise ValidationError(f"self-link on entity {parent}")
        cells[child, parent] = 1
        if kind is RelationKind.GROUP:
            cells[parent, child] = 1
    if kind is RelationKind.GROUP:
        groups: dict[int, list[int]] = defaultdict(list)
        for e in entities:
            if e.group_id is not None:
                groups[e.group_id].append(e.entity_id)
        for members in groups.values():
            idx = np.asarray(members)
            cells[np.ix_(idx, idx)] = 1
        np.fill_diagonal(cells, 0)
    return RelationMatrix(cells)


@dataclass(frozen=True)
class Violation:
    code: str
    location: str
    message: str = ""


def validate_document(doc: Document, label_set: Optional[Sequence[str]] = None) -> list[Violation]:
    """Check every invariant of the data model; returns an empty list if none fail."""
    report: list[Violation] = []

    def add(code, location, message=""):
        report.append(Violation(code, location, message))

    seg_by_id: dict[int, Segment] = {}
    for i, seg in enumerate(doc.segments):
        loc = f"segments[{i}]"
        if seg.segment_id in seg_by_id:
            add("DUPLICATE_SEGMENT_ID", loc, f"segment_id {seg.segment_id} repeated")
        seg_by_id[seg.segment_id] = seg
        if not seg.tokens:
            add("EMPTY_SEGMENT", loc)
        if len(seg.word_boxes) != len(seg.tokens):
            add("WORD_BOX_COUNT", loc, f"{len(seg.word_boxes)} boxes for {len(seg.tokens)} words")
        for j, box in enumerate((seg.box, *seg.word_boxes)):
            if not box.is_normalized():
                where = f"{loc}.box" if j == 0 else f"{loc}.word_boxes[{j - 1}]"
                add("BBOX_RANGE", where, str(box.as_tuple()))
        for j, wb in enumerate(seg.word_boxes):
            if not seg.box.contains(wb):
                add("WORD_OUTSIDE_SEGMENT", f"{loc}.word_boxes[{j}]", str(wb.as_tuple()))

    n = len(doc.entities)
    seen_ids = set()
    for i, ent in enumerate(doc.entities):
        loc = f"entities[{i}]"
        if not 0 <= ent.entity_id < n or ent.entity_id in seen_ids:
            add("ENTITY_ID_NOT_DENSE", loc, f"entity_id {ent.entity_id}")
        seen_ids.add(ent.entity_id)
        if label_set is not None and ent.label not in label_set:
            add("UNKNOWN_LABEL", loc, ent.label)
        if len(ent.span) != 3:
            add("NONCONTIGUOUS_SPAN", loc, f"span {ent.span} is not (segment, first, last)")
            continue
        seg_id, first, last = ent.span
        seg = seg_by_id.get(seg_id)
        if seg is None:
            add("DANGLING_SPAN", loc, f"segment {seg_id} does not exist")
        elif not 0 <= first <= last < len(seg.tokens):
            add("NONCONTIGUOUS_SPAN", loc, f"word range {first}..{last} outside segment {seg_id}")

    for i, (parent, child) in enumerate(doc.links):
        loc = f"links[{i}]"
        if not (0 <= parent < n and 0 <= child < n):
            add("DANGLING_LINK", loc, f"({parent}, {child}) with n={n}")
        elif parent == child:
            add("SELF_LINK", loc, f"entity {parent}")
    return report
