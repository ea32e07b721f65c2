"""Input-side transforms: reading order (BBO / BBS), entity markers,
IOB tags and tokenized windows."""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from .core import BBox, Document, Entity, Segment, coerce_enum
from .tokenization import WordTokenizer

# FUNSD "other" entities are tagged O
OUTSIDE_LABELS = ("other",)


class WindowError(ValueError):
    pass


# -- reading order -------------------------------------------------------------

def reorder_segments(doc: Document, order: Sequence[int]) -> Document:
    """Present ``doc.segments`` in ``order`` (a permutation of positions).

    Segment ids are renumbered to their new positions and entity spans are
    remapped. Entity ids, and therefore links, are left untouched.
    """
    order = [int(k) for k in order]
    if sorted(order) != list(range(len(doc.segments))):
        raise ValueError("order must be a permutation of segment positions")
    new_id = {doc.segments[k].segment_id: pos for pos, k in enumerate(order)}
    segments = tuple(replace(doc.segments[k], segment_id=pos) for pos, k in enumerate(order))
    entities = tuple(replace(e, span=(new_id[e.span[0]], e.span[1], e.span[2])) for e in doc.entities)
    return replace(doc, segments=segments, entities=entities)


def order_segments_bbo(doc: Document) -> Document:
    """Sort segments top to bottom, then left to right (stable)."""
    order = sorted(
        range(len(doc.segments)),
        key=lambda k: (doc.segments[k].box.y0, doc.segments[k].box.x0, k),
    )
    return reorder_segments(doc, order)


def shuffle_segments_bbs(doc: Document, seed: Union[int, np.random.Generator]) -> Document:
    """Randomly permute segments; words keep their order inside each segment."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return reorder_segments(doc, rng.permutation(len(doc.segments)))


# -- entity markers --------------------------------------------------------------

class MarkerMode(str, enum.Enum):
    NONE = "NONE"
    SIMPLE = "SIMPLE"
    PUNCT = "PUNCT"


def default_type_name(label: str) -> str:
    return re.sub(r"[._]+", " ", label).strip().lower()


@dataclass(frozen=True)
class MarkerScheme:
    mode: MarkerMode = MarkerMode.SIMPLE
    type_names: Mapping[str, str] = field(default_factory=dict)
    # count marker words as part of the entity span
    markers_in_span: bool = False

    def __post_init__(self):
        object.__setattr__(self, "mode", coerce_enum(MarkerMode, self.mode))

    @classmethod
    def for_labels(cls, labels: Iterable[str], mode: MarkerMode = MarkerMode.SIMPLE, **kwargs) -> "MarkerScheme":
        return cls(mode, {label: default_type_name(label) for label in labels}, **kwargs)

    def type_words(self, label: str) -> list[str]:
        name = self.type_names.get(label)
        if name is None:
            raise KeyError(f"no type name for label {label!r}")
        return name.split()


# (open, role) marks for the two argument roles of the punctuation variant
_PUNCT_ROLES = (("@", "*"), ("#", "^"))


def inject_entity_markers(doc: Document, scheme: MarkerScheme) -> Document:
    """Insert each entity's type name in front of its first word.

    SIMPLE turns ``Bill`` into ``person Bill``. PUNCT produces the
    punctuation-delimited typed marker ``@ * person * Bill @``, alternating
    ``@ *`` and ``# ^`` between successive entities; it is meant for
    token-budget analysis only. Marker words take the box of the entity's
    first word (the closing PUNCT mark takes the last word's box).
    """
    if scheme.mode is MarkerMode.NONE:
        raise ValueError("inject_entity_markers needs a marker mode other than NONE")
    if not doc.entities:
        return doc

    by_segment: dict[int, list[Entity]] = {}
    for e in doc.entities:
        by_segment.setdefault(e.span[0], []).append(e)
    appearance = {}
    for seg in doc.segments:
        for e in sorted(by_segment.get(seg.segment_id, []), key=lambda e: e.span[1]):
            appearance[e.entity_id] = len(appearance)

    new_spans: dict[int, tuple[int, int, int]] = {}
    segments = []
    for seg in doc.segments:
        ents = by_segment.get(seg.segment_id, [])
        starts = {e.span[1]: e for e in ents}
        ends = {e.span[2]: e for e in ents}
        words: list[str] = []
        boxes: list[BBox] = []
        span_start: dict[int, int] = {}
        for k, (word, box) in enumerate(zip(seg.tokens, seg.word_boxes)):
            ent = starts.get(k)
            if ent is not None:
                marker_start = len(words)
                type_words = scheme.type_words(ent.label)
                if scheme.mode is MarkerMode.PUNCT:
                    opener, role = _PUNCT_ROLES[appearance[ent.entity_id] % 2]
                    prefix = [opener, role, *type_words, role]
                else:
                    prefix = type_words
                words.extend(prefix)
                boxes.extend([box] * len(prefix))
                span_start[ent.entity_id] = marker_start if scheme.markers_in_span else len(words)
            words.append(word)
            boxes.append(box)
            ent = ends.get(k)
            if ent is not None:
                last = len(words) - 1
                if scheme.mode is MarkerMode.PUNCT:
                    opener, _ = _PUNCT_ROLES[appearance[ent.entity_id] % 2]
                    words.append(opener)
                    boxes.append(box)
                    if scheme.markers_in_span:
                        last += 1
                new_spans[ent.entity_id] = (seg.segment_id, span_start[ent.entity_id], last)
        segments.append(replace(seg, tokens=tuple(words), word_boxes=tuple(boxes)))
    entities = tuple(replace(e, span=new_spans[e.entity_id]) for e in doc.entities)
    return replace(doc, segments=tuple(segments), entities=entities)


# -- windows -----------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Window:
    doc_id: str
    token_ids: np.ndarray  # (T,) int64
    token_boxes: np.ndarray  # (T, 4) int64, normalized coordinates
    # (segment position, word index) per token; (-1, -1) for special tokens
    token_to_word: tuple[tuple[int, int], ...]
    # (entity_id, first_token, last_token, label), inclusive token indices
    entity_table: tuple[tuple[int, int, int, str], ...]
    attention_mask: np.ndarray  # (T,) int64

    def __len__(self) -> int:
        return len(self.token_ids)

    @property
    def entity_ids(self) -> list[int]:
        return [row[0] for row in self.entity_table]


def _segment_tokens(seg: Segment, tokenizer: WordTokenizer) -> tuple[list[int], list[int]]:
    ids, word_idx = [], []
    for k, word in enumerate(seg.tokens):
        pieces = tokenizer.tokenize(word)
        ids.extend(pieces)
        word_idx.extend([k] * len(pieces))
    return ids, word_idx


def _pack(lengths: Sequence[int], budget: int, stride: int) -> list[list[int]]:
    windows: list[list[int]] = []
    current: list[int] = []
    used = 0
    for k, n in enumerate(lengths):
        if current and used + n > budget:
            windows.append(current)
            # carry trailing whole segments as overlapping context
            carry: list[int] = []
            carried = 0
            for j in reversed(current):
                if carried + lengths[j] > stride or carried + lengths[j] + n > budget:
                    break
                carry.insert(0, j)
                carried += lengths[j]
            current, used = carry, carried
        current.append(k)
        used += n
    if current or not windows:
        windows.append(current)
    return windows


def tokenize_and_window(
    doc: Document,
    tokenizer: WordTokenizer,
    max_len: int = 512,
    stride: int = 0,
) -> list[Window]:
    """Tokenize words into subwords and pack whole segments into windows.

    Each window is ``[CLS] tokens... [SEP]`` with at most ``max_len`` tokens.
    Segments are never split. ``stride`` > 0 repeats up to that many tokens
    of trailing whole segments at the start of the next window.
    """
    if not 0 <= stride < max_len:
        raise WindowError(f"stride must satisfy 0 <= stride < max_len, got {stride}")
    budget = max_len - 2
    per_segment = [_segment_tokens(seg, tokenizer) for seg in doc.segments]
    for seg, (ids, _) in zip(doc.segments, per_segment):
        if len(ids) > budget:
            raise WindowError(
                f"{doc.doc_id}: segment {seg.segment_id} has {len(ids)} tokens, "
                f"more than max_len={max_len} allows"
            )
    seg_pos = doc.segment_index()
    by_segment: dict[int, list[Entity]] = {}
    for e in doc.entities:
        by_segment.setdefault(seg_pos[e.span[0]], []).append(e)

    windows = []
    for members in _pack([len(ids) for ids, _ in per_segment], budget, stride):
        token_ids = [tokenizer.cls_id]
        boxes = [(0, 0, 0, 0)]
        to_word = [(-1, -1)]
        table = []
        for k in members:
            seg = doc.segments[k]
            ids, word_idx = per_segment[k]
            offset = len(token_ids)
            first_tok: dict[int, int] = {}
            last_tok: dict[int, int] = {}
            for t, w in enumerate(word_idx):
                first_tok.setdefault(w, offset + t)
                last_tok[w] = offset + t
            token_ids.extend(ids)
            boxes.extend(seg.word_boxes[w].as_tuple() for w in word_idx)
            to_word.extend((k, w) for w in word_idx)
            for e in sorted(by_segment.get(k, []), key=lambda e: e.span[1]):
                table.append((e.entity_id, first_tok[e.span[1]], last_tok[e.span[2]], e.label))
        token_ids.append(tokenizer.sep_id)
        boxes.append((0, 0, 0, 0))
        to_word.append((-1, -1))
        windows.append(
            Window(
                doc_id=doc.doc_id,
                token_ids=np.asarray(token_ids, dtype=np.int64),
                token_boxes=np.asarray(boxes, dtype=np.int64).reshape(-1, 4),
                token_to_word=tuple(to_word),
                entity_table=tuple(table),
                attention_mask=np.ones(len(token_ids), dtype=np.int64),
            )
        )
    return windows


# -- IOB ---------------------------------------------------------------------------

def tag_class(label: str) -> str:
    return label.upper()


def build_tagset(label_set: Iterable[str], outside_labels: Sequence[str] = OUTSIDE_LABELS) -> list[str]:
    tags = ["O"]
    for label in label_set:
        if label in outside_labels:
            continue
        tags.extend([f"B-{tag_class(label)}", f"I-{tag_class(label)}"])
    return tags


def iob_gold_tags(
    window: Window,
    label_set: Optional[Iterable[str]] = None,
    outside_labels: Sequence[str] = OUTSIDE_LABELS,
) -> list[str]:
    """Per-token IOB tags for the entities in ``window``."""
    tags = ["O"] * len(window)
    taken = [False] * len(window)
    allowed = set(label_set) if label_set is not None else None
    for entity_id, first, last, label in window.entity_table:
        if any(taken[first:last + 1]):
            raise ValueError(f"entity {entity_id} overlaps another entity span")
        for t in range(first, last + 1):
            taken[t] = True
        if allowed is not None and label not in allowed:
            raise ValueError(f"label {label!r} not in label set")
        if label in outside_labels:
            continue
        cls = tag_class(label)
        tags[first] = f"B-{cls}"
        for t in range(first + 1, last + 1):
            tags[t] = f"I-{cls}"
    return tags


_TAG_RE = re.compile(r"^(O|([BI])-(.+))$")


def iob_spans(tags: Sequence[str]) -> list[tuple[int, int, str]]:
    """Decode IOB tags into (first, last, CLASS) spans.

    An ``I-X`` that does not continue an open ``X`` span starts a new span.
    """
    spans = []
    open_span: Optional[list] = None
    for t, tag in enumerate(tags):
        m = _TAG_RE.match(tag) if isinstance(tag, str) else None
        if m is None:
            raise ValueError(f"malformed IOB tag {tag!r} at position {t}")
        if tag == "O":
            if open_span:
                spans.append(tuple(open_span))
            open_span = None
            continue
        prefix, cls = m.group(2), m.group(3)
        if prefix == "I" and open_span is not None and open_span[2] == cls:
            open_span[1] = t
            continue
        if open_span:
            spans.append(tuple(open_span))
        open_span = [t, t, cls]
    if open_span:
        spans.append(tuple(open_span))
    return spans
