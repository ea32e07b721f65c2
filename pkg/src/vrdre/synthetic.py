"""Generated form-like documents with a geometric key-value rule.

Each answer's parent is the nearest question segment that lies either to
its left (overlapping vertically) or above it (overlapping horizontally),
measured by the gap between the two boxes. Segments are emitted in a
scrambled order, as a poor OCR engine might return them.
"""

from __future__ import annotations

from dataclasses import replace
from typing import Optional

import numpy as np

from .core import BBox, Document, Entity, RelationKind, Segment
from .ingest import normalize_coords

PAGE_SIZE = (850.0, 1100.0)
CHAR_W, LINE_H, WORD_GAP = 8, 16, 7

KEY_PHRASES = [
    "Name", "Date", "Address", "Phone", "Fax", "Total", "Account No", "Company",
    "Signature", "Subject", "Ref", "Amount", "City", "State", "Zip Code", "Email",
    "Title", "Department", "Brand", "Quantity", "Invoice No", "Due Date", "From",
    "To", "Cc", "Pages", "Project", "Budget", "Contact", "Market", "Region",
]
VALUE_WORDS = [
    "Smith", "Tobacco", "Institute", "Research", "March", "April", "Lorillard",
    "Report", "Approved", "Pending", "Main", "Street", "Suite", "Avenue", "New",
    "York", "Richmond", "Virginia", "Marketing", "Product", "Test", "Sample",
    "Brown", "Lee", "Corp", "Inc", "Ltd", "Blue", "Green", "North", "South",
]
HEADER_PHRASES = [
    "PURCHASE ORDER", "CONTACT INFORMATION", "FAX TRANSMITTAL", "PROJECT SUMMARY",
    "ACCOUNT DETAILS", "SHIPPING", "MEMORANDUM", "BUDGET REQUEST",
]
FILLER_WORDS = ["please", "see", "attached", "the", "for", "review", "and", "note", "copy", "file"]


def _value_text(rng: np.random.Generator) -> list[str]:
    kind = rng.integers(3)
    if kind == 0:
        return [str(int(rng.integers(10, 99999)))]
    if kind == 1:
        return [f"{int(rng.integers(1, 13))}/{int(rng.integers(1, 29))}/{int(rng.integers(80, 99))}"]
    return [str(w) for w in rng.choice(VALUE_WORDS, size=int(rng.integers(1, 4)))]


def _layout_words(words: list[str], x: float, y: float) -> tuple[BBox, list[BBox]]:
    boxes = []
    cursor = x
    for w in words:
        width = CHAR_W * len(w)
        boxes.append(BBox(cursor, y, cursor + width, y + LINE_H))
        cursor += width + WORD_GAP
    return BBox.union(boxes), boxes


def _overlap(a0, a1, b0, b1) -> float:
    return min(a1, b1) - max(a0, b0)


def nearest_key_parent(value: BBox, keys: list[tuple[int, BBox]]) -> Optional[int]:
    """The geometric rule: nearest key to the left or above ``value``."""
    best, best_gap = None, float("inf")
    for key_id, kb in keys:
        gap = None
        if kb.x1 <= value.x0 and _overlap(kb.y0, kb.y1, value.y0, value.y1) > 0:
            gap = value.x0 - kb.x1
        elif kb.y1 <= value.y0 and _overlap(kb.x0, kb.x1, value.x0, value.x1) > 0:
            gap = value.y0 - kb.y1
        if gap is not None and gap < best_gap:
            best, best_gap = key_id, gap
    return best


def generate_form(rng: np.random.Generator, doc_id: str = "synthetic") -> Document:
    width, height = PAGE_SIZE
    items: list[tuple[list[str], float, float, str]] = []  # words, x, y, label
    y = 50.0
    columns = (50.0, width / 2 + 10)
    while y < height - 80:
        r = rng.random()
        if r < 0.12:
            phrase = str(rng.choice(HEADER_PHRASES)).split()
            items.append((phrase, width / 2 - 60 + rng.integers(-20, 20), y, "header"))
            y += LINE_H + 18
            continue
        if r < 0.2:
            filler = [str(w) for w in rng.choice(FILLER_WORDS, size=int(rng.integers(2, 6)))]
            items.append((filler, columns[0] + rng.integers(0, 30), y, "other"))
            y += LINE_H + 12
            continue
        n_cols = 1 if rng.random() < 0.4 else 2
        row_height = LINE_H
        for c in range(n_cols):
            x = columns[c] + rng.integers(0, 25)
            key = str(rng.choice(KEY_PHRASES)).split()
            key[-1] += ":"
            key_box, _ = _layout_words(key, x, y)
            items.append((key, x, y, "question"))
            if rng.random() < 0.1:
                continue  # key left unanswered
            value = _value_text(rng)
            if rng.random() < 0.6:
                vx = key_box.x1 + rng.integers(8, 40)
                vy = y + rng.integers(-2, 3)
            else:
                vx = x + rng.integers(0, 20)
                vy = y + LINE_H + rng.integers(4, 10)
                row_height = max(row_height, 2 * LINE_H + 10)
            items.append((value, vx, vy, "answer"))
        y += row_height + rng.integers(10, 24)

    # present in a scrambled "OCR" order
    order = rng.permutation(len(items))
    segments, entities = [], []
    for pos, k in enumerate(order):
        words, x, yy, label = items[k]
        box, word_boxes = _layout_words(words, float(x), float(yy))
        segments.append(Segment(pos, words, box, word_boxes))
        entities.append(Entity(pos, (pos, 0, len(words) - 1), label))
    doc = normalize_coords(
        Document(doc_id, segments, entities, (), RelationKind.KEY_VALUE, page_size=PAGE_SIZE)
    )
    # apply the rule on the normalized boxes the model actually sees
    keys = [(e.entity_id, doc.segments[e.entity_id].box) for e in entities if e.label == "question"]
    links = []
    for e in entities:
        if e.label != "answer":
            continue
        parent = nearest_key_parent(doc.segments[e.entity_id].box, keys)
        if parent is not None:
            links.append((parent, e.entity_id))
    return replace(doc, links=tuple(links))


def generate_corpus(n_docs: int, seed: int = 0, prefix: str = "synth") -> list[Document]:
    rng = np.random.default_rng(seed)
    return [generate_form(rng, f"{prefix}_{i:04d}") for i in range(n_docs)]
