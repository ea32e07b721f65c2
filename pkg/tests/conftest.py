import sys

import numpy as np
import pytest

from vrdre.core import BBox, Document, Entity, RelationKind, Segment


def random_document(rng: np.random.Generator, max_segments: int = 8, kind=RelationKind.KEY_VALUE,
                    labels=("question", "answer", "header", "other")) -> Document:
    """Small valid document with random boxes, words, entity spans and links."""
    n_seg = int(rng.integers(1, max_segments + 1))
    segments, entities = [], []
    for s in range(n_seg):
        n_words = int(rng.integers(1, 6))
        # coarse grid makes ties in y0 / x0 likely
        x, y = int(rng.integers(0, 10)) * 90, int(rng.integers(0, 10)) * 90
        words, boxes = [], []
        for k in range(n_words):
            word = "".join(rng.choice(list("abcxyz0129:"), size=int(rng.integers(1, 9))))
            words.append(word)
            boxes.append(BBox(x + 10 * k, y, x + 10 * k + 8, y + 9))
        segments.append(Segment(s, words, BBox.union(boxes), boxes))
        # split the segment's words into consecutive, non-overlapping entity spans
        k = 0
        while k < n_words:
            length = int(rng.integers(1, n_words - k + 1))
            if rng.random() < 0.8:
                entities.append(Entity(len(entities), (s, k, k + length - 1), str(rng.choice(labels)),
                                       group_id=int(rng.integers(0, 3))))
            k += length
    n = len(entities)
    links = set()
    if n >= 2 and kind is RelationKind.KEY_VALUE:
        for _ in range(int(rng.integers(0, 2 * n))):
            a, b = rng.choice(n, size=2, replace=False)
            links.add((int(a), int(b)))
    return Document("rand", segments, entities, sorted(links), kind)


@pytest.fixture
def bill_doc():
    words = ["Bill", "was", "born", "in", "Seattle"]
    boxes = [BBox(10 * i, 0, 10 * i + 8, 10) for i in range(len(words))]
    seg = Segment(0, words, BBox.union(boxes), boxes)
    entities = [Entity(0, (0, 0, 0), "person"), Entity(1, (0, 4, 4), "city")]
    return Document("bill", [seg], entities, [], RelationKind.KEY_VALUE)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
