"""FUNSD / CORD annotation parsers, coordinate normalization, and the
canonical Document JSON format."""

from __future__ import annotations

import enum
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterator, Optional, Sequence, Union

from .core import (
    COORD_MAX,
    BBox,
    Document,
    Entity,
    RelationKind,
    SchemaError,
    Segment,
    coerce_enum,
)

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

FUNSD_LABELS = ("question", "answer", "header", "other")

# Line categories released with CORD v2; anything else goes to the fallback label.
CORD_LABELS = (
    "menu.cnt", "menu.discountprice", "menu.etc", "menu.itemsubtotal", "menu.nm",
    "menu.num", "menu.price", "menu.sub_cnt", "menu.sub_etc", "menu.sub_nm",
    "menu.sub_price", "menu.sub_unitprice", "menu.unitprice", "menu.vatyn",
    "void_menu.nm", "void_menu.price",
    "sub_total.discount_price", "sub_total.etc", "sub_total.othersvc_price",
    "sub_total.service_price", "sub_total.subtotal_price", "sub_total.tax_price",
    "total.cashprice", "total.changeprice", "total.creditcardprice",
    "total.emoneyprice", "total.menuqty_cnt", "total.menutype_cnt",
    "total.total_etc", "total.total_price",
    "other",
)


class DatasetName(str, enum.Enum):
    FUNSD = "FUNSD"
    CORD = "CORD"
    SYNTHETIC = "SYNTHETIC"


class Split(str, enum.Enum):
    train = "train"
    validation = "validation"
    test = "test"


# Default on-disk layouts of the public releases, relative to the dataset root.
_DEFAULT_SPLIT_DIRS = {
    DatasetName.FUNSD: {
        Split.train: "training_data/annotations",
        Split.test: "testing_data/annotations",
    },
    DatasetName.CORD: {
        Split.train: "train/json",
        Split.validation: "dev/json",
        Split.test: "test/json",
    },
}


@dataclass(frozen=True)
class DatasetSpec:
    name: DatasetName
    root: Optional[str] = None
    split: Split = Split.train
    label_set: tuple[str, ...] = ()
    group_key: str = "group_id"
    fallback_label: str = "other"
    split_dirs: dict = field(default_factory=dict, hash=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "name", coerce_enum(DatasetName, self.name))
        object.__setattr__(self, "split", Split(self.split))
        if not self.label_set:
            default = {DatasetName.FUNSD: FUNSD_LABELS, DatasetName.CORD: CORD_LABELS}
            object.__setattr__(self, "label_set", default.get(self.name, FUNSD_LABELS))
        object.__setattr__(self, "label_set", tuple(self.label_set))
        if not self.label_set:
            raise SchemaError("label_set must not be empty")

    @property
    def relation_kind(self) -> RelationKind:
        return RelationKind.GROUP if self.name is DatasetName.CORD else RelationKind.KEY_VALUE

    def split_dir(self, split: Optional[Split] = None) -> Path:
        split = Split(split or self.split)
        if self.root is None:
            raise SchemaError(f"{self.name.value} dataset has no root directory")
        layout = {**_DEFAULT_SPLIT_DIRS.get(self.name, {}), **{Split(k): v for k, v in self.split_dirs.items()}}
        if split not in layout:
            raise SchemaError(f"{self.name.value} has no {split.value} split")
        return Path(self.root) / layout[split]


# -- coordinate normalization --------------------------------------------------

def _scale(value: float, extent: float) -> int:
    scaled = math.floor(value * COORD_MAX / extent + 0.5)
    return min(max(int(scaled), 0), COORD_MAX)


def normalize_box(raw: Sequence[float], page_size: tuple[float, float]) -> BBox:
    width, height = page_size
    if width <= 0 or height <= 0:
        raise ValueError(f"page dimensions must be positive, got {page_size}")
    x0, y0, x1, y1 = raw
    if min(x0, x1) < 0 or min(y0, y1) < 0 or max(x0, x1) > width or max(y0, y1) > height:
        logger.warning("box %s exceeds page %s; clamping", list(raw), page_size)
    nx0, nx1 = sorted((_scale(x0, width), _scale(x1, width)))
    ny0, ny1 = sorted((_scale(y0, height), _scale(y1, height)))
    return BBox(nx0, ny0, nx1, ny1)


def normalize_coords(doc: Document, page_size: Optional[tuple[float, float]] = None) -> Document:
    """Map raw pixel coordinates into the [0, 1000] grid.

    A coordinate ``c`` along an axis of extent ``w`` becomes ``round(c * 1000 / w)``,
    clamped to [0, 1000].
    """
    page_size = tuple(page_size or doc.page_size)
    if page_size[0] <= 0 or page_size[1] <= 0:
        raise ValueError(f"page dimensions must be positive, got {page_size}")
    segments = []
    for seg in doc.segments:
        word_boxes = tuple(normalize_box(b.as_tuple(), page_size) for b in seg.word_boxes)
        box = normalize_box(seg.box.as_tuple(), page_size)
        if word_boxes:
            # rounding can push a word a unit outside its segment
            box = BBox.union((box, *word_boxes))
        segments.append(replace(seg, box=box, word_boxes=word_boxes))
    return replace(doc, segments=tuple(segments), page_size=page_size)


# -- FUNSD ---------------------------------------------------------------------

def _require(obj: dict, key: str, path: str):
    if not isinstance(obj, dict) or key not in obj:
        raise SchemaError(f"missing required field {path}.{key}")
    return obj[key]


def _raw_box(value, path: str) -> BBox:
    if not isinstance(value, (list, tuple)) or len(value) != 4:
        raise SchemaError(f"{path} must be a list of 4 numbers")
    x0, y0, x1, y1 = value
    return BBox(min(x0, x1), min(y0, y1), max(x0, x1), max(y0, y1))


def _funsd_page_size(path: Path, entries: list[dict]) -> tuple[float, float]:
    for parent in (path.parent.parent / "images", path.parent):
        image = parent / f"{path.stem}.png"
        if image.exists():
            from PIL import Image

            with Image.open(image) as im:  # header only, no pixel decoding
                return float(im.width), float(im.height)
    extent_x = max((max(e["box"][0], e["box"][2]) for e in entries), default=COORD_MAX)
    extent_y = max((max(e["box"][1], e["box"][3]) for e in entries), default=COORD_MAX)
    logger.warning("%s: page image not found, using annotation extent as page size", path.name)
    return float(max(extent_x, 1)), float(max(extent_y, 1))


def parse_funsd(
    source: Union[PathLike, dict],
    doc_id: Optional[str] = None,
    page_size: Optional[tuple[float, float]] = None,
    normalize: bool = True,
) -> Document:
    """Parse one FUNSD annotation file (or its already-loaded JSON object).

    Each ``form`` entry becomes one segment and one entity spanning it. A
    linking pair ``[a, b]`` is read as ``a`` = key (parent), ``b`` = value.
    """
    path = None
    if isinstance(source, dict):
        data = source
    else:
        path = Path(source)
        data = json.loads(path.read_text(encoding="utf-8"))
        doc_id = doc_id or path.stem
    form = _require(data, "form", "$")
    if not isinstance(form, list):
        raise SchemaError("$.form must be an array")

    kept: list[dict] = []
    for i, entry in enumerate(form):
        where = f"$.form[{i}]"
        for key in ("id", "text", "label", "box", "words", "linking"):
            _require(entry, key, where)
        for j, word in enumerate(entry["words"]):
            _require(word, "text", f"{where}.words[{j}]")
            _require(word, "box", f"{where}.words[{j}]")
        if not entry["words"]:
            logger.warning("%s: entry id=%s has no words; skipped", doc_id, entry["id"])
            continue
        kept.append(entry)

    if page_size is None:
        page_size = _funsd_page_size(path, kept) if path is not None else (COORD_MAX, COORD_MAX)

    id_map = {entry["id"]: i for i, entry in enumerate(kept)}
    segments, entities = [], []
    links: list[tuple[int, int]] = []
    for i, entry in enumerate(kept):
        words = [str(w["text"]) for w in entry["words"]]
        word_boxes = [_raw_box(w["box"], f"$.form[{i}].words.box") for w in entry["words"]]
        box = BBox.union([_raw_box(entry["box"], f"$.form[{i}].box"), *word_boxes])
        segments.append(Segment(i, words, box, word_boxes))
        label = str(entry["label"]).lower()
        if label not in FUNSD_LABELS:
            raise SchemaError(f"$.form[{i}].label: unknown FUNSD label {entry['label']!r}")
        entities.append(Entity(i, (i, 0, len(words) - 1), label))
        for pair in entry["linking"]:
            if len(pair) != 2:
                raise SchemaError(f"$.form[{i}].linking entries must be pairs")
            a, b = pair
            if a not in id_map or b not in id_map:
                logger.warning("%s: link %s references a skipped or unknown entry", doc_id, pair)
                continue
            link = (id_map[a], id_map[b])
            if link[0] != link[1] and link not in links:
                links.append(link)

    doc = Document(
        doc_id=doc_id or "doc",
        segments=segments,
        entities=entities,
        links=links,
        relation_kind=RelationKind.KEY_VALUE,
        page_size=page_size,
        image_path=str(path.parent.parent / "images" / f"{path.stem}.png") if path else None,
    )
    return normalize_coords(doc) if normalize else doc


# -- CORD ----------------------------------------------------------------------

def quad_to_box(quad: dict) -> BBox:
    xs = [quad[f"x{k}"] for k in range(1, 5)]
    ys = [quad[f"y{k}"] for k in range(1, 5)]
    return BBox(min(xs), min(ys), max(xs), max(ys))


def parse_cord(
    source: Union[PathLike, dict],
    spec: Optional[DatasetSpec] = None,
    doc_id: Optional[str] = None,
    normalize: bool = True,
) -> Document:
    """Parse one CORD annotation file into a GROUP-kind document.

    Each ``valid_line`` entry becomes one segment and one entity whose
    ``group_id`` is read from ``spec.group_key``.
    """
    spec = spec or DatasetSpec(DatasetName.CORD)
    if isinstance(source, dict):
        data = source
    else:
        path = Path(source)
        data = json.loads(path.read_text(encoding="utf-8"))
        doc_id = doc_id or path.stem
    lines = _require(data, "valid_line", "$")

    segments, entities = [], []
    for i, line in enumerate(lines):
        where = f"$.valid_line[{i}]"
        words = _require(line, "words", where)
        category = str(_require(line, "category", where))
        if spec.group_key not in line:
            raise SchemaError(f"{where}: missing group field {spec.group_key!r}")
        if not words:
            logger.warning("%s: %s has no words; skipped", doc_id, where)
            continue
        texts = [str(_require(w, "text", f"{where}.words[{j}]")) for j, w in enumerate(words)]
        boxes = [quad_to_box(_require(w, "quad", f"{where}.words[{j}]")) for j, w in enumerate(words)]
        if category not in spec.label_set:
            logger.warning("%s: unknown category %r mapped to %r", doc_id, category, spec.fallback_label)
            category = spec.fallback_label
        k = len(segments)
        segments.append(Segment(k, texts, BBox.union(boxes), boxes))
        entities.append(Entity(k, (k, 0, len(texts) - 1), category, int(line[spec.group_key])))

    meta = data.get("meta", {}).get("image_size") or {}
    if "width" in meta and "height" in meta:
        page_size = (float(meta["width"]), float(meta["height"]))
    else:
        page_size = (
            float(max((s.box.x1 for s in segments), default=COORD_MAX)),
            float(max((s.box.y1 for s in segments), default=COORD_MAX)),
        )
    doc = Document(
        doc_id=doc_id or "doc",
        segments=segments,
        entities=entities,
        links=(),
        relation_kind=RelationKind.GROUP,
        page_size=page_size,
    )
    return normalize_coords(doc) if normalize else doc


def iter_split_files(spec: DatasetSpec, split: Optional[Split] = None) -> list[Path]:
    directory = spec.split_dir(split)
    if not directory.is_dir():
        raise FileNotFoundError(f"split directory not found: {directory}")
    return sorted(directory.glob("*.json"))


def load_split(spec: DatasetSpec, split: Optional[Split] = None) -> list[Document]:
    files = iter_split_files(spec, split)
    if spec.name is DatasetName.FUNSD:
        return [parse_funsd(f) for f in files]
    if spec.name is DatasetName.CORD:
        return [parse_cord(f, spec) for f in files]
    raise SchemaError(f"no file parser for {spec.name.value}")


# -- canonical JSON --------------------------------------------------------------

def document_to_dict(doc: Document) -> dict[str, Any]:
    return {
        "doc_id": doc.doc_id,
        "relation_kind": doc.relation_kind.value,
        "page_size": list(doc.page_size),
        "image_path": doc.image_path,
        "segments": [
            {
                "segment_id": s.segment_id,
                "tokens": list(s.tokens),
                "box": list(s.box.as_tuple()),
                "word_boxes": [list(b.as_tuple()) for b in s.word_boxes],
            }
            for s in doc.segments
        ],
        "entities": [
            {"entity_id": e.entity_id, "span": list(e.span), "label": e.label, "group_id": e.group_id}
            for e in doc.entities
        ],
        "links": [list(link) for link in doc.links],
    }


def document_from_dict(data: dict[str, Any]) -> Document:
    try:
        return Document(
            doc_id=data["doc_id"],
            segments=[
                Segment(s["segment_id"], s["tokens"], BBox(*s["box"]), [BBox(*b) for b in s["word_boxes"]])
                for s in data["segments"]
            ],
            entities=[
                Entity(e["entity_id"], tuple(e["span"]), e["label"], e.get("group_id"))
                for e in data["entities"]
            ],
            links=[tuple(link) for link in data["links"]],
            relation_kind=RelationKind(data["relation_kind"]),
            page_size=tuple(data.get("page_size", (COORD_MAX, COORD_MAX))),
            image_path=data.get("image_path"),
        )
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"malformed document JSON: {exc}") from exc


def dump_document(doc: Document, path: PathLike) -> None:
    Path(path).write_text(json.dumps(document_to_dict(doc), indent=1, ensure_ascii=False) + "\n", encoding="utf-8")


def load_document(path: PathLike) -> Document:
    return document_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def iter_documents(directory: PathLike) -> Iterator[Document]:
    for path in sorted(Path(directory).glob("*.json")):
        yield load_document(path)
