"""Model assembly, training loop, prediction and evaluation."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np
import torch
from torch import nn

from .backbone import Pooling, ToyEncoder, concat_layout_lc, load_checkpoint, save_checkpoint
from .config import ConfigError, DatasetConfig, ExperimentConfig
from .core import Document, RelationKind
from .decode import rsf_decode, symmetrize, threshold_decode
from .head import ProbMatrix, RelationHead, ee_loss_from_logits, joint_loss, relation_bce_with_logits, variance_loss
from .ingest import CORD_LABELS, FUNSD_LABELS, DatasetName, DatasetSpec, Split, load_split
from .metrics import DocPrediction, MetricsReport, evaluate_entities, evaluate_relations
from .preprocess import (
    MarkerMode,
    MarkerScheme,
    Window,
    build_tagset,
    inject_entity_markers,
    iob_gold_tags,
    order_segments_bbo,
    shuffle_segments_bbs,
    tokenize_and_window,
)
from .synthetic import generate_corpus
from .tokenization import HashingTokenizer

logger = logging.getLogger(__name__)

SELECTION_RULE = "best held-out relation F1 (earliest step on ties)"


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, loss: float):
        super().__init__(f"non-finite loss {loss} at step {step}")
        self.step = step


# -- data -------------------------------------------------------------------------

def dataset_label_set(ds: DatasetConfig) -> tuple[str, ...]:
    if ds.label_set:
        return tuple(ds.label_set)
    return CORD_LABELS if DatasetName(ds.name) is DatasetName.CORD else FUNSD_LABELS


def dataset_kind(ds: DatasetConfig) -> RelationKind:
    return RelationKind.GROUP if DatasetName(ds.name) is DatasetName.CORD else RelationKind.KEY_VALUE


def load_documents(ds: DatasetConfig, split: Union[str, Split]) -> list[Document]:
    split = Split(split)
    name = DatasetName(ds.name)
    if name is DatasetName.SYNTHETIC:
        if not 0 < ds.n_test < ds.n_docs:
            raise ConfigError("synthetic corpus needs 0 < n_test < n_docs")
        corpus = generate_corpus(ds.n_docs, ds.corpus_seed)
        if split is Split.test:
            return corpus[ds.n_docs - ds.n_test:]
        if split is Split.train:
            return corpus[: ds.n_docs - ds.n_test]
        raise ConfigError("synthetic corpus has no validation split")
    spec = DatasetSpec(name, ds.root, split, dataset_label_set(ds), ds.group_key)
    return load_split(spec, split)


def has_validation_split(ds: DatasetConfig) -> bool:
    return DatasetName(ds.name) is DatasetName.CORD


# -- model ------------------------------------------------------------------------

@dataclass
class WindowFeatures:
    window: Window
    entity_ids: np.ndarray
    spans: list[tuple[int, int]]
    gold: np.ndarray  # (k, k) child-row / parent-column
    tag_ids: Optional[np.ndarray] = None


class RelationModel(nn.Module):
    """Encoder + optional layout concatenation + relation / IOB head."""

    def __init__(self, config: ExperimentConfig, label_set: Sequence[str],
                 generator: Optional[torch.Generator] = None, encoder: Optional[nn.Module] = None):
        super().__init__()
        self.config = config
        self.label_set = tuple(label_set)
        self.tagset = build_tagset(self.label_set)
        self.tokenizer = HashingTokenizer(vocab_size=config.backbone.vocab_size)
        self.encoder = encoder if encoder is not None else ToyEncoder(config.backbone, generator)
        d_in = self.encoder.hidden_dim + (4 if config.strategies.lc else 0)
        n_tags = len(self.tagset) if config.strategies.eef else 0
        self.head = RelationHead(d_in, n_tags, config.d_proj, generator)
        self.pooling = Pooling(config.pooling)
        if config.dtype == "float64":
            self.double()

    @property
    def dtype(self) -> torch.dtype:
        return self.head.bilinear.dtype

    def marker_scheme(self) -> Optional[MarkerScheme]:
        mode = MarkerMode(self.config.strategies.em)
        if mode is MarkerMode.NONE:
            return None
        return MarkerScheme.for_labels(self.label_set, mode, markers_in_span=self.config.markers_in_span)

    def prepare(self, doc: Document) -> Document:
        """Deterministic input transforms (entity markers, box ordering)."""
        scheme = self.marker_scheme()
        if scheme is not None:
            doc = inject_entity_markers(doc, scheme)
        if self.config.strategies.bbo:
            doc = order_segments_bbo(doc)
        return doc

    def featurize(self, doc: Document) -> list[WindowFeatures]:
        windows = tokenize_and_window(doc, self.tokenizer, self.config.max_len, self.config.stride)
        gold = doc.gold_matrix().cells.astype(np.float64)
        tag_index = {t: k for k, t in enumerate(self.tagset)}
        feats = []
        for w in windows:
            ids = np.asarray(w.entity_ids, dtype=np.int64)
            spans = [(first, last) for _, first, last, _ in w.entity_table]
            tags = None
            if self.head.tagger is not None:
                tags = np.asarray([tag_index[t] for t in iob_gold_tags(w)], dtype=np.int64)
            feats.append(WindowFeatures(w, ids, spans, gold[np.ix_(ids, ids)], tags))
        return feats

    def hidden_states(self, feats: Sequence[WindowFeatures]) -> tuple[torch.Tensor, torch.Tensor]:
        """Padded batch forward; returns (B, T, d_in) states and the (B, T) mask."""
        T = max(len(f.window) for f in feats)
        B = len(feats)
        ids = torch.zeros(B, T, dtype=torch.long)
        boxes = torch.zeros(B, T, 4, dtype=torch.long)
        mask = torch.zeros(B, T, dtype=torch.long)
        for b, f in enumerate(feats):
            n = len(f.window)
            ids[b, :n] = torch.from_numpy(f.window.token_ids)
            boxes[b, :n] = torch.from_numpy(f.window.token_boxes)
            mask[b, :n] = torch.from_numpy(f.window.attention_mask)
        hidden = self.encoder(ids, boxes, mask)
        if self.config.strategies.lc:
            hidden = concat_layout_lc(hidden, boxes)
        return hidden, mask

    def entity_embeddings(self, hidden: torch.Tensor, feat: WindowFeatures) -> torch.Tensor:
        if not feat.spans:
            return hidden.new_zeros((0, hidden.shape[-1]))
        first = torch.tensor([s[0] for s in feat.spans])
        if self.pooling is Pooling.FIRST:
            return hidden[first]
        last = torch.tensor([s[1] for s in feat.spans])
        positions = torch.arange(hidden.shape[0])
        member = ((positions[None] >= first[:, None]) & (positions[None] <= last[:, None])).to(hidden.dtype)
        return member @ hidden / member.sum(dim=1, keepdim=True)

    def losses(self, feats: Sequence[WindowFeatures]) -> dict[str, torch.Tensor]:
        """Loss components for a batch of windows."""
        hidden, mask = self.hidden_states(feats)
        strategies = self.config.strategies
        re_terms, var_terms = [], []
        for b, f in enumerate(feats):
            if len(f.spans) < 2:
                continue
            logits = self.head.logits(self.entity_embeddings(hidden[b], f))
            gold = torch.from_numpy(f.gold).to(logits.dtype)
            re_terms.append(relation_bce_with_logits(logits, gold))
            if strategies.variance_loss and (gold.sum(dim=1) >= 2).any():
                var_terms.append(variance_loss(torch.sigmoid(logits), gold))
        zero = hidden.new_zeros(())
        components = {"re": torch.stack(re_terms).mean() if re_terms else zero}
        if strategies.eef:
            target = torch.zeros(mask.shape, dtype=torch.long)
            for b, f in enumerate(feats):
                target[b, : len(f.tag_ids)] = torch.from_numpy(f.tag_ids)
            components["ee"] = ee_loss_from_logits(self.head.tag_logits(hidden), target, mask)
        if strategies.variance_loss:
            components["var"] = torch.stack(var_terms).mean() if var_terms else zero
        return components

    def total_loss(self, components: dict[str, torch.Tensor]) -> torch.Tensor:
        w = self.config.loss_weights
        return joint_loss(components, {"re": w.re, "ee": w.ee, "var": w.var})

    @torch.no_grad()
    def predict_windows(self, feats: Sequence[WindowFeatures]) -> list[tuple[np.ndarray, Optional[np.ndarray]]]:
        """Per window: relation probabilities (k, k) and, with EEF, tag ids per token."""
        if not feats:
            return []
        hidden, _ = self.hidden_states(feats)
        out = []
        for b, f in enumerate(feats):
            emb = self.entity_embeddings(hidden[b], f)
            probs = torch.sigmoid(self.head.logits(emb)).double().numpy() if len(f.spans) else np.zeros((0, 0))
            tags = None
            if self.head.tagger is not None:
                tags = self.head.tag_logits(hidden[b, : len(f.window)]).argmax(dim=-1).numpy()
            out.append((probs, tags))
        return out


# -- prediction ---------------------------------------------------------------------

@dataclass
class DocScores:
    doc_id: str
    probs: ProbMatrix
    windows: list[list[int]]
    pred_tags: list[list[str]] = field(default_factory=list)
    gold_tags: list[list[str]] = field(default_factory=list)


def score_documents(model: RelationModel, docs: Sequence[Document]) -> dict[str, DocScores]:
    model.eval()
    scores = {}
    for doc in docs:
        prepared = model.prepare(doc)
        feats = model.featurize(prepared)
        n = doc.n_entities
        probs = np.zeros((n, n))
        mask = np.zeros((n, n), dtype=bool)
        pred_tags, gold_tags = [], []
        for f, (p, tags) in zip(feats, model.predict_windows(feats)):
            ix = np.ix_(f.entity_ids, f.entity_ids)
            probs[ix] = np.where(mask[ix], np.maximum(probs[ix], p), p)
            mask[ix] = True
            if tags is not None:
                pred_tags.append([model.tagset[t] for t in tags])
                gold_tags.append([model.tagset[t] for t in f.tag_ids])
        np.fill_diagonal(mask, False)
        scores[doc.doc_id] = DocScores(
            doc.doc_id, ProbMatrix(probs, mask), [f.entity_ids.tolist() for f in feats], pred_tags, gold_tags
        )
    return scores


def decode_scores(scores: dict[str, DocScores], kind: RelationKind, rsf: bool = False,
                  tau: float = 0.1) -> dict[str, DocPrediction]:
    predictions = {}
    for doc_id, s in scores.items():
        P = symmetrize(s.probs) if kind is RelationKind.GROUP else s.probs
        R = rsf_decode(P, tau) if rsf else threshold_decode(P)
        relations = [(c, p, float(P.probs[c, p])) for c, p in sorted(R.pairs())]
        predictions[doc_id] = DocPrediction(doc_id, P.n, relations, s.windows)
    return predictions


def evaluate(model: RelationModel, docs: Sequence[Document], rsf: Optional[bool] = None,
             tau: Optional[float] = None, scores: Optional[dict[str, DocScores]] = None,
             ) -> tuple[MetricsReport, dict[str, DocPrediction]]:
    """Score, decode and evaluate ``docs``; decode flags default to the model's config."""
    config = model.config
    rsf = config.strategies.rsf if rsf is None else rsf
    tau = config.tau if tau is None else tau
    kind = docs[0].relation_kind if docs else dataset_kind(config.dataset)
    scores = scores if scores is not None else score_documents(model, docs)
    predictions = decode_scores(scores, kind, rsf, tau)
    report = evaluate_relations(predictions, docs, kind)
    if config.strategies.eef:
        pred = [t for s in scores.values() for t in s.pred_tags]
        gold = [t for s in scores.values() for t in s.gold_tags]
        report.entity = evaluate_entities(pred, gold)
    report.extra.update({"rsf": bool(rsf), "tau": float(tau)})
    return report, predictions


# -- training -------------------------------------------------------------------------

@dataclass
class TrainResult:
    model: RelationModel
    log: list[dict]
    best_step: int
    best_val_f1: Optional[float]
    selection_rule: str = SELECTION_RULE


def _rng_streams(seed: int):
    init_ss, order_ss, bbs_ss, split_ss = np.random.SeedSequence(seed).spawn(4)
    torch_gen = torch.Generator().manual_seed(int(init_ss.generate_state(1, dtype=np.uint64)[0] >> 1))
    return (torch_gen, np.random.default_rng(order_ss), np.random.default_rng(bbs_ss),
            np.random.default_rng(split_ss))


def split_held_out(docs: Sequence[Document], fraction: float, rng: np.random.Generator):
    n_val = int(round(len(docs) * fraction))
    if n_val == 0 or len(docs) - n_val < 1:
        return list(docs), []
    perm = rng.permutation(len(docs))
    val_idx = set(perm[:n_val].tolist())
    train = [d for i, d in enumerate(docs) if i not in val_idx]
    val = [d for i, d in enumerate(docs) if i in val_idx]
    return train, val


def train(
    config: ExperimentConfig,
    documents: Optional[Sequence[Document]] = None,
    validation: Optional[Sequence[Document]] = None,
    log_path: Optional[Union[str, Path]] = None,
    encoder: Optional[nn.Module] = None,
) -> TrainResult:
    """Fit the model with Adam on the joint loss; keep the best held-out checkpoint."""
    config.validate()
    torch_gen, order_rng, bbs_rng, split_rng = _rng_streams(config.seed)
    if documents is None:
        documents = load_documents(config.dataset, config.dataset.train_split)
    documents = list(documents)
    if validation is None:
        if has_validation_split(config.dataset) and config.dataset.root:
            validation = load_documents(config.dataset, Split.validation)
        else:
            documents, validation = split_held_out(documents, config.held_out_fraction, split_rng)
    if not documents:
        raise ConfigError("training split is empty")

    model = RelationModel(config, dataset_label_set(config.dataset), torch_gen, encoder)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.lr)
    prepared = [model.prepare(d) for d in documents]
    cached = None if config.strategies.bbs else [model.featurize(d) for d in prepared]

    log: list[dict] = []
    log_file = open(log_path, "w", encoding="utf-8") if log_path else None
    best_state, best_f1, best_step = None, None, config.steps
    order: list[int] = []
    try:
        for step in range(1, config.steps + 1):
            model.train()
            batch = []
            while len(batch) < config.batch_size:
                if not order:
                    order = order_rng.permutation(len(prepared)).tolist()
                batch.append(order.pop(0))
            feats = []
            for i in batch:
                if cached is not None:
                    feats.extend(cached[i])
                    continue
                shuffled = shuffle_segments_bbs(prepared[i], bbs_rng)
                if shuffled.gold_matrix() != prepared[i].gold_matrix():
                    raise AssertionError(f"box shuffling changed gold relations of {prepared[i].doc_id}")
                feats.extend(model.featurize(shuffled))
            components = model.losses(feats)
            loss = model.total_loss(components)
            value = float(loss.detach())
            if not math.isfinite(value):
                raise TrainingDiverged(step, value)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            record = {"step": step, "loss": value, "components": {k: float(v.detach()) for k, v in components.items()}}
            log.append(record)
            if log_file:
                log_file.write(json.dumps(record) + "\n")

            if validation and (step % config.eval_every == 0 or step == config.steps):
                report, _ = evaluate(model, validation)
                logger.info("step %d loss %.4f held-out F1 %.4f", step, value, report.f1)
                if best_f1 is None or report.f1 > best_f1:
                    best_f1, best_step = report.f1, step
                    best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
    finally:
        if log_file:
            log_file.close()
    if best_state is not None:
        model.load_state_dict(best_state)
    model.eval()
    return TrainResult(model, log, best_step, best_f1)


# -- checkpoints ------------------------------------------------------------------------

def save_model(path: Union[str, Path], result_or_model, extra: Optional[dict] = None) -> None:
    model = result_or_model.model if isinstance(result_or_model, TrainResult) else result_or_model
    meta = {
        "experiment": model.config.to_dict(),
        "label_set": list(model.label_set),
        "tagset": list(model.tagset),
        "tokenizer": model.tokenizer.config(),
    }
    if isinstance(result_or_model, TrainResult):
        meta["selection"] = {"rule": result_or_model.selection_rule, "best_step": result_or_model.best_step,
                             "best_val_f1": result_or_model.best_val_f1}
    meta.update(extra or {})
    save_checkpoint(path, meta, model.state_dict())


def load_model(path: Union[str, Path]) -> tuple[RelationModel, dict]:
    meta, params = load_checkpoint(path)
    config = ExperimentConfig.from_dict(meta["experiment"])
    model = RelationModel(config, meta["label_set"])
    state = {k: torch.from_numpy(v).to(model.state_dict()[k].dtype) for k, v in params.items()}
    model.load_state_dict(state)
    model.eval()
    return model, meta
