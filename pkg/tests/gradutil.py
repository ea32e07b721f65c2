"""Central finite-difference check of the joint loss against autograd."""

import numpy as np
import torch

from vrdre.backbone import ToyEncoderConfig
from vrdre.config import ExperimentConfig
from vrdre.core import BBox, Document, Entity, RelationKind, Segment
from vrdre.ingest import FUNSD_LABELS
from vrdre.train import RelationModel

SMALL_BACKBONE = dict(hidden_dim=16, layers=1, heads=2, ff_dim=16, vocab_size=40, max_len=32, coord_buckets=16)


def tiny_document() -> Document:
    """Five entities; entity 4 has two gold parents so the variance term is active."""
    rows = [("Name:", "question"), ("Bob", "answer"), ("Date:", "question"), ("FORM", "header"), ("x", "answer")]
    segments, entities = [], []
    for k, (word, label) in enumerate(rows):
        box = BBox(k, 2 * k, k + 3, 2 * k + 1)
        segments.append(Segment(k, [word], box, [box]))
        entities.append(Entity(k, (k, 0, 0), label))
    links = [(0, 1), (0, 4), (2, 4), (3, 0)]
    return Document("tiny", segments, entities, links, RelationKind.KEY_VALUE)


def tiny_model(seed: int = 0, lc: bool = True) -> RelationModel:
    config = ExperimentConfig.from_dict({
        "dtype": "float64",
        "d_proj": 8,
        "max_len": 32,
        "strategies": {"eef": True, "variance_loss": True, "lc": lc},
        "backbone": SMALL_BACKBONE,
        "loss_weights": {"re": 1.0, "ee": 0.7, "var": 2.0},
    })
    return RelationModel(config, FUNSD_LABELS, torch.Generator().manual_seed(seed))


def check_gradients(model: RelationModel, doc: Document, h: float = 1e-5):
    """Return {parameter name: relative error} and the used/unused zero-gradient check."""
    feats = model.featurize(model.prepare(doc))

    def loss_fn():
        components = model.losses(feats)
        assert set(components) == {"re", "ee", "var"}
        assert float(components["var"].detach()) > 0
        return model.total_loss(components)

    model.zero_grad()
    loss_fn().backward()
    analytic = {name: p.grad.detach().clone() for name, p in model.named_parameters()}
    errors = {}
    with torch.no_grad():
        for name, p in model.named_parameters():
            flat = p.view(-1)
            numeric = torch.zeros_like(flat)
            for k in range(flat.numel()):
                old = flat[k].item()
                flat[k] = old + h
                up = loss_fn().item()
                flat[k] = old - h
                down = loss_fn().item()
                flat[k] = old
                numeric[k] = (up - down) / (2 * h)
            a = analytic[name].view(-1)
            scale = max(a.norm().item(), numeric.norm().item())
            errors[name] = 0.0 if scale < 1e-12 else (a - numeric).norm().item() / scale
    return errors, analytic


def unused_token_rows(model: RelationModel, doc: Document) -> np.ndarray:
    feats = model.featurize(model.prepare(doc))
    used = set(np.concatenate([f.window.token_ids for f in feats]).tolist())
    return np.array([r for r in range(model.encoder.config.vocab_size) if r not in used])
