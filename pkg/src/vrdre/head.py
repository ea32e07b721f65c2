"""Bilinear relation scorer, entity-extraction classifier and losses."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence, Union

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .core import RelationMatrix


@dataclass(frozen=True, eq=False)
class ProbMatrix:
    """Relation probabilities ``probs[child, parent]`` plus the mask of scored cells."""

    probs: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        mask = np.asarray(self.mask, dtype=bool)
        if probs.ndim != 2 or probs.shape[0] != probs.shape[1] or mask.shape != probs.shape:
            raise ValueError(f"probs {probs.shape} / mask {mask.shape} must be equal square shapes")
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "mask", mask)

    @property
    def n(self) -> int:
        return self.probs.shape[0]

    @classmethod
    def full(cls, probs) -> "ProbMatrix":
        """All off-diagonal cells valid."""
        probs = np.asarray(probs, dtype=np.float64)
        return cls(probs, ~np.eye(probs.shape[0], dtype=bool))


class RelationHead(nn.Module):
    """Child / parent projections fused by an asymmetric bilinear form.

    ``score[i, j] = (W_p e_j + b_p) A (W_c e_i + b_c)^T`` and
    ``P[i, j] = sigmoid(score[i, j])`` is the probability that ``j`` is the
    parent of ``i``. Also carries the per-token IOB classifier.
    """

    def __init__(self, d_in: int, n_tags: int = 0, d_proj: int = 128,
                 generator: Optional[torch.Generator] = None):
        super().__init__()
        self.d_in, self.d_proj, self.n_tags = d_in, d_proj, n_tags
        self.child = nn.Linear(d_in, d_proj)
        self.parent = nn.Linear(d_in, d_proj)
        self.bilinear = nn.Parameter(torch.empty(d_proj, d_proj))
        self.tagger = nn.Linear(d_in, n_tags) if n_tags else None
        self.reset_parameters(generator)

    @torch.no_grad()
    def reset_parameters(self, generator: Optional[torch.Generator] = None):
        for lin in (self.child, self.parent, self.tagger):
            if lin is None:
                continue
            bound = 1 / math.sqrt(lin.in_features)
            lin.weight.uniform_(-bound, bound, generator=generator)
            lin.bias.zero_()
        bound = 1 / math.sqrt(self.d_proj)
        self.bilinear.uniform_(-bound, bound, generator=generator)

    def logits(self, entity_emb: torch.Tensor) -> torch.Tensor:
        """Raw bilinear scores, shape (n, n); rows are children, columns parents."""
        c = self.child(entity_emb)
        p = self.parent(entity_emb)
        return c @ self.bilinear.T @ p.T

    def tag_logits(self, hidden: torch.Tensor) -> torch.Tensor:
        if self.tagger is None:
            raise RuntimeError("head was built without an entity-extraction classifier")
        return self.tagger(hidden)


def relation_scores(entity_emb: Union[torch.Tensor, np.ndarray], head: RelationHead) -> ProbMatrix:
    emb = torch.as_tensor(entity_emb, dtype=head.bilinear.dtype)
    if emb.ndim != 2 or emb.shape[0] < 1:
        raise ValueError("need at least one entity embedding")
    if not torch.isfinite(emb).all():
        raise ValueError("entity embeddings contain non-finite values")
    with torch.no_grad():
        probs = torch.sigmoid(head.logits(emb)).double().numpy()
    return ProbMatrix.full(probs)


def _valid_mask(n: int, mask=None) -> torch.Tensor:
    off_diag = ~torch.eye(n, dtype=torch.bool)
    if mask is None:
        return off_diag
    return off_diag & torch.as_tensor(mask, dtype=torch.bool)


def _as_gold(gold, dtype) -> torch.Tensor:
    if isinstance(gold, RelationMatrix):
        gold = gold.cells
    if isinstance(gold, torch.Tensor):
        return gold.to(dtype)
    return torch.as_tensor(np.array(gold, dtype=np.float64), dtype=dtype)


def relation_bce_loss(probs, gold, mask=None) -> torch.Tensor:
    """Mean binary cross-entropy over valid (off-diagonal, unmasked) cells."""
    if isinstance(probs, ProbMatrix):
        mask = probs.mask if mask is None else mask
        probs = torch.as_tensor(probs.probs)
    gold = _as_gold(gold, probs.dtype)
    if gold.shape != probs.shape:
        raise ValueError(f"prob shape {tuple(probs.shape)} != gold shape {tuple(gold.shape)}")
    valid = _valid_mask(probs.shape[0], mask)
    p, y = probs[valid], gold[valid]
    if p.numel() == 0:
        return probs.new_zeros(())
    if ((p <= 0) | (p >= 1)).any():
        raise FloatingPointError("probabilities must lie strictly inside (0, 1)")
    return -(y * torch.log(p) + (1 - y) * torch.log1p(-p)).mean()


def relation_bce_with_logits(logits: torch.Tensor, gold, mask=None) -> torch.Tensor:
    """Same loss as :func:`relation_bce_loss`, computed stably from raw scores."""
    gold = _as_gold(gold, logits.dtype)
    valid = _valid_mask(logits.shape[0], mask)
    if not valid.any():
        return logits.new_zeros(())
    return F.binary_cross_entropy_with_logits(logits[valid], gold[valid])


def ee_loss(hidden: torch.Tensor, gold_tags: Sequence[str], head: RelationHead,
            tagset: Sequence[str], mask=None) -> tuple[torch.Tensor, torch.Tensor]:
    """Token-level cross-entropy of the IOB classifier.

    Returns the loss averaged over unmasked tokens and the per-token tag
    probabilities (T, C).
    """
    index = {tag: k for k, tag in enumerate(tagset)}
    try:
        target = torch.tensor([index[t] for t in gold_tags], dtype=torch.long)
    except KeyError as exc:
        raise ValueError(f"unknown gold tag {exc.args[0]!r}") from None
    if len(target) != hidden.shape[0]:
        raise ValueError(f"{hidden.shape[0]} hidden states for {len(target)} tags")
    logits = head.tag_logits(hidden)
    return ee_loss_from_logits(logits, target, mask), logits.softmax(dim=-1)


def ee_loss_from_logits(logits: torch.Tensor, target: torch.Tensor, mask=None) -> torch.Tensor:
    nll = F.cross_entropy(logits.reshape(-1, logits.shape[-1]), target.reshape(-1), reduction="none")
    if mask is None:
        return nll.mean()
    keep = torch.as_tensor(mask, dtype=nll.dtype).reshape(-1)
    return (nll * keep).sum() / keep.sum().clamp_min(1)


def variance_loss(probs, gold) -> torch.Tensor:
    """Mean, over children with two or more gold parents, of the population
    variance of the probabilities assigned to those parents."""
    if isinstance(probs, ProbMatrix):
        probs = torch.as_tensor(probs.probs)
    probs = torch.as_tensor(probs)
    parents = _as_gold(gold, probs.dtype).clone()
    parents.fill_diagonal_(0)
    counts = parents.sum(dim=1)
    rows = counts >= 2
    if not rows.any():
        return probs.new_zeros(())
    w, p, k = parents[rows], probs[rows], counts[rows]
    # variance is shift invariant; centring on one gold value makes flat rows exactly zero
    ref = (p * w).detach().gather(1, w.argmax(dim=1, keepdim=True))
    p = p - ref
    mean = (w * p).sum(dim=1) / k
    var = (w * (p - mean[:, None]) ** 2).sum(dim=1) / k
    return var.mean()


def joint_loss(components: Union[Sequence, Mapping], weights: Union[Sequence, Mapping, None] = None):
    """Weighted sum of loss components (tensors or floats)."""
    if isinstance(components, Mapping):
        weights = weights or {}
        if any(w < 0 for w in weights.values()):
            raise ValueError("loss weights must be non-negative")
        return sum(weights.get(name, 1.0) * value for name, value in components.items())
    weights = [1.0] * len(components) if weights is None else list(weights)
    if len(weights) != len(components):
        raise ValueError("one weight per component required")
    if any(w < 0 for w in weights):
        raise ValueError("loss weights must be non-negative")
    return sum(w * c for w, c in zip(weights, components))
