"""Token encoders (embedding providers), layout concatenation, entity pooling
and the checkpoint archive format."""

from __future__ import annotations

import enum
import io
import json
import math
import zipfile
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Protocol, Sequence, Union

import numpy as np
import torch
from torch import nn

from .core import COORD_MAX, coerce_enum
from .preprocess import Window

CHECKPOINT_FORMAT_VERSION = 1


class EmbeddingProvider(Protocol):
    hidden_dim: int

    def encode(self, window: Window, image_features: Optional[torch.Tensor] = None) -> torch.Tensor:
        """Per-token hidden states, shape (len(window), hidden_dim)."""
        ...


@dataclass(frozen=True)
class ToyEncoderConfig:
    hidden_dim: int = 128
    layers: int = 2
    heads: int = 4
    ff_dim: int = 256
    vocab_size: int = 32768
    max_len: int = 512
    coord_buckets: int = COORD_MAX + 1
    # sinusoidal init for position / coordinate tables; "normal" for plain random
    layout_init: str = "sinusoidal"


def _sinusoid_block(n_positions: int, width: int, base: float = 10000.0) -> torch.Tensor:
    pos = torch.arange(n_positions, dtype=torch.float64)[:, None]
    i = torch.arange((width + 1) // 2, dtype=torch.float64)[None, :]
    angles = pos / base ** (2 * i / max(width, 1))
    table = torch.zeros(n_positions, width, dtype=torch.float64)
    table[:, 0::2] = torch.sin(angles)[:, : table[:, 0::2].shape[1]]
    table[:, 1::2] = torch.cos(angles)[:, : table[:, 1::2].shape[1]]
    return table


class EncoderLayer(nn.Module):
    """Post-norm transformer layer: full self-attention, then a GELU feed-forward."""

    def __init__(self, d: int, heads: int, ff_dim: int):
        super().__init__()
        if d % heads:
            raise ValueError(f"hidden_dim {d} not divisible by heads {heads}")
        self.heads = heads
        self.qkv = nn.Linear(d, 3 * d)
        self.out = nn.Linear(d, d)
        self.norm1 = nn.LayerNorm(d)
        self.ff1 = nn.Linear(d, ff_dim)
        self.ff2 = nn.Linear(ff_dim, d)
        self.norm2 = nn.LayerNorm(d)

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        B, T, d = x.shape
        h = self.heads
        q, k, v = self.qkv(x).view(B, T, 3, h, d // h).permute(2, 0, 3, 1, 4)
        scores = q @ k.transpose(-1, -2) / math.sqrt(d // h)
        scores = scores.masked_fill(~mask[:, None, None, :], torch.finfo(scores.dtype).min)
        attn = scores.softmax(dim=-1)
        ctx = (attn @ v).transpose(1, 2).reshape(B, T, d)
        x = self.norm1(x + self.out(ctx))
        return self.norm2(x + self.ff2(nn.functional.gelu(self.ff1(x))))


class ToyEncoder(nn.Module):
    """Small layout-aware encoder trained from scratch.

    Input embedding = token + 1D position + four coordinate-bucket tables
    (x0, y0, x1, y1), followed by ``layers`` transformer layers.
    """

    def __init__(self, config: ToyEncoderConfig = ToyEncoderConfig(), generator: Optional[torch.Generator] = None):
        super().__init__()
        self.config = config
        d = config.hidden_dim
        self.hidden_dim = d
        self.tok_emb = nn.Embedding(config.vocab_size, d)
        self.pos_emb = nn.Embedding(config.max_len, d)
        self.x0_emb = nn.Embedding(config.coord_buckets, d)
        self.y0_emb = nn.Embedding(config.coord_buckets, d)
        self.x1_emb = nn.Embedding(config.coord_buckets, d)
        self.y1_emb = nn.Embedding(config.coord_buckets, d)
        self.emb_norm = nn.LayerNorm(d)
        self.layers = nn.ModuleList(EncoderLayer(d, config.heads, config.ff_dim) for _ in range(config.layers))
        self.reset_parameters(generator)

    @torch.no_grad()
    def reset_parameters(self, generator: Optional[torch.Generator] = None):
        for module in self.modules():
            if isinstance(module, nn.Linear):
                bound = 1 / math.sqrt(module.in_features)
                module.weight.uniform_(-bound, bound, generator=generator)
                module.bias.zero_()
            elif isinstance(module, nn.LayerNorm):
                module.weight.fill_(1.0)
                module.bias.zero_()
        self.tok_emb.weight.normal_(0.0, 1.0, generator=generator)
        tables = [self.pos_emb, self.x0_emb, self.y0_emb, self.x1_emb, self.y1_emb]
        if self.config.layout_init == "sinusoidal":
            # each table gets its own block of dimensions so the sum stays decodable
            d = self.hidden_dim
            bounds = np.linspace(0, d, len(tables) + 1).astype(int)
            for table, lo, hi in zip(tables, bounds[:-1], bounds[1:]):
                table.weight.zero_()
                table.weight[:, lo:hi] = _sinusoid_block(table.num_embeddings, hi - lo).to(table.weight.dtype)
        else:
            for table in tables:
                table.weight.normal_(0.0, 1.0, generator=generator)

    def forward(self, token_ids: torch.Tensor, boxes: torch.Tensor, mask: torch.Tensor,
                image_features: Optional[torch.Tensor] = None) -> torch.Tensor:
        """Batched forward: ids (B, T), boxes (B, T, 4), mask (B, T) -> (B, T, d).

        ``image_features`` is accepted for interface compatibility and ignored.
        """
        B, T = token_ids.shape
        if T > self.config.max_len:
            raise ValueError(f"{T} tokens exceed max_len={self.config.max_len}")
        boxes = boxes.clamp(0, self.config.coord_buckets - 1)
        positions = torch.arange(T, device=token_ids.device)
        x = (
            self.tok_emb(token_ids)
            + self.pos_emb(positions)[None]
            + self.x0_emb(boxes[..., 0])
            + self.y0_emb(boxes[..., 1])
            + self.x1_emb(boxes[..., 2])
            + self.y1_emb(boxes[..., 3])
        )
        x = self.emb_norm(x)
        mask = mask.bool()
        for layer in self.layers:
            x = layer(x, mask)
        return x

    def encode(self, window: Window, image_features: Optional[torch.Tensor] = None) -> torch.Tensor:
        if len(window) > self.config.max_len:
            raise ValueError(f"window has {len(window)} tokens, max_len={self.config.max_len}")
        ids = torch.as_tensor(window.token_ids)[None]
        boxes = torch.as_tensor(window.token_boxes)[None]
        mask = torch.as_tensor(window.attention_mask)[None]
        return self(ids, boxes, mask)[0]


class PretrainedLayoutProvider(nn.Module):
    """Adapter exposing a ``transformers`` layout model (e.g. LayoutLMv3) as an EmbeddingProvider."""

    def __init__(self, model: nn.Module):
        super().__init__()
        self.model = model
        self.hidden_dim = model.config.hidden_size

    def forward(self, token_ids, boxes, mask, image_features=None):
        kwargs = {"input_ids": token_ids, "bbox": boxes, "attention_mask": mask}
        if image_features is not None:
            kwargs["pixel_values"] = image_features
        return self.model(**kwargs).last_hidden_state[:, : token_ids.shape[1]]

    def encode(self, window: Window, image_features=None) -> torch.Tensor:
        ids = torch.as_tensor(window.token_ids)[None]
        boxes = torch.as_tensor(window.token_boxes)[None]
        mask = torch.as_tensor(window.attention_mask)[None]
        return self(ids, boxes, mask, image_features)[0]


# -- layout concatenation and pooling ---------------------------------------------

def concat_layout_lc(hidden: torch.Tensor, token_boxes: Union[torch.Tensor, np.ndarray]) -> torch.Tensor:
    """Append each token's coordinates, scaled to [0, 1], to its hidden state."""
    boxes = torch.as_tensor(token_boxes)
    if boxes.shape[:-1] != hidden.shape[:-1] or boxes.shape[-1] != 4:
        raise ValueError(f"hidden {tuple(hidden.shape)} and boxes {tuple(boxes.shape)} do not align")
    return torch.cat([hidden, boxes.to(hidden.dtype) / COORD_MAX], dim=-1)


class Pooling(str, enum.Enum):
    FIRST = "FIRST"
    MEAN = "MEAN"


def pool_entity(hidden: torch.Tensor, span: Sequence[int], mode: Pooling = Pooling.FIRST) -> torch.Tensor:
    """Entity embedding from an inclusive token span ``(first, last)``."""
    first, last = int(span[0]), int(span[1])
    if last < first:
        raise ValueError(f"empty span {tuple(span)}")
    if first < 0 or last >= hidden.shape[0]:
        raise ValueError(f"span {tuple(span)} outside {hidden.shape[0]} tokens")
    if coerce_enum(Pooling, mode) is Pooling.FIRST:
        return hidden[first]
    return hidden[first:last + 1].mean(dim=0)


def pool_entities(hidden: torch.Tensor, spans: Sequence[Sequence[int]], mode: Pooling = Pooling.FIRST) -> torch.Tensor:
    if not len(spans):
        return hidden.new_zeros((0, hidden.shape[-1]))
    return torch.stack([pool_entity(hidden, s, mode) for s in spans])


# -- checkpoints ---------------------------------------------------------------------
#
# A checkpoint is a zip archive with two members:
#   manifest.json  {"format_version", "config", "tensors": [{"name", "shape", "offset", "count"}]}
#   tensors.bin    all tensors back to back, row-major, little-endian float64
# Member timestamps are fixed so identical parameters give identical bytes.

_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)


def save_checkpoint(path: Union[str, Path], config: dict, params: dict) -> None:
    entries = []
    blob = io.BytesIO()
    offset = 0
    for name in sorted(params):
        value = params[name]
        if isinstance(value, torch.Tensor):
            value = value.detach().cpu().numpy()
        arr = np.ascontiguousarray(value, dtype="<f8")
        blob.write(arr.tobytes(order="C"))
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "count": int(arr.size)})
        offset += arr.size
    manifest = {"format_version": CHECKPOINT_FORMAT_VERSION, "dtype": "<f8", "config": config, "tensors": entries}
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        for member, data in (
            ("manifest.json", json.dumps(manifest, sort_keys=True, indent=1).encode("utf-8")),
            ("tensors.bin", blob.getvalue()),
        ):
            info = zipfile.ZipInfo(member, date_time=_ZIP_EPOCH)
            info.compress_type = zipfile.ZIP_DEFLATED
            info.external_attr = 0o644 << 16
            zf.writestr(info, data)


def load_checkpoint(path: Union[str, Path]) -> tuple[dict, dict[str, np.ndarray]]:
    with zipfile.ZipFile(path) as zf:
        manifest = json.loads(zf.read("manifest.json"))
        raw = zf.read("tensors.bin")
    if manifest.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format {manifest.get('format_version')}")
    flat = np.frombuffer(raw, dtype="<f8")
    params = {}
    for entry in manifest["tensors"]:
        chunk = flat[entry["offset"]:entry["offset"] + entry["count"]]
        params[entry["name"]] = chunk.reshape(entry["shape"]).copy()
    return manifest["config"], params


def config_dict(config: ToyEncoderConfig) -> dict:
    return asdict(config)
