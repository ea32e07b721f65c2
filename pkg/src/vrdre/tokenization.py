"""Word-to-subword tokenizers.

The toy path uses a hashing tokenizer so no vocabulary file is needed.
Any object with ``tokenize(word) -> list[int]``, ``vocab_size`` and the
special ids below can be injected instead.
"""

from __future__ import annotations

import hashlib
import re
from functools import lru_cache
from typing import Protocol

PAD_ID, CLS_ID, SEP_ID, UNK_ID = 0, 1, 2, 3
N_SPECIAL = 4

# alphabetic runs, single digits, single punctuation marks
_PIECE_RE = re.compile(r"[^\W\d_]+|\d|[^\w\s]|_", re.UNICODE)


class WordTokenizer(Protocol):
    vocab_size: int
    pad_id: int
    cls_id: int
    sep_id: int

    def tokenize(self, word: str) -> list[int]: ...


class HashingTokenizer:
    """Deterministic subword tokenizer: stable 64-bit hash of each piece mod vocab.

    A word is cut into alphabetic runs (chunked to at most ``max_piece``
    characters), single digits and single punctuation marks. Non-initial
    pieces are hashed with a ``##`` prefix, mimicking WordPiece.
    """

    pad_id, cls_id, sep_id, unk_id = PAD_ID, CLS_ID, SEP_ID, UNK_ID

    def __init__(self, vocab_size: int = 32768, max_piece: int = 6, lowercase: bool = True):
        if vocab_size <= N_SPECIAL:
            raise ValueError("vocab_size must leave room for special tokens")
        self.vocab_size = vocab_size
        self.max_piece = max_piece
        self.lowercase = lowercase
        self._cached = lru_cache(maxsize=1 << 16)(self._tokenize)

    def pieces(self, word: str) -> list[str]:
        if self.lowercase:
            word = word.lower()
        out = []
        for run in _PIECE_RE.findall(word):
            out.extend(run[i:i + self.max_piece] for i in range(0, len(run), self.max_piece))
        return [p if i == 0 else "##" + p for i, p in enumerate(out)]

    def _hash(self, piece: str) -> int:
        digest = hashlib.blake2b(piece.encode("utf-8"), digest_size=8).digest()
        return N_SPECIAL + int.from_bytes(digest, "little") % (self.vocab_size - N_SPECIAL)

    def _tokenize(self, word: str) -> tuple[int, ...]:
        pieces = self.pieces(word)
        if not pieces:
            return (self.unk_id,)
        return tuple(self._hash(p) for p in pieces)

    def tokenize(self, word: str) -> list[int]:
        return list(self._cached(word))

    def config(self) -> dict:
        return {"kind": "hashing", "vocab_size": self.vocab_size, "max_piece": self.max_piece,
                "lowercase": self.lowercase}


class PretrainedTokenizerAdapter:
    """Wrap a ``transformers`` tokenizer (e.g. the LayoutLMv3 one) as a WordTokenizer."""

    def __init__(self, hf_tokenizer):
        self.hf = hf_tokenizer
        self.vocab_size = len(hf_tokenizer)
        self.pad_id = hf_tokenizer.pad_token_id
        self.cls_id = hf_tokenizer.cls_token_id
        self.sep_id = hf_tokenizer.sep_token_id
        self.unk_id = hf_tokenizer.unk_token_id

    def tokenize(self, word: str) -> list[int]:
        # byte-level BPE vocabularies encode a word differently after a space
        ids = self.hf.encode(" " + word, add_special_tokens=False)
        return ids or [self.unk_id]
