"""WordPiece vocabulary and greedy longest-match tokenisation."""

from __future__ import annotations

import string
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ValidationError

PAD, CLS, SEP, UNK = "[PAD]", "[CLS]", "[SEP]", "[UNK]"
SPECIALS = (PAD, CLS, SEP, UNK)
PAD_ID, CLS_ID, SEP_ID, UNK_ID = range(4)


class WordPieceVocab:
    """Ordered token list; specials live at ids 0..3, continuations start with ``##``."""

    def __init__(self, tokens):
        tokens = list(tokens)
        if tuple(tokens[:4]) != SPECIALS:
            raise ValidationError(f"vocabulary must start with {list(SPECIALS)}, got {tokens[:4]}")
        index: dict[str, int] = {}
        for i, tok in enumerate(tokens):
            if not tok:
                raise ValidationError(f"empty token at id {i}")
            if tok in index:
                raise ValidationError(f"duplicate token {tok!r} at ids {index[tok]} and {i}")
            index[tok] = i
        self.tokens = tokens
        self.index = index

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, tok: str) -> bool:
        return tok in self.index

    def __eq__(self, other) -> bool:
        return isinstance(other, WordPieceVocab) and self.tokens == other.tokens

    def id(self, tok: str) -> int:
        return self.index.get(tok, UNK_ID)

    @classmethod
    def build(cls, words, pieces: dict[str, list[str]] | None = None) -> "WordPieceVocab":
        """Vocabulary over whole ``words``; entries in ``pieces`` are stored only as their pieces."""
        pieces = pieces or {}
        seen: list[str] = []
        for w in words:
            for tok in pieces.get(w, [w]):
                if tok not in seen and tok not in SPECIALS:
                    seen.append(tok)
        return cls(list(SPECIALS) + sorted(seen))

    @classmethod
    def load(cls, path) -> "WordPieceVocab":
        text = Path(path).read_text(encoding="utf-8")
        return cls(line for line in text.split("\n") if line != "")

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class WordSpan:
    word: str
    start: int
    end: int  # exclusive


@dataclass
class TokenSequence:
    ids: np.ndarray
    pieces: list[str]
    pad_mask: np.ndarray
    spans: list[WordSpan] = field(default_factory=list)

    @property
    def length(self) -> int:
        """Count of non-pad positions ([CLS] and [SEP] included)."""
        return int((~self.pad_mask).sum())

    @property
    def sep_position(self) -> int:
        return self.length - 1


def _is_punct(ch: str) -> bool:
    return ch in string.punctuation or unicodedata.category(ch).startswith("P")


def basic_split(text: str) -> list[str]:
    """Lowercase, split on whitespace, and break punctuation into separate tokens."""
    words: list[str] = []
    for chunk in text.lower().split():
        buf = ""
        for ch in chunk:
            if _is_punct(ch):
                if buf:
                    words.append(buf)
                    buf = ""
                words.append(ch)
            else:
                buf += ch
        if buf:
            words.append(buf)
    return words


def wordpiece(word: str, vocab: WordPieceVocab, max_chars: int = 100) -> list[str]:
    """Greedy longest-match-first split of one word; ``[UNK]`` if any part fails."""
    if len(word) > max_chars:
        return [UNK]
    out: list[str] = []
    start = 0
    while start < len(word):
        end = len(word)
        piece = None
        while start < end:
            cand = word[start:end]
            if start > 0:
                cand = "##" + cand
            if cand in vocab:
                piece = cand
                break
            end -= 1
        if piece is None:
            return [UNK]
        out.append(piece)
        start = end
    return out


def tokenize(text: str, vocab: WordPieceVocab, max_len: int) -> TokenSequence:
    if max_len < 3:
        raise ValidationError(f"max_len must be >= 3, got {max_len}")
    if not text or not text.strip():
        raise ValidationError("cannot tokenize empty text")
    budget = max_len - 2
    pieces = [CLS]
    spans: list[WordSpan] = []
    for word in basic_split(text):
        if len(pieces) - 1 >= budget:
            break
        wp = wordpiece(word, vocab)[: budget - (len(pieces) - 1)]
        spans.append(WordSpan(word, len(pieces), len(pieces) + len(wp)))
        pieces.extend(wp)
    pieces.append(SEP)
    n = len(pieces)
    pieces.extend([PAD] * (max_len - n))
    ids = np.array([vocab.id(p) for p in pieces], dtype=np.int64)
    pad_mask = np.zeros(max_len, dtype=bool)
    pad_mask[n:] = True
    return TokenSequence(ids=ids, pieces=pieces, pad_mask=pad_mask, spans=spans)
