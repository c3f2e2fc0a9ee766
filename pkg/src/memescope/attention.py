"""Keyword-to-region alignment read off attention traces."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import ValidationError
from .tokenizer import TokenSequence, WordPieceVocab, basic_split, wordpiece
from .trace import AttentionTrace


def top_k_indices(scores, k: int) -> list[int]:
    """Indices of the ``k`` largest scores, descending; ties go to the lower index."""
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    scores = np.asarray(scores, dtype=np.float64)
    order = np.argsort(-scores, kind="stable")
    return [int(i) for i in order[:k]]


def exact_mean(values) -> float:
    """Correctly rounded mean, so that identical values average to themselves."""
    values = [float(v) for v in values]
    return float(sum(map(Fraction, values)) / len(values))


def keyword_pieces(keyword: str, vocab: WordPieceVocab) -> list[str]:
    keyword = keyword.strip()
    if not keyword:
        raise ValidationError("keyword must be non-empty")
    if keyword.startswith("##"):
        return [keyword]
    pieces: list[str] = []
    for word in basic_split(keyword):
        pieces.extend(wordpiece(word, vocab))
    return pieces


def keyword_positions(tokens: TokenSequence, keyword: str, vocab: WordPieceVocab) -> list[int]:
    """All positions covered by any occurrence of the keyword's piece sequence."""
    pattern = keyword_pieces(keyword, vocab)
    n = len(pattern)
    seq = tokens.pieces[: tokens.length]
    hits: set[int] = set()
    for start in range(1, len(seq) - n):
        if seq[start : start + n] == pattern:
            hits.update(range(start, start + n))
    return sorted(hits)


def _check(trace: AttentionTrace, positions, layer: int, head: int) -> list[int]:
    positions = list(positions)
    if not positions:
        raise ValidationError("no query positions given")
    if not 0 <= layer < trace.num_layers or not 0 <= head < trace.num_heads:
        raise ValidationError(
            f"layer/head ({layer}, {head}) outside trace with {trace.num_layers} layers, {trace.num_heads} heads"
        )
    return positions


def alignment_map(trace: AttentionTrace, positions, layer: int, head: int) -> tuple[np.ndarray, float]:
    """Mean attention mass from the query positions onto each region, and onto [SEP]."""
    positions = _check(trace, positions, layer, head)
    rows = trace.probs[layer, head][positions]
    region_mass = rows[:, trace.layout.visual_slice].mean(axis=0)
    sep_mass = exact_mean(rows[:, list(trace.layout.sep_positions)].sum(axis=1))
    return region_mass, sep_mass


def noop_mass(trace: AttentionTrace, positions, layer: int, head: int, sep_only: bool = False) -> float:
    """Mean mass the query positions park on special tokens ([SEP], plus [CLS] unless ``sep_only``)."""
    positions = _check(trace, positions, layer, head)
    lay = trace.layout
    keys = list(lay.sep_positions if sep_only else lay.special_positions)
    rows = trace.probs[layer, head][positions]
    return exact_mean(rows[:, keys].sum(axis=1))


def row_partition(trace: AttentionTrace, layer: int, head: int, query: int) -> tuple[float, float, float]:
    """(text, visual, special) mass of one attention row; the three sum to 1."""
    row = trace.probs[layer, head, query]
    lay = trace.layout
    special = list(lay.special_positions)
    text_keys = [i for i in range(lay.text_len) if i not in special]
    return float(row[text_keys].sum()), float(row[lay.visual_slice].sum()), float(row[special].sum())


def top_alignment_heads(trace: AttentionTrace, positions, k: int = 4) -> list[tuple[int, int, float]]:
    """Heads ranked by their peak single-region mass; ties go to lower (layer, head)."""
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    scored = []
    for layer in range(trace.num_layers):
        for head in range(trace.num_heads):
            mass, _ = alignment_map(trace, positions, layer, head)
            scored.append((layer, head, float(mass.max())))
    scored.sort(key=lambda t: (-t[2], t[0], t[1]))
    return scored[:k]


def real_regions(trace: AttentionTrace) -> np.ndarray:
    lay = trace.layout
    pads = {p - lay.text_len for p in lay.pad_positions if p >= lay.text_len}
    return np.array([j for j in range(lay.num_regions) if j not in pads], dtype=np.int64)


def top_regions_for_head(
    trace: AttentionTrace, positions, layer: int, head: int, k: int = 9
) -> tuple[list[int], list[float]]:
    """Real (non-pad) regions ranked by attention mass from the query positions."""
    mass, _ = alignment_map(trace, positions, layer, head)
    candidates = real_regions(trace)
    picked = [int(candidates[i]) for i in top_k_indices(mass[candidates], k)]
    return picked, [float(mass[j]) for j in picked]


def noop_profile(trace: AttentionTrace, positions) -> list[float]:
    """Mean no-op mass across heads, one value per layer."""
    return [
        float(np.mean([noop_mass(trace, positions, layer, h) for h in range(trace.num_heads)]))
        for layer in range(trace.num_layers)
    ]


@dataclass
class AlignmentResult:
    keyword: str
    positions: list[int]
    region_mass: dict[tuple[int, int], np.ndarray] = field(default_factory=dict)
    sep_mass: dict[tuple[int, int], float] = field(default_factory=dict)

    def to_json(self) -> dict:
        heads = {}
        for (layer, head), mass in sorted(self.region_mass.items()):
            heads[f"L{layer}H{head}"] = {
                "layer": layer,
                "head": head,
                "region_mass": [float(v) for v in mass],
                "sep_mass": self.sep_mass[(layer, head)],
            }
        return {"keyword": self.keyword, "positions": self.positions, "heads": heads}


def align(trace: AttentionTrace, positions, keyword: str) -> AlignmentResult:
    res = AlignmentResult(keyword, list(positions))
    for layer in range(trace.num_layers):
        for head in range(trace.num_heads):
            mass, sep = alignment_map(trace, positions, layer, head)
            res.region_mass[(layer, head)] = mass
            res.sep_mass[(layer, head)] = sep
    return res
