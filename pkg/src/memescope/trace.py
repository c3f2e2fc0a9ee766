"""Attention probabilities captured from one forward pass."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SequenceLayout:
    """Where each kind of position lives in the concatenated ``[text | visual]`` sequence."""

    text_len: int
    num_regions: int
    cls_positions: tuple[int, ...]
    sep_positions: tuple[int, ...]
    pad_positions: tuple[int, ...]

    @property
    def seq_len(self) -> int:
        return self.text_len + self.num_regions

    @property
    def visual_slice(self) -> slice:
        return slice(self.text_len, self.text_len + self.num_regions)

    @property
    def special_positions(self) -> tuple[int, ...]:
        return tuple(sorted(self.cls_positions + self.sep_positions))

    def key_mask(self) -> np.ndarray:
        """True where a key position is real (not padding)."""
        mask = np.ones(self.seq_len, dtype=bool)
        mask[list(self.pad_positions)] = False
        return mask


@dataclass
class AttentionTrace:
    """Post-softmax attention, ``probs[layer, head, query, key]``."""

    probs: np.ndarray
    layout: SequenceLayout

    @property
    def num_layers(self) -> int:
        return self.probs.shape[0]

    @property
    def num_heads(self) -> int:
        return self.probs.shape[1]

    def __getitem__(self, layer: int) -> np.ndarray:
        return self.probs[layer]
