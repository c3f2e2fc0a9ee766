"""End-to-end gradient check of the classifier logit."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .model import ModelCheckpoint, ModelConfig, embed, encoder
from .tokenizer import CLS_ID, PAD_ID, SEP_ID

GRADCHECK_TOL = 1e-4
GRADCHECK_STEP = 1e-5
# |analytic - numeric| is divided by max(|a|, |n|, floor); below the floor
# both values are dominated by finite-difference round-off (~eps/step).
GRADCHECK_FLOOR = 1e-6


@dataclass
class GradcheckReport:
    max_rel_error: float
    worst_path: str
    worst_analytic: float
    worst_numeric: float
    coordinates: int
    tolerance: float = GRADCHECK_TOL

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance

    def to_json(self) -> dict:
        return {
            "max_rel_error": self.max_rel_error,
            "worst_path": self.worst_path,
            "worst_analytic": self.worst_analytic,
            "worst_numeric": self.worst_numeric,
            "coordinates": self.coordinates,
            "tolerance": self.tolerance,
            "passed": self.passed,
        }


def random_input(config: ModelConfig, seed: int = 0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Random ids/features/key-mask with some text and region padding."""
    rng = np.random.default_rng([seed, 7])
    T, R = config.max_text_len, config.num_regions
    n_text = int(rng.integers(3, T + 1)) if T > 3 else T
    ids = np.full(T, PAD_ID, dtype=np.int64)
    ids[0] = CLS_ID
    ids[1 : n_text - 1] = rng.integers(4, max(5, config.vocab_size), size=n_text - 2) % config.vocab_size
    ids[n_text - 1] = SEP_ID
    n_reg = int(rng.integers(max(1, R // 2), R + 1))
    feats = np.zeros((R, config.visual_feature_dim))
    feats[:n_reg] = rng.normal(size=(n_reg, config.visual_feature_dim))
    mask = np.concatenate([np.arange(T) < n_text, np.arange(R) < n_reg])
    return ids, feats, mask


def model_gradcheck(
    ckpt: ModelCheckpoint,
    ids: np.ndarray,
    features: np.ndarray,
    key_mask: np.ndarray,
    samples: int = 256,
    seed: int = 0,
    step: float = GRADCHECK_STEP,
) -> GradcheckReport:
    """Compare backward() with central differences on sampled coordinates.

    Covers every parameter tensor (through the full embedding path) and the
    embedded text/visual inputs.  Each leaf gets at least one coordinate;
    the rest are drawn uniformly over all coordinates.
    """
    cfg = ckpt.config
    params = ckpt.tensors(requires_grad=True)
    text0, vis0 = embed(ckpt.tensors(), ids[None], features[None])
    inputs = {
        "input.text_emb": Tensor(text0.data, requires_grad=True),
        "input.visual_emb": Tensor(vis0.data, requires_grad=True),
    }
    mask = key_mask[None]

    def logit_from_params(_=None):
        t, v = embed(params, ids[None], features[None])
        return ad.reshape(encoder(params, cfg, t, v, mask)[0], ())

    def logit_from_inputs(_=None):
        return ad.reshape(encoder(ckpt.tensors(), cfg, inputs["input.text_emb"], inputs["input.visual_emb"], mask)[0], ())

    analytic = {}
    grads = ad.backward(logit_from_params())
    analytic.update({name: grads[t] for name, t in params.items()})
    grads = ad.backward(logit_from_inputs())
    analytic.update({name: grads[t] for name, t in inputs.items()})

    leaves = [(name, t, logit_from_params) for name, t in params.items()]
    leaves += [(name, t, logit_from_inputs) for name, t in inputs.items()]
    sizes = np.array([t.data.size for _, t, _ in leaves])
    rng = np.random.default_rng(seed)
    picks: list[tuple[int, int]] = [(i, int(rng.integers(s))) for i, s in enumerate(sizes)]
    extra = max(0, samples - len(picks))
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    for flat in rng.choice(offsets[-1], size=extra, replace=False):
        i = int(np.searchsorted(offsets, flat, side="right") - 1)
        picks.append((i, int(flat - offsets[i])))

    worst = (-1.0, "", 0.0, 0.0)
    for i, flat in picks:
        name, tensor, fn = leaves[i]
        idx = np.unravel_index(flat, tensor.shape)
        num = ad.numerical_grad(fn, tensor, idx, step)
        ana = float(analytic[name][idx])
        err = ad.relative_error(ana, num, GRADCHECK_FLOOR)
        if err > worst[0]:
            worst = (err, f"{name}[{','.join(str(int(k)) for k in idx)}]", ana, num)
    return GradcheckReport(worst[0], worst[1], worst[2], worst[3], len(picks))
