"""Desk-scale training: Adam on binary cross-entropy with logits."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .data import DatasetSplit
from .errors import ValidationError
from .model import ModelCheckpoint, ModelConfig, encode, embed, encoder, init_parameters, predict_logits
from .tokenizer import WordPieceVocab

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    steps: int = 600
    batch: int = 32
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0  # decoupled (AdamW-style); 0 gives plain Adam


class Adam:
    def __init__(self, params: dict[str, np.ndarray], hp: TrainConfig):
        self.hp = hp
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        hp = self.hp
        self.t += 1
        c1 = 1.0 - hp.beta1**self.t
        c2 = 1.0 - hp.beta2**self.t
        for k, g in grads.items():
            m = self.m[k] = hp.beta1 * self.m[k] + (1.0 - hp.beta1) * g
            v = self.v[k] = hp.beta2 * self.v[k] + (1.0 - hp.beta2) * g * g
            p = params[k]
            if hp.weight_decay:
                p = p * (1.0 - hp.lr * hp.weight_decay)
            params[k] = p - hp.lr * (m / c1) / (np.sqrt(v / c2) + hp.eps)


def train(
    config: ModelConfig,
    dataset: DatasetSplit,
    vocab: WordPieceVocab,
    hyper: TrainConfig = TrainConfig(),
    log_every: int = 0,
) -> ModelCheckpoint:
    if len(dataset) == 0:
        raise ValidationError("training dataset is empty")
    labels = dataset.labels
    if len(set(labels.tolist())) < 2:
        raise ValidationError("training dataset must contain both hateful and non-hateful records")
    if hyper.steps < 0 or hyper.batch < 1:
        raise ValidationError("steps must be >= 0 and batch >= 1")

    ckpt = ModelCheckpoint(config, init_parameters(config, hyper.seed), vocab, {})
    ckpt.validate()
    encoded = [encode(ckpt, r) for r in dataset]
    ids = np.stack([e.tokens.ids for e in encoded])
    feats = np.stack([e.features for e in encoded])
    masks = np.stack([e.key_mask() for e in encoded])
    y = labels.astype(np.float64)

    rng = np.random.default_rng(hyper.seed)
    opt = Adam(ckpt.params, hyper)
    history: list[float] = []
    batch = min(hyper.batch, len(dataset))
    order = rng.permutation(len(dataset))
    cursor = 0
    for step in range(hyper.steps):
        if cursor + batch > len(order):
            order = rng.permutation(len(dataset))
            cursor = 0
        idx = order[cursor : cursor + batch]
        cursor += batch
        params = ckpt.tensors(requires_grad=True)
        text, vis = embed(params, ids[idx], feats[idx])
        logits, _ = encoder(params, config, text, vis, masks[idx])
        loss = ad.bce_with_logits(logits, y[idx])
        grads = ad.backward(loss)
        opt.step(ckpt.params, {k: grads[t] for k, t in params.items()})
        history.append(float(loss.data))
        if log_every and (step + 1) % log_every == 0:
            log.info("step %d loss %.5f", step + 1, np.mean(history[-log_every:]))

    ckpt.meta = {
        "seed": hyper.seed,
        "steps": hyper.steps,
        "final_loss": history[-1] if history else None,
        "hyper": asdict(hyper),
        "loss_history": history,
    }
    return ckpt


def accuracy(ckpt: ModelCheckpoint, dataset: DatasetSplit, threshold: float = 0.5) -> float:
    logits = predict_logits(ckpt, [encode(ckpt, r) for r in dataset])
    pred = (ad.sigmoid_np(logits) >= threshold).astype(np.int64)
    return float(np.mean(pred == dataset.labels))
