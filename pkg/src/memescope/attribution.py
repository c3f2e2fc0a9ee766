"""Gradient attributions in the shared embedding space.

Text ids are discrete, so every method differentiates with respect to the
embedded inputs: piece embeddings (token + position + segment) and
projected region features.  Pad pieces and pad regions never contribute.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .attention import top_k_indices
from .autodiff import Tensor
from .data import DatasetSplit, MemeRecord
from .errors import ValidationError
from .model import EncodedInput, ModelCheckpoint, embed, encode, encoder
from .tokenizer import CLS_ID, PAD_ID, SEP_ID, TokenSequence

TARGETS = ("hateful", "predicted")
METHODS = ("raw-gradient", "integrated-gradients")


@dataclass(frozen=True)
class BaselineSpec:
    """Reference input for path attributions.

    ``text="pad"`` swaps every real piece (not [CLS]/[SEP]) for the [PAD]
    embedding at the same position; ``text="zero"`` uses a zero embedding.
    ``visual="zero-features"`` embeds an all-zero feature matrix;
    ``visual="zero-embedding"`` uses zero vectors directly.
    Explicit ``text_emb``/``visual_emb`` arrays override both.
    """

    text: str = "pad"
    visual: str = "zero-features"
    text_emb: np.ndarray | None = None
    visual_emb: np.ndarray | None = None


@dataclass
class InputGradients:
    text: np.ndarray  # (T', d) rows for non-pad pieces
    visual: np.ndarray  # (R', d) rows for real regions
    logit: float
    sign: float


@dataclass
class AttributionResult:
    record_id: str
    method: str
    target: str
    text_scores: np.ndarray  # one per non-pad piece position, [CLS] first
    region_scores: np.ndarray  # one per real region
    text_modality_sum: float
    visual_modality_sum: float
    steps: int | None = None
    completeness_delta: float | None = None
    f_input: float | None = None
    f_baseline: float | None = None
    diagnostics: dict = field(default_factory=dict)

    def to_json(self, tokens: TokenSequence | None = None) -> dict:
        words = token_scores(self, tokens) if tokens is not None else []
        return {
            "record_id": self.record_id,
            "method": self.method,
            "target": self.target,
            "steps": self.steps,
            "text_scores": [{"word": w, "score": s} for w, s in words],
            "piece_scores": [float(v) for v in self.text_scores],
            "region_scores": [float(v) for v in self.region_scores],
            "text_contrib": self.text_modality_sum,
            "visual_contrib": self.visual_modality_sum,
            "completeness_delta": self.completeness_delta,
        }


@dataclass
class ModalityStats:
    text_avg: float
    text_std: float
    visual_avg: float
    visual_std: float
    sample_count: int
    model: str = ""

    def to_json(self) -> dict:
        return {
            "model": self.model,
            "text_avg": self.text_avg,
            "text_std": self.text_std,
            "visual_avg": self.visual_avg,
            "visual_std": self.visual_std,
            "sample_count": self.sample_count,
        }


# --------------------------------------------------------------------------
# plumbing


def _check_target(target: str) -> None:
    if target not in TARGETS:
        raise ValidationError(f"target must be one of {TARGETS}, got {target!r}")


def _embedded(ckpt: ModelCheckpoint, ids: np.ndarray, features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    text, vis = embed(ckpt.tensors(), ids[None], features[None])
    return text.data[0], vis.data[0]


def batch_gradients(
    ckpt: ModelCheckpoint,
    enc: EncodedInput,
    text_points: np.ndarray,
    visual_points: np.ndarray,
    sign: float = 1.0,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of ``sign * logit`` at K embedded points, summed over K.

    Points are independent samples, so the gradient of the summed logit
    with respect to the stacked inputs is the stack of per-point gradients.
    Returns (text grad sum, visual grad sum, per-point logits).
    """
    K = text_points.shape[0]
    text = Tensor(text_points, requires_grad=True)
    vis = Tensor(visual_points, requires_grad=True)
    mask = np.broadcast_to(enc.key_mask(), (K, enc.key_mask().size))
    logits, _ = encoder(ckpt.tensors(), ckpt.config, text, vis, mask)
    grads = ad.backward(ad.scale(ad.sum(logits), sign))
    return grads[text].sum(axis=0), grads[vis].sum(axis=0), logits.data.copy()


def target_sign(logit: float, target: str) -> float:
    """+1 differentiates the hateful logit; -1 the non-hateful one (binary head)."""
    _check_target(target)
    if target == "hateful":
        return 1.0
    return 1.0 if logit >= 0.0 else -1.0


def _positions(enc: EncodedInput) -> tuple[np.ndarray, np.ndarray]:
    return np.flatnonzero(~enc.tokens.pad_mask), np.flatnonzero(enc.region_mask)


# --------------------------------------------------------------------------
# raw gradients and modality attribution


def input_gradients(ckpt: ModelCheckpoint, record: MemeRecord, target: str = "hateful") -> InputGradients:
    _check_target(target)
    enc = encode(ckpt, record)
    t_emb, v_emb = _embedded(ckpt, enc.tokens.ids, enc.features)
    logit = float(batch_gradients(ckpt, enc, t_emb[None], v_emb[None])[2][0])
    sign = target_sign(logit, target)
    gt, gv, _ = batch_gradients(ckpt, enc, t_emb[None], v_emb[None], sign)
    tpos, rpos = _positions(enc)
    return InputGradients(gt[tpos], gv[rpos], logit, sign)


def modality_contributions(text_grads: np.ndarray, visual_grads: np.ndarray) -> tuple[float, float]:
    """Joint L2 normalisation, then per-modality sum of per-position norms."""
    total = np.sqrt(np.sum(text_grads**2) + np.sum(visual_grads**2))
    if total == 0.0:
        return 0.0, 0.0
    t = float(np.linalg.norm(text_grads / total, axis=-1).sum()) if text_grads.size else 0.0
    v = float(np.linalg.norm(visual_grads / total, axis=-1).sum()) if visual_grads.size else 0.0
    return t, v


def retained_text_rows(tokens: TokenSequence, include_special: bool = False) -> np.ndarray:
    """Row indices into the non-pad text gradients that count toward the text modality.

    [CLS] and [SEP] are fixed, content-free inputs like [PAD]; they are
    dropped unless ``include_special``.
    """
    ids = tokens.ids[~tokens.pad_mask]
    if include_special:
        return np.arange(len(ids))
    return np.flatnonzero((ids != CLS_ID) & (ids != SEP_ID))


def modality_attribution(
    ckpt: ModelCheckpoint, record: MemeRecord, target: str = "hateful", include_special: bool = False
) -> tuple[float, float]:
    g = input_gradients(ckpt, record, target)
    rows = retained_text_rows(encode(ckpt, record).tokens, include_special)
    return modality_contributions(g.text[rows], g.visual)


def dataset_modality_stats(
    ckpt: ModelCheckpoint,
    split: DatasetSplit,
    target: str = "hateful",
    model: str = "",
    include_special: bool = False,
) -> ModalityStats:
    if len(split) == 0:
        raise ValidationError("cannot aggregate modality attribution over an empty split")
    pairs = np.array([modality_attribution(ckpt, r, target, include_special) for r in split])
    return ModalityStats(
        text_avg=float(pairs[:, 0].mean()),
        text_std=float(pairs[:, 0].std()),
        visual_avg=float(pairs[:, 1].mean()),
        visual_std=float(pairs[:, 1].std()),
        sample_count=len(split),
        model=model,
    )


# --------------------------------------------------------------------------
# integrated gradients


def midpoint_alphas(steps: int) -> np.ndarray:
    if steps < 1:
        raise ValidationError(f"steps must be >= 1, got {steps}")
    return (np.arange(1, steps + 1) - 0.5) / steps


def path_average_gradient(
    grad_fn: Callable[[Sequence[np.ndarray]], Sequence[np.ndarray]],
    x: Sequence[np.ndarray],
    baseline: Sequence[np.ndarray],
    steps: int,
    chunk: int = 64,
) -> list[np.ndarray]:
    """Midpoint-rule average of the gradient along the straight path baseline -> x.

    ``grad_fn`` receives one stacked (K, ...) array per input and returns
    the gradients summed over the K points.
    """
    alphas = midpoint_alphas(steps)
    deltas = [xi - bi for xi, bi in zip(x, baseline)]
    total = [np.zeros_like(xi) for xi in x]
    for s in range(0, steps, chunk):
        a = alphas[s : s + chunk]
        shape = lambda arr: (len(a),) + (1,) * arr.ndim  # noqa: E731
        points = [bi[None] + a.reshape(shape(bi)) * di[None] for bi, di in zip(baseline, deltas)]
        for acc, g in zip(total, grad_fn(points)):
            acc += g
    return [t / steps for t in total]


def integrated_gradients_fn(grad_fn, x, baseline, steps: int = 64, chunk: int = 64) -> list[np.ndarray]:
    """Per-coordinate IG attributions ``(x - x') * mean path gradient``."""
    avg = path_average_gradient(grad_fn, x, baseline, steps, chunk)
    return [(xi - bi) * gi for xi, bi, gi in zip(x, baseline, avg)]


def baseline_embeddings(ckpt: ModelCheckpoint, enc: EncodedInput, spec: BaselineSpec) -> tuple[np.ndarray, np.ndarray]:
    if spec.text == "pad":
        ids = enc.tokens.ids.copy()
        keep = (ids == CLS_ID) | (ids == SEP_ID)
        ids[~keep] = PAD_ID
        text, _ = _embedded(ckpt, ids, enc.features)
    elif spec.text == "zero":
        text = np.zeros((ckpt.config.max_text_len, ckpt.config.hidden_dim))
    else:
        raise ValidationError(f"unknown text baseline {spec.text!r}")
    if spec.visual == "zero-features":
        _, vis = _embedded(ckpt, enc.tokens.ids, np.zeros_like(enc.features))
    elif spec.visual == "zero-embedding":
        vis = np.zeros((ckpt.config.num_regions, ckpt.config.hidden_dim))
    else:
        raise ValidationError(f"unknown visual baseline {spec.visual!r}")
    if spec.text_emb is not None:
        text = np.asarray(spec.text_emb, dtype=np.float64)
    if spec.visual_emb is not None:
        vis = np.asarray(spec.visual_emb, dtype=np.float64)
    return text, vis


def integrated_gradients(
    ckpt: ModelCheckpoint,
    record: MemeRecord,
    target: str = "hateful",
    baseline: BaselineSpec = BaselineSpec(),
    steps: int = 64,
    chunk: int = 64,
) -> AttributionResult:
    _check_target(target)
    enc = encode(ckpt, record)
    x_text, x_vis = _embedded(ckpt, enc.tokens.ids, enc.features)
    b_text, b_vis = baseline_embeddings(ckpt, enc, baseline)

    ends = batch_gradients(ckpt, enc, np.stack([x_text, b_text]), np.stack([x_vis, b_vis]))[2]
    sign = target_sign(float(ends[0]), target)
    f_x, f_b = sign * float(ends[0]), sign * float(ends[1])

    def grad_fn(points):
        gt, gv, _ = batch_gradients(ckpt, enc, points[0], points[1], sign)
        return gt, gv

    a_text, a_vis = integrated_gradients_fn(grad_fn, [x_text, x_vis], [b_text, b_vis], steps, chunk)
    delta = abs(float(a_text.sum() + a_vis.sum()) - (f_x - f_b))
    tpos, rpos = _positions(enc)
    text_scores = a_text.sum(axis=-1)[tpos]
    region_scores = a_vis.sum(axis=-1)[rpos]
    return AttributionResult(
        record_id=record.id,
        method="integrated-gradients",
        target=target,
        text_scores=text_scores,
        region_scores=region_scores,
        text_modality_sum=float(np.abs(text_scores).sum()),
        visual_modality_sum=float(np.abs(region_scores).sum()),
        steps=steps,
        completeness_delta=delta,
        f_input=f_x,
        f_baseline=f_b,
        diagnostics={"text_baseline": baseline.text, "visual_baseline": baseline.visual},
    )


def gradient_attribution(
    ckpt: ModelCheckpoint,
    record: MemeRecord,
    target: str = "hateful",
    baseline: BaselineSpec = BaselineSpec(),
) -> AttributionResult:
    """Raw-gradient result: per-position gradient x (input - baseline), modality pair from
    :func:`modality_contributions`."""
    _check_target(target)
    enc = encode(ckpt, record)
    x_text, x_vis = _embedded(ckpt, enc.tokens.ids, enc.features)
    b_text, b_vis = baseline_embeddings(ckpt, enc, baseline)
    logit = float(batch_gradients(ckpt, enc, x_text[None], x_vis[None])[2][0])
    sign = target_sign(logit, target)
    gt, gv, _ = batch_gradients(ckpt, enc, x_text[None], x_vis[None], sign)
    tpos, rpos = _positions(enc)
    rows = retained_text_rows(enc.tokens)
    t_contrib, v_contrib = modality_contributions(gt[tpos][rows], gv[rpos])
    return AttributionResult(
        record_id=record.id,
        method="raw-gradient",
        target=target,
        text_scores=((x_text - b_text) * gt).sum(axis=-1)[tpos],
        region_scores=((x_vis - b_vis) * gv).sum(axis=-1)[rpos],
        text_modality_sum=t_contrib,
        visual_modality_sum=v_contrib,
        f_input=sign * logit,
    )


# --------------------------------------------------------------------------
# per-word and per-region summaries


def token_scores(result: AttributionResult, tokens: TokenSequence) -> list[tuple[str, float]]:
    """Per-word signed scores: piece scores summed over each word's span."""
    scores = result.text_scores
    return [(span.word, float(scores[span.start : span.end].sum())) for span in tokens.spans]


def rank_regions(region_scores, k: int = 9) -> list[int]:
    """Top-k regions by absolute score; ties go to the lower index."""
    return top_k_indices(np.abs(np.asarray(region_scores, dtype=np.float64)), k)
