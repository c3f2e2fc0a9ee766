"""Single-stream multimodal transformer classifier.

Text pieces and visual regions are embedded into one shared space,
concatenated as ``[text | visual]`` and passed through pre-norm
transformer blocks.  The classifier reads the final [CLS] state.
Region boxes never enter the model; they are kept for reporting.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import MemeRecord
from .errors import ValidationError
from .tokenizer import CLS_ID, PAD_ID, SEP_ID, TokenSequence, WordPieceVocab, tokenize
from .trace import AttentionTrace, SequenceLayout

HATEFUL, NON_HATEFUL = "hateful", "non-hateful"


@dataclass(frozen=True)
class ModelConfig:
    num_layers: int = 2
    num_heads: int = 4
    hidden_dim: int = 64
    vocab_size: int = 64
    visual_feature_dim: int = 2048
    max_text_len: int = 64
    num_regions: int = 100
    ffn_dim: int | None = None
    layer_norm: bool = True
    ln_eps: float = 1e-12

    def __post_init__(self):
        for name in ("num_layers", "num_heads", "hidden_dim", "vocab_size", "visual_feature_dim", "num_regions"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1")
        if self.hidden_dim % self.num_heads:
            raise ValidationError(
                f"hidden_dim {self.hidden_dim} is not divisible by num_heads {self.num_heads}"
            )
        if self.max_text_len < 3:
            raise ValidationError(f"max_text_len must be >= 3, got {self.max_text_len}")
        if self.vocab_size < 4:
            raise ValidationError("vocab_size must cover the 4 special tokens")

    @property
    def head_dim(self) -> int:
        return self.hidden_dim // self.num_heads

    @property
    def ffn(self) -> int:
        return self.ffn_dim or 4 * self.hidden_dim

    @property
    def seq_len(self) -> int:
        return self.max_text_len + self.num_regions

    @classmethod
    def desk(cls, vocab_size: int = 64, visual_feature_dim: int = 32, **overrides) -> "ModelConfig":
        """Small preset used for synthetic experiments: T=32, R=16."""
        base = dict(max_text_len=32, num_regions=16)
        base.update(overrides)
        return cls(vocab_size=vocab_size, visual_feature_dim=visual_feature_dim, **base)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ModelConfig":
        known = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        return cls(**known)


def parameter_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    d, f = config.hidden_dim, config.ffn
    shapes: dict[str, tuple[int, ...]] = {
        "embeddings.token": (config.vocab_size, d),
        "embeddings.position": (config.max_text_len, d),
        "embeddings.segment": (2, d),
        "visual.proj.weight": (config.visual_feature_dim, d),
        "visual.proj.bias": (d,),
    }
    for i in range(config.num_layers):
        p = f"layers.{i}"
        shapes.update(
            {
                f"{p}.ln1.gamma": (d,),
                f"{p}.ln1.beta": (d,),
                f"{p}.attn.q.weight": (d, d),
                f"{p}.attn.q.bias": (d,),
                f"{p}.attn.k.weight": (d, d),
                f"{p}.attn.k.bias": (d,),
                f"{p}.attn.v.weight": (d, d),
                f"{p}.attn.v.bias": (d,),
                f"{p}.attn.out.weight": (d, d),
                f"{p}.attn.out.bias": (d,),
                f"{p}.ln2.gamma": (d,),
                f"{p}.ln2.beta": (d,),
                f"{p}.ffn.in.weight": (d, f),
                f"{p}.ffn.in.bias": (f,),
                f"{p}.ffn.out.weight": (f, d),
                f"{p}.ffn.out.bias": (d,),
            }
        )
    shapes.update(
        {
            "final_ln.gamma": (d,),
            "final_ln.beta": (d,),
            "classifier.weight": (d, 1),
            "classifier.bias": (1,),
        }
    )
    return shapes


def init_parameters(config: ModelConfig, seed: int = 0) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in parameter_shapes(config).items():
        if name.endswith(".gamma"):
            params[name] = np.ones(shape)
        elif name.endswith((".beta", ".bias")):
            params[name] = np.zeros(shape)
        elif name.startswith("embeddings."):
            params[name] = rng.normal(0.0, 0.1, shape)
        else:
            params[name] = rng.normal(0.0, 1.0 / math.sqrt(shape[0]), shape)
    return params


@dataclass
class ModelCheckpoint:
    config: ModelConfig
    params: dict[str, np.ndarray]
    vocab: WordPieceVocab | None = None
    meta: dict[str, Any] = field(default_factory=dict)

    @classmethod
    def fresh(cls, config: ModelConfig, seed: int = 0, vocab: WordPieceVocab | None = None):
        return cls(config, init_parameters(config, seed), vocab, {"seed": seed, "steps": 0})

    def validate(self) -> None:
        expected = parameter_shapes(self.config)
        for name, shape in expected.items():
            if name not in self.params:
                raise ValidationError(f"parameter {name!r} missing")
            if self.params[name].shape != shape:
                raise ValidationError(
                    f"parameter {name!r} has shape {self.params[name].shape}, config implies {shape}"
                )
        extra = set(self.params) - set(expected)
        if extra:
            raise ValidationError(f"unexpected parameters {sorted(extra)}")
        if self.vocab is not None and len(self.vocab) != self.config.vocab_size:
            raise ValidationError(
                f"vocabulary has {len(self.vocab)} tokens, config.vocab_size is {self.config.vocab_size}"
            )

    def tensors(self, requires_grad: bool = False) -> dict[str, Tensor]:
        return {k: Tensor(v, requires_grad=requires_grad, name=k) for k, v in self.params.items()}


# --------------------------------------------------------------------------
# inputs


@dataclass
class EncodedInput:
    """A record prepared for the model: padded ids, features and masks."""

    tokens: TokenSequence
    features: np.ndarray  # (R, Dv), zero rows for pad regions
    region_mask: np.ndarray  # (R,), True on real regions
    boxes: np.ndarray  # (R, 4), zero rows for pad regions

    def layout(self) -> SequenceLayout:
        T = len(self.tokens.ids)
        pads = [int(i) for i in np.flatnonzero(self.tokens.pad_mask)]
        pads += [T + int(j) for j in np.flatnonzero(~self.region_mask)]
        return SequenceLayout(
            text_len=T,
            num_regions=len(self.region_mask),
            cls_positions=(0,),
            sep_positions=(self.tokens.sep_position,),
            pad_positions=tuple(pads),
        )

    def key_mask(self) -> np.ndarray:
        return np.concatenate([~self.tokens.pad_mask, self.region_mask])


def encode(checkpoint: ModelCheckpoint, record: MemeRecord) -> EncodedInput:
    cfg = checkpoint.config
    if checkpoint.vocab is None:
        raise ValidationError("checkpoint has no vocabulary; cannot tokenize text")
    tokens = tokenize(record.text, checkpoint.vocab, cfg.max_text_len)
    n = len(record.regions)
    if n > cfg.num_regions:
        raise ValidationError(
            f"record {record.id!r}: field 'regions' has {n} entries, model accepts at most {cfg.num_regions}"
        )
    feats = np.zeros((cfg.num_regions, cfg.visual_feature_dim))
    boxes = np.zeros((cfg.num_regions, 4))
    if n:
        f = record.features()
        if f.shape[1] != cfg.visual_feature_dim:
            raise ValidationError(
                f"record {record.id!r}: feature dim {f.shape[1]} != model visual_feature_dim "
                f"{cfg.visual_feature_dim}"
            )
        feats[:n] = f
        boxes[:n] = record.boxes()
    mask = np.zeros(cfg.num_regions, dtype=bool)
    mask[:n] = True
    return EncodedInput(tokens, feats, mask, boxes)


def embed(params: dict[str, Tensor], ids: np.ndarray, features: Tensor | np.ndarray) -> tuple[Tensor, Tensor]:
    """Batched embedding.  ``ids`` is (B, T); ``features`` is (B, R, Dv)."""
    B, T = ids.shape
    tok = ad.embedding_lookup(params["embeddings.token"], ids)
    pos = ad.embedding_lookup(params["embeddings.position"], np.broadcast_to(np.arange(T), (B, T)))
    seg_a = ad.embedding_lookup(params["embeddings.segment"], np.zeros((B, T), dtype=np.int64))
    text = tok + pos + seg_a
    feats = features if isinstance(features, Tensor) else Tensor(features)
    R = feats.shape[1]
    seg_b = ad.embedding_lookup(params["embeddings.segment"], np.ones((B, R), dtype=np.int64))
    visual = ad.matmul(feats, params["visual.proj.weight"]) + params["visual.proj.bias"] + seg_b
    return text, visual


def embed_inputs(checkpoint: ModelCheckpoint, tokens: TokenSequence, visual: np.ndarray) -> tuple[Tensor, Tensor]:
    """Embedded text (T, d) and visual (R, d) as fresh differentiation leaves."""
    cfg = checkpoint.config
    visual = np.asarray(visual, dtype=np.float64)
    if visual.shape != (cfg.num_regions, cfg.visual_feature_dim):
        raise ValidationError(
            f"visual features have shape {visual.shape}, expected "
            f"({cfg.num_regions}, {cfg.visual_feature_dim})"
        )
    if tokens.ids.shape != (cfg.max_text_len,):
        raise ValidationError(f"token ids have shape {tokens.ids.shape}, expected ({cfg.max_text_len},)")
    params = checkpoint.tensors()
    text, vis = embed(params, tokens.ids[None, :], visual[None])
    return Tensor(text.data[0], requires_grad=True), Tensor(vis.data[0], requires_grad=True)


def _norm(x: Tensor, params, prefix: str, cfg: ModelConfig) -> Tensor:
    if not cfg.layer_norm:
        return x
    return ad.layer_norm(x, params[f"{prefix}.gamma"], params[f"{prefix}.beta"], cfg.ln_eps)


def _attention_mask(key_mask: np.ndarray, num_heads: int) -> np.ndarray:
    """Additive mask (B, H, S, S): 0 on real keys, -inf on pad keys."""
    B, S = key_mask.shape
    add = np.where(key_mask, 0.0, -np.inf)
    return np.ascontiguousarray(np.broadcast_to(add[:, None, None, :], (B, num_heads, S, S)))


def encoder(
    params: dict[str, Tensor],
    cfg: ModelConfig,
    text_emb: Tensor,
    visual_emb: Tensor,
    key_mask: np.ndarray,
) -> tuple[Tensor, list[np.ndarray]]:
    """Run the transformer stack on embedded inputs.

    Returns logits of shape (B,) and per-layer attention arrays (B, H, S, S).
    """
    x = ad.concat([text_emb, visual_emb], axis=1)
    B, S, d = x.shape
    H, dh = cfg.num_heads, cfg.head_dim
    mask = Tensor(_attention_mask(np.asarray(key_mask, dtype=bool), H))
    inv_sqrt = 1.0 / math.sqrt(dh)
    attention: list[np.ndarray] = []

    def heads(t: Tensor) -> Tensor:
        return ad.transpose(ad.reshape(t, (B, S, H, dh)), (0, 2, 1, 3))

    for i in range(cfg.num_layers):
        p = f"layers.{i}"
        h = _norm(x, params, f"{p}.ln1", cfg)
        q = heads(ad.matmul(h, params[f"{p}.attn.q.weight"]) + params[f"{p}.attn.q.bias"])
        k = heads(ad.matmul(h, params[f"{p}.attn.k.weight"]) + params[f"{p}.attn.k.bias"])
        v = heads(ad.matmul(h, params[f"{p}.attn.v.weight"]) + params[f"{p}.attn.v.bias"])
        scores = ad.scale(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), inv_sqrt) + mask
        probs = ad.softmax(scores, axis=-1)
        attention.append(probs.data)
        ctx = ad.reshape(ad.transpose(ad.matmul(probs, v), (0, 2, 1, 3)), (B, S, d))
        x = x + (ad.matmul(ctx, params[f"{p}.attn.out.weight"]) + params[f"{p}.attn.out.bias"])
        h = _norm(x, params, f"{p}.ln2", cfg)
        h = ad.gelu(ad.matmul(h, params[f"{p}.ffn.in.weight"]) + params[f"{p}.ffn.in.bias"])
        x = x + (ad.matmul(h, params[f"{p}.ffn.out.weight"]) + params[f"{p}.ffn.out.bias"])

    x = _norm(x, params, "final_ln", cfg)
    pooled = x[:, 0, :]
    logits = ad.matmul(pooled, params["classifier.weight"]) + params["classifier.bias"]
    return ad.reshape(logits, (B,)), attention


@dataclass
class ForwardResult:
    logit: float
    logit_tensor: Tensor
    trace: AttentionTrace
    text_emb: Tensor
    visual_emb: Tensor
    encoded: EncodedInput | None = None


def forward(
    checkpoint: ModelCheckpoint,
    tokens: TokenSequence,
    visual: np.ndarray,
    region_mask: np.ndarray | None = None,
    params: dict[str, Tensor] | None = None,
) -> ForwardResult:
    """One record through the model, keeping the embedded leaves and the attention trace."""
    cfg = checkpoint.config
    if region_mask is None:
        region_mask = np.ones(cfg.num_regions, dtype=bool)
    enc = EncodedInput(tokens, np.asarray(visual, dtype=np.float64), np.asarray(region_mask, bool), np.zeros((cfg.num_regions, 4)))
    text_emb, visual_emb = embed_inputs(checkpoint, tokens, visual)
    params = params if params is not None else checkpoint.tensors()
    logits, attn = encoder(
        params,
        cfg,
        ad.reshape(text_emb, (1, *text_emb.shape)),
        ad.reshape(visual_emb, (1, *visual_emb.shape)),
        enc.key_mask()[None],
    )
    probs = np.stack([a[0] for a in attn])
    trace = AttentionTrace(probs, enc.layout())
    return ForwardResult(float(logits.data[0]), logits, trace, text_emb, visual_emb, enc)


def forward_record(checkpoint: ModelCheckpoint, record: MemeRecord) -> ForwardResult:
    enc = encode(checkpoint, record)
    res = forward(checkpoint, enc.tokens, enc.features, enc.region_mask)
    res.encoded = enc
    return res


def predict_logits(checkpoint: ModelCheckpoint, encoded: list[EncodedInput], batch: int = 64) -> np.ndarray:
    """Inference-only logits for many records (no gradient recording)."""
    params = checkpoint.tensors()
    out = []
    for s in range(0, len(encoded), batch):
        chunk = encoded[s : s + batch]
        ids = np.stack([e.tokens.ids for e in chunk])
        feats = np.stack([e.features for e in chunk])
        mask = np.stack([e.key_mask() for e in chunk])
        text, vis = embed(params, ids, feats)
        logits, _ = encoder(params, checkpoint.config, text, vis, mask)
        out.append(logits.data)
    return np.concatenate(out) if out else np.zeros(0)


def sigmoid(z: float) -> float:
    return float(ad.sigmoid_np(z))


def label_for(p_hateful: float, threshold: float = 0.5) -> str:
    # ties go to hateful
    return HATEFUL if p_hateful >= threshold else NON_HATEFUL


def classify(checkpoint: ModelCheckpoint, record: MemeRecord, threshold: float = 0.5) -> tuple[str, float]:
    res = forward_record(checkpoint, record)
    p = sigmoid(res.logit)
    return label_for(p, threshold), p
