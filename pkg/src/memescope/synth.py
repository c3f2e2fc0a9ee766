"""Synthetic memes with planted label rules.

Each record gets a short text built from distractor words and a set of
region features.  Prototype 0 of an orthonormal set is the planted visual
signal.  Background regions are either random unit directions orthogonal
to it (``background="random"``) or the remaining prototypes
(``background="prototypes"``); all regions get Gaussian noise.  Depending
on the rule, the label depends on the keyword, on the planted region, or
on both.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import DatasetSplit, MemeRecord, Region, save_jsonl
from .errors import ValidationError
from .tokenizer import WordPieceVocab, basic_split

RULES = ("text-only", "visual-only", "conjunction")

DEFAULT_DISTRACTORS = [
    "the", "a", "when", "you", "my", "your", "her", "his", "they", "is", "at", "in",
    "woman", "man", "truck", "car", "goat", "dog", "sandwich", "kitchen", "meat", "very",
    "islamic", "happy", "day", "friday", "love", "look", "like", "this", "new", "old",
    "friend", "work", "home", "funny", "food", "drive", "park", "music",
]


@dataclass
class SyntheticSpec:
    seed: int = 0
    rule: str = "conjunction"
    keyword: str = "dishwasher"
    split_words: dict[str, list[str]] = field(
        default_factory=lambda: {"dishwasher": ["dish", "##wash", "##er"]}
    )
    distractors: list[str] = field(default_factory=lambda: list(DEFAULT_DISTRACTORS))
    feature_dim: int = 32
    num_prototypes: int = 4
    noise: float = 0.1
    background: str = "random"
    num_regions: int = 16
    min_regions: int = 12
    min_words: int = 10
    max_words: int = 16
    train_per_class: int = 200
    test_per_class: int = 50

    def validate(self) -> None:
        if self.rule not in RULES:
            raise ValidationError(f"rule must be one of {RULES}, got {self.rule!r}")
        if not self.keyword or basic_split(self.keyword) != [self.keyword]:
            raise ValidationError(f"keyword {self.keyword!r} must be a single lowercase word")
        if self.keyword in self.distractors:
            raise ValidationError("keyword must not also be a distractor word")
        if not self.distractors:
            raise ValidationError("distractor pool is empty")
        if not 0.0 <= self.noise < 0.5:
            raise ValidationError(f"noise must be in [0, 0.5), got {self.noise}")
        if self.background not in ("random", "prototypes"):
            raise ValidationError(f"background must be 'random' or 'prototypes', got {self.background!r}")
        if not 1 <= self.num_prototypes <= self.feature_dim:
            raise ValidationError("num_prototypes must be between 1 and feature_dim")
        if not 1 <= self.min_regions <= self.num_regions:
            raise ValidationError("need 1 <= min_regions <= num_regions")
        if not 1 <= self.min_words <= self.max_words:
            raise ValidationError("need 1 <= min_words <= max_words")
        if self.train_per_class < 1 or self.test_per_class < 1:
            raise ValidationError("per-class counts must be >= 1")
        for word, pieces in self.split_words.items():
            if "".join(p.removeprefix("##") for p in pieces) != word:
                raise ValidationError(f"pieces {pieces} do not spell {word!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValidationError(f"unknown synthetic spec fields {sorted(unknown)}")
        return cls(**d)


@dataclass
class SyntheticData:
    train: DatasetSplit
    test: DatasetSplit
    truth: dict[str, dict]
    vocab: WordPieceVocab
    prototypes: np.ndarray  # (P, Dv), orthonormal rows


def make_prototypes(spec: SyntheticSpec) -> np.ndarray:
    rng = np.random.default_rng([spec.seed, 0])
    q, _ = np.linalg.qr(rng.normal(size=(spec.feature_dim, spec.num_prototypes)))
    return q.T.copy()


def make_vocab(spec: SyntheticSpec) -> WordPieceVocab:
    return WordPieceVocab.build([spec.keyword, *spec.distractors], spec.split_words)


def _bbox(rng) -> list[float]:
    x1, y1 = rng.uniform(0.0, 0.8, size=2)
    w, h = rng.uniform(0.1, 1.0, size=2)
    x2, y2 = min(1.0, x1 + w * (1.0 - x1)), min(1.0, y1 + h * (1.0 - y1))
    return [round(float(v), 4) for v in (x1, y1, x2, y2)]


def _condition_plan(spec: SyntheticSpec, label: int, k: int, rng) -> tuple[bool, bool]:
    """(has_keyword, has_planted_region) for the k-th record of a class."""
    if spec.rule == "conjunction":
        if label:
            return True, True
        return [(True, False), (False, True), (False, False)][k % 3]
    coin = bool(rng.integers(2))
    if spec.rule == "text-only":
        return bool(label), coin
    return coin, bool(label)


def _make_record(spec, protos, rid, label, has_kw, has_region, rng):
    n_words = int(rng.integers(spec.min_words, spec.max_words + 1))
    words = [spec.distractors[i] for i in rng.integers(len(spec.distractors), size=n_words)]
    if has_kw:
        words.insert(int(rng.integers(n_words + 1)), spec.keyword)
    n_regions = int(rng.integers(spec.min_regions, spec.num_regions + 1))
    sigma = spec.noise / np.sqrt(spec.feature_dim)
    planted = int(rng.integers(n_regions)) if has_region else None
    regions = []
    for j in range(n_regions):
        if j == planted:
            base = protos[0]
        elif spec.background == "random":
            base = rng.normal(size=spec.feature_dim)
            base -= (base @ protos[0]) * protos[0]
            base /= np.linalg.norm(base)
        elif len(protos) > 1:
            base = protos[1 + int(rng.integers(len(protos) - 1))]
        else:
            base = np.zeros(spec.feature_dim)
        feat = base + rng.normal(0.0, sigma, size=spec.feature_dim)
        regions.append(Region(tuple(_bbox(rng)), feat))
    rec = MemeRecord(id=rid, text=" ".join(words), label=label, regions=regions)
    truth = {"id": rid, "keyword": spec.keyword, "region_idx": planted}
    return rec, truth


def _make_split(spec, protos, name, per_class, rng):
    plans = []
    for label in (1, 0):
        for k in range(per_class):
            plans.append((label, *_condition_plan(spec, label, k, rng)))
    order = rng.permutation(len(plans))
    records, truth = [], {}
    for i, p in enumerate(order):
        label, has_kw, has_region = plans[p]
        rec, t = _make_record(spec, protos, f"{name}-{i:05d}", label, has_kw, has_region, rng)
        records.append(rec)
        truth[rec.id] = t
    return DatasetSplit(records), truth


def synth_generate(spec: SyntheticSpec) -> SyntheticData:
    spec.validate()
    protos = make_prototypes(spec)
    rng = np.random.default_rng([spec.seed, 1, RULES.index(spec.rule)])
    train, truth = _make_split(spec, protos, "train", spec.train_per_class, rng)
    test, test_truth = _make_split(spec, protos, "test", spec.test_per_class, rng)
    truth.update(test_truth)
    return SyntheticData(train, test, truth, make_vocab(spec), protos)


def has_planted_region(record: MemeRecord, truth: dict, prototype: np.ndarray) -> bool:
    idx = truth.get("region_idx")
    if idx is None:
        return False
    return float(record.regions[idx].feature @ prototype) > 0.5


def rederive_label(record: MemeRecord, truth: dict, rule: str, prototype: np.ndarray) -> int:
    kw = truth["keyword"] in basic_split(record.text)
    vis = has_planted_region(record, truth, prototype)
    if rule == "text-only":
        return int(kw)
    if rule == "visual-only":
        return int(vis)
    return int(kw and vis)


def write_synthetic(data: SyntheticData, spec: SyntheticSpec, out_dir) -> list[Path]:
    """Write train/test/truth JSONL, the vocabulary, and a commented spec header."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_jsonl(data.train, out / "train.jsonl")
    save_jsonl(data.test, out / "test.jsonl")
    truth_lines = [json.dumps(data.truth[r.id], sort_keys=True) for r in [*data.train, *data.test]]
    (out / "truth.jsonl").write_text("".join(t + "\n" for t in truth_lines), encoding="utf-8")
    data.vocab.save(out / "vocab.txt")
    echo = json.dumps(spec.to_dict(), indent=2, sort_keys=True)
    header = "# memescope synthetic dataset\n# generated from spec:\n"
    header += "".join(f"# {line}\n" for line in echo.splitlines())
    (out / "HEADER.txt").write_text(header, encoding="utf-8")
    return [out / n for n in ("train.jsonl", "test.jsonl", "truth.jsonl", "vocab.txt", "HEADER.txt")]
