import numpy as np
import pytest

from memescope.data import MemeRecord, Region
from memescope.model import ModelCheckpoint, ModelConfig
from memescope.tokenizer import WordPieceVocab

WORDS = ["goat", "truck", "woman", "the", "a", "very", "dishwasher", "happy", "day"]
PIECES = {"dishwasher": ["dish", "##wash", "##er"]}


@pytest.fixture
def vocab():
    return WordPieceVocab.build(WORDS, PIECES)


def make_record(rid="r0", text="the goat in a truck", label=1, n_regions=5, dim=8, seed=0):
    rng = np.random.default_rng(seed)
    regions = []
    for _ in range(n_regions):
        x1, y1 = rng.uniform(0, 0.5, size=2)
        regions.append(Region((float(x1), float(y1), float(x1) + 0.3, float(y1) + 0.4), rng.normal(size=dim)))
    return MemeRecord(id=rid, text=text, label=label, regions=regions)


@pytest.fixture
def small_ckpt(vocab):
    cfg = ModelConfig(
        num_layers=2, num_heads=2, hidden_dim=16, vocab_size=len(vocab),
        visual_feature_dim=8, max_text_len=12, num_regions=6,
    )
    return ModelCheckpoint.fresh(cfg, seed=3, vocab=vocab)


# acceptance criteria report: filled by test_acceptance.py, printed once at the end
CRITERIA: dict[int, str] = {}


def record_criterion(number: int, name: str, passed: bool, detail: str) -> None:
    CRITERIA[number] = f"[criterion {number}] {'PASS' if passed else 'FAIL'} {name}: {detail}"


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for number in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[number])
