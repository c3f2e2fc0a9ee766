"""``memescope`` command line.

Exit codes: 0 success, 2 input/validation error, 3 query not found,
4 internal invariant violation (including a failed gradient check).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import defaultdict
from pathlib import Path

import numpy as np

from . import attention as attn
from . import attribution as attr
from .checkpoint import load_checkpoint, save_checkpoint
from .data import DatasetSplit, MemeRecord, load_jsonl
from .errors import CheckpointError, ValidationError
from .model import HATEFUL, NON_HATEFUL, ModelCheckpoint, ModelConfig, encode, forward_record, label_for, predict_logits, sigmoid
from .report import HeadOverlay, ReportDocument, render_html, word_colors
from .synth import SyntheticSpec, synth_generate, write_synthetic
from .tokenizer import WordPieceVocab, basic_split
from .training import TrainConfig, accuracy, train
from .verify import model_gradcheck, random_input

log = logging.getLogger("memescope")

EXIT_OK, EXIT_INPUT, EXIT_NOT_FOUND, EXIT_INTERNAL = 0, 2, 3, 4


class CLIError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _read_json(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise CLIError(EXIT_INPUT, f"file not found: {p}")
    try:
        return json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CLIError(EXIT_INPUT, f"{p}: malformed JSON ({exc.msg})") from exc


def _load_split(path) -> DatasetSplit:
    p = Path(path)
    if not p.is_file():
        raise CLIError(EXIT_INPUT, f"dataset file not found: {p}")
    return load_jsonl(p)


def _load_ckpt(path) -> ModelCheckpoint:
    p = Path(path)
    if not p.is_file():
        raise CLIError(EXIT_INPUT, f"checkpoint file not found: {p}")
    return load_checkpoint(p)


def _find(split: DatasetSplit, record_id: str) -> MemeRecord:
    rec = split.get(record_id)
    if rec is None:
        raise CLIError(EXIT_NOT_FOUND, f"record {record_id!r} not found")
    return rec


def _gold(label: int) -> str:
    return HATEFUL if label == 1 else NON_HATEFUL


# --------------------------------------------------------------------------
# synth / train


def cmd_synth(args) -> int:
    spec_dict = _read_json(args.spec) if args.spec else {}
    if args.seed is not None:
        spec_dict["seed"] = args.seed
    spec = SyntheticSpec.from_dict(spec_dict)
    data = synth_generate(spec)
    paths = write_synthetic(data, spec, args.out)
    sys.stdout.write(dump_json({"files": [p.name for p in paths], "train": len(data.train), "test": len(data.test)}))
    return EXIT_OK


def _model_config(cfg: dict, vocab: WordPieceVocab, split: DatasetSplit) -> ModelConfig:
    model = dict(cfg.get("model", {}))
    model.setdefault("vocab_size", len(vocab))
    if split.feature_dim is not None:
        model.setdefault("visual_feature_dim", split.feature_dim)
    return ModelConfig.desk(**model)


def cmd_train(args) -> int:
    cfg = _read_json(args.config) if args.config else {}
    split = _load_split(args.data)
    vocab_path = Path(args.vocab) if args.vocab else Path(args.data).with_name("vocab.txt")
    if vocab_path.is_file():
        vocab = WordPieceVocab.load(vocab_path)
    elif args.vocab:
        raise CLIError(EXIT_INPUT, f"vocabulary file not found: {vocab_path}")
    else:
        vocab = WordPieceVocab.build(w for r in split for w in basic_split(r.text))
    config = _model_config(cfg, vocab, split)
    hyper = dict(cfg.get("train", {}))
    for key in ("steps", "lr", "batch", "seed"):
        if getattr(args, key) is not None:
            hyper[key] = getattr(args, key)
    hp = TrainConfig(**hyper)
    ckpt = train(config, split, vocab, hp, log_every=args.log_every)
    digest = save_checkpoint(ckpt, args.out)
    loss_path = Path(str(args.out) + ".loss.json")
    _write(loss_path, dump_json({"loss_history": ckpt.meta["loss_history"], "seed": hp.seed}))
    summary = {
        "checkpoint": str(args.out),
        "sha256": digest,
        "final_loss": ckpt.meta["final_loss"],
        "train_accuracy": accuracy(ckpt, split),
    }
    if args.test:
        summary["test_accuracy"] = accuracy(ckpt, _load_split(args.test))
    sys.stdout.write(dump_json(summary))
    return EXIT_OK


# --------------------------------------------------------------------------
# stats


def cmd_stats(args) -> int:
    split = _load_split(args.data)
    if len(split) == 0:
        raise CLIError(EXIT_INPUT, f"dataset {args.data} is empty")
    names = args.name or []
    rows = []
    for i, path in enumerate(args.checkpoint):
        name = names[i] if i < len(names) else Path(path).stem
        stats = attr.dataset_modality_stats(_load_ckpt(path), split, args.target, model=name)
        rows.append(stats.to_json())
    payload = {"target": args.target, "dataset": str(args.data), "rows": rows}
    if args.json:
        _write(Path(args.json), dump_json(payload))
    sys.stdout.write(format_stats_table(rows))
    return EXIT_OK


def format_stats_table(rows: list[dict]) -> str:
    header = ["Model", "Text Avg", "Text Std", "Visual Avg", "Visual Std"]
    body = [
        [r["model"], f"{r['text_avg']:.3f}", f"{r['text_std']:.3f}", f"{r['visual_avg']:.3f}", f"{r['visual_std']:.3f}"]
        for r in rows
    ]
    widths = [max(len(h), *(len(b[i]) for b in body)) if body else len(h) for i, h in enumerate(header)]
    line = lambda cells: "| " + " | ".join(c.ljust(w) for c, w in zip(cells, widths)) + " |"  # noqa: E731
    sep = "|" + "|".join("-" * (w + 2) for w in widths) + "|"
    return "\n".join([line(header), sep, *(line(b) for b in body)]) + "\n"


# --------------------------------------------------------------------------
# align / explain


def alignment_report(ckpt: ModelCheckpoint, record: MemeRecord, keyword: str, heads: int = 4, regions: int = 9):
    """JSON payload and head overlays for one keyword in one record."""
    res = forward_record(ckpt, record)
    positions = attn.keyword_positions(res.encoded.tokens, keyword, ckpt.vocab)
    if not positions:
        raise CLIError(EXIT_NOT_FOUND, f"keyword {keyword!r} not found in record {record.id!r}")
    boxes = res.encoded.boxes
    overlays, head_json = [], []
    for layer, head, peak in attn.top_alignment_heads(res.trace, positions, heads):
        idx, masses = attn.top_regions_for_head(res.trace, positions, layer, head, regions)
        _, sep = attn.alignment_map(res.trace, positions, layer, head)
        overlays.append(HeadOverlay(layer, head, peak, idx, masses, [boxes[j].tolist() for j in idx]))
        head_json.append(
            {
                "layer": layer,
                "head": head,
                "peak_region_mass": peak,
                "sep_mass": sep,
                "noop_mass": attn.noop_mass(res.trace, positions, layer, head),
                "regions": [
                    {"index": j, "mass": m, "bbox": boxes[j].tolist()} for j, m in zip(idx, masses)
                ],
            }
        )
    payload = {
        "record_id": record.id,
        "keyword": keyword,
        "positions": positions,
        "pieces": [res.encoded.tokens.pieces[p] for p in positions],
        "heads": head_json,
        "noop_profile": attn.noop_profile(res.trace, positions),
        "alignment": attn.align(res.trace, positions, keyword).to_json(),
    }
    return payload, overlays, res


def cmd_align(args) -> int:
    ckpt = _load_ckpt(args.checkpoint)
    record = _find(_load_split(args.data), args.record_id)
    payload, overlays, res = alignment_report(ckpt, record, args.keyword, args.heads, args.regions)
    p = sigmoid(res.logit)
    doc = ReportDocument(
        record_id=record.id,
        text=record.text,
        gold_label=_gold(record.label),
        predicted_label=label_for(p),
        p_hateful=p,
        heads=overlays,
        keyword=args.keyword,
        image_path=args.image or None,
    )
    out = Path(args.out_dir)
    _write(out / f"{record.id}.align.json", dump_json(payload))
    _write(out / f"{record.id}.align.html", render_html(doc))
    sys.stdout.write(dump_json(payload))
    return EXIT_OK


def explain_record(ckpt: ModelCheckpoint, record: MemeRecord, method: str, steps: int, target: str):
    if method == "ig":
        result = attr.integrated_gradients(ckpt, record, target, steps=steps)
    elif method == "grad":
        result = attr.gradient_attribution(ckpt, record, target)
    else:
        raise CLIError(EXIT_INPUT, f"unknown method {method!r}")
    tokens = encode(ckpt, record).tokens
    words = attr.token_scores(result, tokens)
    modality = attr.modality_attribution(ckpt, record, target)
    logit = result.f_input if result.target == "hateful" else None
    if logit is None:
        logit = forward_record(ckpt, record).logit
    p = sigmoid(logit)
    payload = result.to_json(tokens)
    payload.update(
        {
            "gold_label": _gold(record.label),
            "predicted_label": label_for(p),
            "p_hateful": p,
            "modality": {"text": modality[0], "visual": modality[1]},
            "top_regions": attr.rank_regions(result.region_scores, 9),
        }
    )
    diagnostics = {}
    if result.completeness_delta is not None:
        diagnostics = {"completeness_delta": result.completeness_delta, "steps": result.steps}
    doc = ReportDocument(
        record_id=record.id,
        text=record.text,
        gold_label=_gold(record.label),
        predicted_label=label_for(p),
        p_hateful=p,
        words=word_colors(words),
        modality=modality,
        method=result.method,
        diagnostics=diagnostics,
    )
    return payload, doc, words


def cmd_explain(args) -> int:
    ckpt = _load_ckpt(args.checkpoint)
    record = _find(_load_split(args.data), args.record_id)
    payload, doc, _ = explain_record(ckpt, record, args.method, args.steps, args.target)
    out = Path(args.out_dir)
    _write(out / f"{record.id}.explain.json", dump_json(payload))
    _write(out / f"{record.id}.explain.html", render_html(doc))
    sys.stdout.write(dump_json(payload))
    return EXIT_OK


# --------------------------------------------------------------------------
# errors


def confusion(gold: np.ndarray, pred: np.ndarray) -> dict[str, int]:
    return {
        "tp": int(np.sum((gold == 1) & (pred == 1))),
        "fp": int(np.sum((gold == 0) & (pred == 1))),
        "tn": int(np.sum((gold == 0) & (pred == 0))),
        "fn": int(np.sum((gold == 1) & (pred == 0))),
    }


def aggregate_words(per_record: list[list[tuple[str, float]]], top: int = 10) -> list[dict]:
    """Mean positive word score x document frequency across records."""
    n = len(per_record)
    positives: dict[str, list[float]] = defaultdict(list)
    for words in per_record:
        merged: dict[str, float] = defaultdict(float)
        for w, s in words:
            merged[w] += s
        for w, s in merged.items():
            positives[w].append(max(s, 0.0))
    rows = []
    for w, vals in positives.items():
        mean_pos = float(np.mean(vals))
        df = len(vals) / n
        rows.append({"word": w, "score": mean_pos * df, "mean_positive": mean_pos, "doc_freq": df})
    rows.sort(key=lambda r: (-r["score"], r["word"]))
    return rows[:top]


def find_errors(ckpt: ModelCheckpoint, split: DatasetSplit, kind: str = "fp"):
    logits = predict_logits(ckpt, [encode(ckpt, r) for r in split])
    pred = np.array([1 if label_for(sigmoid(z)) == HATEFUL else 0 for z in logits])
    gold = split.labels
    if kind == "fp":
        sel = (gold == 0) & (pred == 1)
    elif kind == "fn":
        sel = (gold == 1) & (pred == 0)
    elif kind == "all":
        sel = gold != pred
    else:
        raise CLIError(EXIT_INPUT, f"unknown error type {kind!r}")
    return [split[i] for i in np.flatnonzero(sel)], confusion(gold, pred)


def cmd_errors(args) -> int:
    ckpt = _load_ckpt(args.checkpoint)
    split = _load_split(args.data)
    selected, conf = find_errors(ckpt, split, args.type)
    out = Path(args.out_dir)
    per_record = []
    for rec in selected:
        payload, doc, words = explain_record(ckpt, rec, "ig", args.steps, args.target)
        per_record.append(words)
        best = max(words, key=lambda ws: ws[1], default=None)
        if best is not None and best[1] > 0:
            try:
                align_payload, overlays, _ = alignment_report(ckpt, rec, best[0], args.heads, args.regions)
                doc.heads, doc.keyword = overlays, best[0]
                payload["alignment"] = align_payload
            except CLIError:
                pass  # keyword made only of [UNK] pieces cannot be located
        _write(out / "records" / f"{rec.id}.json", dump_json(payload))
        _write(out / "records" / f"{rec.id}.html", render_html(doc))
    summary = {
        "type": args.type,
        "count": len(selected),
        "confusion": conf,
        "record_ids": [r.id for r in selected],
        "top_words": aggregate_words(per_record, args.top_words) if per_record else [],
    }
    _write(out / "summary.json", dump_json(summary))
    sys.stdout.write(dump_json(summary))
    return EXIT_OK


# --------------------------------------------------------------------------
# gradcheck


def cmd_gradcheck(args) -> int:
    if args.fresh or not args.checkpoint:
        config = ModelConfig.desk()
        ckpt = ModelCheckpoint.fresh(config, seed=args.seed)
    else:
        ckpt = _load_ckpt(args.checkpoint)
    ids, feats, mask = random_input(ckpt.config, args.seed)
    report = model_gradcheck(ckpt, ids, feats, mask, samples=args.samples, seed=args.seed)
    sys.stdout.write(dump_json(report.to_json()))
    return EXIT_OK if report.passed else EXIT_INTERNAL


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="memescope", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a planted synthetic dataset")
    p.add_argument("--spec", help="synthetic spec JSON (defaults used if omitted)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train the reference classifier")
    p.add_argument("--config", help='JSON {"model": {...}, "train": {...}}')
    p.add_argument("--data", required=True, help="training JSONL")
    p.add_argument("--test", help="optional held-out JSONL for accuracy")
    p.add_argument("--vocab", help="vocabulary file (default: vocab.txt beside --data)")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--log-every", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("stats", help="dataset-level modality attribution table")
    p.add_argument("--checkpoint", action="append", required=True)
    p.add_argument("--name", action="append", help="row label per checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--target", choices=attr.TARGETS, default="hateful")
    p.add_argument("--json", help="also write the rows as JSON here")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("align", help="keyword-to-region attention report")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--record-id", required=True)
    p.add_argument("--keyword", required=True)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--regions", type=int, default=9)
    p.add_argument("--image", help="image file to reference under the boxes")
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("explain", help="word-level attribution report")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--record-id", required=True)
    p.add_argument("--method", choices=("ig", "grad"), default="ig")
    p.add_argument("--steps", type=int, default=64)
    p.add_argument("--target", choices=attr.TARGETS, default="hateful")
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("errors", help="error analysis over misclassified records")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--type", choices=("fp", "fn", "all"), default="fp")
    p.add_argument("--steps", type=int, default=64)
    p.add_argument("--target", choices=attr.TARGETS, default="hateful")
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--regions", type=int, default=9)
    p.add_argument("--top-words", type=int, default=10)
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_errors)

    p = sub.add_parser("gradcheck", help="finite-difference check of backward()")
    p.add_argument("--checkpoint")
    p.add_argument("--fresh", action="store_true", help="fresh desk model (2 layers, 4 heads, d=64, T=32, R=16)")
    p.add_argument("--samples", type=int, default=256)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except CLIError as exc:
        print(f"memescope: {exc}", file=sys.stderr)
        return exc.code
    except (ValidationError, CheckpointError, FileNotFoundError, TypeError) as exc:
        print(f"memescope: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
