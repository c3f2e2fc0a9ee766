import json

import pytest

from memescope.cli import aggregate_words, confusion, format_stats_table, main

import numpy as np


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    spec = {"rule": "conjunction", "train_per_class": 24, "test_per_class": 6, "num_regions": 8, "min_regions": 6}
    (root / "spec.json").write_text(json.dumps(spec))
    assert main(["synth", "--spec", str(root / "spec.json"), "--out", str(root / "data")]) == 0
    cfg = {"model": {"num_layers": 1, "num_heads": 2, "hidden_dim": 16, "max_text_len": 16, "num_regions": 8},
           "train": {"steps": 15, "batch": 8, "lr": 0.003}}
    (root / "cfg.json").write_text(json.dumps(cfg))
    rc = main(["train", "--config", str(root / "cfg.json"), "--data", str(root / "data/train.jsonl"),
               "--test", str(root / "data/test.jsonl"), "--out", str(root / "m.mmxp"), "--seed", "1"])
    assert rc == 0
    return root


def _first_positive(root):
    for line in (root / "data/test.jsonl").read_text().splitlines():
        rec = json.loads(line)
        if rec["label"] == 1:
            return rec["id"]


def test_synth_and_train_outputs(workspace, capsys):
    assert {p.name for p in (workspace / "data").iterdir()} >= {"train.jsonl", "test.jsonl", "truth.jsonl", "vocab.txt", "HEADER.txt"}
    loss = json.loads((workspace / "m.mmxp.loss.json").read_text())
    assert len(loss["loss_history"]) == 15 and loss["seed"] == 1


def test_train_is_reproducible(workspace, tmp_path, capsys):
    args = ["train", "--config", str(workspace / "cfg.json"), "--data", str(workspace / "data/train.jsonl"), "--seed", "1"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert (tmp_path / "a").read_bytes() == (workspace / "m.mmxp").read_bytes()


def test_stats_table_and_json(workspace, tmp_path, capsys):
    ck = str(workspace / "m.mmxp")
    rc = main(["stats", "--checkpoint", ck, "--checkpoint", ck, "--name", "A", "--name", "B",
               "--data", str(workspace / "data/test.jsonl"), "--json", str(tmp_path / "s.json")])
    assert rc == 0
    lines = capsys.readouterr().out.splitlines()
    assert [c.strip() for c in lines[0].strip("|").split("|")] == ["Model", "Text Avg", "Text Std", "Visual Avg", "Visual Std"]
    assert set(lines[1]) <= {"|", "-"}
    cells = [c.strip() for c in lines[2].strip("|").split("|")]
    assert cells[0] == "A" and all(len(c.split(".")[1]) == 3 for c in cells[1:])
    rows = json.loads((tmp_path / "s.json").read_text())["rows"]
    assert rows[0]["sample_count"] == 12 and rows[0]["text_avg"] == rows[1]["text_avg"]


def test_stats_table_formatting():
    table = format_stats_table([{"model": "VisualBERT", "text_avg": 3.1834, "text_std": 0.9, "visual_avg": 4.0956, "visual_std": 0.7741}])
    assert "| VisualBERT | 3.183    | 0.900    | 4.096      | 0.774      |" in table


def test_stats_empty_dataset_exits_2(workspace, tmp_path, capsys):
    (tmp_path / "empty.jsonl").write_text("")
    assert main(["stats", "--checkpoint", str(workspace / "m.mmxp"), "--data", str(tmp_path / "empty.jsonl")]) == 2
    assert "empty" in capsys.readouterr().err


def test_missing_files_exit_2_and_name_path(workspace, tmp_path, capsys):
    missing = tmp_path / "nope.jsonl"
    assert main(["stats", "--checkpoint", str(workspace / "m.mmxp"), "--data", str(missing)]) == 2
    assert str(missing) in capsys.readouterr().err
    assert main(["explain", "--checkpoint", str(tmp_path / "x.mmxp"), "--data", str(workspace / "data/test.jsonl"), "--record-id", "a"]) == 2
    assert "x.mmxp" in capsys.readouterr().err


def test_corrupt_checkpoint_exits_2(workspace, tmp_path, capsys):
    blob = (workspace / "m.mmxp").read_bytes()
    (tmp_path / "bad.mmxp").write_bytes(blob[:100])
    assert main(["gradcheck", "--checkpoint", str(tmp_path / "bad.mmxp"), "--samples", "10"]) == 2
    assert "truncated" in capsys.readouterr().err


def test_explain_writes_json_and_html_and_is_byte_stable(workspace, tmp_path, capsys):
    rid = _first_positive(workspace)
    args = ["explain", "--checkpoint", str(workspace / "m.mmxp"), "--data", str(workspace / "data/test.jsonl"),
            "--record-id", rid, "--steps", "16"]
    assert main(args + ["--out-dir", str(tmp_path / "a")]) == 0
    assert main(args + ["--out-dir", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / f"{rid}.explain.json").read_bytes()
    assert a == (tmp_path / "b" / f"{rid}.explain.json").read_bytes()
    payload = json.loads(a)
    assert payload["method"] == "integrated-gradients" and payload["steps"] == 16
    assert "dishwasher" in [w["word"] for w in payload["text_scores"]]
    html = (tmp_path / "a" / f"{rid}.explain.html").read_text()
    assert html.startswith("<!DOCTYPE html>") and "completeness_delta" in html


def test_explain_grad_method(workspace, tmp_path, capsys):
    rid = _first_positive(workspace)
    rc = main(["explain", "--checkpoint", str(workspace / "m.mmxp"), "--data", str(workspace / "data/test.jsonl"),
               "--record-id", rid, "--method", "grad", "--out-dir", str(tmp_path)])
    assert rc == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["method"] == "raw-gradient" and payload["completeness_delta"] is None


def test_unknown_record_exits_3(workspace, capsys):
    rc = main(["explain", "--checkpoint", str(workspace / "m.mmxp"), "--data", str(workspace / "data/test.jsonl"), "--record-id", "nope"])
    assert rc == 3 and "nope" in capsys.readouterr().err


def test_align_report_and_absent_keyword(workspace, tmp_path, capsys):
    rid = _first_positive(workspace)
    base = ["align", "--checkpoint", str(workspace / "m.mmxp"), "--data", str(workspace / "data/test.jsonl"), "--record-id", rid]
    assert main(base + ["--keyword", "dishwasher", "--heads", "2", "--regions", "3", "--out-dir", str(tmp_path)]) == 0
    payload = json.loads((tmp_path / f"{rid}.align.json").read_text())
    assert payload["pieces"] == ["dish", "##wash", "##er"]
    assert len(payload["heads"]) == 2 and all(len(h["regions"]) == 3 for h in payload["heads"])
    assert set(payload["alignment"]["heads"]) == {"L0H0", "L0H1"}
    assert "<svg" in (tmp_path / f"{rid}.align.html").read_text()
    assert main(base + ["--keyword", "zebra", "--out-dir", str(tmp_path)]) == 3


def test_errors_summary(workspace, tmp_path, capsys):
    rc = main(["errors", "--checkpoint", str(workspace / "m.mmxp"), "--data", str(workspace / "data/test.jsonl"),
               "--type", "all", "--steps", "8", "--out-dir", str(tmp_path)])
    assert rc == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    c = summary["confusion"]
    assert c["tp"] + c["fp"] + c["tn"] + c["fn"] == 12
    assert summary["count"] == c["fp"] + c["fn"] == len(summary["record_ids"])
    for rid in summary["record_ids"]:
        assert (tmp_path / "records" / f"{rid}.html").exists()


def test_gradcheck_fresh_passes(capsys):
    assert main(["gradcheck", "--fresh", "--samples", "40"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["passed"] and report["coordinates"] >= 40


def test_aggregate_words_and_confusion():
    rows = aggregate_words([[("dish", 1.0), ("goat", -0.5)], [("dish", 0.5), ("dish", 0.5), ("the", 0.2)], [("the", 0.4)]], top=3)
    assert rows[0]["word"] == "dish" and rows[0]["score"] == pytest.approx(1.0 * 2 / 3)
    assert rows[1]["word"] == "the" and rows[1]["doc_freq"] == pytest.approx(2 / 3)
    assert rows[2] == {"word": "goat", "score": 0.0, "mean_positive": 0.0, "doc_freq": pytest.approx(1 / 3)}
    assert confusion(np.array([1, 0, 1, 0]), np.array([1, 1, 0, 0])) == {"tp": 1, "fp": 1, "tn": 1, "fn": 1}
