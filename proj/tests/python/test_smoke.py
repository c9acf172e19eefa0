import math
import os
import subprocess

import pytest

import msr


def test_probability_and_extraction():
    assert msr.interaction_probability(0.6, 0.2) == 0.75
    y, n = msr.extract_yes_no([("Yes", math.log(0.55)), ("no", math.log(0.10)), ("maybe", -3.0)])
    assert y == pytest.approx(0.55)
    assert n == pytest.approx(0.10)
    with pytest.raises(msr.MsrError):
        msr.extract_yes_no([("maybe", -0.1)], policy="error")


def test_blocks():
    blocks = msr.segment_blocks([f"i{k}" for k in range(7)], 3)
    assert [len(b) for b in blocks] == [3, 3, 1]


def test_metrics():
    negs = [(f"n{k}", k / 20) for k in range(20)]
    rec = msr.make_record("u", "p", 0.5, negs)
    brute = sum(1.0 if s < 0.5 else 0.5 if s == 0.5 else 0.0 for _, s in negs) / len(negs)
    assert msr.auc(rec) == pytest.approx(brute, abs=1e-12)
    assert msr.hit_rate(rec, 5) == 0
    assert msr.mrr(msr.make_record("u", "p", 1.0, negs), 5) == 1.0
    assert msr.t_half_width([1.0, 1.0, 1.0]) == 0.0


def test_fixture_end_to_end(tmp_path):
    msr.make_fixture(tmp_path, users=20)
    out = msr.run(tmp_path / "config.yaml")
    report = out["report"]
    assert len(report["per_fold"]) == 5
    assert all(f["auc"] == 1.0 and f["hr_at_k"] == 1.0 for f in report["per_fold"])

    again = msr.run(tmp_path / "config.yaml", force=True)
    assert again["manifest"]["backend_calls"] == 0
    assert again["report"] == report


def test_missing_stage_raises(tmp_path):
    msr.make_fixture(tmp_path, users=20)
    with pytest.raises(msr.DependencyError):
        msr.run(tmp_path / "config.yaml", stages=["score"])


def test_sft_export_round_trip(tmp_path):
    msr.make_fixture(tmp_path, users=20)
    msr.run(tmp_path / "config.yaml", stages=["ingest", "summarize-items", "infer-preferences", "build-sft"])
    exports = list((tmp_path / "work").rglob("fold0.jsonl"))
    sft = [p for p in exports if "build-sft" in str(p)]
    assert sft
    fold, ratio, examples = msr.load_sft_dataset(sft[0])
    assert fold == 0 and ratio == 1
    assert len(examples) == 2 * 16
    for ex in examples:
        assert ex["conversation"][-1] == {"role": "assistant", "text": ex["label"]}


@pytest.mark.skipif("MSR_BINARY" not in os.environ, reason="CLI binary not provided")
def test_cli_exit_codes(tmp_path):
    binary = os.environ["MSR_BINARY"]
    subprocess.run([binary, "make-fixture", str(tmp_path / "fx")], check=True, capture_output=True)
    cfg = str(tmp_path / "fx" / "config.yaml")
    missing = subprocess.run([binary, "-c", cfg, "score"], capture_output=True)
    assert missing.returncode == 3
    ok = subprocess.run([binary, "-c", cfg, "run"], capture_output=True, text=True)
    assert ok.returncode == 0, ok.stderr
