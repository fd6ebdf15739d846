import csv
import json
from pathlib import Path

import pytest

from tcfprobe import cli
from tcfprobe.corpus import bundled_fixture_path, candidate_set, load_resource

CORPUS = str(bundled_fixture_path())


def oracle_config(tmp_path, out_name="run", **probe_overrides):
    out_dir = tmp_path / out_name
    probe = {"k": 0, "seed": 7, "vocab": "open", "direction": "both"}
    probe.update(probe_overrides)
    doc = {
        "corpus": CORPUS,
        "out_dir": str(out_dir),
        "bin_size": 10,
        "backend": {"kind": "oracle", "error_rate": 0.0, "seed": 7, "parallelism": 2},
        "probe": probe,
    }
    cfg = tmp_path / f"{out_name}.json"
    cfg.write_text(json.dumps(doc))
    return cfg, out_dir


def read_rows(path):
    return [json.loads(line) for line in Path(path).read_text().splitlines()]


def strip_volatile(rows):
    return [{k: v for k, v in row.items() if k not in ("latency_s", "timestamp")} for row in rows]


# ---------------------------------------------------------------------------
# validate / stats / split
# ---------------------------------------------------------------------------

def test_validate_ok(capsys):
    assert cli.main(["validate", "--corpus", CORPUS]) == 0
    assert "no violations" in capsys.readouterr().out


def test_validate_broken_fixture_exit_2(tmp_path, capsys):
    doc = json.loads(Path(CORPUS).read_text())
    doc["entries"][0]["timeline"] = doc["entries"][0]["timeline"][:1]
    broken = tmp_path / "broken.json"
    broken.write_text(json.dumps(doc))
    assert cli.main(["validate", "--corpus", str(broken)]) == 2
    out = capsys.readouterr().out
    assert "timeline has >= 2 entries" in out


def test_stats_prints_json(capsys):
    assert cli.main(["stats", "--corpus", CORPUS]) == 0
    stats = json.loads(capsys.readouterr().out)
    assert stats["n_pairs"] == 3
    assert stats["n_samples"] == 36


def test_split_reproducible_files(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert cli.main(["split", "--corpus", CORPUS, "--ratio", "0.3", "--seed", "7", "--out-dir", str(out)]) == 0
    assert (a / "train.json").read_bytes() == (b / "train.json").read_bytes()
    assert (a / "test.json").read_bytes() == (b / "test.json").read_bytes()
    train = load_resource(a / "train.json")
    test = load_resource(a / "test.json")
    assert {e.id for e in train}.isdisjoint({e.id for e in test})
    assert len(train) + len(test) == 3


def test_split_bad_ratio_usage_error(tmp_path):
    assert cli.main(["split", "--corpus", CORPUS, "--ratio", "1.5", "--out-dir", str(tmp_path)]) == 1


def test_unknown_subcommand_usage_error():
    assert cli.main(["frobnicate"]) == 1


# ---------------------------------------------------------------------------
# probe / eval
# ---------------------------------------------------------------------------

def test_probe_perfect_oracle_writes_gold_rows(tmp_path):
    cfg, out_dir = oracle_config(tmp_path)
    assert cli.main(["probe", "--config", str(cfg)]) == 0
    rows = read_rows(out_dir / "results.jsonl")
    assert len(rows) == 36
    corpus = load_resource(CORPUS)
    for row in rows:
        entry = corpus.entry(row["sr_id"])
        step = 1 if row["direction"] == "forward" else -1
        gold = entry.timeline[row["key_time_index"] + step].name
        assert row["raw_text"] == gold


def test_probe_shot_count_changes_prompt_hashes(tmp_path):
    cfg0, out0 = oracle_config(tmp_path, "k0", k=0)
    cfg2, out2 = oracle_config(tmp_path, "k2", k=2)
    assert cli.main(["probe", "--config", str(cfg0)]) == 0
    assert cli.main(["probe", "--config", str(cfg2)]) == 0
    hashes0 = {r["prompt_sha256"] for r in read_rows(out0 / "results.jsonl")}
    hashes2 = {r["prompt_sha256"] for r in read_rows(out2 / "results.jsonl")}
    assert hashes0.isdisjoint(hashes2)


def test_probe_resume_matches_uninterrupted_run(tmp_path):
    cfg_full, out_full = oracle_config(tmp_path, "full")
    assert cli.main(["probe", "--config", str(cfg_full)]) == 0
    full_rows = strip_volatile(read_rows(out_full / "results.jsonl"))

    cfg_part, out_part = oracle_config(tmp_path, "part")
    assert cli.main(["probe", "--config", str(cfg_part)]) == 0
    results = out_part / "results.jsonl"
    lines = results.read_text().splitlines()
    results.write_text("\n".join(lines[:10]) + "\n" + '{"torn')  # simulate a crash mid-write
    assert cli.main(["probe", "--config", str(cfg_part)]) == 0
    assert strip_volatile(read_rows(results)) == full_rows


def test_probe_toml_config(tmp_path):
    out_dir = tmp_path / "toml-run"
    cfg = tmp_path / "run.toml"
    cfg.write_text(
        f'corpus = "{CORPUS}"\n'
        f'out_dir = "{out_dir}"\n'
        "[backend]\n"
        'kind = "oracle"\n'
        "error_rate = 0.0\n"
        "parallelism = 1\n"
        "[probe]\n"
        "k = 0\n"
        "seed = 1\n"
    )
    assert cli.main(["probe", "--config", str(cfg)]) == 0
    assert len(read_rows(out_dir / "results.jsonl")) == 36


def test_eval_perfect_run_reports_hundreds(tmp_path):
    cfg, out_dir = oracle_config(tmp_path)
    assert cli.main(["probe", "--config", str(cfg)]) == 0
    report_dir = tmp_path / "report"
    assert cli.main([
        "eval", "--results", str(out_dir / "results.jsonl"),
        "--corpus", CORPUS, "--out-dir", str(report_dir),
    ]) == 0
    report = json.loads((report_dir / "report.json").read_text())
    for metric in ("temp_fact", "temp_cons", "temp_cons_fact", "succ_patt", "succ_objs"):
        assert report["overall"][metric] == {"avg": 100.0, "bwd": 100.0, "fwd": 100.0}
    assert set(report["by_entity_type"]) == {"album", "movie", "software"}


def test_eval_csv_column_grouping(tmp_path):
    cfg, out_dir = oracle_config(tmp_path)
    cli.main(["probe", "--config", str(cfg)])
    report_dir = tmp_path / "report"
    cli.main([
        "eval", "--results", str(out_dir / "results.jsonl"),
        "--corpus", CORPUS, "--out-dir", str(report_dir),
    ])
    with open(report_dir / "report.csv") as fh:
        header = next(csv.reader(fh))
    assert header[:9] == [
        "temp_fact_avg", "temp_fact_bwd", "temp_fact_fwd",
        "temp_cons_avg", "temp_cons_bwd", "temp_cons_fwd",
        "temp_cons_fact_avg", "temp_cons_fact_bwd", "temp_cons_fact_fwd",
    ]
    assert (report_dir / "bins.csv").exists()
    assert (report_dir / "entity_types.csv").exists()


def test_eval_partial_results_exit_2(tmp_path):
    cfg, out_dir = oracle_config(tmp_path)
    cli.main(["probe", "--config", str(cfg)])
    results = out_dir / "results.jsonl"
    lines = results.read_text().splitlines()
    results.write_text("\n".join(lines[:20]) + "\n")
    assert cli.main([
        "eval", "--results", str(results), "--corpus", CORPUS, "--out-dir", str(tmp_path / "r"),
    ]) == 2


def test_closed_vocab_choices_come_from_candidate_set(tmp_path):
    cfg, out_dir = oracle_config(tmp_path, "closed", vocab="closed")
    assert cli.main(["probe", "--config", str(cfg)]) == 0
    corpus = load_resource(CORPUS)
    rows = read_rows(out_dir / "results.jsonl")
    for row in rows:
        assert row["closed_vocab_choice"] in candidate_set(corpus, row["sr_id"]).candidates
    report_dir = tmp_path / "closed-report"
    assert cli.main([
        "eval", "--results", str(out_dir / "results.jsonl"),
        "--corpus", CORPUS, "--out-dir", str(report_dir),
    ]) == 0
    report = json.loads((report_dir / "report.json").read_text())
    assert report["overall"]["temp_fact"]["avg"] == 100.0


def test_probe_backend_failure_exit_3(tmp_path):
    out_dir = tmp_path / "http-run"
    doc = {
        "corpus": CORPUS,
        "out_dir": str(out_dir),
        "backend": {"kind": "http", "base_url": "http://127.0.0.1:9", "model": "m", "parallelism": 1},
        "probe": {"k": 0, "max_new_tokens": 4},
    }
    cfg = tmp_path / "http.json"
    cfg.write_text(json.dumps(doc))
    assert cli.main(["probe", "--config", str(cfg)]) == 3


# ---------------------------------------------------------------------------
# gen-itdata / reward / kl
# ---------------------------------------------------------------------------

def test_gen_itdata_jsonl(tmp_path):
    out = tmp_path / "it.jsonl"
    assert cli.main([
        "gen-itdata", "--corpus", CORPUS, "--out", str(out),
        "--k2-pairs", "10", "--negative-ratio", "0.5", "--context-mode", "subject_relation_line",
        "--seed", "3",
    ]) == 0
    rows = read_rows(out)
    assert len(rows) == 46
    assert {r["task"] for r in rows} == {"k1", "k2"}
    assert all(set(r) == {"task", "instruction", "input", "context", "output"} for r in rows)


def test_reward_score_files(tmp_path):
    infile = tmp_path / "req.jsonl"
    outfile = tmp_path / "scores.jsonl"
    lines = [
        json.dumps({"id": "1", "task": "k1", "generated": "Meteora", "gold": "meteora"}),
        "oops",
        json.dumps({"id": "3", "task": "k2", "generated": "true", "gold": "false"}),
    ]
    infile.write_text("\n".join(lines) + "\n")
    assert cli.main([
        "reward", "score", "--in", str(infile), "--out", str(outfile), "--corpus", CORPUS,
    ]) == 0
    rows = read_rows(outfile)
    assert len(rows) == 3
    assert rows[0]["total"] == pytest.approx(0.34)
    assert "error" in rows[1]


def test_kl_report_shape_and_rerun_identity(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    base = ["kl", "--corpus", CORPUS, "--entries", "3", "--pairs", "1", "--seed", "5"]
    assert cli.main(base + ["--out-dir", str(a)]) == 0
    assert cli.main(base + ["--out-dir", str(b)]) == 0
    assert (a / "kl.csv").read_bytes() == (b / "kl.csv").read_bytes()
    with open(a / "kl.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["sr_id", "pp", "ap", "diff"]
    assert len(rows) == 5  # three entries plus the average row
    assert rows[-1][0] == "average"


def test_kl_with_baseline_delta_column(tmp_path):
    first = tmp_path / "first"
    base = ["kl", "--corpus", CORPUS, "--entries", "3", "--pairs", "1", "--seed", "5"]
    assert cli.main(base + ["--out-dir", str(first)]) == 0
    second = tmp_path / "second"
    assert cli.main(base + ["--out-dir", str(second), "--baseline", str(first / "kl.json")]) == 0
    with open(second / "kl.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0][-1] == "delta"
    assert all(float(row[-1]) == 0.0 for row in rows[1:])
