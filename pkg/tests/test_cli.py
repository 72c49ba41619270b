import csv
import json
import re
import shutil
from pathlib import Path

import numpy as np
import pytest

from srbfl.cli import Exit, main
from srbfl.exports import MAIN_CHAIN_FILE, MANIFEST_FILE, METRICS_FILE

SAMPLE = Path(__file__).resolve().parents[1] / "configs" / "sample.json"


def write_config(tmp_path, **patch):
    raw = json.loads(SAMPLE.read_text())
    raw.update(patch)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(raw))
    return str(path)


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("run") / "out"
    assert main(["run", "--config", str(SAMPLE), "--out", str(out)]) == Exit.OK
    return out


def test_validate_sample(capsys):
    assert main(["validate", "--config", str(SAMPLE)]) == Exit.OK


def test_validate_rounds_zero(tmp_path, capsys):
    code = main(["validate", "--config", write_config(tmp_path, rounds=0)])
    assert code == Exit.CONFIG_INVALID
    assert "'rounds'" in capsys.readouterr().err


def test_validate_mix_over_one(tmp_path, capsys):
    mix = {"label_flip": 0.6, "free_rider": 0.3, "lazy": 0.3}
    code = main(["validate", "--config", write_config(tmp_path, adversaries=mix)])
    assert code == Exit.CONFIG_INVALID
    assert "'adversaries'" in capsys.readouterr().err


def test_validate_error_classes_are_distinct(tmp_path, capsys):
    assert main(["validate", "--config", str(tmp_path / "missing.json")]) == Exit.IO
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["validate", "--config", str(bad)]) == Exit.CONFIG_SYNTAX
    assert len({Exit.IO, Exit.CONFIG_SYNTAX, Exit.CONFIG_INVALID, Exit.RUNTIME, Exit.INTEGRITY}) == 5


def test_run_file_count(run_dir):
    chains = sorted(p.name for p in run_dir.glob("*.jsonl"))
    data = [METRICS_FILE] + chains
    assert len(data) == 2 + 4
    assert MAIN_CHAIN_FILE in chains
    assert (run_dir / MANIFEST_FILE).is_file()
    doc = json.loads((run_dir / MANIFEST_FILE).read_text())
    assert doc["seed"] == 7 and doc["config"]["tasks"]


def test_run_prints_one_line_per_round(tmp_path, capsys):
    main(["run", "--config", str(SAMPLE), "--out", str(tmp_path / "o")])
    lines = capsys.readouterr().out.splitlines()
    assert sum(line.startswith("round ") for line in lines) == 10


def test_run_is_byte_identical(run_dir, tmp_path):
    other = tmp_path / "again"
    assert main(["run", "--config", str(SAMPLE), "--out", str(other)]) == Exit.OK
    for path in sorted(run_dir.glob("*.jsonl")) + [run_dir / METRICS_FILE, run_dir / MANIFEST_FILE]:
        assert path.read_bytes() == (other / path.name).read_bytes(), path.name


def test_seed_override_changes_output(run_dir, tmp_path):
    other = tmp_path / "s8"
    assert main(["run", "--config", str(SAMPLE), "--out", str(other), "--seed", "8"]) == Exit.OK
    assert (other / METRICS_FILE).read_bytes() != (run_dir / METRICS_FILE).read_bytes()
    assert json.loads((other / MANIFEST_FILE).read_text())["seed"] == 8


def test_rerun_from_manifest(run_dir, tmp_path):
    other = tmp_path / "from_manifest"
    assert main(["run", "--config", str(run_dir / MANIFEST_FILE), "--out", str(other)]) == Exit.OK
    assert (other / METRICS_FILE).read_bytes() == (run_dir / METRICS_FILE).read_bytes()


def test_unwritable_out_leaves_nothing(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    out = blocker / "run"
    assert main(["run", "--config", str(SAMPLE), "--out", str(out)]) == Exit.IO
    assert sorted(p.name for p in tmp_path.iterdir()) == ["file"]


def test_out_is_a_file(tmp_path, capsys):
    target = tmp_path / "taken"
    target.write_text("x")
    assert main(["run", "--config", str(SAMPLE), "--out", str(target)]) == Exit.IO
    assert target.read_text() == "x"
    assert sorted(p.name for p in tmp_path.iterdir()) == ["taken"]


def test_verify_untouched(run_dir, capsys):
    assert main(["verify", "--out", str(run_dir)]) == Exit.OK
    for chain in sorted(run_dir.glob("shard_*.jsonl")):
        assert main(["verify", str(chain)]) == Exit.OK


def test_verify_empty_chain(tmp_path, capsys):
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    assert main(["verify", str(empty)]) == Exit.OK


def test_verify_parse_error_is_distinct(tmp_path, capsys):
    junk = tmp_path / "junk.jsonl"
    junk.write_text("{not json\n")
    assert main(["verify", str(junk)]) == Exit.PARSE


def test_verify_detects_hex_digit_edits(run_dir, tmp_path, capsys):
    work = tmp_path / "w"
    shutil.copytree(run_dir, work)
    rng = np.random.default_rng(0)
    chains = sorted(work.glob("*.jsonl"))
    originals = {p: p.read_text() for p in chains}
    for _ in range(200):
        path = chains[int(rng.integers(len(chains)))]
        lines = originals[path].splitlines(keepends=True)
        k = int(rng.integers(len(lines)))
        spots = [m.start() for m in re.finditer(r"[0-9a-f]", lines[k])]
        i = spots[int(rng.integers(len(spots)))]
        new = str(rng.choice([c for c in "0123456789abcdef" if c != lines[k][i]]))
        lines[k] = lines[k][:i] + new + lines[k][i + 1 :]
        path.write_text("".join(lines))
        code = main(["verify", str(path)])
        assert code in (Exit.INTEGRITY, Exit.PARSE), (path.name, k, i)
        path.write_text(originals[path])
    capsys.readouterr()


def test_verify_reports_first_bad_height(run_dir, tmp_path, capsys):
    work = tmp_path / "w"
    shutil.copytree(run_dir, work)
    path = work / "shard_0.jsonl"
    lines = path.read_text().splitlines(keepends=True)
    doc = json.loads(lines[1])
    doc["transactions"][0]["claimed_accuracy"] = 0.5
    lines[1] = json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"
    path.write_text("".join(lines))
    capsys.readouterr()
    assert main(["verify", str(path)]) == Exit.INTEGRITY
    assert capsys.readouterr().out.startswith("FAIL: block 1:")


def test_verify_missing_payload(run_dir, tmp_path, capsys):
    work = tmp_path / "w"
    shutil.copytree(run_dir, work)
    payload = sorted((work / "offchain").iterdir())[0]
    payload.unlink()
    codes = [main(["verify", str(p)]) for p in sorted(work.glob("*.jsonl"))]
    assert Exit.INTEGRITY in codes


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_report_rows_and_idempotence(run_dir, capsys):
    assert main(["report", "--out", str(run_dir)]) == Exit.OK
    rows = read_csv(run_dir / "report_rounds.csv")
    assert len(rows) - 1 == 10
    first = {p.name: p.read_bytes() for p in run_dir.glob("report_*.csv")}
    assert main(["report", "--out", str(run_dir)]) == Exit.OK
    assert {p.name: p.read_bytes() for p in run_dir.glob("report_*.csv")} == first
    assert len(first) == 3


def test_report_compare_columns(run_dir, tmp_path, capsys):
    off = tmp_path / "off"
    assert main(["run", "--config", str(SAMPLE), "--out", str(off), "--gating", "off"]) == Exit.OK
    assert main(["report", "--out", str(run_dir), "--compare", str(off)]) == Exit.OK
    header = read_csv(run_dir / "report_rounds.csv")[0]
    assert "accuracy_gating_on" in header and "accuracy_gating_off" in header
    main(["report", "--out", str(run_dir)])


def test_report_missing_inputs(tmp_path, capsys):
    assert main(["report", "--out", str(tmp_path)]) != Exit.OK


def test_usage_errors():
    with pytest.raises(SystemExit) as exc:
        main(["verify"])
    assert exc.value.code == 2
