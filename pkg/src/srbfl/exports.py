"""Run outputs: metrics CSV, chain exports, run manifest, and reports.

``metrics.csv`` has one ``device`` row per device per round, one ``round``
summary row per round, and one ``settlement`` row per account after the
final round. Reals are written with ``repr`` so they round-trip exactly.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import shutil
import tempfile
from collections import defaultdict
from pathlib import Path

from . import __version__
from .config import config_to_dict
from .ledger import export_chain
from .sim import SimulationResult

METRICS_FILE = "metrics.csv"
MAIN_CHAIN_FILE = "main_chain.jsonl"
MANIFEST_FILE = "manifest.json"
OFFCHAIN_DIR = "offchain"

METRICS_COLUMNS = [
    "row_type",
    "round",
    "device_id",
    "shard_id",
    "task_id",
    "behavior",
    "eligible",
    "submitted",
    "committed",
    "belief",
    "disbelief",
    "uncertainty",
    "expected",
    "accuracy",
    "global_loss",
    "credits",
]


def shard_chain_file(shard: int) -> str:
    return f"shard_{shard}.jsonl"


def _num(x) -> str:
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, float):
        return repr(x)
    return str(x)


def metrics_csv(result: SimulationResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRICS_COLUMNS)
    task_of_shard = {s: t for t, s in result.task_shard.items()}
    for m in result.metrics:
        for d in sorted(m.opinions):
            o = m.opinions[d]
            shard = m.shard_of[d]
            task = task_of_shard.get(shard)
            w.writerow(
                [
                    "device",
                    m.round,
                    d,
                    shard,
                    "" if task is None else task,
                    result.behaviors[d].name,
                    _num(m.eligible[d]),
                    _num(d in m.submitted),
                    _num(d in m.committed_devices),
                    _num(o.belief),
                    _num(o.disbelief),
                    _num(o.uncertainty),
                    _num(o.expected),
                    "" if task is None else _num(m.accuracy[task]),
                    "" if task is None else _num(m.global_loss[task]),
                    _num(float(m.credits.get(d, 0.0))),
                ]
            )
        w.writerow(
            [
                "round",
                m.round,
                "",
                "",
                "",
                "",
                sum(m.eligible.values()),
                len(m.submitted),
                m.total_committed,
                "",
                "",
                "",
                "",
                _num(m.mean_accuracy),
                _num(float(sum(m.global_loss.values()) / max(1, len(m.global_loss)))),
                _num(math.fsum(float(v) for v in m.credits.values())),
            ]
        )
    last = result.metrics[-1].round if result.metrics else 0
    accounts = sorted(result.credits.balances, key=lambda a: (isinstance(a, str), a))
    for account in accounts:
        w.writerow(
            ["settlement", last, account] + [""] * 12 + [_num(float(result.credits.balances[account]))]
        )
    return buf.getvalue()


def manifest(result: SimulationResult, outputs: list[str]) -> dict:
    return {
        "artifact_version": __version__,
        "seed": result.config.seed,
        "config": config_to_dict(result.config),
        "outputs": outputs,
        "rounds_executed": result.rounds_executed,
        "main_chain_head": result.main_chain.head_digest.hex(),
        "gating": result.config.gating,
        "status": "ok",
    }


def write_run(result: SimulationResult, out_dir: str | os.PathLike) -> list[str]:
    """Write every run output into ``out_dir`` all-or-nothing.

    Files are staged in a sibling temporary directory and moved in only once
    all of them were written. Returns the output file names.
    """
    out_dir = Path(out_dir)
    parent = out_dir.parent
    if out_dir.exists() and (not out_dir.is_dir() or not os.access(out_dir, os.W_OK)):
        raise PermissionError(f"output directory {out_dir} is not writable")
    parent.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix=".srbfl-staging-", dir=parent))
    try:
        names = [METRICS_FILE, MAIN_CHAIN_FILE]
        (staging / METRICS_FILE).write_text(metrics_csv(result), encoding="utf-8", newline="")
        export_chain(result.main_chain, staging / MAIN_CHAIN_FILE)
        for shard, chain in sorted(result.sub_chains.items()):
            export_chain(chain, staging / shard_chain_file(shard))
            names.append(shard_chain_file(shard))
        result.store.save(staging / OFFCHAIN_DIR)
        doc = manifest(result, names + [OFFCHAIN_DIR + "/"])
        (staging / MANIFEST_FILE).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        if not out_dir.exists():
            os.replace(staging, out_dir)
        else:
            for entry in sorted(staging.iterdir()):
                target = out_dir / entry.name
                if target.is_dir():
                    shutil.rmtree(target)
                os.replace(entry, target)
            staging.rmdir()
    except BaseException:
        shutil.rmtree(staging, ignore_errors=True)
        raise
    return names + [MANIFEST_FILE]


# --- reports ----------------------------------------------------------------

class ReportInputError(Exception):
    pass


def read_metrics(out_dir: str | os.PathLike) -> tuple[list[dict], dict]:
    out_dir = Path(out_dir)
    metrics_path = out_dir / METRICS_FILE
    manifest_path = out_dir / MANIFEST_FILE
    for p in (metrics_path, manifest_path):
        if not p.is_file():
            raise ReportInputError(f"missing run output {p}")
    with open(metrics_path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or set(METRICS_COLUMNS) - set(rows[0]):
        raise ReportInputError(f"{metrics_path} does not have the metrics columns")
    try:
        doc = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ReportInputError(f"{manifest_path}: {exc}") from None
    return rows, doc


def _label(doc: dict) -> str:
    return "gating_on" if doc.get("gating", True) else "gating_off"


def round_table(rows: list[dict], doc: dict) -> tuple[list[str], list[list[str]]]:
    per_round = [r for r in rows if r["row_type"] == "round"]
    devices = [r for r in rows if r["row_type"] == "device"]
    tasks = sorted({int(r["task_id"]) for r in devices if r["task_id"]})
    shards = sorted({int(r["shard_id"]) for r in devices})
    behaviors = sorted({r["behavior"] for r in devices})
    task_acc: dict[tuple[int, int], str] = {}
    commits: dict[tuple[int, int], int] = defaultdict(int)
    exp_sum: dict[tuple[int, str], float] = defaultdict(float)
    exp_n: dict[tuple[int, str], int] = defaultdict(int)
    for r in devices:
        t = int(r["round"])
        if r["task_id"]:
            task_acc[(t, int(r["task_id"]))] = r["accuracy"]
        commits[(t, int(r["shard_id"]))] += int(r["committed"])
        exp_sum[(t, r["behavior"])] += float(r["expected"])
        exp_n[(t, r["behavior"])] += 1
    label = _label(doc)
    header = ["round", f"accuracy_{label}"]
    header += [f"accuracy_task_{k}" for k in tasks]
    header += ["committed_total"] + [f"committed_shard_{s}" for s in shards]
    header += ["eligible_devices"] + [f"mean_expected_{b}" for b in behaviors]
    body = []
    for r in per_round:
        t = int(r["round"])
        line = [r["round"], r["accuracy"]]
        line += [task_acc.get((t, k), "") for k in tasks]
        line += [r["committed"]] + [str(commits[(t, s)]) for s in shards]
        line += [r["eligible"]]
        line += [repr(exp_sum[(t, b)] / exp_n[(t, b)]) if exp_n[(t, b)] else "" for b in behaviors]
        body.append(line)
    return header, body


def _write_csv(path: Path, header: list[str], body: list[list[str]]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(body)
    path.write_text(buf.getvalue(), encoding="utf-8", newline="")


def write_report(out_dir: str | os.PathLike, compare_dir: str | os.PathLike | None = None) -> str:
    """Write ``report_*.csv`` tables into ``out_dir``; return the summary text.

    With ``compare_dir`` the round table gains the other run's accuracy
    column (e.g. ``accuracy_gating_off`` next to ``accuracy_gating_on``).
    """
    out_dir = Path(out_dir)
    rows, doc = read_metrics(out_dir)
    header, body = round_table(rows, doc)
    if compare_dir is not None:
        other_rows, other_doc = read_metrics(compare_dir)
        label = _label(other_doc)
        if f"accuracy_{label}" in header:
            label += "_compare"
        other = {r["round"]: r["accuracy"] for r in other_rows if r["row_type"] == "round"}
        rounds = [line[0] for line in body]
        extra = [k for k in sorted(other, key=int) if k not in set(rounds)]
        blank = [""] * (len(header) - 1)
        body += [[k] + blank for k in extra]
        header.insert(2, f"accuracy_{label}")
        for line in body:
            line.insert(2, other.get(line[0], ""))
    _write_csv(out_dir / "report_rounds.csv", header, body)

    reps = [
        [r["round"], r["device_id"], r["shard_id"], r["behavior"], r["expected"], r["eligible"]]
        for r in rows
        if r["row_type"] == "device"
    ]
    _write_csv(
        out_dir / "report_reputation.csv",
        ["round", "device_id", "shard_id", "behavior", "expected", "eligible"],
        reps,
    )
    credits = [[r["device_id"], r["credits"]] for r in rows if r["row_type"] == "settlement"]
    _write_csv(out_dir / "report_credits.csv", ["account", "credits"], credits)

    last = body[-1] if body else None
    lines = [
        f"run: seed {doc.get('seed')}, {_label(doc).replace('_', ' ')}, "
        f"{len([r for r in rows if r['row_type'] == 'round'])} rounds",
        f"main chain head: {doc.get('main_chain_head', '')}",
    ]
    if last is not None:
        lines.append(f"final mean accuracy: {last[1]}")
    paid = sorted(credits, key=lambda c: -float(c[1]))[:5]
    if paid:
        lines.append("top credits: " + ", ".join(f"{a}={float(c):.4f}" for a, c in paid))
    return "\n".join(lines)
