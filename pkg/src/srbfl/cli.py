"""Command-line entry point: ``srbfl validate|run|verify|report``.

Exit codes are distinct per failure class, see :class:`Exit`. Log verbosity
comes from the ``SRBFL_LOG`` environment variable (e.g. ``INFO``).
"""

from __future__ import annotations

import argparse
import enum
import logging
import os
import sys
from pathlib import Path

from .config import ConfigSyntaxError, read_config_file, validate
from .errors import ConfigError, LedgerFormatError, SRBFLError
from .exports import (
    MAIN_CHAIN_FILE,
    OFFCHAIN_DIR,
    ReportInputError,
    write_report,
    write_run,
)
from .ledger import OffChainStore, load_chain, verify_chain
from .sim import run_simulation


class Exit(enum.IntEnum):
    OK = 0
    USAGE = 2
    IO = 3
    CONFIG_SYNTAX = 4
    CONFIG_INVALID = 5
    RUNTIME = 6
    INTEGRITY = 7
    PARSE = 8


def _err(msg: str) -> None:
    print(f"error: {msg}", file=sys.stderr)


def _load(path: str, seed: int | None = None, gating: str | None = None):
    """Returns (config, exit code); config is None on failure."""
    try:
        cfg = read_config_file(path)
    except OSError as exc:
        _err(f"cannot read config {path}: {exc.strerror or exc}")
        return None, Exit.IO
    except ConfigSyntaxError as exc:
        _err(f"malformed config: {exc}")
        return None, Exit.CONFIG_SYNTAX
    except ConfigError as exc:
        _err(f"invalid config key {exc.key!r}: {exc.message}")
        return None, Exit.CONFIG_INVALID
    gate = None if gating is None else gating == "on"
    try:
        cfg = cfg.with_overrides(seed=seed, gating=gate)
        validate(cfg)
    except ConfigError as exc:
        _err(f"invalid config key {exc.key!r}: {exc.message}")
        return None, Exit.CONFIG_INVALID
    return cfg, Exit.OK


def cmd_validate(args) -> int:
    cfg, code = _load(args.config, args.seed, args.gating)
    if cfg is None:
        return code
    print(f"ok: {args.config}")
    return Exit.OK


def cmd_run(args) -> int:
    cfg, code = _load(args.config, args.seed, args.gating)
    if cfg is None:
        return code
    try:
        result = run_simulation(cfg)
    except SRBFLError as exc:
        _err(f"simulation failed: {exc}")
        return Exit.RUNTIME
    for m in result.metrics:
        shards = " ".join(f"s{s}={c}" for s, c in sorted(m.committed.items()))
        print(
            f"round {m.round}: accuracy {m.mean_accuracy:.4f} committed {m.total_committed} "
            f"[{shards}] eligible {sum(m.eligible.values())}/{len(m.eligible)}"
        )
    try:
        write_run(result, args.out)
    except OSError as exc:
        _err(f"cannot write outputs to {args.out}: {exc}")
        return Exit.IO
    print(f"main chain head {result.main_chain.head_digest.hex()}")
    return Exit.OK


def cmd_verify(args) -> int:
    chain_path = Path(args.chain)
    offchain = Path(args.offchain) if args.offchain else chain_path.parent / OFFCHAIN_DIR
    try:
        chain = load_chain(chain_path)
        store = OffChainStore.load(offchain) if offchain.is_dir() else OffChainStore()
    except OSError as exc:
        _err(f"cannot read {exc.filename}: {exc.strerror}")
        return Exit.IO
    except LedgerFormatError as exc:
        _err(f"parse error in {chain_path}: {exc}")
        return Exit.PARSE
    report = verify_chain(chain, store)
    if not report:
        print(f"FAIL: block {report.height}: {report.reason}")
        return Exit.INTEGRITY
    print(f"ok: {len(chain)} blocks verified")
    return Exit.OK


def cmd_report(args) -> int:
    try:
        print(write_report(args.out, args.compare))
    except ReportInputError as exc:
        _err(str(exc))
        return Exit.IO
    except OSError as exc:
        _err(f"cannot write report: {exc}")
        return Exit.IO
    return Exit.OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="srbfl", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def overrides(p):
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--gating", choices=["on", "off"], help="override reputation gating")

    p = sub.add_parser("validate", help="check a config file")
    p.add_argument("--config", required=True)
    overrides(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("run", help="run a simulation and write its outputs")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    overrides(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("verify", help="check a chain export against its payloads")
    p.add_argument("chain", nargs="?", help=f"chain export (default: OUT/{MAIN_CHAIN_FILE})")
    p.add_argument("--out", help="run directory holding the export")
    p.add_argument("--offchain", help=f"payload directory (default: sibling {OFFCHAIN_DIR}/)")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("report", help="summarise a run directory as CSV tables")
    p.add_argument("--out", required=True)
    p.add_argument("--compare", help="second run directory to put side by side")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    level = os.environ.get("SRBFL_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "verify":
        if args.chain is None:
            if args.out is None:
                parser.error("verify needs a chain file or --out")
            args.chain = str(Path(args.out) / MAIN_CHAIN_FILE)
    return int(args.func(args))


if __name__ == "__main__":
    sys.exit(main())
