"""Hash-linked sub-chains and main chain with an off-chain payload store.

Canonical byte layouts (all integers big-endian, reals IEEE-754 binary64
big-endian):

Transaction, 72 bytes::

    shard_id u32 | device_id u32 | round u64 | claimed_accuracy f64
    | sample_count u64 | payload_digest 32B | submitted_at u64

Header, 85 bytes::

    height u64 | prev_hash 32B | tx_root 32B | chain_kind u8 | shard u32 | round u64

``chain_kind`` is 0 for the main chain (shard field must be 0) and 1 for a
sub-chain. ``tx_root`` is SHA-256 over the concatenated SHA-256 digests of the
transactions in block order; an empty block has ``tx_root = SHA-256(b"")``.
A block's digest is SHA-256 of its encoded header.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

from .errors import (
    ContractViolation,
    DanglingPayloadError,
    IntegrityError,
    LedgerFormatError,
    NothingToPromoteError,
)

DIGEST_SIZE = 32
ZERO_HASH = bytes(DIGEST_SIZE)
_U32_MAX = 2**32 - 1
_U64_MAX = 2**64 - 1

_TX = struct.Struct(">IIQdQ32sQ")
_HEADER = struct.Struct(">Q32s32sBIQ")
TX_SIZE = _TX.size
HEADER_SIZE = _HEADER.size


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def _check_uint(name: str, value: int, limit: int) -> None:
    if not isinstance(value, int) or isinstance(value, bool) or not 0 <= value <= limit:
        raise ContractViolation(f"{name} must be an integer in [0, {limit}], got {value!r}")


def _check_digest(name: str, value: bytes) -> None:
    if not isinstance(value, bytes) or len(value) != DIGEST_SIZE:
        raise ContractViolation(f"{name} must be {DIGEST_SIZE} bytes")


@dataclass(frozen=True)
class UpdateTransaction:
    shard_id: int
    device_id: int
    round: int
    claimed_accuracy: float
    sample_count: int
    payload_digest: bytes
    submitted_at: int = 0

    def __post_init__(self):
        _check_uint("shard_id", self.shard_id, _U32_MAX)
        _check_uint("device_id", self.device_id, _U32_MAX)
        _check_uint("round", self.round, _U64_MAX)
        _check_uint("submitted_at", self.submitted_at, _U64_MAX)
        _check_uint("sample_count", self.sample_count, _U64_MAX)
        if self.sample_count < 1:
            raise ContractViolation("sample_count must be >= 1")
        acc = self.claimed_accuracy
        if not isinstance(acc, float) or math.isnan(acc) or not 0.0 <= acc <= 1.0:
            raise ContractViolation(f"claimed_accuracy must be a float in [0, 1], got {acc!r}")
        _check_digest("payload_digest", self.payload_digest)

    def to_bytes(self) -> bytes:
        return _TX.pack(
            self.shard_id,
            self.device_id,
            self.round,
            self.claimed_accuracy,
            self.sample_count,
            self.payload_digest,
            self.submitted_at,
        )

    @classmethod
    def from_bytes(cls, raw: bytes) -> "UpdateTransaction":
        if len(raw) != TX_SIZE:
            raise LedgerFormatError(f"transaction must be {TX_SIZE} bytes, got {len(raw)}")
        shard, dev, rnd, acc, count, digest, seq = _TX.unpack(raw)
        try:
            return cls(shard, dev, rnd, acc, count, digest, seq)
        except ContractViolation as exc:
            raise LedgerFormatError(str(exc)) from exc

    def digest(self) -> bytes:
        return sha256(self.to_bytes())


@dataclass(frozen=True)
class BlockHeader:
    height: int
    prev_hash: bytes
    tx_root: bytes
    shard: int | None  # None marks the main chain
    round: int

    def __post_init__(self):
        _check_uint("height", self.height, _U64_MAX)
        _check_uint("round", self.round, _U64_MAX)
        _check_digest("prev_hash", self.prev_hash)
        _check_digest("tx_root", self.tx_root)
        if self.shard is not None:
            _check_uint("shard", self.shard, _U32_MAX)

    @property
    def is_main(self) -> bool:
        return self.shard is None

    def to_bytes(self) -> bytes:
        kind, shard = (0, 0) if self.shard is None else (1, self.shard)
        return _HEADER.pack(self.height, self.prev_hash, self.tx_root, kind, shard, self.round)

    @classmethod
    def from_bytes(cls, raw: bytes) -> "BlockHeader":
        if len(raw) != HEADER_SIZE:
            raise LedgerFormatError(f"header must be {HEADER_SIZE} bytes, got {len(raw)}")
        height, prev, root, kind, shard, rnd = _HEADER.unpack(raw)
        if kind == 0:
            if shard != 0:
                raise LedgerFormatError("main-chain header carries a non-zero shard field")
            shard = None
        elif kind != 1:
            raise LedgerFormatError(f"unknown chain kind byte {kind}")
        return cls(height, prev, root, shard, rnd)


def hash_header(header: BlockHeader) -> bytes:
    return sha256(header.to_bytes())


def tx_root(transactions: Iterable[UpdateTransaction]) -> bytes:
    return sha256(b"".join(tx.digest() for tx in transactions))


@dataclass(frozen=True)
class Block:
    header: BlockHeader
    transactions: tuple[UpdateTransaction, ...]
    digest: bytes

    @classmethod
    def build(cls, header: BlockHeader, transactions: Sequence[UpdateTransaction]) -> "Block":
        return cls(header, tuple(transactions), hash_header(header))


class OffChainStore:
    """Content-addressed payload store keyed by SHA-256 digest."""

    def __init__(self, items: dict[bytes, bytes] | None = None):
        self._items: dict[bytes, bytes] = dict(items or {})

    def __len__(self) -> int:
        return len(self._items)

    def __contains__(self, digest: bytes) -> bool:
        return digest in self._items

    def put(self, payload: bytes) -> bytes:
        if not payload:
            raise ContractViolation("refusing to store an empty payload")
        digest = sha256(payload)
        self._items.setdefault(digest, bytes(payload))
        return digest

    def get(self, digest: bytes) -> bytes:
        try:
            payload = self._items[digest]
        except KeyError:
            raise DanglingPayloadError(f"no payload for digest {digest.hex()}") from None
        if sha256(payload) != digest:
            raise IntegrityError(f"payload for {digest.hex()} fails its digest check")
        return payload

    def raw(self, digest: bytes) -> bytes:
        """Stored bytes without the integrity check (for inspection and tests)."""
        return self._items[digest]

    def replace_raw(self, digest: bytes, payload: bytes) -> None:
        self._items[digest] = payload

    def digests(self) -> list[bytes]:
        return sorted(self._items)

    def save(self, directory: str | os.PathLike) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for digest in self.digests():
            (directory / f"{digest.hex()}.bin").write_bytes(self._items[digest])

    @classmethod
    def load(cls, directory: str | os.PathLike) -> "OffChainStore":
        items = {}
        for path in sorted(Path(directory).glob("*.bin")):
            try:
                digest = bytes.fromhex(path.stem)
            except ValueError:
                raise LedgerFormatError(f"bad payload file name {path.name}") from None
            if len(digest) != DIGEST_SIZE:
                raise LedgerFormatError(f"bad payload file name {path.name}")
            items[digest] = path.read_bytes()
        return cls(items)


def put_offchain(store: OffChainStore, payload: bytes) -> bytes:
    return store.put(payload)


@dataclass
class Chain:
    shard: int | None = None
    blocks: list[Block] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.blocks)

    def __iter__(self) -> Iterator[Block]:
        return iter(self.blocks)

    @property
    def is_main(self) -> bool:
        return self.shard is None

    @property
    def head_digest(self) -> bytes:
        return self.blocks[-1].digest if self.blocks else ZERO_HASH

    def transactions(self) -> list[UpdateTransaction]:
        return [tx for block in self.blocks for tx in block.transactions]


def append_block(
    chain: Chain, transactions: Sequence[UpdateTransaction], round: int, store: OffChainStore
) -> Block:
    for tx in transactions:
        if tx.payload_digest not in store:
            raise DanglingPayloadError(
                f"device {tx.device_id} round {tx.round}: payload {tx.payload_digest.hex()} not stored"
            )
        if not chain.is_main and tx.shard_id != chain.shard:
            raise ContractViolation(
                f"transaction from shard {tx.shard_id} cannot go on sub-chain {chain.shard}"
            )
    header = BlockHeader(
        height=len(chain.blocks),
        prev_hash=chain.head_digest,
        tx_root=tx_root(transactions),
        shard=chain.shard,
        round=round,
    )
    block = Block.build(header, transactions)
    chain.blocks.append(block)
    return block


@dataclass(frozen=True)
class Verification:
    ok: bool
    height: int | None = None
    reason: str = ""

    def __bool__(self) -> bool:
        return self.ok


def verify_chain(chain: Chain, store: OffChainStore) -> Verification:
    """Check linkage, heights, digests, tx roots and off-chain payloads.

    Returns a falsy :class:`Verification` carrying the first violation.
    """
    prev = ZERO_HASH
    prev_round = -1
    for n, block in enumerate(chain.blocks):
        h = block.header
        if h.shard != chain.shard:
            return Verification(False, n, "chain tag differs from the chain it is stored in")
        if h.height != n:
            return Verification(False, n, f"height {h.height} where {n} expected")
        if h.prev_hash != prev:
            return Verification(False, n, "prev_hash does not match the previous block digest")
        if hash_header(h) != block.digest:
            return Verification(False, n, "block digest does not match header")
        if tx_root(block.transactions) != h.tx_root:
            return Verification(False, n, "tx_root does not match transactions")
        if h.round < prev_round:
            return Verification(False, n, "round goes backwards")
        for tx in block.transactions:
            if not chain.is_main and (tx.shard_id != chain.shard or tx.round != h.round):
                return Verification(False, n, f"transaction of device {tx.device_id} misfiled")
            try:
                store.get(tx.payload_digest)
            except (DanglingPayloadError, IntegrityError) as exc:
                return Verification(False, n, str(exc))
        prev = block.digest
        prev_round = h.round
    return Verification(True)


def best_transaction(transactions: Iterable[UpdateTransaction]) -> UpdateTransaction:
    """Highest claimed accuracy; ties go to lowest device id, then earliest round."""
    txs = list(transactions)
    if not txs:
        raise NothingToPromoteError("no committed transactions to promote")
    return min(txs, key=lambda tx: (-tx.claimed_accuracy, tx.device_id, tx.round, tx.submitted_at))


def promote_final(
    main: Chain, sub: Chain, round: int, store: OffChainStore
) -> UpdateTransaction:
    if not main.is_main:
        raise ContractViolation("promotion target must be the main chain")
    best = best_transaction(sub.transactions())
    append_block(main, [best], round, store)
    return best


# --- JSON-lines export -------------------------------------------------------

def _tx_to_json(tx: UpdateTransaction) -> dict:
    return {
        "shard_id": tx.shard_id,
        "device_id": tx.device_id,
        "round": tx.round,
        "claimed_accuracy": tx.claimed_accuracy,
        "sample_count": tx.sample_count,
        "payload_digest": tx.payload_digest.hex(),
        "submitted_at": tx.submitted_at,
    }


def block_to_json(block: Block) -> str:
    h = block.header
    record = {
        "chain": "main" if h.is_main else "sub",
        "shard": h.shard,
        "height": h.height,
        "round": h.round,
        "prev_hash": h.prev_hash.hex(),
        "tx_root": h.tx_root.hex(),
        "hash": block.digest.hex(),
        "transactions": [_tx_to_json(tx) for tx in block.transactions],
    }
    return json.dumps(record, sort_keys=True, separators=(",", ":"))


def _hex32(value, where: str) -> bytes:
    if not isinstance(value, str) or len(value) != 2 * DIGEST_SIZE or value != value.lower():
        raise LedgerFormatError(f"{where}: expected 64 lowercase hex digits")
    try:
        return bytes.fromhex(value)
    except ValueError:
        raise LedgerFormatError(f"{where}: not hex") from None


def _int(obj: dict, key: str, where: str) -> int:
    value = obj.get(key)
    if not isinstance(value, int) or isinstance(value, bool):
        raise LedgerFormatError(f"{where}: {key} must be an integer")
    return value


def block_from_json(line: str) -> Block:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise LedgerFormatError(f"malformed JSON: {exc}") from None
    if not isinstance(obj, dict):
        raise LedgerFormatError("block line must be a JSON object")
    kind = obj.get("chain")
    if kind == "main":
        shard = None
        if obj.get("shard") is not None:
            raise LedgerFormatError("main-chain block carries a shard id")
    elif kind == "sub":
        shard = _int(obj, "shard", "block")
    else:
        raise LedgerFormatError(f"unknown chain kind {kind!r}")
    txs = []
    raw_txs = obj.get("transactions")
    if not isinstance(raw_txs, list):
        raise LedgerFormatError("transactions must be a list")
    for k, t in enumerate(raw_txs):
        where = f"transaction {k}"
        if not isinstance(t, dict):
            raise LedgerFormatError(f"{where}: must be an object")
        acc = t.get("claimed_accuracy")
        if isinstance(acc, bool) or not isinstance(acc, (int, float)):
            raise LedgerFormatError(f"{where}: claimed_accuracy must be a number")
        try:
            txs.append(
                UpdateTransaction(
                    shard_id=_int(t, "shard_id", where),
                    device_id=_int(t, "device_id", where),
                    round=_int(t, "round", where),
                    claimed_accuracy=float(acc),
                    sample_count=_int(t, "sample_count", where),
                    payload_digest=_hex32(t.get("payload_digest"), where),
                    submitted_at=_int(t, "submitted_at", where),
                )
            )
        except ContractViolation as exc:
            raise LedgerFormatError(f"{where}: {exc}") from None
    try:
        header = BlockHeader(
            height=_int(obj, "height", "block"),
            prev_hash=_hex32(obj.get("prev_hash"), "prev_hash"),
            tx_root=_hex32(obj.get("tx_root"), "tx_root"),
            shard=shard,
            round=_int(obj, "round", "block"),
        )
    except ContractViolation as exc:
        raise LedgerFormatError(str(exc)) from None
    return Block(header, tuple(txs), _hex32(obj.get("hash"), "hash"))


def export_chain(chain: Chain, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for block in chain.blocks:
            fh.write(block_to_json(block) + "\n")


def load_chain(path: str | os.PathLike) -> Chain:
    """Parse a JSON-lines export; the chain tag is taken from the first block."""
    blocks = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                blocks.append(block_from_json(line))
            except LedgerFormatError as exc:
                raise LedgerFormatError(f"line {lineno}: {exc}") from None
    shard = blocks[0].header.shard if blocks else None
    return Chain(shard=shard, blocks=blocks)
