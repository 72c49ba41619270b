"""Task contracts: publish a model task to a shard and settle its reward pool."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Hashable, Iterable, Mapping, Sequence

from .errors import ContractViolation, NoEligibleShardError
from .fl_core import LossKind
from .ledger import UpdateTransaction
from .reputation import Gate, Opinion, ReputationParams, expected_reputation, gate

# Rewards are split in units of 1e-9 credits.
GRANULARITY = 10**9


@dataclass(frozen=True)
class TaskContract:
    task_id: int
    publisher: str
    param_dim: int
    loss: LossKind = LossKind.LOGISTIC_BINARY
    required_data_type: str = "tabular"
    target_accuracy: float = 1.0
    max_rounds: int = 20
    reward_pool: float = 100.0

    def __post_init__(self):
        if not 0.0 <= self.target_accuracy <= 1.0:
            raise ContractViolation(f"target_accuracy must be in [0, 1], got {self.target_accuracy}")
        if self.max_rounds < 1:
            raise ContractViolation(f"max_rounds must be >= 1, got {self.max_rounds}")
        if not (self.reward_pool >= 0 and math.isfinite(self.reward_pool)):
            raise ContractViolation(f"reward_pool must be >= 0, got {self.reward_pool}")
        if self.param_dim < 2:
            raise ContractViolation("param_dim must be >= 2 (one feature plus bias)")


@dataclass(frozen=True)
class ShardDescriptor:
    shard_id: int
    member_tags: tuple[str, ...]

    def match_fraction(self, tag: str) -> float:
        if not self.member_tags:
            return 0.0
        return sum(t == tag for t in self.member_tags) / len(self.member_tags)


def publish_task(
    contract: TaskContract,
    shards: Sequence[ShardDescriptor],
    taken: Iterable[int] = (),
) -> int:
    """Pick the shard whose members best match the required data type.

    Shards in ``taken`` already host a task and are only chosen when no free
    shard has any matching member.
    """
    if not shards:
        raise ContractViolation("publish_task needs at least one shard")
    taken = set(taken)
    candidates = [
        (s.match_fraction(contract.required_data_type), s.shard_id)
        for s in shards
        if s.match_fraction(contract.required_data_type) > 0
    ]
    if not candidates:
        raise NoEligibleShardError(
            f"no shard has a device with data type {contract.required_data_type!r}"
        )
    free = [c for c in candidates if c[1] not in taken] or candidates
    return min(free, key=lambda c: (-c[0], c[1]))[1]


@dataclass
class LedgerOfCredits:
    balances: dict[Hashable, float] = field(default_factory=dict)
    pools: dict[int, float] = field(default_factory=dict)

    def fund(self, contract: TaskContract) -> None:
        if contract.task_id in self.pools:
            raise ContractViolation(f"task {contract.task_id} already funded")
        self.pools[contract.task_id] = float(contract.reward_pool)

    def balance(self, account: Hashable) -> float:
        return self.balances.get(account, 0.0)

    def total(self) -> float:
        return math.fsum(list(self.balances.values()) + list(self.pools.values()))

    def copy(self) -> "LedgerOfCredits":
        return LedgerOfCredits(dict(self.balances), dict(self.pools))


def reward_shares(
    pool: float, weights: Mapping[int, float]
) -> dict[int, float]:
    """Split ``pool`` proportionally to ``weights`` with largest-remainder rounding."""
    total_w = sum(Fraction(w) for w in weights.values())
    units = round(Fraction(pool) * GRANULARITY)
    quotas = {d: Fraction(units) * Fraction(w) / total_w for d, w in weights.items()}
    alloc = {d: math.floor(q) for d, q in quotas.items()}
    leftover = units - sum(alloc.values())
    order = sorted(weights, key=lambda d: (-(quotas[d] - alloc[d]), d))
    for d in order[:leftover]:
        alloc[d] += 1
    shares = {d: alloc[d] / GRANULARITY for d in weights}
    # sub-granularity residue goes to the first-ranked device
    residue = pool - math.fsum(shares.values())
    shares[order[0]] += residue
    return shares


def settle_rewards(
    contract: TaskContract,
    committed: Sequence[UpdateTransaction],
    reputations: Mapping[int, Opinion],
    credits: LedgerOfCredits,
    params: ReputationParams | None = None,
) -> LedgerOfCredits:
    """Pay out the task pool; weight = committed count times expected reputation.

    Excluded devices get nothing. If nobody qualifies, the pool returns to the
    publisher. Returns a new ledger; ``credits`` is left untouched.
    """
    params = params or ReputationParams()
    out = credits.copy()
    pool = out.pools.get(contract.task_id, 0.0)
    counts = Counter(tx.device_id for tx in committed)
    weights = {}
    for device in sorted(counts):
        opinion = reputations.get(device, Opinion.vacuous(params.base_rate))
        if gate(opinion, params) is Gate.ELIGIBLE:
            weights[device] = counts[device] * expected_reputation(opinion)
    if weights and sum(weights.values()) == 0:
        weights = {d: float(counts[d]) for d in weights}
    if not weights or pool == 0:
        out.balances[contract.publisher] = out.balance(contract.publisher) + pool
    else:
        for device, share in reward_shares(pool, weights).items():
            out.balances[device] = out.balance(device) + share
    out.pools[contract.task_id] = 0.0
    return out
