"""Subjective-logic reputation with weighted, decaying evidence.

Evidence is weighted three ways before it becomes an opinion: by outcome
(negative interactions count ``neg_weight / pos_weight`` times as much), by
severity (severe negatives are multiplied again), and by freshness (a record
``k`` rounds old is scaled by ``freshness_decay ** k``).

Opinions from different shards are combined with cumulative fusion, which is
the same as pooling their evidence.
"""

from __future__ import annotations

import enum
import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .errors import ContractViolation, UndefinedFusionError

SIMPLEX_TOL = 1e-12


class Interaction(enum.Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"


class Severity(enum.Enum):
    STANDARD = "standard"
    SEVERE = "severe"


class Gate(enum.Enum):
    ELIGIBLE = "eligible"
    EXCLUDED = "excluded"


@dataclass(frozen=True)
class InteractionRecord:
    ratee: int
    shard_id: int
    round: int
    outcome: Interaction
    severity: Severity = Severity.STANDARD

    def __post_init__(self):
        if self.round < 0:
            raise ContractViolation(f"round must be >= 0, got {self.round}")


@dataclass(frozen=True)
class Opinion:
    belief: float
    disbelief: float
    uncertainty: float
    base_rate: float = 0.5

    def __post_init__(self):
        for name in ("belief", "disbelief", "uncertainty", "base_rate"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ContractViolation(f"{name} must lie in [0, 1], got {v!r}")
        total = self.belief + self.disbelief + self.uncertainty
        if abs(total - 1.0) > SIMPLEX_TOL:
            raise ContractViolation(f"belief + disbelief + uncertainty = {total!r}, not 1")

    @classmethod
    def vacuous(cls, base_rate: float = 0.5) -> "Opinion":
        return cls(0.0, 0.0, 1.0, base_rate)

    @property
    def expected(self) -> float:
        return expected_reputation(self)


@dataclass(frozen=True)
class ReputationParams:
    prior_weight: float = 2.0
    base_rate: float = 0.5
    pos_weight: float = 1.0
    neg_weight: float = 2.0
    severe_multiplier: float = 2.0
    freshness_decay: float = 0.9
    gate_threshold: float = 0.4

    def __post_init__(self):
        checks = {
            "prior_weight": self.prior_weight > 0,
            "base_rate": 0.0 <= self.base_rate <= 1.0,
            "pos_weight": self.pos_weight > 0,
            "neg_weight": self.neg_weight > 0,
            "severe_multiplier": self.severe_multiplier >= 1.0,
            "freshness_decay": 0.0 < self.freshness_decay <= 1.0,
            "gate_threshold": 0.0 <= self.gate_threshold <= 1.0,
        }
        for name, ok in checks.items():
            value = getattr(self, name)
            if not ok or not math.isfinite(value):
                raise ContractViolation(f"{name} out of range: {value!r}")


def weighted_evidence(
    records: Iterable[InteractionRecord], now: int, p: ReputationParams
) -> tuple[float, float]:
    """Return decayed, weighted positive and negative evidence ``(r, s)``."""
    r = s = 0.0
    for rec in records:
        if rec.round > now:
            raise ContractViolation(f"record from round {rec.round} is after now={now}")
        fresh = p.freshness_decay ** (now - rec.round)
        if rec.outcome is Interaction.POSITIVE:
            r += fresh
        else:
            s += fresh * (p.severe_multiplier if rec.severity is Severity.SEVERE else 1.0)
    return p.pos_weight * r, p.neg_weight * s


def opinion_from_evidence(r: float, s: float, p: ReputationParams) -> Opinion:
    if r < 0 or s < 0:
        raise ContractViolation(f"evidence must be non-negative, got r={r}, s={s}")
    total = r + s + p.prior_weight
    b = r / total
    d = s / total
    # u taken as the remainder keeps the simplex identity tight
    u = max(0.0, 1.0 - b - d)
    return Opinion(b, d, u, p.base_rate)


def expected_reputation(o: Opinion) -> float:
    return o.belief + o.base_rate * o.uncertainty


def fuse(o1: Opinion, o2: Opinion) -> Opinion:
    """Cumulative fusion of two independent opinions with a shared base rate."""
    if o1.base_rate != o2.base_rate:
        raise ContractViolation("cannot fuse opinions with different base rates")
    u1, u2 = o1.uncertainty, o2.uncertainty
    if u1 == 0.0 and u2 == 0.0:
        raise UndefinedFusionError("cumulative fusion of two dogmatic opinions is undefined")
    kappa = u1 + u2 - u1 * u2
    b = (o1.belief * u2 + o2.belief * u1) / kappa
    d = (o1.disbelief * u2 + o2.disbelief * u1) / kappa
    u = (u1 * u2) / kappa
    # renormalise away rounding drift
    total = b + d + u
    return Opinion(
        min(1.0, b / total), min(1.0, d / total), min(1.0, u / total), o1.base_rate
    )


def gate(o: Opinion, p: ReputationParams) -> Gate:
    return Gate.ELIGIBLE if expected_reputation(o) >= p.gate_threshold else Gate.EXCLUDED


def device_opinion(
    records: Sequence[InteractionRecord],
    now: int,
    p: ReputationParams,
    *,
    across_shards: bool = True,
    shard: int | None = None,
) -> Opinion:
    """Opinion about one device: one opinion per shard, fused across shards.

    With ``across_shards=False`` only the records gathered in ``shard`` count.
    """
    by_shard: dict[int, list[InteractionRecord]] = defaultdict(list)
    for rec in records:
        by_shard[rec.shard_id].append(rec)
    if not across_shards:
        by_shard = {shard: by_shard.get(shard, [])}
    opinion = Opinion.vacuous(p.base_rate)
    for shard_id in sorted(by_shard, key=lambda k: (k is None, k)):
        r, s = weighted_evidence(by_shard[shard_id], now, p)
        opinion = fuse(opinion, opinion_from_evidence(r, s, p))
    return opinion


def opinions_for(
    logs: Mapping[int, Sequence[InteractionRecord]],
    devices: Iterable[int],
    now: int,
    p: ReputationParams,
    **kwargs,
) -> dict[int, Opinion]:
    return {d: device_opinion(logs.get(d, ()), now, p, **kwargs) for d in devices}
