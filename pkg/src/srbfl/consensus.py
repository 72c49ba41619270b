"""Single-round supermajority voting on proposed update transactions."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

from .errors import ContractViolation, DanglingPayloadError, IntegrityError
from .fl_core import Dataset, LossKind, ModelParams, evaluate_accuracy
from .ledger import OffChainStore, UpdateTransaction

DEFAULT_QUORUM = Fraction(2, 3)
DEFAULT_TOLERANCE = 0.05


class Verdict(enum.Enum):
    APPROVE = "approve"
    REJECT = "reject"


class Reason(enum.Enum):
    ACCURACY_VERIFIED = "accuracy_verified"
    ACCURACY_INFLATED = "accuracy_inflated"
    PAYLOAD_MISSING = "payload_missing"
    OTHER = "other"


class Outcome(enum.Enum):
    COMMITTED = "committed"
    ABORTED = "aborted"


@dataclass(frozen=True)
class Proposal:
    transaction: UpdateTransaction
    proposer: int

    def __post_init__(self):
        if self.proposer != self.transaction.device_id:
            raise ContractViolation(
                f"proposer {self.proposer} is not the transaction's device {self.transaction.device_id}"
            )

    @property
    def digest(self) -> bytes:
        return self.transaction.digest()


@dataclass(frozen=True)
class Vote:
    validator: int
    proposal_digest: bytes
    verdict: Verdict
    reason: Reason

    @property
    def approves(self) -> bool:
        return self.verdict is Verdict.APPROVE


# Accuracies are ratios hits/n carried as floats; a claim exactly at the
# tolerance boundary (1.0 vs 19/20 at 0.05) must not flip on rounding.
ACCURACY_EPS = 1e-12


def validate_update(
    proposal: Proposal,
    validator: int,
    holdout: Dataset,
    store: OffChainStore,
    tolerance: float = DEFAULT_TOLERANCE,
    loss: LossKind = LossKind.LOGISTIC_BINARY,
    *,
    allow_self: bool = False,
) -> Vote:
    """Recompute the proposal's accuracy on ``holdout`` and compare with the claim.

    ``allow_self`` lets a lone shard member check its own update, which is
    the only validation available when a shard has no peers.
    """
    if validator == proposal.proposer and not allow_self:
        raise ContractViolation("a proposer cannot validate its own update")
    if not tolerance >= 0:
        raise ContractViolation(f"tolerance must be >= 0, got {tolerance}")
    digest = proposal.digest
    try:
        params = ModelParams.from_bytes(store.get(proposal.transaction.payload_digest))
    except (DanglingPayloadError, IntegrityError, ContractViolation):
        return Vote(validator, digest, Verdict.REJECT, Reason.PAYLOAD_MISSING)
    if params.dim != holdout.dim + 1:
        return Vote(validator, digest, Verdict.REJECT, Reason.OTHER)
    measured = evaluate_accuracy(params, holdout, loss)
    claimed = proposal.transaction.claimed_accuracy
    if abs(claimed - measured) <= tolerance + ACCURACY_EPS:
        return Vote(validator, digest, Verdict.APPROVE, Reason.ACCURACY_VERIFIED)
    reason = Reason.ACCURACY_INFLATED if claimed > measured else Reason.OTHER
    return Vote(validator, digest, Verdict.REJECT, reason)


def quorum_size(n: int, quorum: Fraction | float = DEFAULT_QUORUM) -> int:
    """Smallest approval count reaching ``quorum`` of ``n`` members."""
    q = Fraction(quorum).limit_denominator(10**6) if isinstance(quorum, float) else Fraction(quorum)
    return math.ceil(q * n)


def tally(votes: Sequence[Vote], n: int, quorum: Fraction | float = DEFAULT_QUORUM) -> Outcome:
    """Commit iff approvals reach ``ceil(quorum * n)``; ``n`` counts members, not ballots."""
    if n < 1:
        raise ContractViolation(f"shard size must be >= 1, got {n}")
    seen = set()
    for v in votes:
        if v.validator in seen:
            raise ContractViolation(f"duplicate vote from validator {v.validator}")
        seen.add(v.validator)
    if len(seen) > n:
        raise ContractViolation(f"{len(seen)} voters exceed shard size {n}")
    approvals = sum(1 for v in votes if v.approves)
    return Outcome.COMMITTED if approvals >= quorum_size(n, quorum) else Outcome.ABORTED
