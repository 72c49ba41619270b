"""Device-to-shard assignment strategies."""

from __future__ import annotations

from collections import defaultdict
from typing import Iterable, Mapping, Sequence

from .errors import ContractViolation
from .reputation import Opinion, expected_reputation
from .rng import stream

ShardAssignment = dict[int, list[int]]

STRATEGIES = ("random", "reputation", "feature")


def _check(devices: Sequence[int], shard_count: int) -> None:
    if shard_count < 1:
        raise ContractViolation(f"shard_count must be >= 1, got {shard_count}")
    if len(devices) < shard_count:
        raise ContractViolation(f"{len(devices)} devices cannot fill {shard_count} shards")
    if len(set(devices)) != len(devices):
        raise ContractViolation("device ids must be unique")


def _deal(ordered: Sequence[int], shard_count: int) -> ShardAssignment:
    return {s: list(ordered[s::shard_count]) for s in range(shard_count)}


def assign_random(devices: Sequence[int], shard_count: int, seed: int) -> ShardAssignment:
    _check(devices, shard_count)
    order = stream(seed, "shard").permutation(sorted(devices)).tolist()
    return {s: sorted(members) for s, members in _deal(order, shard_count).items()}


def assign_by_reputation(
    opinions: Mapping[int, Opinion], shard_count: int, seed: int = 0
) -> ShardAssignment:
    """Sort by expected reputation (desc, ties by id) and deal round-robin.

    Every shard receives one device from each reputation stripe, so no shard
    is left with only low-reputation members. ``seed`` is accepted for a
    uniform strategy signature; the result does not depend on it.
    """
    devices = list(opinions)
    _check(devices, shard_count)
    order = sorted(devices, key=lambda d: (-expected_reputation(opinions[d]), d))
    return _deal(order, shard_count)


def _capacities(n: int, shard_count: int) -> list[int]:
    base, extra = divmod(n, shard_count)
    return [base + (1 if s < extra else 0) for s in range(shard_count)]


def assign_by_feature(
    tags: Mapping[int, str],
    shard_count: int,
    seed: int,
    required_tags: Iterable[str] = (),
) -> ShardAssignment:
    """Pack same-tag devices together, largest tag group first.

    Shard sizes stay balanced (they differ by at most one). Each group is
    poured into the shard with the most free room; whatever does not fit
    spills into the next roomiest shard. Tags named in ``required_tags`` are
    packed before all others.
    """
    devices = sorted(tags)
    _check(devices, shard_count)
    rng = stream(seed, "feature_shard")
    groups: dict[str, list[int]] = defaultdict(list)
    for d in devices:
        groups[tags[d]].append(d)
    for tag in sorted(groups):
        groups[tag] = rng.permutation(groups[tag]).tolist()
    required = set(required_tags)
    order = sorted(groups, key=lambda t: (t not in required, -len(groups[t]), t))
    room = _capacities(len(devices), shard_count)
    out: ShardAssignment = {s: [] for s in range(shard_count)}
    for tag in order:
        pending = groups[tag]
        while pending:
            s = max(range(shard_count), key=lambda k: (room[k], -k))
            take = min(room[s], len(pending))
            out[s].extend(pending[:take])
            room[s] -= take
            pending = pending[take:]
    return {s: sorted(m) for s, m in out.items()}


def shard_of(assignment: ShardAssignment) -> dict[int, int]:
    return {d: s for s, members in assignment.items() for d in members}
