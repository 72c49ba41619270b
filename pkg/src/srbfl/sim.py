"""Synchronous round orchestration over shards, chains and reputation.

One round, per active task shard:

1. eligible devices that show up train from the task's current global model;
   adversaries corrupt their update according to their behaviour;
2. each submission stores its parameters off-chain and becomes a proposal;
3. shard peers validate every proposal and the shard tallies; committed
   transactions go on the sub-chain as one block;
4. votes and no-shows become interaction records and opinions are refreshed;
5. committed updates are averaged (by sample count) into the new global model.

All randomness comes from :func:`srbfl.rng.stream`, keyed by purpose, round
and device, so results are bit-for-bit reproducible for a given seed.
"""

from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import consensus
from .config import AdversaryMix, SimConfig, validate
from .consensus import Outcome, Proposal, Reason, Verdict
from .contract import LedgerOfCredits, ShardDescriptor, TaskContract, publish_task, settle_rewards
from .errors import ContractViolation, SimulationError, SRBFLError
from .fl_core import (
    Dataset,
    ModelParams,
    aggregate,
    evaluate_accuracy,
    global_loss,
    local_train,
)
from .ledger import (
    Chain,
    OffChainStore,
    UpdateTransaction,
    append_block,
    best_transaction,
    promote_final,
)
from .reputation import (
    Gate,
    Interaction,
    InteractionRecord,
    Opinion,
    Severity,
    device_opinion,
    gate,
)
from .rng import stream
from .sharding import assign_by_feature, assign_by_reputation, assign_random, shard_of
from .synthetic import TaskModel, make_task_model, sample

log = logging.getLogger(__name__)


# --- behaviours --------------------------------------------------------------

@dataclass(frozen=True)
class Honest:
    name = "honest"


@dataclass(frozen=True)
class LabelFlipPoisoner:
    flip_fraction: float = 1.0
    name = "label_flip"

    def __post_init__(self):
        if not 0 < self.flip_fraction <= 1:
            raise ContractViolation(f"flip_fraction must be in (0, 1], got {self.flip_fraction}")


@dataclass(frozen=True)
class FreeRider:
    name = "free_rider"


@dataclass(frozen=True)
class Lazy:
    participation_probability: float = 0.5
    name = "lazy"

    def __post_init__(self):
        if not 0 <= self.participation_probability < 1:
            raise ContractViolation(
                f"participation_probability must be in [0, 1), got {self.participation_probability}"
            )


Behavior = Honest | LabelFlipPoisoner | FreeRider | Lazy


def _largest_remainder(total: int, fractions: Mapping[str, float]) -> dict[str, int]:
    quotas = {k: total * f for k, f in fractions.items()}
    counts = {k: math.floor(q + 1e-9) for k, q in quotas.items()}
    spare = total - sum(counts.values())
    order = sorted(fractions, key=lambda k: (-(quotas[k] - counts[k]), list(fractions).index(k)))
    for k in order[:spare]:
        counts[k] += 1
    return counts


def inject_adversaries(
    devices: Sequence[int], mix: AdversaryMix, seed: int
) -> dict[int, Behavior]:
    """Give each device a behaviour; counts follow ``mix`` by largest remainder.

    Honest devices win remainder ties, then label-flip, free-rider, lazy.
    """
    fracs = mix.fractions()
    if any(f < 0 or f > 1 for f in fracs.values()) or sum(fracs.values()) > 1 + 1e-12:
        raise ContractViolation(f"invalid adversary fractions {fracs}")
    honest = max(0.0, 1.0 - sum(fracs.values()))
    counts = _largest_remainder(len(devices), {"honest": honest, **fracs})
    order = stream(seed, "adversary").permutation(sorted(devices)).tolist()
    makers = {
        "label_flip": lambda: LabelFlipPoisoner(mix.flip_fraction),
        "free_rider": FreeRider,
        "lazy": lambda: Lazy(mix.participation_probability),
    }
    out: dict[int, Behavior] = {}
    pos = 0
    for kind in ("label_flip", "free_rider", "lazy"):
        for d in order[pos : pos + counts[kind]]:
            out[d] = makers[kind]()
        pos += counts[kind]
    for d in order[pos:]:
        out[d] = Honest()
    return dict(sorted(out.items()))


# --- state and metrics -------------------------------------------------------

@dataclass(frozen=True)
class DeviceProfile:
    device_id: int
    dataset: Dataset  # what the device trains on (poisoned for label flippers)
    holdout: Dataset
    behavior: Behavior
    clean_dataset: Dataset | None = None


@dataclass
class RoundMetrics:
    round: int
    accuracy: dict[int, float]
    committed: dict[int, int]
    opinions: dict[int, Opinion]
    eligible: dict[int, bool]
    credits: dict
    shard_of: dict[int, int]
    submitted: set[int] = field(default_factory=set)
    committed_devices: set[int] = field(default_factory=set)
    global_loss: dict[int, float] = field(default_factory=dict)

    @property
    def total_committed(self) -> int:
        return sum(self.committed.values())

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean(list(self.accuracy.values()))) if self.accuracy else 0.0


@dataclass
class SimulationResult:
    config: SimConfig
    metrics: list[RoundMetrics]
    main_chain: Chain
    sub_chains: dict[int, Chain]
    store: OffChainStore
    credits: LedgerOfCredits
    opinions: dict[int, Opinion]
    behaviors: dict[int, Behavior]
    task_shard: dict[int, int]
    global_params: dict[int, ModelParams]

    @property
    def rounds_executed(self) -> int:
        return len(self.metrics)


def _vote_record(vote: consensus.Vote, ratee: int, shard: int, t: int) -> InteractionRecord:
    if vote.verdict is Verdict.APPROVE:
        return InteractionRecord(ratee, shard, t, Interaction.POSITIVE, Severity.STANDARD)
    severity = Severity.SEVERE if vote.reason is Reason.ACCURACY_INFLATED else Severity.STANDARD
    return InteractionRecord(ratee, shard, t, Interaction.NEGATIVE, severity)


class Simulation:
    """Mutable orchestrator state; :func:`run_simulation` drives it."""

    def __init__(self, cfg: SimConfig):
        self.cfg = validate(cfg)
        self.devices = list(range(cfg.device_count))
        types = cfg.data.data_types
        self.tags = {d: types[d % len(types)] for d in self.devices}
        self.behaviors = inject_adversaries(self.devices, cfg.adversaries, cfg.seed)
        self.logs: dict[int, list[InteractionRecord]] = defaultdict(list)
        self.opinions = {d: Opinion.vacuous(cfg.reputation.base_rate) for d in self.devices}
        self.store = OffChainStore()
        self.main_chain = Chain(shard=None)
        self.sub_chains = {s: Chain(shard=s) for s in range(cfg.shard_count)}
        self.credits = LedgerOfCredits()
        self.tasks: dict[int, TaskContract] = {}
        self.task_shard: dict[int, int] = {}
        self.global_params: dict[int, ModelParams] = {}
        self.complete: set[int] = set()
        self._profiles: dict[tuple[int, int], DeviceProfile] = {}
        self._task_models: dict[int, TaskModel] = {}
        self._test_sets: dict[int, Dataset] = {}
        self.assignment = self._assign(round=0)
        self._publish()

    # Step 1 ------------------------------------------------------------------

    def _assign(self, round: int):
        cfg = self.cfg
        seed = cfg.seed if round == 0 else int(stream(cfg.seed, "shard", round).integers(2**62))
        if cfg.strategy == "random":
            return assign_random(self.devices, cfg.shard_count, seed)
        if cfg.strategy == "reputation":
            return assign_by_reputation(self.opinions, cfg.shard_count, seed)
        required = [t.required_data_type for t in cfg.resolved_tasks()]
        return assign_by_feature(self.tags, cfg.shard_count, seed, required)

    def _publish(self) -> None:
        descriptors = [
            ShardDescriptor(s, tuple(self.tags[d] for d in members))
            for s, members in sorted(self.assignment.items())
        ]
        for task in self.cfg.resolved_tasks():
            shard = publish_task(task, descriptors, taken=self.task_shard.values())
            self.tasks[task.task_id] = task
            self.task_shard[task.task_id] = shard
            self.global_params[task.task_id] = ModelParams.zeros(task.param_dim)
            self.credits.fund(task)
            log.info("task %d published to shard %d", task.task_id, shard)

    # data ----------------------------------------------------------------------

    def task_model(self, task_id: int) -> TaskModel:
        if task_id not in self._task_models:
            task = self.tasks[task_id]
            rng = stream(self.cfg.seed, "task_model", task_id)
            self._task_models[task_id] = make_task_model(
                rng, task.param_dim - 1, self.cfg.data.separation, task.loss
            )
        return self._task_models[task_id]

    def test_set(self, task_id: int) -> Dataset:
        if task_id not in self._test_sets:
            rng = stream(self.cfg.seed, "test_data", task_id)
            self._test_sets[task_id] = sample(
                self.task_model(task_id), rng, self.cfg.data.test_samples
            )
        return self._test_sets[task_id]

    def profile(self, device: int, task_id: int) -> DeviceProfile:
        key = (device, task_id)
        if key not in self._profiles:
            d = self.cfg.data
            rng = stream(self.cfg.seed, "device_data", task_id, device)
            tag = self.tags[device]
            train = sample(self.task_model(task_id), rng, d.train_samples, tag)
            holdout = sample(self.task_model(task_id), rng, d.holdout_samples, tag)
            behavior = self.behaviors[device]
            trained_on = train
            if isinstance(behavior, LabelFlipPoisoner):
                flip_rng = stream(self.cfg.seed, "flip", task_id, device)
                k = max(1, round(behavior.flip_fraction * len(train)))
                idx = flip_rng.choice(len(train), size=k, replace=False)
                labels = train.labels.copy()
                labels[idx] = 1.0 - labels[idx]
                trained_on = train.with_labels(labels)
            self._profiles[key] = DeviceProfile(device, trained_on, holdout, behavior, train)
        return self._profiles[key]

    # helpers -----------------------------------------------------------------

    def is_eligible(self, device: int) -> bool:
        if not self.cfg.gating:
            return True
        return gate(self.opinions[device], self.cfg.reputation) is Gate.ELIGIBLE

    def _participates(self, device: int, t: int) -> bool:
        behavior = self.behaviors[device]
        if isinstance(behavior, Lazy):
            draw = stream(self.cfg.seed, "participation", t, device).random()
            return bool(draw < behavior.participation_probability)
        return True

    def _local_update(self, profile: DeviceProfile, start: ModelParams, t: int):
        """Return (params, claimed accuracy) for one device's submission."""
        behavior = profile.behavior
        if isinstance(behavior, FreeRider):
            rng = stream(self.cfg.seed, "free_rider", t, profile.device_id)
            params = ModelParams(rng.standard_normal(start.dim))
            # pretends to have matched the current global model
            return params, evaluate_accuracy(start, profile.holdout)
        params = local_train(start, profile.dataset, self.cfg.train)
        if isinstance(behavior, LabelFlipPoisoner):
            # reports its fit to the labels it trained on
            return params, evaluate_accuracy(params, profile.dataset)
        return params, evaluate_accuracy(params, profile.holdout)

    # rounds ------------------------------------------------------------------

    def run_round(self, t: int) -> RoundMetrics:
        cfg = self.cfg
        if t > 0 and cfg.reshard_every_round:
            self.assignment = self._assign(round=t)
        members_of = self.assignment
        eligible = {d: self.is_eligible(d) for d in self.devices}
        records: list[InteractionRecord] = []
        submitted: set[int] = set()
        committed_devices: set[int] = set()
        committed_count = {s: 0 for s in members_of}
        new_params: dict[int, ModelParams] = {}
        seq = 0

        for task_id in sorted(self.tasks):
            if task_id in self.complete:
                continue
            shard = self.task_shard[task_id]
            members = members_of[shard]
            start = self.global_params[task_id]

            # (1)-(2) train and submit, all from the same start params
            proposals: list[tuple[Proposal, ModelParams]] = []
            for d in members:
                if not eligible[d]:
                    continue
                if not self._participates(d, t):
                    records.append(
                        InteractionRecord(d, shard, t, Interaction.NEGATIVE, Severity.STANDARD)
                    )
                    continue
                profile = self.profile(d, task_id)
                try:
                    params, claim = self._local_update(profile, start, t)
                except SRBFLError as exc:
                    raise SimulationError(str(exc), round=t, device=d) from exc
                digest = self.store.put(params.to_bytes())
                tx = UpdateTransaction(
                    shard_id=shard,
                    device_id=d,
                    round=t,
                    claimed_accuracy=float(claim),
                    sample_count=len(profile.dataset),
                    payload_digest=digest,
                    submitted_at=seq,
                )
                seq += 1
                submitted.add(d)
                proposals.append((Proposal(tx, d), params))

            # (3) validate and tally
            committed: list[tuple[UpdateTransaction, ModelParams]] = []
            for proposal, params in proposals:
                proposer = proposal.proposer
                peers = [v for v in members if v != proposer and eligible[v]]
                voters = [v for v in peers if self._participates(v, t)]
                allow_self = not peers
                if allow_self:
                    peers = voters = [proposer]
                votes = [
                    consensus.validate_update(
                        proposal,
                        v,
                        self.profile(v, task_id).holdout,
                        self.store,
                        cfg.tolerance,
                        allow_self=allow_self,
                    )
                    for v in voters
                ]
                outcome = consensus.tally(votes, len(peers), cfg.quorum_fraction)
                records.extend(_vote_record(v, proposer, shard, t) for v in votes)
                if outcome is Outcome.COMMITTED:
                    committed.append((proposal.transaction, params))
                    committed_devices.add(proposer)

            if committed:
                txs = [tx for tx, _ in committed]
                append_block(self.sub_chains[shard], txs, t, self.store)
                committed_count[shard] = len(txs)
                if cfg.promote_every_round:
                    append_block(self.main_chain, [best_transaction(txs)], t, self.store)
                # (5) computed now, applied after the barrier below
                new_params[task_id] = aggregate((p, tx.sample_count) for tx, p in committed)

        # (4) evidence and opinions
        for rec in records:
            self.logs[rec.ratee].append(rec)
        current = shard_of(members_of)
        for d in self.devices:
            self.opinions[d] = device_opinion(
                self.logs.get(d, ()),
                t,
                cfg.reputation,
                across_shards=cfg.fuse_across_shards,
                shard=current[d],
            )

        # (5) barrier: global models change only after every shard is done
        self.global_params.update(new_params)
        accuracy = {}
        losses = {}
        for task_id, task in sorted(self.tasks.items()):
            params = self.global_params[task_id]
            test = self.test_set(task_id)
            accuracy[task_id] = evaluate_accuracy(params, test)
            losses[task_id] = global_loss(params, [test], task.loss)
            if task_id not in self.complete and (
                accuracy[task_id] >= task.target_accuracy or t + 1 >= task.max_rounds
            ):
                self.complete.add(task_id)

        return RoundMetrics(
            round=t,
            accuracy=accuracy,
            committed=committed_count,
            opinions=dict(self.opinions),
            eligible={d: self.is_eligible(d) for d in self.devices},
            credits=dict(self.credits.balances),
            shard_of=current,
            submitted=submitted,
            committed_devices=committed_devices,
            global_loss=losses,
        )

    def finish(self, last_round: int) -> None:
        if not self.cfg.promote_every_round:
            for task_id in sorted(self.tasks):
                sub = self.sub_chains[self.task_shard[task_id]]
                if sub.transactions():
                    promote_final(self.main_chain, sub, last_round, self.store)
        for task_id, task in sorted(self.tasks.items()):
            committed = self.sub_chains[self.task_shard[task_id]].transactions()
            self.credits = settle_rewards(
                task, committed, self.opinions, self.credits, self.cfg.reputation
            )


def run_simulation(cfg: SimConfig) -> SimulationResult:
    sim = Simulation(cfg)
    metrics: list[RoundMetrics] = []
    for t in range(cfg.rounds):
        m = sim.run_round(t)
        metrics.append(m)
        log.info(
            "round %d: mean accuracy %.4f, committed %d",
            t,
            m.mean_accuracy,
            m.total_committed,
        )
        if len(sim.complete) == len(sim.tasks):
            break
    sim.finish(metrics[-1].round)
    if metrics:
        metrics[-1].credits = dict(sim.credits.balances)
    return SimulationResult(
        config=cfg,
        metrics=metrics,
        main_chain=sim.main_chain,
        sub_chains=sim.sub_chains,
        store=sim.store,
        credits=sim.credits,
        opinions=dict(sim.opinions),
        behaviors=sim.behaviors,
        task_shard=dict(sim.task_shard),
        global_params=dict(sim.global_params),
    )
