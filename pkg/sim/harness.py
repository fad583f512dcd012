"""
harness.py — Deterministic discrete-event simulation of a LightChain network

One simpy environment per run, time in minutes:

  * a churn process per honest peer alternates exponential online and
    offline holding times; a recovering peer re-bootstraps its view
  * a slot process fires every slot_minutes and runs, in order:
      workload → block proposals → adversary → commit & forks →
      finality (pointers, integrity oracle) → audits → view sync → sample
  * knocked-out transactions go back to their owners' pending queue and
    are cast first by the next proposers
  * audit artifacts are retried each slot until audit_lag slots pass

All actions started in a slot complete within it. Online honest peers learn
the committed tail by the end of the slot they are online in; offline peers
keep their stale view until they recover.

Every random draw comes from one numpy Generator seeded from the config, and
simpy orders simultaneous events by insertion, so a (config, seed) pair
always yields the same Metrics.
"""

import logging
import math
from collections import Counter
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass
from typing import Any

import numpy as np
import simpy
from tqdm import tqdm

from chain.incentive import audit, classify_block, decode_penalty, file_misbehavior_tx
from chain.ledger import (
    Block,
    Contribution,
    LedgerStore,
    Transaction,
    append_block,
    latest_owner_block,
)
from chain.pov import (
    ValidationOutcome,
    ValidatorContext,
    attach_signatures,
    cast_transactions,
    collect_threshold,
    create_block,
    create_transaction,
    designated_validators,
    knockout_recovery,
    validate_block,
    validate_transaction,
)
from chain.storage import (
    PointerRegistry,
    discover_pending,
    install_pointers,
    online_replicas,
    replica_holders,
    replicate,
    retire_pointers,
    withdraw,
)
from chain.view import ViewTable, apply_block, bootstrap, genesis_view, view_digest
from core.errors import (
    BootstrapUnavailableError,
    ConfigError,
    InvalidEvidenceError,
    OverlayEmptyError,
)
from core.ident import Identifier, KeyPair, generate_keypair
from overlay.skipgraph import NodeKind, Overlay
from sim.adversary import AdversaryModel
from sim.config import SWEEPABLE, SimConfig, Strategy, derive_q, with_overrides
from sim.metrics import Metrics, SlotSample

logger = logging.getLogger(__name__)

__all__ = ["Simulation", "SweepCell", "run", "run_sweep", "derive_q"]

# Main-path blocks whose nameID a proposer searches for pending transactions
DISCOVERY_DEPTH = 3

# Auditors tried per queued artifact and slot
AUDITORS_PER_ARTIFACT = 3


class Simulation:
    def __init__(self, config: SimConfig) -> None:
        self.config = config
        self.params = config.pov_params()
        self.rng = np.random.default_rng(config.seed)
        self.env = simpy.Environment()
        self.overlay = Overlay(config.width_s)
        self.keypairs: dict[Identifier, KeyPair] = {}
        self._create_peers()
        self.peers = sorted(self.keypairs)

        self.store = LedgerStore.fresh(config.width_s)
        genesis = self.store.genesis_hash
        self._views: dict[Identifier, ViewTable] = {
            genesis: genesis_view(self.peers, genesis, config.endowment)
        }
        self.peer_tail: dict[Identifier, Identifier] = {p: genesis for p in self.peers}

        self.adversary = AdversaryModel.choose(
            self.peers, config.f, self.rng, config.adversary_strategies
        )
        self.honest = [p for p in self.peers if not self.adversary.is_corrupted(p)]

        self.registry = PointerRegistry()
        self.pending: dict[Identifier, Transaction] = {}
        self.block_holders: dict[Identifier, list[Identifier]] = {}
        self.committed: set[Identifier] = set()
        self._committed_tail = genesis
        self.adversarial_blocks: set[Identifier] = set()
        self.finalized_upto = 0
        self.to_audit: list[Any] = []
        self.audit_queue: list[tuple[Any, int]] = []
        self.misbehaved_at: dict[Identifier, int] = {}
        self._detected: set[Identifier] = set()
        self.recast: dict[Identifier, Transaction] = {}
        self.commit_slot: dict[Identifier, int] = {}
        self.slot = 0
        self._flagged_seen = 0
        self.accused_pending: dict[Identifier, Identifier] = {}
        self.hops: Counter[int] = Counter()
        self.involvement: Counter[Identifier] = Counter()
        self.metrics = Metrics()

        offline = self.rng.random(len(self.honest)) < config.q
        for peer, down in zip(self.honest, offline):
            if down:
                self.overlay.set_online(peer, False)

    # ── Setup ─────────────────────────────────────────────────────────────────

    def _create_peers(self) -> None:
        cfg = self.config
        index = 0
        while len(self.keypairs) < cfg.n:
            kp = generate_keypair(f"{cfg.seed}:{index}".encode(), cfg.width_s, cfg.signature_scheme)
            index += 1
            if kp.peer_id in self.keypairs:
                continue
            self.keypairs[kp.peer_id] = kp
            self.overlay.add_peer(kp)
        logger.debug(f"Created {cfg.n} peers after {index} key derivations")

    # ── Helpers ───────────────────────────────────────────────────────────────

    def online(self, peer: Identifier) -> bool:
        return self.overlay.is_online(peer)

    def view_at(self, block_hash: Identifier) -> ViewTable:
        """View after applying the chain up to block_hash, cached per block."""
        if block_hash in self._views:
            return self._views[block_hash]
        chain: list[Block] = []
        current = block_hash
        while current not in self._views:
            blk = self.store.get(current)
            chain.append(blk)
            current = blk.prev
        view = self._views[current]
        for blk in reversed(chain):
            view = apply_block(view, blk, self.params)
            self._views[blk.h] = view
        return view

    @property
    def truth(self) -> ViewTable:
        return self.view_at(self.store.tail)

    def context(self, peer: Identifier) -> ValidatorContext:
        return ValidatorContext(
            keypair=self.keypairs[peer],
            store=self.store,
            view=self.view_at(self.peer_tail[peer]),
            params=self.params,
        )

    def _blacklisted(self, peer: Identifier) -> bool:
        return peer in self.truth.blacklist

    def _record_hops(self, subject: Transaction | Block) -> None:
        for proof in subject.search_proofs:
            self.hops[proof.hop_count] += 1

    def _online_honest(self) -> list[Identifier]:
        return [p for p in self.honest if self.online(p) and not self._blacklisted(p)]

    # ── PoV round trips ───────────────────────────────────────────────────────

    def _collect(
        self,
        subject: Transaction | Block,
        validate: Callable[[ValidatorContext, Overlay, Any], ValidationOutcome],
    ) -> list[tuple[Identifier, ValidationOutcome]]:
        outcomes = []
        seen: set[Identifier] = set()
        for peer in designated_validators(subject):
            if peer in seen or not self.online(peer):
                continue
            seen.add(peer)
            self.overlay.messages.charge(2, "validation")
            ctx = self.context(peer)

            def honest(ctx: ValidatorContext = ctx) -> ValidationOutcome:
                return validate(ctx, self.overlay, subject)

            if self.adversary.is_corrupted(peer):
                outcome = self.adversary.respond(self.keypairs[peer], subject, honest)
            else:
                outcome = honest()
            outcomes.append((peer, outcome))
        return outcomes

    def _validate_tx(self, tx: Transaction) -> Transaction | None:
        """Run PoV for a fresh transaction; publish it when t validators sign."""
        honest_owner = not self.adversary.is_corrupted(tx.owner)
        self._record_hops(tx)
        blacklist = self.view_at(self.peer_tail[tx.owner]).blacklist
        outcomes = self._collect(tx, validate_transaction)
        if honest_owner:
            self.metrics.validation_attempts += 1
        if not collect_threshold(outcomes, tx.h, self.overlay.keys, self.params.t, blacklist):
            if honest_owner:
                self.metrics.service_denials += 1
            return None
        if honest_owner:
            self.metrics.validation_successes += 1
        signed = attach_signatures(tx, outcomes, self.overlay.keys, blacklist)
        replicate(self.overlay, signed, replica_holders(signed, self.params.t))
        self.pending[signed.owner] = signed
        return signed

    # ── Slot phases ───────────────────────────────────────────────────────────

    def _workload(self) -> None:
        cfg = self.config
        emitters = [p for p in self.peers if self.online(p) and not self._blacklisted(p)]
        if not emitters:
            return
        draws = self.rng.poisson(cfg.tx_rate_per_peer_per_hour * cfg.slot_minutes / 60, len(emitters))
        for peer, count in zip(emitters, draws):
            if count == 0 or peer in self.pending:
                continue
            recipient = self.peers[int(self.rng.integers(len(self.peers)))]
            amount = int(self.rng.integers(1, 100))
            tail = self.peer_tail[peer]
            tx = create_transaction(
                self.overlay, self.keypairs[peer], tail, Contribution(recipient, amount), self.params.alpha
            )
            self._validate_tx(tx)

    def _discover(self, proposer: Identifier) -> list[Transaction]:
        path = self.store.main_path
        found: list[Transaction] = []
        seen: set[Identifier] = set()
        barred = self.view_at(self.peer_tail[proposer]).blacklist
        for tx in self.recast.values():
            if tx.h not in self.committed and tx.owner not in barred:
                seen.add(tx.h)
                found.append(tx)
        with self.overlay.messages.in_phase("discovery"):
            for block_hash in reversed(path[-DISCOVERY_DEPTH:]):
                for tx in discover_pending(self.overlay, proposer, block_hash):
                    if tx.h in seen or tx.h in self.committed or tx.owner in barred:
                        continue
                    seen.add(tx.h)
                    found.append(tx)
        return found

    def _propose(self) -> list[Block]:
        candidates = self._online_honest()
        if not candidates:
            return []
        count = min(self.config.proposers_per_slot, len(candidates))
        picks = sorted(int(i) for i in self.rng.choice(len(candidates), size=count, replace=False))
        tail = self.store.tail
        blocks = []
        for proposer in (candidates[i] for i in picks):
            txs = cast_transactions(self.store, tail, self._discover(proposer), self.params.max_tx)
            blk = self._build_block(proposer, tail, txs)
            if blk is not None:
                blocks.append(blk)
        return blocks

    def _build_block(self, proposer: Identifier, tail: Identifier, txs: list[Transaction]) -> Block | None:
        """Run PoV for a block of txs on tail; None when too small or under-signed."""
        if len(txs) < self.params.min_tx:
            return None
        blk = create_block(self.overlay, self.keypairs[proposer], tail, txs, self.params.alpha)
        self._record_hops(blk)
        blacklist = self.view_at(self.peer_tail[proposer]).blacklist
        outcomes = self._collect(blk, validate_block)
        self.metrics.validation_attempts += 1
        if not collect_threshold(outcomes, blk.h, self.overlay.keys, self.params.t, blacklist):
            self.metrics.service_denials += 1
            return None
        self.metrics.validation_successes += 1
        return attach_signatures(blk, outcomes, self.overlay.keys, blacklist)

    def _attack(self) -> list[Block]:
        """Colluders try to get a double spend into the chain."""
        if not self.adversary.uses(Strategy.FORGE_BLOCK_COMMIT):
            return []
        tail = self.store.tail
        blocks = []
        for _ in range(self.config.attacks_per_slot):
            attacker = self.adversary.pick_attacker(
                self.rng,
                lambda p: not self._blacklisted(p) and self._double_spend_base(p, tail) is not None,
            )
            if attacker is None:
                return blocks
            blk = self._forge(attacker, tail)
            if blk is not None:
                blocks.append(blk)
        return blocks

    def _double_spend_base(self, peer: Identifier, tail: Identifier) -> Identifier | None:
        """A main-path block preceding the peer's latest committed transaction."""
        latest = latest_owner_block(self.store, peer, tail)
        if latest is None:
            return None
        return self.store.main_path[self.store.main_index(latest) - 1]

    def _forge(self, attacker: Identifier, tail: Identifier) -> Block | None:
        kp = self.keypairs[attacker]
        base = self._double_spend_base(attacker, tail)
        accomplice = sorted(self.adversary.corrupted)[0]
        forged = create_transaction(self.overlay, kp, base, Contribution(accomplice, 1), self.params.alpha)
        self._record_hops(forged)
        forged = attach_signatures(forged, self._collect(forged, validate_transaction), self.overlay.keys)

        fillers = [
            tx
            for tx in cast_transactions(self.store, tail, self._discover(attacker), self.params.max_tx)
            if tx.owner != attacker
        ][: max(self.params.min_tx - 1, 0)]
        if len(fillers) + 1 < self.params.min_tx:
            return None

        self.metrics.attacks_attempted += 1
        blk = create_block(self.overlay, kp, tail, [forged, *fillers], self.params.alpha)
        self._record_hops(blk)
        outcomes = self._collect(blk, validate_block)
        signed = attach_signatures(blk, outcomes, self.overlay.keys)
        if collect_threshold(outcomes, blk.h, self.overlay.keys, self.params.t, self.truth.blacklist):
            logger.debug(f"Colluders gathered {len(signed.validator_signatures)} signatures on {blk.h}")
            self.adversarial_blocks.add(signed.h)
            return signed
        # not enough signatures: push it into the overlay regardless
        replicate(self.overlay, signed, [attacker])
        self.metrics.direct_submissions += 1
        self.misbehaved_at.setdefault(attacker, self.slot)
        self.to_audit.append(signed)
        return None

    def _commit(self, blocks: Sequence[Block]) -> None:
        for blk in sorted(blocks, key=lambda b: b.h):
            append_block(self.store, blk)
            self.commit_slot[blk.h] = self.slot
            holders = replica_holders(blk, self.params.t)
            self.block_holders[blk.h] = holders
            replicate(self.overlay, blk, holders)

        if len(blocks) > 1:
            winners = [b for b in blocks if self.store.on_main_path(b.h)]
            if winners:
                winner = winners[0]
                for loser in blocks:
                    if loser.h != winner.h:
                        self._recast(knockout_recovery(self.overlay, loser.owner, winner, loser))
                        self.metrics.forks_resolved += 1

        self._refresh_committed()
        self._expire_pending()

        final = len(self.store.main_path) - 2
        for idx in range(self.finalized_upto + 1, final + 1):
            self._finalize(self.store.blocks[self.store.main_path[idx]], idx)
        self.finalized_upto = max(self.finalized_upto, final)

    def _recast(self, candidates: list[Transaction]) -> None:
        """Put a knocked-out block's still-sound transactions back in their owners' queues."""
        sound = cast_transactions(self.store, self.store.tail, candidates, len(candidates))
        for tx in sound:
            queued = self.pending.get(tx.owner)
            if queued is not None and queued.h != tx.h:
                continue
            if not self.overlay.nodes_at(tx.h, NodeKind.TRANSACTION):
                replicate(self.overlay, tx, replica_holders(tx, self.params.t))
            self.pending[tx.owner] = tx
            self.recast[tx.h] = tx
        if sound:
            logger.debug(f"Recasting {len(sound)} knocked-out transactions on {self.store.tail}")

    def _refresh_committed(self) -> None:
        if self.store.tail == self._committed_tail:
            return
        self.committed = {tx.h for blk in self.store.main_blocks() for tx in blk.txs}
        self._committed_tail = self.store.tail

    def _expire_pending(self) -> None:
        """Drop own pending transactions that were committed or fell out of discovery range."""
        horizon = len(self.store.main_path) - DISCOVERY_DEPTH
        for owner, tx in list(self.pending.items()):
            if tx.h in self.committed:
                del self.pending[owner]
                continue
            if not self.store.on_main_path(tx.prev) or self.store.main_index(tx.prev) < horizon:
                withdraw(self.overlay, tx.h, NodeKind.TRANSACTION)
                del self.pending[owner]
        for tx_hash, tx in list(self.recast.items()):
            if tx_hash in self.committed:
                self.metrics.recast_transactions += 1
                del self.recast[tx_hash]
            elif self.pending.get(tx.owner) is not tx:
                del self.recast[tx_hash]
        for accused, tx_hash in list(self.accused_pending.items()):
            if not any(tx.h == tx_hash for tx in self.pending.values()):
                del self.accused_pending[accused]

    def _finalize(self, blk: Block, idx: int) -> None:
        holders = self.block_holders.get(blk.h, [blk.owner])
        install_pointers(self.overlay, blk, holders, self.registry, height=idx)
        retire_pointers(
            self.overlay,
            self.registry,
            blk,
            idx,
            self.params.block_interval,
            keeps_stale=self.adversary.keeps_stale(),
        )
        if self._violates(blk):
            self.metrics.integrity_violations += 1
            logger.warning(f"Invalid block {blk.h} by {blk.owner} finalized at height {idx}")
        if blk.h in self.adversarial_blocks:
            self.metrics.attacks_finalized += 1
        for peer in designated_validators(blk):
            self.involvement[peer] += 1
        self.metrics.evidence_committed += sum(1 for tx in blk.txs if decode_penalty(tx))
        self.to_audit.append(blk)

    def _violates(self, blk: Block) -> bool:
        """Omniscient re-validation against the ground-truth store and view."""
        oracle = ValidatorContext(
            keypair=self.keypairs[self.peers[0]],
            store=self.store,
            view=self.view_at(blk.prev),
            params=self.params,
        )
        return classify_block(blk, oracle, self.overlay) is not None

    def _audit(self) -> None:
        """
        Audit new artifacts and retry queued ones. An artifact leaves the
        queue once it is clean, evidence against its accused is published or
        the accused is blacklisted; otherwise it is retried each slot for audit_lag slots.
        """
        fresh = self.to_audit + self.registry.flagged[self._flagged_seen :]
        self.to_audit = []
        self._flagged_seen = len(self.registry.flagged)
        queue = self.audit_queue + [(artifact, self.slot) for artifact in fresh]
        self.audit_queue = []
        for artifact, first_slot in queue:
            if self._audit_one(artifact):
                continue
            if self.slot - first_slot + 1 >= self.config.audit_lag:
                self.metrics.audits_expired += 1
                logger.warning(f"Audit of {type(artifact).__name__} from slot {first_slot} expired")
                continue
            self.audit_queue.append((artifact, first_slot))

    def _audit_one(self, artifact: Any) -> bool:
        """True when the artifact needs no further auditing."""
        auditors = [p for p in self._online_honest() if p not in self.pending]
        if not auditors:
            return False
        order = self.rng.permutation(len(auditors))[:AUDITORS_PER_ARTIFACT]
        for i in order:
            auditor = auditors[int(i)]
            ctx = self.context(auditor)
            evidence = audit(artifact, ctx, self.overlay)
            if evidence is None or self._blacklisted(evidence.accused):
                return True
            if evidence.accused in self.accused_pending:
                return True
            try:
                tx = file_misbehavior_tx(self.keypairs[auditor], evidence, self.overlay, ctx)
            except InvalidEvidenceError as e:
                logger.debug(f"Auditor {auditor} dropped evidence: {e}")
                continue
            if self._validate_tx(tx) is not None:
                self.accused_pending[evidence.accused] = tx.h
                return True
        return False

    def _record_detections(self) -> None:
        for peer in self.truth.blacklist:
            if peer in self.misbehaved_at and peer not in self._detected:
                self._detected.add(peer)
                self.metrics.detection_lags.append(self.slot - self.misbehaved_at[peer])

    def _sync_views(self) -> None:
        tail = self.store.tail
        self.view_at(tail)
        for peer in self.peers:
            if self.online(peer):
                self.peer_tail[peer] = tail

    def _sample(self, slot: int) -> None:
        warm = [
            h
            for h in self.store.main_path[1:]
            if slot - self.commit_slot[h] >= self.config.replica_warmup_slots
        ]
        if warm:
            mean_replicas = float(np.mean([online_replicas(self.overlay, h, NodeKind.BLOCK) for h in warm]))
        else:
            mean_replicas = math.nan
        self.metrics.replicas_per_block_per_slot.append(mean_replicas)
        self.metrics.series.append(
            SlotSample(
                slot=slot,
                online_peers=len(self.overlay.peer_ids(online_only=True)),
                chain_height=self.store.height,
                mean_replicas=mean_replicas,
                integrity_violations=self.metrics.integrity_violations,
                service_denials=self.metrics.service_denials,
                messages=self.overlay.messages.total,
            )
        )

    def step(self, slot: int) -> None:
        self.slot = slot
        self._sync_views()
        self._workload()
        blocks = self._propose()
        blocks += self._attack()
        if blocks:
            self._commit(blocks)
        self._audit()
        self._sync_views()
        self._record_detections()
        self._sample(slot)

    # ── Processes ─────────────────────────────────────────────────────────────

    def _recover(self, peer: Identifier) -> None:
        self.metrics.bootstrap_attempts += 1
        truth = self.truth
        forging = self.adversary.uses(Strategy.SERVE_FORGED_VIEW)

        def fetch(introducer: Identifier) -> ViewTable | None:
            if forging and self.adversary.is_corrupted(introducer):
                return self.adversary.forged_view(truth)
            if not self.online(introducer):
                return None
            return self.view_at(self.peer_tail[introducer])

        try:
            adopted = bootstrap(self.overlay, peer, self.params, fetch)
        except (BootstrapUnavailableError, OverlayEmptyError) as e:
            self.metrics.service_denials += 1
            logger.debug(f"Bootstrap failed for {peer}: {e}")
            return
        if adopted.tail_hash != truth.tail_hash or view_digest(adopted) != view_digest(truth):
            self.metrics.forged_views_adopted += 1
            logger.warning(f"Peer {peer} adopted a forged view with tail {adopted.tail_hash}")
            return
        self.peer_tail[peer] = adopted.tail_hash

    def _churn(self, peer: Identifier):
        up = self.config.mean_online_hours * 60
        down = self.config.mean_offline_hours * 60
        while True:
            if self.online(peer):
                yield self.env.timeout(self.rng.exponential(up))
                self.overlay.set_online(peer, False)
            else:
                yield self.env.timeout(self.rng.exponential(down) if down > 0 else 0)
                self.overlay.set_online(peer, True)
                self._recover(peer)

    def _slots(self):
        for slot in range(self.config.slots):
            yield self.env.timeout(self.config.slot_minutes)
            self.step(slot)

    def run(self) -> Metrics:
        logger.info(
            f"Simulating n={self.config.n} f={self.config.f} alpha={self.params.alpha} "
            f"t={self.params.t} for {self.config.slots} slots (seed={self.config.seed})"
        )
        for peer in self.honest:
            self.env.process(self._churn(peer))
        self.env.run(until=self.env.process(self._slots()))
        return self._finish()

    def _finish(self) -> Metrics:
        m = self.metrics
        m.chain_height = self.store.height
        m.record_hops(self.hops)
        m.consensus_involvement = {p.hex(): self.involvement.get(p, 0) for p in self.peers}
        m.messages = dict(self.overlay.messages.counters)
        m.blacklisted = len(self.truth.blacklist)
        tx_hashes = sorted(self.committed)
        if tx_hashes:
            m.tx_mean_replicas = float(
                np.mean([online_replicas(self.overlay, h, NodeKind.TRANSACTION) for h in tx_hashes])
            )
        logger.info(
            f"Run done: height={m.chain_height} integrity_violations={m.integrity_violations} "
            f"service_denials={m.service_denials} mean_replicas={m.mean_replicas:.3f}"
        )
        return m


# ── Entry points ──────────────────────────────────────────────────────────────


def run(config: SimConfig) -> Metrics:
    return Simulation(config).run()


@dataclass(frozen=True)
class SweepCell:
    axis_value: Any
    seed: int
    metrics: Metrics


def run_sweep(
    base: SimConfig,
    axis: str,
    values: Iterable[Any],
    seeds: Iterable[int],
    progress: bool = False,
) -> list[SweepCell]:
    """One independent run per (value, seed), values outermost."""
    if axis not in SWEEPABLE:
        raise ConfigError(f"Unknown sweep axis {axis!r}; sweepable: {', '.join(SWEEPABLE)}")
    cells = [(v, s) for v in values for s in seeds]
    results = []
    for value, seed in tqdm(cells, desc=f"sweep {axis}", disable=not progress):
        config = with_overrides(base, **{axis: value, "seed": seed})
        results.append(SweepCell(value, seed, run(config)))
    return results
