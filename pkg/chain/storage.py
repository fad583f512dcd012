"""
storage.py — Replicas, transaction pointers, and retrieval over the overlay

A validated transaction or block is held by its owner and by the validators
that signed it (at most t of them). Each holder joins one overlay node for
it with numID = subject.h and nameID = subject.prev, so that

  * a numID search for h finds the subject while any holder is online,
  * a nameID search for a block hash finds its successors (and the pending
    transactions that point at it).

Transaction pointers are flags for an owner's latest transaction:
nameID = owner, numID = hash of the block holding it. Pointers for a block
are installed once the block is final. When the owner appears in a later
block, the old pointers must be retired within block_interval blocks; a
holder that keeps one longer is flagged for the misbehavior pipeline.
"""

import logging
from collections import defaultdict
from collections.abc import Iterable
from dataclasses import dataclass, field

from chain.ledger import Block, LedgerStore, Transaction, TransactionPointer
from core.errors import NodeNotFoundError, UnavailableError
from core.ident import Identifier
from overlay.skipgraph import NodeKind, Overlay, OverlayNode

logger = logging.getLogger(__name__)


@dataclass(frozen=True, slots=True)
class ReplicaSet:
    subject_hash: Identifier
    holders: frozenset[Identifier]


def replica_holders(subject: Transaction | Block, t: int) -> list[Identifier]:
    """Owner first, then up to t distinct signing validators."""
    holders = [subject.owner]
    for sig in subject.validator_signatures:
        if len(holders) > t:
            break
        if sig.signer_id not in holders:
            holders.append(sig.signer_id)
    return holders


def _kind_of(subject: Transaction | Block) -> NodeKind:
    return NodeKind.BLOCK if isinstance(subject, Block) else NodeKind.TRANSACTION


def replicate(
    overlay: Overlay, subject: Transaction | Block, holders: Iterable[Identifier]
) -> ReplicaSet:
    """Join one replica node per holder; an existing replica is left as is."""
    kind = _kind_of(subject)
    placed: set[Identifier] = set()
    for holder in holders:
        node = OverlayNode(subject.h, subject.prev, kind, holder, payload=subject)
        placed.add(holder)
        if overlay.contains(node):
            continue
        overlay.join(node)
    return ReplicaSet(subject.h, frozenset(placed))


def online_replicas(overlay: Overlay, subject_hash: Identifier, kind: NodeKind) -> int:
    return sum(1 for node in overlay.nodes_at(subject_hash, kind) if overlay.is_online(node))


def retrieve(
    overlay: Overlay, querier: Identifier, subject_hash: Identifier, kind: NodeKind
) -> Transaction | Block:
    """Fetch a subject by numID search; fails when no holder is online."""
    replicas = overlay.nodes_at(subject_hash, kind)
    if not replicas:
        raise NodeNotFoundError(f"No {kind.value} replica for {subject_hash}")
    if not any(overlay.is_online(node) for node in replicas):
        raise UnavailableError(
            f"All {len(replicas)} holders of {kind.value} {subject_hash} are offline"
        )
    node, _ = overlay.search_num_id(querier, subject_hash, kind)
    if node.num_id != subject_hash:
        raise UnavailableError(f"Search for {subject_hash} ended at {node.num_id}")
    return node.payload


# ── Ledger traversal ──────────────────────────────────────────────────────────


def fetch_predecessor(overlay: Overlay, querier: Identifier, blk: Block) -> Block:
    return retrieve(overlay, querier, blk.prev, NodeKind.BLOCK)


def fetch_successors(overlay: Overlay, querier: Identifier, block_hash: Identifier) -> list[Block]:
    """Every online block whose prev is block_hash, one entry per block."""
    found: dict[Identifier, Block] = {}
    for node, _ in overlay.search_name_id(querier, block_hash, NodeKind.BLOCK):
        found.setdefault(node.num_id, node.payload)
    return sorted(found.values(), key=lambda b: b.h)


def discover_pending(
    overlay: Overlay, querier: Identifier, tail_hash: Identifier
) -> list[Transaction]:
    """Validated transactions published against tail_hash."""
    found: dict[Identifier, Transaction] = {}
    for node, _ in overlay.search_name_id(querier, tail_hash, NodeKind.TRANSACTION):
        found.setdefault(node.num_id, node.payload)
    return sorted(found.values(), key=lambda tx: tx.h)


def withdraw(overlay: Overlay, subject_hash: Identifier, kind: NodeKind) -> int:
    """Remove every replica of a subject; returns how many were removed."""
    if not overlay.nodes_at(subject_hash, kind):
        return 0
    return len(overlay.leave(subject_hash, kind))


# ── Pointers ──────────────────────────────────────────────────────────────────


@dataclass
class PointerRecord:
    pointer: TransactionPointer
    holder: Identifier
    created_height: int
    superseded_height: int | None = None
    flagged: bool = False


@dataclass
class PointerRegistry:
    """Live pointer replicas per owner, with creation and supersession heights."""

    active: dict[Identifier, list[PointerRecord]] = field(default_factory=lambda: defaultdict(list))
    flagged: list[PointerRecord] = field(default_factory=list)

    def register(self, pointer: TransactionPointer, holder: Identifier, height: int) -> PointerRecord:
        record = PointerRecord(pointer, holder, height)
        self.active[pointer.owner_name].append(record)
        return record

    def pointers_for(self, owner: Identifier) -> list[PointerRecord]:
        return list(self.active.get(owner, ()))

    def records(self) -> list[PointerRecord]:
        return [r for records in self.active.values() for r in records]

    def _drop(self, record: PointerRecord) -> None:
        records = self.active[record.pointer.owner_name]
        records.remove(record)
        if not records:
            del self.active[record.pointer.owner_name]


def install_pointers(
    overlay: Overlay,
    blk: Block,
    holders: Iterable[Identifier],
    registry: PointerRegistry | None = None,
    height: int = 0,
) -> int:
    """One pointer node per (transaction, holder); returns the number joined."""
    holders = list(holders)
    joined = 0
    for tx in blk.txs:
        pointer = TransactionPointer(tx.owner, blk.h, tx.h)
        for holder in holders:
            node = OverlayNode(blk.h, tx.owner, NodeKind.POINTER, holder, payload=pointer)
            if overlay.contains(node):
                continue
            overlay.join(node)
            joined += 1
            if registry is not None:
                registry.register(pointer, holder, height)
    return joined


def retire_pointers(
    overlay: Overlay,
    registry: PointerRegistry,
    new_block: Block,
    current_height: int,
    block_interval: int = 2,
    keeps_stale: Iterable[Identifier] = (),
) -> list[PointerRecord]:
    """
    Mark pointers superseded by new_block, then take down every superseded
    pointer whose grace ran out. Holders listed in keeps_stale do not comply;
    their pointers past the grace are flagged once and stay in the overlay.
    """
    refusing = set(keeps_stale)
    for owner in {tx.owner for tx in new_block.txs}:
        for record in registry.pointers_for(owner):
            if record.pointer.block_hash != new_block.h and record.superseded_height is None:
                record.superseded_height = current_height

    retired: list[PointerRecord] = []
    for record in registry.records():
        if record.superseded_height is None:
            continue
        if current_height - record.superseded_height < block_interval:
            continue
        if record.holder in refusing:
            if not record.flagged and current_height - record.superseded_height > block_interval:
                record.flagged = True
                registry.flagged.append(record)
                logger.warning(
                    f"Holder {record.holder} kept pointer {record.pointer.block_hash} of "
                    f"{record.pointer.owner_name} past the grace interval"
                )
            continue
        try:
            overlay.leave(
                record.pointer.block_hash,
                NodeKind.POINTER,
                name_id=record.pointer.owner_name,
                host=record.holder,
            )
        except NodeNotFoundError:
            pass
        registry._drop(record)
        retired.append(record)
    return retired


def fast_retrieve_state(
    overlay: Overlay,
    querier: Identifier,
    owner: Identifier,
    store: LedgerStore | None = None,
) -> tuple[Identifier, Transaction]:
    """
    Owner's latest committed transaction via its pointer: a nameID search
    over pointers, then a numID search for the block. When several pointers
    are still live, the one on the latest main-path block wins; without a
    store the pointers are ordered by walking block ancestry.
    """
    hits = overlay.search_name_id(querier, owner, NodeKind.POINTER)
    if not hits:
        if any(n.name_id == owner for n in overlay.nodes(NodeKind.POINTER)):
            raise UnavailableError(f"All pointer holders for {owner} are offline")
        raise NodeNotFoundError(f"No transaction pointer for owner {owner}")

    candidates = {node.num_id for node, _ in hits}
    if len(candidates) == 1:
        block_hash = next(iter(candidates))
    elif store is not None:
        block_hash = max(
            candidates,
            key=lambda h: store.main_index(h) if store.on_main_path(h) else -1,
        )
    else:
        block_hash = _latest_by_ancestry(overlay, querier, candidates)

    blk = retrieve(overlay, querier, block_hash, NodeKind.BLOCK)
    for tx in blk.txs:
        if tx.owner == owner:
            return blk.h, tx
    raise NodeNotFoundError(f"Block {blk.h} holds no transaction of {owner}")


def _latest_by_ancestry(
    overlay: Overlay, querier: Identifier, candidates: set[Identifier]
) -> Identifier:
    """
    The candidate block that has every other candidate among its ancestors,
    walking prev links over the overlay. If no walk reaches them all (a fork
    or an offline ancestor), the walk that reached the most wins.
    """
    best = (-1, min(candidates))
    for start in sorted(candidates):
        others = candidates - {start}
        seen = 0
        try:
            blk = retrieve(overlay, querier, start, NodeKind.BLOCK)
            while seen < len(others):
                blk = fetch_predecessor(overlay, querier, blk)
                if blk.h in others:
                    seen += 1
        except (NodeNotFoundError, UnavailableError):
            pass
        if seen == len(others):
            return start
        if seen > best[0]:
            best = (seen, start)
    return best[1]
