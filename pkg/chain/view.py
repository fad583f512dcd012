"""
view.py — Per-peer view tables and randomized bootstrapping

A view holds, for every peer, (numID, lastblk, state, balance) as of the
view's tail, plus the blacklist accumulated from committed evidence. It is
what validators check correctness and balance compliance against.

`state` is the peer's asset register: the running total it has received
through contributions. `balance` is what it can spend.

A joining peer asks introducers H(numID || i), i = 1, 2, ... for their
(tail, digest) pair and adopts the first pair reported by t distinct
introducers.
"""

import logging
from collections import Counter
from collections.abc import Callable, Iterable
from dataclasses import dataclass, field, replace

from chain.incentive import Blacklist, decode_penalty
from chain.ledger import Block, LedgerStore
from chain.params import PovParams
from core.encoding import encode_amount, encode_fields, encode_index
from core.errors import (
    BootstrapUnavailableError,
    InconsistentViewError,
    InvalidBlockError,
    InvalidParameterError,
)
from core.ident import Identifier, hash_to_id
from overlay.skipgraph import NodeKind, Overlay

logger = logging.getLogger(__name__)

DEFAULT_ENDOWMENT = 1_000_000
BOOTSTRAP_CAP_FACTOR = 4


@dataclass(frozen=True, slots=True)
class ViewEntry:
    num_id: Identifier
    lastblk: Identifier
    state: int
    balance: int

    def encode(self) -> bytes:
        return encode_fields(
            self.num_id.to_bytes(),
            self.lastblk.to_bytes(),
            encode_amount(self.state),
            encode_amount(self.balance),
        )


@dataclass
class ViewTable:
    """Treated as immutable once built; apply_block returns a new table."""

    entries: dict[Identifier, ViewEntry]
    tail_hash: Identifier
    height: int = 0
    blacklist: Blacklist = field(default_factory=Blacklist)
    _digest: Identifier | None = field(default=None, repr=False, compare=False)

    def balance(self, peer: Identifier) -> int:
        entry = self.entries.get(peer)
        return entry.balance if entry is not None else 0

    def entry(self, peer: Identifier) -> ViewEntry | None:
        return self.entries.get(peer)

    def total_balance(self) -> int:
        return sum(e.balance for e in self.entries.values())


def genesis_view(
    peers: Iterable[Identifier],
    genesis_hash: Identifier,
    endowment: int = DEFAULT_ENDOWMENT,
) -> ViewTable:
    """Every peer starts with `endowment` spendable units, lastblk = genesis."""
    entries = {p: ViewEntry(p, genesis_hash, 0, endowment) for p in peers}
    return ViewTable(entries=entries, tail_hash=genesis_hash)


def _entry(entries: dict[Identifier, ViewEntry], peer: Identifier, genesis_like: Identifier) -> ViewEntry:
    return entries.get(peer) or ViewEntry(peer, genesis_like, 0, 0)


def apply_block(view: ViewTable, blk: Block, params: PovParams) -> ViewTable:
    """
    Advance a view by one block: remittances, validation fees to the first
    t signing validators, routing fees to every routing hop, the block
    reward, and penalties for committed evidence.
    """
    if blk.prev != view.tail_hash:
        raise InconsistentViewError(
            f"Block {blk.h} extends {blk.prev}, but the view's tail is {view.tail_hash}"
        )
    entries = dict(view.entries)
    blacklist = view.blacklist.copy()
    height = view.height + 1
    debtors: set[Identifier] = set()

    def credit(peer: Identifier, amount: int, received: int = 0) -> None:
        e = _entry(entries, peer, view.tail_hash)
        entries[peer] = replace(e, balance=e.balance + amount, state=e.state + received)

    for tx in blk.txs:
        owner_fee = tx.cont.amount + params.fees_for(tx.routing_hops)
        credit(tx.owner, -owner_fee)
        debtors.add(tx.owner)
        credit(tx.cont.recipient, tx.cont.amount, received=tx.cont.amount)

        validators: list[Identifier] = []
        for sig in tx.validator_signatures:
            if sig.signer_id not in validators:
                validators.append(sig.signer_id)
        # the owner pays for t signatures; a shortfall goes back to the owner
        paid = validators[: params.t]
        for v in paid:
            credit(v, params.validation_fee)
        credit(tx.owner, params.validation_fee * (params.t - len(paid)))
        for proof in tx.search_proofs:
            for peer in proof.routing_peers:
                credit(peer, params.routing_fee)

        owner_entry = entries[tx.owner]
        entries[tx.owner] = replace(owner_entry, lastblk=blk.h)

        evidence = decode_penalty(tx)
        if evidence is not None and evidence.accused not in blacklist:
            credit(evidence.accused, -params.misbehavior_penalty)
            credit(tx.owner, params.misbehavior_penalty + params.audition_reward)
            blacklist.add(evidence.accused, height)
            logger.info(
                f"Peer {evidence.accused} blacklisted at height {height} "
                f"({evidence.kind.value}, reported by {tx.owner})"
            )

    credit(blk.owner, params.block_reward)

    for peer in debtors:
        if entries[peer].balance < 0 and peer not in blacklist:
            raise InvalidBlockError(
                f"Block {blk.h} drives the balance of {peer} to {entries[peer].balance}"
            )
    return ViewTable(entries=entries, tail_hash=blk.h, height=height, blacklist=blacklist)


def replay(
    store: LedgerStore,
    peers: Iterable[Identifier],
    params: PovParams,
    endowment: int = DEFAULT_ENDOWMENT,
    upto: Identifier | None = None,
) -> ViewTable:
    """Rebuild a view from genesis over the main path (up to `upto` when given)."""
    view = genesis_view(peers, store.genesis_hash, endowment)
    for blk in store.main_blocks()[1:]:
        view = apply_block(view, blk, params)
        if upto is not None and blk.h == upto:
            break
    return view


# ── Digests & export ──────────────────────────────────────────────────────────


def view_digest(view: ViewTable) -> Identifier:
    """Hash over entries sorted by numID, then the tail. Cached on the table."""
    if view._digest is not None:
        return view._digest
    ordered = sorted(view.entries.values(), key=lambda e: e.num_id)
    body = b"".join(encode_fields(e.encode()) for e in ordered)
    view._digest = hash_to_id(encode_fields(body, view.tail_hash.to_bytes()), view.tail_hash.width)
    return view._digest


def export_view(view: ViewTable) -> str:
    """One `numID lastblk state balance` line per entry, sorted by numID."""
    lines = [
        f"{e.num_id.hex()} {e.lastblk.hex()} {e.state} {e.balance}"
        for e in sorted(view.entries.values(), key=lambda e: e.num_id)
    ]
    return "\n".join(lines) + ("\n" if lines else "")


# ── Bootstrap ─────────────────────────────────────────────────────────────────


def view_introducer_id(new_peer_num_id: Identifier, i: int) -> Identifier:
    if i < 1:
        raise InvalidParameterError(f"Introducer index must be ≥ 1, got {i}")
    payload = encode_fields(new_peer_num_id.to_bytes(), encode_index(i))
    return hash_to_id(payload, new_peer_num_id.width)


def bootstrap(
    overlay: Overlay,
    new_peer: Identifier,
    params: PovParams,
    fetch_view: Callable[[Identifier], ViewTable | None],
    cap: int | None = None,
) -> ViewTable:
    """
    Iterate introducers until t distinct ones report the same (tail, digest).

    `fetch_view(peer)` returns the view an introducer serves, or None when it
    does not answer. Offline introducers never come back from the search;
    the new peer and repeated introducers are skipped.
    """
    limit = cap if cap is not None else BOOTSTRAP_CAP_FACTOR * params.alpha
    asked: set[Identifier] = set()
    votes: Counter[tuple[Identifier, Identifier]] = Counter()
    served: dict[tuple[Identifier, Identifier], ViewTable] = {}

    with overlay.messages.in_phase("bootstrap"):
        for i in range(1, limit + 1):
            node, _ = overlay.search_num_id(new_peer, view_introducer_id(new_peer, i), NodeKind.PEER)
            introducer = node.num_id
            if introducer == new_peer or introducer in asked:
                continue
            asked.add(introducer)
            view = fetch_view(introducer)
            if view is None:
                continue
            overlay.messages.charge(2)
            key = (view.tail_hash, view_digest(view))
            votes[key] += 1
            served.setdefault(key, view)
            if votes[key] >= params.t:
                logger.debug(f"Peer {new_peer} adopted tail {key[0]} after {i} introducers")
                return served[key]

    raise BootstrapUnavailableError(
        f"Peer {new_peer} found no {params.t} consistent views among {len(asked)} "
        f"introducers within {limit} attempts"
    )
