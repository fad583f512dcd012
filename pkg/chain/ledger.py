"""
ledger.py — Transactions, blocks, pointers and the fork-free ledger store

Hashes:
    tx.h  = H(prev || owner || cont || search_proofs)
    blk.h = H(prev || owner || S || search_proofs)

with every `||` a length-prefixed field (core.encoding) and S the
concatenation of member transaction hashes in block order.

The store keeps every appended block, including knocked-out fork siblings.
The main path is walked from genesis, always descending into the child with
the lowest hash; its last block is the committed tail. A block is final once
one further main-path block succeeds it.
"""

import logging
from collections import defaultdict
from dataclasses import dataclass, field, replace

from core.encoding import encode_amount, encode_fields
from core.errors import (
    DuplicateBlockError,
    InvalidParameterError,
    InvalidReferenceError,
    MissingParentError,
    NodeNotFoundError,
)
from core.ident import Identifier, Signature, hash_to_id
from overlay.skipgraph import SearchProof, encode_proofs

logger = logging.getLogger(__name__)


# ── Data types ────────────────────────────────────────────────────────────────


@dataclass(frozen=True, slots=True)
class Contribution:
    """
    A single-recipient remittance. `extension` carries auxiliary canonical
    bytes (misbehavior evidence) and is hashed with the rest of cont.
    """

    recipient: Identifier
    amount: int
    extension: bytes = b""

    def __post_init__(self) -> None:
        if self.amount < 0:
            raise InvalidParameterError(f"Contribution amount must be ≥ 0, got {self.amount}")

    def encode(self) -> bytes:
        return encode_fields(self.recipient.to_bytes(), encode_amount(self.amount), self.extension)


@dataclass(frozen=True, slots=True)
class Transaction:
    prev: Identifier
    owner: Identifier
    cont: Contribution
    search_proofs: tuple[SearchProof, ...]
    h: Identifier
    sigs: tuple[Signature, ...] = ()

    @property
    def owner_signature(self) -> Signature | None:
        return self.sigs[0] if self.sigs else None

    @property
    def validator_signatures(self) -> tuple[Signature, ...]:
        return self.sigs[1:]

    @property
    def routing_hops(self) -> int:
        return sum(p.hop_count for p in self.search_proofs)

    def with_signatures(self, *sigs: Signature) -> "Transaction":
        return replace(self, sigs=self.sigs + tuple(sigs))

    def encode(self) -> bytes:
        """Full canonical encoding, signatures included (evidence payloads, exports)."""
        return encode_fields(
            self.prev.to_bytes(),
            self.owner.to_bytes(),
            self.cont.encode(),
            encode_proofs(self.search_proofs),
            self.h.to_bytes(),
            b"".join(s.encode() for s in self.sigs),
        )


@dataclass(frozen=True, slots=True)
class Block:
    prev: Identifier
    owner: Identifier
    txs: tuple[Transaction, ...]
    search_proofs: tuple[SearchProof, ...]
    h: Identifier
    sigs: tuple[Signature, ...] = ()

    @property
    def owner_signature(self) -> Signature | None:
        return self.sigs[0] if self.sigs else None

    @property
    def validator_signatures(self) -> tuple[Signature, ...]:
        return self.sigs[1:]

    @property
    def is_genesis(self) -> bool:
        return self.prev.value == 0 and self.owner.value == 0 and not self.txs

    def with_signatures(self, *sigs: Signature) -> "Block":
        return replace(self, sigs=self.sigs + tuple(sigs))

    def owners(self) -> list[Identifier]:
        return [tx.owner for tx in self.txs]

    def encode(self) -> bytes:
        return encode_fields(
            self.prev.to_bytes(),
            self.owner.to_bytes(),
            b"".join(encode_fields(tx.encode()) for tx in self.txs),
            encode_proofs(self.search_proofs),
            self.h.to_bytes(),
            b"".join(s.encode() for s in self.sigs),
        )


@dataclass(frozen=True, slots=True)
class TransactionPointer:
    """Overlay flag for an owner's latest transaction: nameID = owner, numID = block hash."""

    owner_name: Identifier
    block_hash: Identifier
    tx_hash: Identifier


# ── Hashing ───────────────────────────────────────────────────────────────────


def encode_tx_set(txs: "tuple[Transaction, ...] | list[Transaction]") -> bytes:
    """S as the ordered concatenation of member transaction hashes."""
    return b"".join(tx.h.to_bytes() for tx in txs)


def tx_hash(
    prev: Identifier,
    owner: Identifier,
    cont: Contribution,
    search_proofs: "tuple[SearchProof, ...] | list[SearchProof]",
) -> Identifier:
    payload = encode_fields(
        prev.to_bytes(), owner.to_bytes(), cont.encode(), encode_proofs(search_proofs)
    )
    return hash_to_id(payload, prev.width)


def blk_hash(
    prev: Identifier,
    owner: Identifier,
    txs: "tuple[Transaction, ...] | list[Transaction]",
    search_proofs: "tuple[SearchProof, ...] | list[SearchProof]",
) -> Identifier:
    payload = encode_fields(
        prev.to_bytes(), owner.to_bytes(), encode_tx_set(txs), encode_proofs(search_proofs)
    )
    return hash_to_id(payload, prev.width)


def make_genesis(width_s: int) -> Block:
    zero = Identifier.zero(width_s)
    return Block(prev=zero, owner=zero, txs=(), search_proofs=(), h=blk_hash(zero, zero, (), ()))


def _fork_order(blk: Block) -> tuple[int, int, bytes]:
    # ties are negligible at s = 256 but reachable in small-s simulations
    return (blk.h.value, blk.owner.value, blk.encode())


# ── Store ─────────────────────────────────────────────────────────────────────


@dataclass
class LedgerStore:
    """
    All appended blocks plus the fork-free main path over them.
    Single-writer; readers see a consistent main path after each append.
    """

    genesis: Block
    blocks: dict[Identifier, Block] = field(default_factory=dict)
    children: dict[Identifier, set[Identifier]] = field(default_factory=lambda: defaultdict(set))
    main_path: list[Identifier] = field(default_factory=list)
    _main_index: dict[Identifier, int] = field(default_factory=dict, repr=False)
    _owner_blocks: dict[Identifier, list[Identifier]] = field(
        default_factory=lambda: defaultdict(list), repr=False
    )

    def __post_init__(self) -> None:
        self.blocks[self.genesis.h] = self.genesis
        self._recompute_main_path()

    @classmethod
    def fresh(cls, width_s: int) -> "LedgerStore":
        return cls(genesis=make_genesis(width_s))

    @property
    def genesis_hash(self) -> Identifier:
        return self.genesis.h

    @property
    def tail(self) -> Identifier:
        return self.main_path[-1]

    @property
    def height(self) -> int:
        """Committed non-genesis blocks on the main path."""
        return len(self.main_path) - 1

    def __contains__(self, block_hash: object) -> bool:
        return block_hash in self.blocks

    def get(self, block_hash: Identifier) -> Block:
        try:
            return self.blocks[block_hash]
        except KeyError:
            raise NodeNotFoundError(f"Block {block_hash} is not in the store") from None

    def on_main_path(self, block_hash: Identifier) -> bool:
        return block_hash in self._main_index

    def main_index(self, block_hash: Identifier) -> int:
        try:
            return self._main_index[block_hash]
        except KeyError:
            raise InvalidReferenceError(f"Block {block_hash} is not on the main path") from None

    def main_blocks(self) -> list[Block]:
        return [self.blocks[h] for h in self.main_path]

    def _recompute_main_path(self) -> None:
        path = [self.genesis.h]
        current = self.genesis.h
        while self.children.get(current):
            current = min(self.children[current], key=lambda h: _fork_order(self.blocks[h]))
            path.append(current)
        self.main_path = path
        self._main_index = {h: i for i, h in enumerate(path)}

    def _append(self, blk: Block) -> None:
        if blk.h in self.blocks:
            raise DuplicateBlockError(f"Block {blk.h} already stored")
        if blk.prev not in self.blocks:
            raise MissingParentError(f"Block {blk.h} points at unknown prev {blk.prev}")
        self.blocks[blk.h] = blk
        self.children[blk.prev].add(blk.h)
        for owner in {tx.owner for tx in blk.txs}:
            self._owner_blocks[owner].append(blk.h)


def append_block(store: LedgerStore, blk: Block) -> None:
    """Store blk, index it, and recompute the committed tail."""
    store._append(blk)
    previous_tail = store.tail
    store._recompute_main_path()
    if store.tail != blk.h and store.tail != previous_tail:
        logger.info(f"Tail switched from {previous_tail} to {store.tail} after appending {blk.h}")


def resolve_tail(store: LedgerStore) -> Identifier:
    """Last block on the lowest-hash path from genesis."""
    store._recompute_main_path()
    return store.tail


def is_finalized(store: LedgerStore, block_hash: Identifier) -> bool:
    if block_hash not in store.blocks:
        raise NodeNotFoundError(f"Block {block_hash} is not in the store")
    idx = store._main_index.get(block_hash)
    return idx is not None and idx < len(store.main_path) - 1


def latest_owner_block(
    store: LedgerStore, owner: Identifier, upto: Identifier
) -> Identifier | None:
    """Most recent main-path block at or before `upto` holding a transaction of owner."""
    limit = store.main_index(upto)
    best: tuple[int, Identifier] | None = None
    for h in store._owner_blocks.get(owner, ()):
        idx = store._main_index.get(h)
        if idx is not None and idx <= limit and (best is None or idx > best[0]):
            best = (idx, h)
    return best[1] if best else None


# ── Export ────────────────────────────────────────────────────────────────────


def export_ledger(store: LedgerStore) -> str:
    """
    Newline-delimited records of the main path, one block per line:
        h=<hex> prev=<hex> owner=<hex> txs=<hex,hex,...> sigs=<count>
    """
    lines = []
    for blk in store.main_blocks():
        txs = ",".join(tx.h.hex() for tx in blk.txs)
        lines.append(
            f"h={blk.h.hex()} prev={blk.prev.hex()} owner={blk.owner.hex()} "
            f"txs={txs} sigs={len(blk.sigs)}"
        )
    return "\n".join(lines) + "\n"
