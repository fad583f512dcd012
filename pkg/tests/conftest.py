"""
conftest.py — Shared fixtures: seeded peers, small overlays, a test network

`Network` wraps an overlay, a ledger store and per-block views so PoV,
storage, view and incentive tests can create, endorse and commit artifacts
without the simulation harness.
"""

import hashlib
from dataclasses import dataclass, field

import pytest

from chain.ledger import Block, Contribution, LedgerStore, Transaction, append_block
from chain.params import PovParams
from chain.pov import (
    ValidatorContext,
    attach_signatures,
    create_block,
    create_transaction,
    designated_validators,
    validate_block,
    validate_transaction,
)
from chain.storage import replica_holders, replicate
from chain.view import ViewTable, apply_block, genesis_view
from core.ident import Identifier, KeyPair, SigningKey, VerifyKey, generate_keypair
from overlay.skipgraph import Overlay

WIDTH = 32
ENDOWMENT = 1_000


def make_keypairs(n: int, width: int = WIDTH, prefix: str = "peer", scheme: str = "hmac") -> list[KeyPair]:
    """n key pairs with distinct identifiers, sorted by identifier."""
    found: dict[Identifier, KeyPair] = {}
    i = 0
    while len(found) < n:
        kp = generate_keypair(f"{prefix}-{i}".encode(), width, scheme)
        found.setdefault(kp.peer_id, kp)
        i += 1
    return [found[k] for k in sorted(found)]


def fixed_keypair(value: int, width: int = WIDTH) -> KeyPair:
    """HMAC key pair for a chosen identifier (join with verify_binding=False)."""
    secret = hashlib.sha256(b"fixed|" + value.to_bytes(32, "big")).digest()
    return KeyPair(SigningKey("hmac", secret, Identifier(value, width)), VerifyKey("hmac", secret))


def build_overlay(keypairs: list[KeyPair], width: int = WIDTH, verify_binding: bool = True) -> Overlay:
    overlay = Overlay(width)
    for kp in keypairs:
        overlay.add_peer(kp, verify_binding=verify_binding)
    return overlay


@dataclass
class Network:
    overlay: Overlay
    keypairs: dict[Identifier, KeyPair]
    params: PovParams
    store: LedgerStore
    views: dict[Identifier, ViewTable] = field(default_factory=dict)

    @property
    def peers(self) -> list[Identifier]:
        return sorted(self.keypairs)

    @property
    def tail_view(self) -> ViewTable:
        return self.views[self.store.tail]

    def ctx(self, peer: Identifier, view: ViewTable | None = None) -> ValidatorContext:
        return ValidatorContext(self.keypairs[peer], self.store, view or self.tail_view, self.params)

    def tx(self, owner: Identifier, amount: int = 5, prev: Identifier | None = None,
           recipient: Identifier | None = None, extension: bytes = b"") -> Transaction:
        cont = Contribution(recipient or self.peers[0], amount, extension)
        anchor = prev if prev is not None else self.store.tail
        return create_transaction(self.overlay, self.keypairs[owner], anchor, cont, self.params.alpha)

    def endorse(self, subject, validate=None, view: ViewTable | None = None):
        """Ask every designated validator honestly and attach the signatures."""
        if validate is None:
            validate = validate_block if isinstance(subject, Block) else validate_transaction
        outcomes = [
            (peer, validate(self.ctx(peer, view), self.overlay, subject))
            for peer in dict.fromkeys(designated_validators(subject))
        ]
        return attach_signatures(subject, outcomes, self.overlay.keys)

    def signed_tx(self, owner: Identifier, amount: int = 5, **kwargs) -> Transaction:
        tx = self.endorse(self.tx(owner, amount, **kwargs))
        replicate(self.overlay, tx, replica_holders(tx, self.params.t))
        return tx

    def block(self, owner: Identifier, txs: list[Transaction], prev: Identifier | None = None) -> Block:
        anchor = prev if prev is not None else self.store.tail
        return create_block(self.overlay, self.keypairs[owner], anchor, txs, self.params.alpha)

    def block_holders(self, blk: Block) -> list[Identifier]:
        return replica_holders(blk, self.params.t)

    def commit(self, blk: Block) -> Block:
        append_block(self.store, blk)
        replicate(self.overlay, blk, self.block_holders(blk))
        self.views[blk.h] = apply_block(self.views[blk.prev], blk, self.params)
        return blk

    def commit_txs(self, owner: Identifier, txs: list[Transaction]) -> Block:
        return self.commit(self.endorse(self.block(owner, txs)))


def make_network(n: int = 24, width: int = WIDTH, **params) -> Network:
    keypairs = make_keypairs(n, width)
    settings = dict(alpha=6, t=2, min_tx=1, max_tx=8)
    settings.update(params)
    store = LedgerStore.fresh(width)
    net = Network(
        overlay=build_overlay(keypairs, width),
        keypairs={kp.peer_id: kp for kp in keypairs},
        params=PovParams(**settings),
        store=store,
    )
    net.views[store.genesis_hash] = genesis_view(net.peers, store.genesis_hash, ENDOWMENT)
    return net


@pytest.fixture
def network() -> Network:
    return make_network()


@pytest.fixture(scope="module")
def keypairs64() -> list[KeyPair]:
    return make_keypairs(64)
