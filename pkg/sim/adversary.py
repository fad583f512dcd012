"""
adversary.py — The colluding adversary

A fraction f of peers (floor(f·n), drawn from the run's RNG) is corrupted.
Corrupted peers never churn and act together:

  forge_block_commit   each slot, craft a double-spending transaction and a
                       block carrying it; when the colluders cannot reach t
                       signatures, submit the block to the overlay anyway
  sign_invalid         sign every subject a colluder owns, whatever its checks say
  withhold_signatures  refuse to sign subjects owned by honest peers
  serve_forged_view    answer bootstrap requests with one shared forged view
  keep_stale_pointers  never retire superseded transaction pointers

Anything not covered by an enabled strategy is done honestly.
"""

import logging
from collections.abc import Callable, Iterable
from dataclasses import dataclass, field, replace

import numpy as np

from chain.ledger import Block, Transaction
from chain.pov import Reason, ValidationOutcome, signing_message
from chain.view import ViewEntry, ViewTable
from core.encoding import encode_fields
from core.ident import Identifier, KeyPair, hash_to_id, sign
from sim.config import Strategy

logger = logging.getLogger(__name__)

FORGED_CREDIT = 1_000_000


@dataclass
class AdversaryModel:
    corrupted: frozenset[Identifier]
    strategies: frozenset[Strategy]
    _forged_views: dict[Identifier, ViewTable] = field(default_factory=dict, repr=False)

    @classmethod
    def choose(
        cls,
        peers: Iterable[Identifier],
        f: float,
        rng: np.random.Generator,
        strategies: Iterable[Strategy] = (),
    ) -> "AdversaryModel":
        ordered = sorted(peers)
        count = int(f * len(ordered))
        picked = rng.choice(len(ordered), size=count, replace=False) if count else []
        corrupted = frozenset(ordered[int(i)] for i in picked)
        logger.info(f"Adversary controls {len(corrupted)} of {len(ordered)} peers")
        return cls(corrupted, frozenset(strategies))

    def is_corrupted(self, peer: Identifier) -> bool:
        return peer in self.corrupted

    def uses(self, strategy: Strategy) -> bool:
        return bool(self.corrupted) and strategy in self.strategies

    def respond(
        self,
        keypair: KeyPair,
        subject: Transaction | Block,
        honest: Callable[[], ValidationOutcome],
    ) -> ValidationOutcome:
        """What a corrupted validator answers for subject."""
        colluding = subject.owner in self.corrupted
        if colluding and self.uses(Strategy.SIGN_INVALID):
            return ValidationOutcome.signed(sign(keypair.signing_key, signing_message(subject.h)))
        if not colluding and self.uses(Strategy.WITHHOLD_SIGNATURES):
            return ValidationOutcome.rejected(Reason.UNAUTHENTIC)
        return honest()

    def keeps_stale(self) -> frozenset[Identifier]:
        return self.corrupted if self.uses(Strategy.KEEP_STALE_POINTERS) else frozenset()

    def forged_view(self, true_view: ViewTable) -> ViewTable:
        """
        The view every colluder serves while the honest tail is true_view's:
        a fake tail, and colluders credited with extra balance.
        """
        cached = self._forged_views.get(true_view.tail_hash)
        if cached is not None:
            return cached
        tail = true_view.tail_hash
        fake_tail = hash_to_id(encode_fields(b"forged-tail", tail.to_bytes()), tail.width)
        entries = dict(true_view.entries)
        for peer in self.corrupted:
            e = entries.get(peer) or ViewEntry(peer, tail, 0, 0)
            entries[peer] = replace(e, balance=e.balance + FORGED_CREDIT)
        forged = ViewTable(entries, fake_tail, true_view.height, true_view.blacklist.copy())
        self._forged_views = {tail: forged}
        return forged

    def pick_attacker(
        self,
        rng: np.random.Generator,
        eligible: Callable[[Identifier], bool],
    ) -> Identifier | None:
        pool = sorted(p for p in self.corrupted if eligible(p))
        if not pool:
            return None
        return pool[int(rng.integers(len(pool)))]
