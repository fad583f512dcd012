"""
test_pov.py — Validator selection, transaction and block checks, threshold counting
"""

import hashlib
from collections import Counter
from dataclasses import replace

import numpy as np
import pytest
from scipy.stats import chisquare

from chain.incentive import Blacklist
from chain.ledger import Contribution
from chain.params import PovParams
from chain.pov import (
    Reason,
    ValidationOutcome,
    Verdict,
    blk_validator_id,
    cast_transactions,
    collect_threshold,
    designated_validators,
    knockout_recovery,
    signing_message,
    tx_validator_id,
    validate_block,
    validate_transaction,
)
from chain.view import ViewTable
from core.encoding import frame
from core.errors import InvalidParameterError
from core.ident import Identifier, hash_to_id, sign
from overlay.skipgraph import NodeKind, verify_search_proof
from tests.conftest import ENDOWMENT, WIDTH, build_overlay, fixed_keypair, make_keypairs


def with_blacklist(view: ViewTable, *peers: Identifier) -> ViewTable:
    blacklist = Blacklist({p: 1 for p in peers})
    return ViewTable(view.entries, view.tail_hash, view.height, blacklist)


# ── Parameters ────────────────────────────────────────────────────────────────


@pytest.mark.parametrize(
    "settings",
    [dict(alpha=3, t=4), dict(min_tx=10, max_tx=5), dict(block_reward=10)],
)
def test_params_reject_inconsistent_values(settings):
    with pytest.raises(ValueError):
        PovParams(**settings)


def test_fees_for_counts_routing_hops():
    params = PovParams(alpha=4, t=2, validation_fee=3, routing_fee=1)
    assert params.fees_for(10) == 3 * 2 + 10
    assert params.expected_path_cost == 4 * params.expected_path_hops


# ── Validator identifiers ─────────────────────────────────────────────────────


def test_tx_validator_id_matches_hashlib():
    prev, owner = Identifier(1, WIDTH), Identifier(2, WIDTH)
    cont = Contribution(Identifier(3, WIDTH), 9)
    payload = (
        frame((1).to_bytes(4, "big"))
        + frame((2).to_bytes(4, "big"))
        + frame(cont.encode())
        + frame((4).to_bytes(4, "big"))
    )
    expected = int.from_bytes(hashlib.sha256(payload).digest()[:4], "big")
    assert tx_validator_id(prev, owner, cont, 4, alpha=8).value == expected


def test_validator_ids_differ_per_index(network):
    owner = network.peers[0]
    ids = {blk_validator_id(network.store.tail, owner, (), i, 8) for i in range(1, 9)}
    assert len(ids) == 8


@pytest.mark.parametrize("i", [0, 9])
def test_validator_index_out_of_range(i):
    with pytest.raises(InvalidParameterError):
        tx_validator_id(Identifier(1, WIDTH), Identifier(2, WIDTH), Contribution(Identifier(3, WIDTH), 1), i, 8)


# ── Transactions ──────────────────────────────────────────────────────────────


def test_created_transaction_carries_valid_proofs(network):
    owner = network.peers[4]
    tx = network.tx(owner)
    assert len(tx.search_proofs) == network.params.alpha
    for i, proof in enumerate(tx.search_proofs, start=1):
        assert proof.target == tx_validator_id(tx.prev, owner, tx.cont, i, network.params.alpha)
        assert proof.hops[0].host == owner
        assert verify_search_proof(proof, network.overlay.keys)
    assert network.overlay.keys.verify(owner, signing_message(tx.h), tx.owner_signature)


def test_honest_transaction_reaches_threshold(network):
    tx = network.tx(network.peers[2])
    outcomes = [
        (peer, validate_transaction(network.ctx(peer), network.overlay, tx))
        for peer in dict.fromkeys(designated_validators(tx))
    ]
    assert all(o.is_signed for _, o in outcomes)
    assert collect_threshold(outcomes, tx.h, network.overlay.keys, network.params.t)


def validate_as_first_validator(network, tx, view=None):
    peer = designated_validators(tx)[0]
    return validate_transaction(network.ctx(peer, view), network.overlay, tx)


def test_blacklisted_owner_is_rejected_first(network):
    owner = network.peers[5]
    tx = replace(network.tx(owner), h=Identifier(1, WIDTH))
    outcome = validate_as_first_validator(network, tx, with_blacklist(network.tail_view, owner))
    assert outcome.reason is Reason.BLACKLISTED


def test_tampered_transaction_is_unauthentic(network):
    tx = network.tx(network.peers[5])
    assert validate_as_first_validator(network, replace(tx, cont=Contribution(tx.cont.recipient, 6))).reason is Reason.UNAUTHENTIC
    assert validate_as_first_validator(network, replace(tx, sigs=())).reason is Reason.UNAUTHENTIC


def test_transaction_on_unknown_prev_is_unsound(network):
    tx = network.tx(network.peers[6], prev=Identifier(12345, WIDTH))
    assert validate_as_first_validator(network, tx).reason is Reason.UNSOUND


def test_double_spend_is_unsound(network):
    owner = network.peers[7]
    network.commit_txs(network.peers[0], [network.signed_tx(owner)])
    stale = network.tx(owner, prev=network.store.genesis_hash)
    assert validate_as_first_validator(network, stale).reason is Reason.UNSOUND
    fresh = network.tx(owner)
    assert validate_as_first_validator(network, fresh).is_signed


def test_balance_checks(network):
    owner = network.peers[8]
    overdrawn = network.tx(owner, amount=ENDOWMENT + 1)
    assert validate_as_first_validator(network, overdrawn).reason is Reason.INCORRECT
    no_fees = network.tx(owner, amount=ENDOWMENT)
    assert validate_as_first_validator(network, no_fees).reason is Reason.INSUFFICIENT_BALANCE


def test_outcome_invariant():
    with pytest.raises(InvalidParameterError):
        ValidationOutcome(Verdict.SIGNED, Reason.OK, None)
    assert not ValidationOutcome.rejected(Reason.UNSOUND).is_signed


# ── Threshold counting ────────────────────────────────────────────────────────


def test_threshold_counts_distinct_valid_signers(network):
    tx = network.tx(network.peers[1])
    a, b, c = (network.keypairs[p] for p in network.peers[10:13])
    good_a = ValidationOutcome.signed(sign(a.signing_key, signing_message(tx.h)))
    good_b = ValidationOutcome.signed(sign(b.signing_key, signing_message(tx.h)))
    wrong = ValidationOutcome.signed(sign(c.signing_key, b"something else"))
    keys = network.overlay.keys

    assert not collect_threshold([(a.peer_id, good_a), (a.peer_id, good_a)], tx.h, keys, 2)
    assert not collect_threshold([(a.peer_id, good_a), (c.peer_id, wrong)], tx.h, keys, 2)
    assert collect_threshold([(a.peer_id, good_a), (b.peer_id, good_b)], tx.h, keys, 2)
    assert not collect_threshold(
        [(a.peer_id, good_a), (b.peer_id, good_b)], tx.h, keys, 2, blacklist={b.peer_id}
    )
    # a signature claimed by another peer does not count
    assert not collect_threshold([(a.peer_id, good_a), (c.peer_id, good_b)], tx.h, keys, 2)


def test_cast_keeps_one_sound_transaction_per_owner(network):
    owner, other = network.peers[3], network.peers[4]
    first, second = network.signed_tx(owner, amount=1), network.signed_tx(owner, amount=2)
    unsound = network.signed_tx(other, prev=Identifier(999, WIDTH))
    chosen = cast_transactions(network.store, network.store.tail, [first, second, unsound], 8)
    assert chosen == [first]
    assert cast_transactions(network.store, network.store.tail, [first], 0) == []


# ── Blocks ────────────────────────────────────────────────────────────────────


def validate_block_as_first(network, blk, **ctx_kwargs):
    peer = designated_validators(blk)[0]
    ctx = network.ctx(peer)
    for key, value in ctx_kwargs.items():
        setattr(ctx, key, value)
    return validate_block(ctx, network.overlay, blk)


def test_valid_block_is_signed(network):
    txs = [network.signed_tx(p) for p in network.peers[1:4]]
    blk = network.block(network.peers[0], txs)
    assert validate_block_as_first(network, blk).is_signed
    endorsed = network.endorse(blk)
    assert len({s.signer_id for s in endorsed.validator_signatures}) >= network.params.t


def test_block_on_stale_tail_is_inconsistent(network):
    network.commit_txs(network.peers[0], [network.signed_tx(network.peers[1])])
    txs = [network.signed_tx(network.peers[2], prev=network.store.genesis_hash)]
    blk = network.block(network.peers[3], txs, prev=network.store.genesis_hash)
    assert validate_block_as_first(network, blk).reason is Reason.INCONSISTENT


def test_block_size_limits(network):
    txs = [network.signed_tx(p) for p in network.peers[1:11]]
    blk = network.block(network.peers[0], txs)
    assert validate_block_as_first(network, blk).reason is Reason.INCORRECT
    assert validate_block_as_first(network, network.block(network.peers[0], [])).reason is Reason.INCORRECT


def test_block_with_unsigned_member_is_rejected(network):
    bare = network.tx(network.peers[1])
    blk = network.block(network.peers[0], [bare])
    assert validate_block_as_first(network, blk).reason is Reason.UNAUTHENTIC


def test_block_with_two_transactions_of_one_owner_is_unsound(network):
    owner = network.peers[1]
    blk = network.block(network.peers[0], [network.signed_tx(owner, amount=1), network.signed_tx(owner, amount=2)])
    assert validate_block_as_first(network, blk).reason is Reason.UNSOUND


def test_tail_change_during_validation_is_inconsistent(network):
    blk = network.block(network.peers[0], [network.signed_tx(network.peers[1])])
    tails = iter([blk.prev, Identifier(77, WIDTH)])
    outcome = validate_block_as_first(network, blk, tail_probe=lambda: next(tails))
    assert outcome.reason is Reason.INCONSISTENT


def test_knocked_out_block_is_withdrawn(network):
    shared = network.signed_tx(network.peers[1])
    lost_only = network.signed_tx(network.peers[2])
    spent = network.signed_tx(network.peers[3])
    a = network.endorse(network.block(network.peers[4], [shared, spent]))
    b = network.endorse(network.block(network.peers[5], [shared, lost_only]))
    winner, loser = sorted([a, b], key=lambda blk: blk.h)
    network.commit(winner)
    network.commit(loser)
    assert network.store.tail == winner.h

    pending_spent = network.signed_tx(network.peers[3], amount=9) if loser is b else None
    pending = [pending_spent] if pending_spent else []
    candidates = knockout_recovery(network.overlay, loser.owner, winner, loser, pending)
    assert network.overlay.nodes_at(loser.h, NodeKind.BLOCK) == []
    assert shared not in candidates
    assert all(tx.owner not in {t.owner for t in winner.txs} for tx in candidates)
    assert len(candidates) == 1


# ── Selection fairness ────────────────────────────────────────────────────────


def selection_counts(keypairs, subjects, alpha=5, verify_binding=True):
    """Times each peer (in numID order) is designated over many transaction subjects."""
    overlay = build_overlay(keypairs, verify_binding=verify_binding)
    origin = keypairs[0].peer_id
    hits = Counter()
    for k in range(subjects):
        prev = hash_to_id(f"subject-{k}".encode(), WIDTH)
        cont = Contribution(origin, k + 1)
        for i in range(1, alpha + 1):
            node, _ = overlay.search_num_id(origin, tx_validator_id(prev, origin, cont, i, alpha), NodeKind.PEER)
            hits[node.num_id.value] += 1
    return np.array([hits[v] for v in sorted(kp.peer_id.value for kp in keypairs)])


def test_selection_is_uniform_over_evenly_spaced_peers():
    spacing = (1 << WIDTH) // 100
    keypairs = [fixed_keypair(k * spacing) for k in range(100)]
    counts = selection_counts(keypairs, subjects=2_000, verify_binding=False)
    assert counts.sum() == 10_000
    assert chisquare(counts).pvalue > 0.001


def test_involvement_follows_identifier_arcs():
    keypairs = make_keypairs(100, prefix="arcs")
    counts = selection_counts(keypairs, subjects=2_000)
    ids = np.array(sorted(kp.peer_id.value for kp in keypairs), dtype=float)
    # a peer answers every identifier from its numID up to the next peer's
    arcs = np.diff(np.append(ids, ids[0] + float(1 << WIDTH)))
    expected = counts.sum() * arcs / arcs.sum()

    small = expected < 5
    observed = np.append(counts[~small], counts[small].sum())
    merged = np.append(expected[~small], expected[small].sum())
    assert chisquare(observed, merged).pvalue > 0.001
    assert chisquare(counts).pvalue < 1e-6
