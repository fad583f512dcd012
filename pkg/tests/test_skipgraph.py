"""
test_skipgraph.py — Overlay membership, ring search semantics, proofs, message accounting
"""

import math
from dataclasses import replace

import numpy as np
import pytest

from core.errors import DuplicateNodeError, InvalidParameterError, NodeNotFoundError, OverlayEmptyError
from core.ident import Identifier, sign
from overlay.skipgraph import (
    NodeKind,
    Overlay,
    OverlayNode,
    SearchHop,
    SearchProof,
    hop_message,
    search_hop_bound,
    verify_search_proof,
)
from tests.conftest import WIDTH, build_overlay, fixed_keypair, make_keypairs


def expected_answer(online_ids: list[int], target: int) -> int:
    below = [v for v in online_ids if v <= target]
    return max(below) if below else max(online_ids)


@pytest.fixture
def overlay(keypairs64):
    return build_overlay(keypairs64)


def test_exact_match_is_found(overlay, keypairs64):
    origin = keypairs64[0].peer_id
    for kp in keypairs64[::7]:
        node, proof = overlay.search_num_id(origin, kp.peer_id, NodeKind.PEER)
        assert node.num_id == kp.peer_id
        assert proof.result == kp.peer_id
        assert verify_search_proof(proof, overlay.keys)


def test_search_follows_ring_rule(overlay, keypairs64):
    ids = [kp.peer_id.value for kp in keypairs64]
    rng = np.random.default_rng(3)
    origin = keypairs64[10].peer_id
    for target in rng.integers(0, 1 << WIDTH, size=200):
        node, proof = overlay.search_num_id(origin, Identifier(int(target), WIDTH), NodeKind.PEER)
        assert node.num_id.value == expected_answer(ids, int(target))
        assert proof.hops[0].host == origin
        assert proof.hops[0].prev_id == Identifier.zero(WIDTH)


def test_below_every_node_wraps_to_maximum(overlay, keypairs64):
    smallest = keypairs64[0].peer_id.value
    if smallest == 0:
        pytest.skip("no identifier below the smallest peer")
    node, _ = overlay.search_num_id(keypairs64[5].peer_id, Identifier(smallest - 1, WIDTH))
    assert node.num_id == keypairs64[-1].peer_id


def test_offline_peers_are_skipped(overlay, keypairs64):
    target = keypairs64[20]
    overlay.set_online(target.peer_id, False)
    node, _ = overlay.search_num_id(keypairs64[0].peer_id, target.peer_id, NodeKind.PEER)
    assert node.num_id == keypairs64[19].peer_id
    overlay.set_online(target.peer_id, True)
    node, _ = overlay.search_num_id(keypairs64[0].peer_id, target.peer_id, NodeKind.PEER)
    assert node.num_id == target.peer_id


def test_offline_origin_cannot_search(overlay, keypairs64):
    overlay.set_online(keypairs64[3].peer_id, False)
    with pytest.raises(NodeNotFoundError):
        overlay.search_num_id(keypairs64[3].peer_id, keypairs64[4].peer_id)


def test_empty_kind_raises(overlay, keypairs64):
    with pytest.raises(OverlayEmptyError):
        overlay.search_num_id(keypairs64[0].peer_id, keypairs64[1].peer_id, NodeKind.BLOCK)


def test_tampered_proofs_fail(overlay, keypairs64):
    _, proof = overlay.search_num_id(keypairs64[0].peer_id, keypairs64[40].peer_id, NodeKind.PEER)
    assert len(proof.hops) >= 2
    assert not verify_search_proof(replace(proof, result=keypairs64[1].peer_id), overlay.keys)
    swapped = replace(proof.hops[1], signature=proof.hops[0].signature)
    assert not verify_search_proof(replace(proof, hops=(proof.hops[0], swapped, *proof.hops[2:])), overlay.keys)
    assert not verify_search_proof(replace(proof, hops=()), overlay.keys)


def test_duplicate_peer_is_rejected(overlay, keypairs64):
    with pytest.raises(DuplicateNodeError):
        overlay.add_peer(keypairs64[0])


def test_replicas_share_a_num_id():
    keypairs = make_keypairs(8)
    overlay = build_overlay(keypairs)
    h, prev = Identifier(0xABCDEF, WIDTH), Identifier(0x1234, WIDTH)
    for kp in keypairs[:3]:
        overlay.join(OverlayNode(h, prev, NodeKind.BLOCK, kp.peer_id))
    with pytest.raises(DuplicateNodeError):
        overlay.join(OverlayNode(h, prev, NodeKind.BLOCK, keypairs[0].peer_id))
    assert len(overlay.nodes_at(h, NodeKind.BLOCK)) == 3

    removed = overlay.leave(h, NodeKind.BLOCK, host=keypairs[1].peer_id)
    assert [n.host for n in removed] == [keypairs[1].peer_id]
    assert len(overlay.nodes_at(h, NodeKind.BLOCK)) == 2
    with pytest.raises(NodeNotFoundError):
        overlay.leave(Identifier(5, WIDTH), NodeKind.BLOCK)


def test_join_rejects_wrong_width(overlay):
    with pytest.raises(InvalidParameterError):
        overlay.join(OverlayNode(Identifier(1, 16), Identifier(1, 16), NodeKind.BLOCK, Identifier(1, 16)))


def test_name_search_fans_out_to_all_matches(overlay, keypairs64):
    name = Identifier(0x5555AAAA, WIDTH)
    hosts = [kp.peer_id for kp in keypairs64[:4]]
    for i, host in enumerate(hosts):
        overlay.join(OverlayNode(Identifier(1000 + i, WIDTH), name, NodeKind.TRANSACTION, host))
    overlay.join(OverlayNode(Identifier(77, WIDTH), Identifier(0x5555AAAB, WIDTH), NodeKind.TRANSACTION, hosts[0]))

    found = overlay.search_name_id(keypairs64[30].peer_id, name, NodeKind.TRANSACTION)
    assert sorted(node.num_id.value for node, _ in found) == [1000, 1001, 1002, 1003]
    assert all(verify_search_proof(proof, overlay.keys) for _, proof in found)

    overlay.set_online(hosts[2], False)
    found = overlay.search_name_id(keypairs64[30].peer_id, name, NodeKind.TRANSACTION)
    assert len(found) == 3


def test_fixture_peers_with_chosen_identifiers():
    keypairs = [fixed_keypair(v) for v in (10, 20, 30, 40)]
    overlay = build_overlay(keypairs, verify_binding=False)
    node, proof = overlay.search_num_id(keypairs[3].peer_id, Identifier(25, WIDTH), NodeKind.PEER)
    assert node.num_id.value == 20
    assert verify_search_proof(proof, overlay.keys)
    node, _ = overlay.search_num_id(keypairs[0].peer_id, Identifier(5, WIDTH), NodeKind.PEER)
    assert node.num_id.value == 40


def test_message_ledger_counts_per_phase():
    overlay = Overlay(WIDTH)
    overlay.messages.charge(3)
    with overlay.messages.in_phase("bootstrap"):
        overlay.messages.charge(2)
    overlay.messages.charge(1, "validation")
    assert overlay.messages.counters == {"default": 3, "bootstrap": 2, "validation": 1}
    assert overlay.messages.total == 6
    with pytest.raises(InvalidParameterError):
        overlay.messages.charge(-1)


def test_searches_are_charged(overlay, keypairs64):
    before = overlay.messages.total
    _, proof = overlay.search_num_id(keypairs64[0].peer_id, keypairs64[50].peer_id, NodeKind.PEER)
    assert overlay.messages.total - before == proof.hop_count


def mean_hops(n: int, queries: int = 1_000) -> float:
    keypairs = make_keypairs(n, prefix=f"hops{n}")
    overlay = build_overlay(keypairs)
    rng = np.random.default_rng(n)
    total = 0
    for _ in range(queries):
        origin = keypairs[int(rng.integers(n))].peer_id
        target = Identifier(int(rng.integers(0, 1 << WIDTH)), WIDTH)
        _, proof = overlay.search_num_id(origin, target, NodeKind.PEER)
        total += proof.hop_count
    return total / queries


@pytest.mark.parametrize("n", [256, 1024])
def test_search_is_logarithmic(n):
    assert mean_hops(n) <= 2 * math.log2(n)


@pytest.mark.slow
def test_hop_growth_per_doubling():
    sizes = [256, 1024, 4096]
    means = [mean_hops(n) for n in sizes]
    for n, m in zip(sizes, means):
        assert m <= 2 * math.log2(n)
    for (n1, m1), (n2, m2) in zip(zip(sizes, means), zip(sizes[1:], means[1:])):
        doublings = math.log2(n2 / n1)
        assert (m2 - m1) / doublings <= 2.4


def test_upper_levels_span_the_identifier_ring():
    keypairs = make_keypairs(256, prefix="levels")
    overlay = build_overlay(keypairs)
    graph = overlay._graphs[NodeKind.PEER]
    ranks = {key: i for i, key in enumerate(graph.levels[0][0])}
    for prefix, members in graph.levels[1].items():
        spread = [ranks[key] for key in members]
        assert max(spread) - min(spread) > 200, f"level-1 group {prefix} is a contiguous run"


def test_worst_search_stays_within_proof_bound():
    n = 256
    keypairs = make_keypairs(n, prefix="worst")
    overlay = build_overlay(keypairs)
    rng = np.random.default_rng(17)
    longest = 0
    for _ in range(500):
        origin = keypairs[int(rng.integers(n))].peer_id
        target = Identifier(int(rng.integers(0, 1 << WIDTH)), WIDTH)
        _, proof = overlay.search_num_id(origin, target, NodeKind.PEER)
        assert verify_search_proof(proof, overlay.keys)
        longest = max(longest, proof.hop_count)
    assert longest <= search_hop_bound(n)


def test_overlong_proof_is_rejected(overlay, keypairs64):
    # a correctly signed and chained walk over every peer in ring order
    target = keypairs64[-1].peer_id
    hops, prev = [], Identifier.zero(WIDTH)
    for kp in keypairs64:
        hops.append(SearchHop(kp.peer_id, kp.peer_id, prev, sign(kp.signing_key, hop_message(target, prev, kp.peer_id))))
        prev = kp.peer_id
    walk = SearchProof(target=target, hops=tuple(hops), result=target)
    assert walk.hop_count > search_hop_bound(len(keypairs64))
    assert not verify_search_proof(walk, overlay.keys)
    assert verify_search_proof(walk, overlay.keys, max_hops=walk.hop_count)

    _, proof = overlay.search_num_id(keypairs64[0].peer_id, keypairs64[40].peer_id, NodeKind.PEER)
    assert verify_search_proof(proof, overlay.keys, max_hops=proof.hop_count)
    assert not verify_search_proof(proof, overlay.keys, max_hops=proof.hop_count - 1)
