"""
skipgraph.py — Skip Graph overlay of peers, transactions, blocks and pointers

Simulated at the hop level: no sockets, but every routing step is a hop
that is signed by the peer hosting the visited node, appended to the
search proof, and charged to the message ledger.

Structure:
  - Nodes are ordered by (numID, nameID, host). The membership vector is
    SHA-256 of the nameID: at level L a node is linked with the nodes whose
    vectors share the first L bits, so level groups do not follow numID
    order and a search takes O(log n) hops.
  - Each node kind has its own level lists over the shared identifier
    space, so validator searches land on peers and replica lookups land on
    blocks without walking past thousands of nodes of other kinds.
  - A node is online while its host peer is online. Offline nodes are
    skipped by routing (idealized churn repair) and come back untouched
    when their host recovers.

Search semantics (numerical ID), over the online nodes of a kind:
  exact numID match if present, else the largest numID below the target,
  else wrap around to the largest numID overall.
"""

import hashlib
import logging
import math
from bisect import bisect_left, bisect_right, insort
from collections import defaultdict
from collections.abc import Callable, Iterator
from contextlib import contextmanager
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache

from core.encoding import encode_fields
from core.errors import (
    DuplicateNodeError,
    InvalidParameterError,
    NodeNotFoundError,
    OverlayEmptyError,
)
from core.ident import Identifier, KeyDirectory, KeyPair, Signature, SigningKey, sign

logger = logging.getLogger(__name__)

# ── Config ────────────────────────────────────────────────────────────────────

# Membership vectors longer than this add levels that never split a group
# at desk scale; capping keeps joins cheap at s = 256.
MAX_LEVELS = 32

# Expected hop bound used by callers that size fees and sanity-check proofs.
ROUTING_CONSTANT = 2.0

# Verifiers reject proofs longer than PROOF_HOP_FACTOR·ROUTING_CONSTANT·log2 n
# plus PROOF_HOP_SLACK (origin and entry hops).
PROOF_HOP_FACTOR = 3
PROOF_HOP_SLACK = 2

NodeKey = tuple[int, int, int]  # (numID, nameID, host)


class NodeKind(str, Enum):
    PEER = "peer"
    TRANSACTION = "transaction"
    BLOCK = "block"
    POINTER = "pointer"


# ── Data types ────────────────────────────────────────────────────────────────


@dataclass(frozen=True, slots=True)
class OverlayNode:
    """
    One Skip Graph node. `payload` is the replica's content (block,
    transaction or pointer) held by the host; it is not part of identity.
    """

    num_id: Identifier
    name_id: Identifier
    kind: NodeKind
    host: Identifier
    payload: object = field(default=None, compare=False, hash=False, repr=False)

    @property
    def key(self) -> NodeKey:
        return (self.num_id.value, self.name_id.value, self.host.value)


@dataclass(frozen=True, slots=True)
class SearchHop:
    """A visited node, signed by its host over (target, previous hop, this node)."""

    node_id: Identifier
    host: Identifier
    prev_id: Identifier
    signature: Signature

    def encode(self) -> bytes:
        return encode_fields(
            self.node_id.to_bytes(),
            self.host.to_bytes(),
            self.prev_id.to_bytes(),
            self.signature.encode(),
        )


@dataclass(frozen=True, slots=True)
class SearchProof:
    target: Identifier
    hops: tuple[SearchHop, ...]
    result: Identifier

    @property
    def hop_count(self) -> int:
        """Routing hops, i.e. visited nodes after the origin."""
        return max(len(self.hops) - 1, 0)

    @property
    def routing_peers(self) -> list[Identifier]:
        """Peers that forwarded or answered the search (origin excluded)."""
        return [hop.host for hop in self.hops[1:]]

    def encode(self) -> bytes:
        return encode_fields(
            self.target.to_bytes(),
            self.result.to_bytes(),
            b"".join(hop.encode() for hop in self.hops),
        )


def hop_message(target: Identifier, prev_id: Identifier, node_id: Identifier) -> bytes:
    """The bytes a routing peer signs for one hop."""
    return encode_fields(target.to_bytes(), prev_id.to_bytes(), node_id.to_bytes())


@lru_cache(maxsize=1 << 16)
def membership_vector(name_value: int, bits: int) -> int:
    """First `bits` bits of SHA-256 over the nameID value."""
    digest = hashlib.sha256(name_value.to_bytes(32, "big")).digest()
    return int.from_bytes(digest, "big") >> (256 - bits)


def search_hop_bound(n: int) -> int:
    """
    Longest routing path a verifier accepts in an overlay of n peers:
    three times the expected ROUTING_CONSTANT·log2 n, plus the origin and
    entry hops.
    """
    return math.ceil(PROOF_HOP_FACTOR * ROUTING_CONSTANT * math.log2(max(n, 1) + 1)) + PROOF_HOP_SLACK


def encode_proofs(proofs: "list[SearchProof] | tuple[SearchProof, ...]") -> bytes:
    return b"".join(encode_fields(p.encode()) for p in proofs)


@dataclass
class MessageLedger:
    """Message counters per scenario phase; never decreases within a run."""

    counters: dict[str, int] = field(default_factory=dict)
    phase: str = "default"

    def charge(self, count: int, phase: str | None = None) -> None:
        if count < 0:
            raise InvalidParameterError(f"Message count cannot be negative: {count}")
        key = phase or self.phase
        self.counters[key] = self.counters.get(key, 0) + count

    @property
    def total(self) -> int:
        return sum(self.counters.values())

    @contextmanager
    def in_phase(self, phase: str) -> Iterator["MessageLedger"]:
        previous, self.phase = self.phase, phase
        try:
            yield self
        finally:
            self.phase = previous


# ── Per-kind level lists ──────────────────────────────────────────────────────


class _KindGraph:
    """Sorted level lists for one node kind."""

    def __init__(self, width: int, max_levels: int) -> None:
        self.width = width
        self.max_levels = max_levels
        self.nodes: dict[NodeKey, OverlayNode] = {}
        self.levels: list[dict[int, list[NodeKey]]] = [
            defaultdict(list) for _ in range(max_levels + 1)
        ]

    def prefix(self, name_value: int, level: int) -> int:
        if not level:
            return 0
        return membership_vector(name_value, self.max_levels) >> (self.max_levels - level)

    def group(self, key: NodeKey, level: int) -> list[NodeKey]:
        return self.levels[level][self.prefix(key[1], level)]

    def insert(self, node: OverlayNode) -> None:
        key = node.key
        self.nodes[key] = node
        for level in range(self.max_levels + 1):
            insort(self.levels[level][self.prefix(key[1], level)], key)

    def remove(self, key: NodeKey) -> OverlayNode:
        node = self.nodes.pop(key)
        for level in range(self.max_levels + 1):
            prefix = self.prefix(key[1], level)
            members = self.levels[level][prefix]
            del members[bisect_left(members, key)]
            if not members:
                del self.levels[level][prefix]
        return node

    def step(
        self, key: NodeKey, level: int, direction: int, online: Callable[[NodeKey], bool]
    ) -> NodeKey | None:
        """Nearest online neighbour of key at this level in the given direction."""
        members = self.group(key, level)
        idx = bisect_left(members, key) + direction
        while 0 <= idx < len(members):
            candidate = members[idx]
            if online(candidate):
                return candidate
            idx += direction
        return None

    def top_level(self, key: NodeKey, online: Callable[[NodeKey], bool]) -> int:
        """Highest level at which key still has an online neighbour."""
        level = 0
        while level < self.max_levels:
            members = self.group(key, level + 1)
            if not any(m != key and online(m) for m in members):
                break
            level += 1
        return level

    def floor(self, target: int, online: Callable[[NodeKey], bool]) -> NodeKey | None:
        """Largest online key with numID ≤ target, wrapping to the overall largest."""
        members = self.levels[0].get(0, [])
        idx = bisect_right(members, (target, math.inf, math.inf)) - 1
        while idx >= 0:
            if online(members[idx]):
                return members[idx]
            idx -= 1
        for candidate in reversed(members):
            if online(candidate):
                return candidate
        return None

    def nearest(
        self, members: list[NodeKey], key: NodeKey, online: Callable[[NodeKey], bool]
    ) -> NodeKey | None:
        """Online member closest to key in list order, searching outward."""
        right = bisect_left(members, key)
        left = right - 1
        while left >= 0 or right < len(members):
            if right < len(members):
                if online(members[right]):
                    return members[right]
                right += 1
            if left >= 0:
                if online(members[left]):
                    return members[left]
                left -= 1
        return None

    def route_num(
        self, start: NodeKey, target: int, online: Callable[[NodeKey], bool]
    ) -> list[NodeKey]:
        """Hop path from start to the largest online key with numID ≤ target."""
        path = [start]
        current = start
        level = self.top_level(current, online)
        while level >= 0:
            if current[0] <= target:
                nxt = self.step(current, level, +1, online)
                while nxt is not None and nxt[0] <= target:
                    current = nxt
                    path.append(current)
                    nxt = self.step(current, level, +1, online)
            else:
                while current[0] > target:
                    nxt = self.step(current, level, -1, online)
                    if nxt is None:
                        break
                    current = nxt
                    path.append(current)
            level -= 1
        return path

    def route_name(
        self, start: NodeKey, target_name: int, online: Callable[[NodeKey], bool]
    ) -> tuple[list[NodeKey], list[NodeKey]]:
        """
        Climb levels towards the group whose membership prefix matches the
        target nameID, then fan out to its exact matches.

        Returns (climb path, matching keys).
        """
        path = [start]
        current = start
        for level in range(self.max_levels):
            wanted = self.prefix(target_name, level + 1)
            if self.prefix(current[1], level + 1) != wanted:
                candidates = self.levels[level + 1].get(wanted)
                nxt = self.nearest(candidates, current, online) if candidates else None
                if nxt is None:
                    return path, []
                current = nxt
                path.append(current)
            group = self.levels[level + 1].get(wanted, [])
            if all(m[1] == target_name for m in group):
                break
        group = self.levels[self.max_levels].get(self.prefix(target_name, self.max_levels), [])
        if not all(m[1] == target_name for m in group):
            group = [m for m in group if m[1] == target_name]
        return path, [m for m in group if online(m)]


# ── Overlay ───────────────────────────────────────────────────────────────────


class Overlay:
    """
    The Skip Graph overlay holding every node kind.

    Single-writer: the simulation harness serializes all mutations.
    """

    def __init__(self, width_s: int, max_levels: int = MAX_LEVELS) -> None:
        if not 1 <= width_s <= 256:
            raise InvalidParameterError(f"Identifier width must be in [1, 256], got {width_s}")
        self.width = width_s
        self.max_levels = min(max_levels, width_s)
        self.messages = MessageLedger()
        self.keys = KeyDirectory()
        self._graphs = {kind: _KindGraph(width_s, self.max_levels) for kind in NodeKind}
        self._signers: dict[int, SigningKey] = {}
        self._offline_hosts: set[int] = set()

    # ── Membership ────────────────────────────────────────────────────────────

    def add_signer(self, signing_key: SigningKey) -> None:
        """Make a peer able to sign the hops it routes."""
        self._signers[signing_key.signer_id.value] = signing_key

    def add_peer(self, keypair: KeyPair, verify_binding: bool = True) -> OverlayNode:
        """
        Join a peer node for keypair, publish its verify key and let it sign hops.
        verify_binding=False admits fixture peers whose numID is not a key hash.
        """
        peer_id = keypair.peer_id
        self.keys.register(peer_id, keypair.verify_key, verify_binding=verify_binding)
        self.add_signer(keypair.signing_key)
        node = OverlayNode(peer_id, peer_id, NodeKind.PEER, peer_id)
        self.join(node)
        return node

    def join(self, node: OverlayNode) -> None:
        if node.num_id.width != self.width or node.name_id.width != self.width:
            raise InvalidParameterError(
                f"Node identifiers must be {self.width}-bit, got "
                f"{node.num_id.width}/{node.name_id.width}"
            )
        graph = self._graphs[node.kind]
        key = node.key
        if key in graph.nodes:
            raise DuplicateNodeError(
                f"{node.kind.value} node {node.num_id} hosted by {node.host} already joined"
            )
        if node.kind is NodeKind.PEER and self._has_online_num_id(graph, node.num_id.value):
            raise DuplicateNodeError(f"Peer numID {node.num_id} already present")
        graph.insert(node)
        size = len(graph.nodes)
        hops = math.ceil(math.log2(size + 1))
        self.messages.charge(hops * hops)
        logger.debug(f"join {node.kind.value} {node.num_id} host={node.host} (n={size})")

    def _has_online_num_id(self, graph: _KindGraph, num_value: int) -> bool:
        members = graph.levels[0].get(0, [])
        idx = bisect_left(members, (num_value, -1, -1))
        while idx < len(members) and members[idx][0] == num_value:
            if self._key_online(members[idx]):
                return True
            idx += 1
        return False

    def leave(
        self,
        node_num_id: Identifier,
        kind: NodeKind,
        name_id: Identifier | None = None,
        host: Identifier | None = None,
    ) -> list[OverlayNode]:
        """
        Delete node(s) of a kind at a numID. Replicas sharing the numID are
        narrowed by name_id and host when given. Returns the removed nodes.
        """
        graph = self._graphs[kind]
        members = graph.levels[0].get(0, [])
        idx = bisect_left(members, (node_num_id.value, -1, -1))
        doomed: list[NodeKey] = []
        while idx < len(members) and members[idx][0] == node_num_id.value:
            key = members[idx]
            if (name_id is None or key[1] == name_id.value) and (
                host is None or key[2] == host.value
            ):
                doomed.append(key)
            idx += 1
        if not doomed:
            raise NodeNotFoundError(f"No {kind.value} node with numID {node_num_id}")
        removed = [graph.remove(key) for key in doomed]
        self.messages.charge(len(removed) * math.ceil(math.log2(len(graph.nodes) + 2)))
        return removed

    def set_online(self, peer_id: Identifier, online: bool) -> None:
        """Toggle a peer and every node it hosts."""
        if online:
            self._offline_hosts.discard(peer_id.value)
        else:
            self._offline_hosts.add(peer_id.value)

    def is_online(self, node_or_peer: OverlayNode | Identifier) -> bool:
        host = node_or_peer.host if isinstance(node_or_peer, OverlayNode) else node_or_peer
        return host.value not in self._offline_hosts

    def _key_online(self, key: NodeKey) -> bool:
        return key[2] not in self._offline_hosts

    def contains(self, node: OverlayNode) -> bool:
        return node.key in self._graphs[node.kind].nodes

    def nodes(self, kind: NodeKind | None = None) -> list[OverlayNode]:
        kinds = [kind] if kind is not None else list(NodeKind)
        out: list[OverlayNode] = []
        for k in kinds:
            graph = self._graphs[k]
            out.extend(graph.nodes[key] for key in graph.levels[0].get(0, []))
        return out

    def nodes_at(self, num_id: Identifier, kind: NodeKind) -> list[OverlayNode]:
        """All replicas (online or not) of a kind at one numID, without routing."""
        graph = self._graphs[kind]
        members = graph.levels[0].get(0, [])
        idx = bisect_left(members, (num_id.value, -1, -1))
        found: list[OverlayNode] = []
        while idx < len(members) and members[idx][0] == num_id.value:
            found.append(graph.nodes[members[idx]])
            idx += 1
        return found

    def peer_ids(self, online_only: bool = False) -> list[Identifier]:
        return [
            node.num_id
            for node in self.nodes(NodeKind.PEER)
            if not online_only or self.is_online(node)
        ]

    def size(self, kind: NodeKind | None = None) -> int:
        if kind is not None:
            return len(self._graphs[kind].nodes)
        return sum(len(g.nodes) for g in self._graphs.values())

    # ── Proof construction ────────────────────────────────────────────────────

    def _hop(self, target: Identifier, prev_value: int | None, key: NodeKey) -> SearchHop:
        signer = self._signers.get(key[2])
        if signer is None:
            raise NodeNotFoundError(f"Peer {key[2]:#x} has no signing key registered")
        node_id = Identifier(key[0], self.width)
        prev_id = Identifier(prev_value if prev_value is not None else 0, self.width)
        return SearchHop(
            node_id=node_id,
            host=signer.signer_id,
            prev_id=prev_id,
            signature=sign(signer, hop_message(target, prev_id, node_id)),
        )

    def _proof(self, target: Identifier, path: list[NodeKey]) -> SearchProof:
        hops: list[SearchHop] = []
        prev: int | None = None
        for key in path:
            hops.append(self._hop(target, prev, key))
            prev = key[0]
        return SearchProof(target=target, hops=tuple(hops), result=hops[-1].node_id)

    def _origin_key(self, origin_peer: Identifier) -> NodeKey:
        key = (origin_peer.value, origin_peer.value, origin_peer.value)
        if key not in self._graphs[NodeKind.PEER].nodes:
            raise NodeNotFoundError(f"Origin {origin_peer} is not a peer of this overlay")
        if not self._key_online(key):
            raise NodeNotFoundError(f"Origin peer {origin_peer} is offline")
        return key

    # ── Searches ──────────────────────────────────────────────────────────────

    def _search_kind(
        self, origin: NodeKey, target: Identifier, kind: NodeKind
    ) -> tuple[NodeKey, list[NodeKey]] | None:
        graph = self._graphs[kind]
        floor = graph.floor(target.value, self._key_online)
        if floor is None:
            return None
        # wrap-around: nothing at or below the target, route to the global maximum
        effective = target.value if floor[0] <= target.value else (1 << self.width) - 1
        if kind is NodeKind.PEER:
            path = graph.route_num(origin, effective, self._key_online)
        else:
            entry = graph.floor(origin[0], self._key_online)
            path = [origin] + graph.route_num(entry, effective, self._key_online)
        return path[-1], path

    def search_num_id(
        self,
        origin_peer: Identifier,
        target: Identifier,
        kind_filter: NodeKind | None = None,
    ) -> tuple[OverlayNode, SearchProof]:
        """
        Route from origin_peer to the node answering for target.

        With no kind filter, every kind is searched and the best result
        under the same ring rule wins; all hops are charged.
        """
        origin = self._origin_key(origin_peer)
        kinds = [kind_filter] if kind_filter is not None else list(NodeKind)
        results: list[tuple[NodeKind, NodeKey, list[NodeKey]]] = []
        for kind in kinds:
            found = self._search_kind(origin, target, kind)
            if found is not None:
                results.append((kind, found[0], found[1]))
                self.messages.charge(len(found[1]) - 1)
        if not results:
            raise OverlayEmptyError(
                f"No online {kind_filter.value if kind_filter else 'node'} "
                f"to answer a search for {target}"
            )
        below = [r for r in results if r[1][0] <= target.value]
        kind, key, path = max(below or results, key=lambda r: r[1])
        node = self._graphs[kind].nodes[key]
        return node, self._proof(target, path)

    def search_name_id(
        self,
        origin_peer: Identifier,
        target_name: Identifier,
        kind_filter: NodeKind | None = None,
    ) -> list[tuple[OverlayNode, SearchProof]]:
        """All online nodes whose nameID equals target_name; one fan-out message each."""
        origin = self._origin_key(origin_peer)
        kinds = [kind_filter] if kind_filter is not None else list(NodeKind)
        found: list[tuple[OverlayNode, SearchProof]] = []
        for kind in kinds:
            graph = self._graphs[kind]
            if not graph.nodes:
                continue
            if kind is NodeKind.PEER:
                climb, matches = graph.route_name(origin, target_name.value, self._key_online)
                prefix_path = climb
            else:
                entry = graph.floor(origin[0], self._key_online)
                if entry is None:
                    continue
                climb, matches = graph.route_name(entry, target_name.value, self._key_online)
                prefix_path = [origin] + climb
            self.messages.charge(len(prefix_path) - 1 + len(matches))
            for key in matches:
                path = prefix_path if key == prefix_path[-1] else prefix_path + [key]
                found.append((graph.nodes[key], self._proof(target_name, path)))
        return found


# ── Proof verification ────────────────────────────────────────────────────────


def verify_search_proof(
    proof: SearchProof, key_directory: KeyDirectory, max_hops: int | None = None
) -> bool:
    """
    True iff every hop is signed by its host, hops are chained, the first
    hop is the origin (zero predecessor), result is the last hop, and the
    path is no longer than max_hops (default: search_hop_bound over the
    peers in key_directory).
    """
    try:
        if not proof.hops:
            return False
        bound = max_hops if max_hops is not None else search_hop_bound(len(key_directory))
        if proof.hop_count > bound:
            return False
        width = proof.target.width
        if proof.hops[0].prev_id != Identifier.zero(width):
            return False
        prev = proof.hops[0].prev_id
        for hop in proof.hops:
            if hop.prev_id != prev:
                return False
            message = hop_message(proof.target, hop.prev_id, hop.node_id)
            if not key_directory.verify(hop.host, message, hop.signature):
                return False
            prev = hop.node_id
        return proof.result == proof.hops[-1].node_id
    except (AttributeError, TypeError, ValueError):
        return False
