"""
incentive.py — Auditing, misbehavior evidence, penalties and the blacklist

Every peer audits the artifacts it comes across by re-running the checks a
PoV validator would. A failed check becomes MisbehaviorEvidence, which the
auditor files as an ordinary transaction: recipient = itself, amount = 0,
evidence bytes in cont.extension. Validators of that transaction treat
"correctness" as "the evidence re-verifies".

When such a transaction is applied to a view (chain.view.apply_block) the
accused pays misbehavior_penalty to the reporter, the reporter is minted
audition_reward, and the accused is blacklisted from that height on.
"""

import logging
from collections.abc import Iterator
from dataclasses import dataclass
from enum import Enum

from chain.ledger import Block, Contribution, Transaction
from chain.pov import (
    ValidatorContext,
    _is_sound,
    _owner_signed,
    _tx_authentic,
    _validator_signers,
    blk_validator_id,
    create_transaction,
)
from chain.storage import PointerRecord
from core.encoding import encode_fields, split_fields
from core.errors import InvalidEvidenceError, InvalidParameterError, InvalidReferenceError
from core.ident import Identifier, KeyPair
from overlay.skipgraph import NodeKind, Overlay, OverlayNode, verify_search_proof

logger = logging.getLogger(__name__)

EVIDENCE_TAG = b"lightchain-evidence"


class EvidenceKind(str, Enum):
    INVALID_BLOCK_DIRECT_SUBMIT = "invalid_block_direct_submit"
    STALE_POINTER = "stale_pointer"
    UNSOUND_TX_IN_COMMITTED_BLOCK = "unsound_tx_in_committed_block"
    FORGED_PROOF = "forged_proof"


@dataclass(frozen=True, slots=True)
class MisbehaviorEvidence:
    """
    `subject` names the offending artifact (block hash, or the pointer's
    block hash); `payload` is its canonical encoding so any peer can match
    it against the artifact it retrieves.
    """

    accused: Identifier
    kind: EvidenceKind
    subject: Identifier
    payload: bytes
    reporter: Identifier

    def encode(self) -> bytes:
        return encode_fields(
            EVIDENCE_TAG,
            self.kind.value.encode(),
            self.accused.to_bytes(),
            self.subject.to_bytes(),
            self.payload,
            self.reporter.to_bytes(),
        )

    @classmethod
    def decode(cls, data: bytes, width_s: int) -> "MisbehaviorEvidence":
        try:
            tag, kind, accused, subject, payload, reporter = split_fields(data)
            if tag != EVIDENCE_TAG:
                raise InvalidEvidenceError("Not an evidence record")
            return cls(
                accused=Identifier.from_bytes(accused, width_s),
                kind=EvidenceKind(kind.decode()),
                subject=Identifier.from_bytes(subject, width_s),
                payload=payload,
                reporter=Identifier.from_bytes(reporter, width_s),
            )
        except (ValueError, UnicodeDecodeError) as e:
            raise InvalidEvidenceError(f"Malformed evidence: {e}") from e


class Blacklist:
    """Peers barred from the protocol, with the height each was added at. Never shrinks."""

    def __init__(self, entries: dict[Identifier, int] | None = None) -> None:
        self._entries: dict[Identifier, int] = dict(entries or {})

    def add(self, peer: Identifier, height: int) -> None:
        self._entries.setdefault(peer, height)

    def height_of(self, peer: Identifier) -> int | None:
        return self._entries.get(peer)

    def copy(self) -> "Blacklist":
        return Blacklist(self._entries)

    def __contains__(self, peer: object) -> bool:
        return peer in self._entries

    def __iter__(self) -> Iterator[Identifier]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Blacklist) and self._entries == other._entries


def is_blacklisted(blacklist: Blacklist, peer: Identifier) -> bool:
    return peer in blacklist


# ── Checks shared by audit and verification ───────────────────────────────────


def _pointer_payload(record_owner: Identifier, block_hash: Identifier, holder: Identifier) -> bytes:
    return encode_fields(record_owner.to_bytes(), block_hash.to_bytes(), holder.to_bytes())


def _proofs_forged(blk: Block, overlay: Overlay, alpha: int) -> bool:
    """Owner-signed block whose validator search proofs do not check out."""
    if len(blk.search_proofs) != alpha:
        return True
    for i, proof in enumerate(blk.search_proofs, start=1):
        vid = blk_validator_id(blk.prev, blk.owner, blk.txs, i, alpha)
        if proof.target != vid or not verify_search_proof(proof, overlay.keys):
            return True
    return False


def _lacks_threshold(blk: Block, ctx: ValidatorContext, overlay: Overlay) -> bool:
    return len(_validator_signers(blk, overlay.keys, ctx.view.blacklist)) < ctx.params.t


def _holds_unsound_tx(blk: Block, ctx: ValidatorContext, overlay: Overlay) -> bool:
    owners: set[Identifier] = set()
    for tx in blk.txs:
        if tx.owner in owners or not _is_sound(ctx.store, tx, blk.prev):
            return True
        if not _tx_authentic(tx, overlay.keys, ctx.params.alpha):
            return True
        if len(_validator_signers(tx, overlay.keys, ctx.view.blacklist)) < ctx.params.t:
            return True
        owners.add(tx.owner)
    return False


def _first_update_after(ctx: ValidatorContext, owner: Identifier, block_hash: Identifier) -> int | None:
    """Main-path index of the first block after block_hash holding a transaction of owner."""
    store = ctx.store
    start = store.main_index(block_hash)
    for idx in range(start + 1, len(store.main_path)):
        if any(tx.owner == owner for tx in store.blocks[store.main_path[idx]].txs):
            return idx
    return None


def _pointer_stale(
    ctx: ValidatorContext,
    overlay: Overlay,
    owner: Identifier,
    block_hash: Identifier,
    holder: Identifier,
) -> bool:
    node = OverlayNode(block_hash, owner, NodeKind.POINTER, holder)
    if not overlay.contains(node):
        return False
    try:
        update = _first_update_after(ctx, owner, block_hash)
    except InvalidReferenceError:
        return False
    if update is None:
        return False
    # pointers are installed at finalization, so the tail is one block ahead
    finalized = len(ctx.store.main_path) - 2
    return finalized - update > ctx.params.block_interval


def _find_block(ctx: ValidatorContext, overlay: Overlay, block_hash: Identifier) -> Block | None:
    if block_hash in ctx.store:
        return ctx.store.get(block_hash)
    for node in overlay.nodes_at(block_hash, NodeKind.BLOCK):
        if isinstance(node.payload, Block):
            return node.payload
    return None


def classify_block(blk: Block, ctx: ValidatorContext, overlay: Overlay) -> EvidenceKind | None:
    """The first validator check a block fails, as an evidence kind."""
    if _proofs_forged(blk, overlay, ctx.params.alpha):
        return EvidenceKind.FORGED_PROOF
    if _lacks_threshold(blk, ctx, overlay):
        return EvidenceKind.INVALID_BLOCK_DIRECT_SUBMIT
    if ctx.store.on_main_path(blk.h) and _holds_unsound_tx(blk, ctx, overlay):
        return EvidenceKind.UNSOUND_TX_IN_COMMITTED_BLOCK
    return None


# ── Audit ─────────────────────────────────────────────────────────────────────


def audit(
    artifact: Block | PointerRecord,
    ctx: ValidatorContext,
    overlay: Overlay,
) -> MisbehaviorEvidence | None:
    """
    Re-run validator checks on an observed artifact; the auditing peer is
    ctx's peer. Blocks whose owner signature fails are not attributable and
    yield nothing.
    """
    reporter = ctx.peer_id
    if isinstance(artifact, PointerRecord):
        pointer = artifact.pointer
        if not _pointer_stale(ctx, overlay, pointer.owner_name, pointer.block_hash, artifact.holder):
            return None
        return MisbehaviorEvidence(
            accused=artifact.holder,
            kind=EvidenceKind.STALE_POINTER,
            subject=pointer.block_hash,
            payload=_pointer_payload(pointer.owner_name, pointer.block_hash, artifact.holder),
            reporter=reporter,
        )

    blk = artifact
    if blk.is_genesis or blk.owner in ctx.view.blacklist or not _owner_signed(blk, overlay.keys):
        return None
    kind = classify_block(blk, ctx, overlay)
    if kind is None:
        return None
    logger.info(f"Auditor {reporter} found {kind.value} by {blk.owner} in block {blk.h}")
    return MisbehaviorEvidence(blk.owner, kind, blk.h, blk.encode(), reporter)


def verify_evidence(
    evidence: MisbehaviorEvidence, ctx: ValidatorContext, overlay: Overlay
) -> bool:
    """Re-verify evidence from the verifier's own store, view and overlay."""
    if evidence.accused in ctx.view.blacklist:
        return False
    if evidence.kind is EvidenceKind.STALE_POINTER:
        try:
            owner_b, block_b, holder_b = split_fields(evidence.payload)
        except InvalidParameterError:
            return False
        width = evidence.subject.width
        owner = Identifier.from_bytes(owner_b, width)
        block_hash = Identifier.from_bytes(block_b, width)
        holder = Identifier.from_bytes(holder_b, width)
        if holder != evidence.accused or block_hash != evidence.subject:
            return False
        return _pointer_stale(ctx, overlay, owner, block_hash, holder)

    blk = _find_block(ctx, overlay, evidence.subject)
    if blk is None or blk.encode() != evidence.payload or blk.owner != evidence.accused:
        return False
    if not _owner_signed(blk, overlay.keys):
        return False
    if evidence.kind is EvidenceKind.FORGED_PROOF:
        return _proofs_forged(blk, overlay, ctx.params.alpha)
    if evidence.kind is EvidenceKind.INVALID_BLOCK_DIRECT_SUBMIT:
        return _lacks_threshold(blk, ctx, overlay)
    return ctx.store.on_main_path(blk.h) and _holds_unsound_tx(blk, ctx, overlay)


def verify_evidence_bytes(
    data: bytes, ctx: ValidatorContext, overlay: Overlay, reporter: Identifier
) -> bool:
    """Correctness check for a transaction carrying evidence in cont.extension."""
    try:
        evidence = MisbehaviorEvidence.decode(data, reporter.width)
    except InvalidEvidenceError:
        return False
    return evidence.reporter == reporter and verify_evidence(evidence, ctx, overlay)


def file_misbehavior_tx(
    reporter: KeyPair,
    evidence: MisbehaviorEvidence,
    overlay: Overlay,
    ctx: ValidatorContext,
) -> Transaction:
    """Build the reporter's evidence transaction on its current tail."""
    if evidence.reporter != reporter.peer_id or not verify_evidence(evidence, ctx, overlay):
        raise InvalidEvidenceError(
            f"Evidence {evidence.kind.value} against {evidence.accused} does not verify locally"
        )
    cont = Contribution(recipient=reporter.peer_id, amount=0, extension=evidence.encode())
    return create_transaction(overlay, reporter, ctx.view.tail_hash, cont, ctx.params.alpha)


def decode_penalty(tx: Transaction) -> MisbehaviorEvidence | None:
    """Evidence carried by a committed transaction, if any."""
    if not tx.cont.extension:
        return None
    try:
        return MisbehaviorEvidence.decode(tx.cont.extension, tx.owner.width)
    except InvalidEvidenceError:
        return None
