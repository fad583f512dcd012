"""
pov.py — Proof-of-Validation

Validator selection:
    tx  validators  i = 1..alpha : H(tx.prev || tx.owner || tx.cont || i)
    blk validators  i = 1..alpha : H(prev || owner || S || i)

each resolved to the peer answering a numID search for it. A subject is
valid once t distinct designated validators have signed its hash; a peer
picked for several indices still counts once.

Validators return a ValidationOutcome and never raise. Transaction checks
run authenticity → soundness → correctness → balance and stop at the first
failure. Block checks run authenticity → consistency → size → member
transactions, then re-read the tail right before signing.
"""

import logging
from collections.abc import Callable, Iterable
from dataclasses import dataclass
from enum import Enum
from typing import TYPE_CHECKING

from chain.ledger import (
    Block,
    Contribution,
    LedgerStore,
    Transaction,
    blk_hash,
    encode_tx_set,
    latest_owner_block,
    tx_hash,
)
from chain.params import PovParams
from core.encoding import encode_fields, encode_index
from core.errors import InvalidParameterError, InvalidReferenceError, NodeNotFoundError
from core.ident import Identifier, KeyDirectory, KeyPair, Signature, hash_to_id, sign
from overlay.skipgraph import NodeKind, Overlay, SearchProof, verify_search_proof

if TYPE_CHECKING:
    from chain.view import ViewTable

logger = logging.getLogger(__name__)

__all__ = [
    "PovParams",
    "Verdict",
    "Reason",
    "ValidationOutcome",
    "TxFields",
    "BlockFields",
    "ValidatorContext",
    "tx_validator_id",
    "blk_validator_id",
    "resolve_validators",
    "create_transaction",
    "create_block",
    "validate_transaction",
    "validate_block",
    "collect_threshold",
    "attach_signatures",
    "knockout_recovery",
]


class Verdict(str, Enum):
    SIGNED = "signed"
    REJECTED = "rejected"


class Reason(str, Enum):
    OK = "ok"
    UNSOUND = "unsound"
    INCORRECT = "incorrect"
    UNAUTHENTIC = "unauthentic"
    INSUFFICIENT_BALANCE = "insufficient_balance"
    INCONSISTENT = "inconsistent"
    BLACKLISTED = "blacklisted"


@dataclass(frozen=True, slots=True)
class ValidationOutcome:
    verdict: Verdict
    reason: Reason
    signature: Signature | None = None

    def __post_init__(self) -> None:
        if (self.verdict is Verdict.SIGNED) != (self.signature is not None):
            raise InvalidParameterError("A signature is present exactly when the verdict is signed")

    @classmethod
    def signed(cls, signature: Signature) -> "ValidationOutcome":
        return cls(Verdict.SIGNED, Reason.OK, signature)

    @classmethod
    def rejected(cls, reason: Reason) -> "ValidationOutcome":
        return cls(Verdict.REJECTED, reason)

    @property
    def is_signed(self) -> bool:
        return self.verdict is Verdict.SIGNED


# ── Subjects ──────────────────────────────────────────────────────────────────


@dataclass(frozen=True, slots=True)
class TxFields:
    """The hashed-for-selection part of a transaction, before its proofs exist."""

    prev: Identifier
    owner: Identifier
    cont: Contribution


@dataclass(frozen=True, slots=True)
class BlockFields:
    prev: Identifier
    owner: Identifier
    txs: tuple[Transaction, ...]

Subject = TxFields | BlockFields | Transaction | Block


def _check_index(i: int, alpha: int | None) -> None:
    if i < 1 or (alpha is not None and i > alpha):
        raise InvalidParameterError(f"Validator index must be in [1, {alpha or 'alpha'}], got {i}")


def tx_validator_id(
    tx_prev: Identifier,
    tx_owner: Identifier,
    tx_cont: Contribution,
    i: int,
    alpha: int | None = None,
) -> Identifier:
    _check_index(i, alpha)
    payload = encode_fields(
        tx_prev.to_bytes(), tx_owner.to_bytes(), tx_cont.encode(), encode_index(i)
    )
    return hash_to_id(payload, tx_prev.width)


def blk_validator_id(
    prev: Identifier,
    owner: Identifier,
    txs: "tuple[Transaction, ...] | list[Transaction]",
    i: int,
    alpha: int | None = None,
) -> Identifier:
    _check_index(i, alpha)
    payload = encode_fields(prev.to_bytes(), owner.to_bytes(), encode_tx_set(txs), encode_index(i))
    return hash_to_id(payload, prev.width)


def _validator_id(subject: Subject, i: int, alpha: int) -> Identifier:
    if isinstance(subject, (Block, BlockFields)):
        return blk_validator_id(subject.prev, subject.owner, subject.txs, i, alpha)
    return tx_validator_id(subject.prev, subject.owner, subject.cont, i, alpha)


def resolve_validators(
    overlay: Overlay, requester: Identifier, subject: Subject, alpha: int
) -> list[tuple[Identifier, SearchProof]]:
    """One (designated peer, proof) per index 1..alpha; repeats are kept."""
    resolved = []
    with overlay.messages.in_phase("validator_search"):
        for i in range(1, alpha + 1):
            vid = _validator_id(subject, i, alpha)
            node, proof = overlay.search_num_id(requester, vid, NodeKind.PEER)
            resolved.append((node.num_id, proof))
    return resolved


def designated_validators(subject: Transaction | Block) -> list[Identifier]:
    """Peers each proof of the subject ended at, in index order."""
    return [proof.hops[-1].host for proof in subject.search_proofs if proof.hops]


def signing_message(subject_hash: Identifier) -> bytes:
    return subject_hash.to_bytes()


# ── Owner side ────────────────────────────────────────────────────────────────


def create_transaction(
    overlay: Overlay, keypair: KeyPair, prev: Identifier, cont: Contribution, alpha: int
) -> Transaction:
    """Resolve validators, hash, and owner-sign a fresh transaction."""
    owner = keypair.peer_id
    proofs = tuple(p for _, p in resolve_validators(overlay, owner, TxFields(prev, owner, cont), alpha))
    h = tx_hash(prev, owner, cont, proofs)
    owner_sig = sign(keypair.signing_key, signing_message(h))
    return Transaction(prev, owner, cont, proofs, h, sigs=(owner_sig,))


def create_block(
    overlay: Overlay,
    keypair: KeyPair,
    prev: Identifier,
    txs: "Iterable[Transaction]",
    alpha: int,
) -> Block:
    owner = keypair.peer_id
    members = tuple(txs)
    proofs = tuple(p for _, p in resolve_validators(overlay, owner, BlockFields(prev, owner, members), alpha))
    h = blk_hash(prev, owner, members, proofs)
    owner_sig = sign(keypair.signing_key, signing_message(h))
    return Block(prev, owner, members, proofs, h, sigs=(owner_sig,))


def cast_transactions(
    store: LedgerStore, anchor: Identifier, pending: "Iterable[Transaction]", max_tx: int
) -> list[Transaction]:
    """Pick sound pending transactions for a block on anchor, one per owner."""
    chosen: list[Transaction] = []
    owners: set[Identifier] = set()
    for tx in pending:
        if len(chosen) >= max_tx:
            break
        if tx.owner in owners or not _is_sound(store, tx, anchor):
            continue
        owners.add(tx.owner)
        chosen.append(tx)
    return chosen


# ── Validator side ────────────────────────────────────────────────────────────


@dataclass
class ValidatorContext:
    """
    Everything a validator consults: its keys, the ledger store, its own view
    and the protocol parameters. `tail_probe`, when set, is read again right
    before a block signature to catch a tail change mid-validation.
    """

    keypair: KeyPair
    store: LedgerStore
    view: "ViewTable"
    params: PovParams
    tail_probe: Callable[[], Identifier] | None = None

    @property
    def peer_id(self) -> Identifier:
        return self.keypair.peer_id

    def current_tail(self) -> Identifier:
        return self.tail_probe() if self.tail_probe is not None else self.view.tail_hash

    def is_blacklisted(self, peer: Identifier) -> bool:
        return peer in self.view.blacklist


def _proofs_authentic(
    subject: Transaction | Block,
    expected: list[Identifier],
    keys: KeyDirectory,
) -> bool:
    if len(subject.search_proofs) != len(expected):
        return False
    for proof, vid in zip(subject.search_proofs, expected):
        if proof.target != vid or not verify_search_proof(proof, keys):
            return False
        if proof.hops[0].host != subject.owner:
            return False
    return True


def _owner_signed(subject: Transaction | Block, keys: KeyDirectory) -> bool:
    sig = subject.owner_signature
    return sig is not None and keys.verify(subject.owner, signing_message(subject.h), sig)


def _tx_authentic(tx: Transaction, keys: KeyDirectory, alpha: int) -> bool:
    if tx_hash(tx.prev, tx.owner, tx.cont, tx.search_proofs) != tx.h:
        return False
    if not _owner_signed(tx, keys):
        return False
    expected = [tx_validator_id(tx.prev, tx.owner, tx.cont, i, alpha) for i in range(1, alpha + 1)]
    return _proofs_authentic(tx, expected, keys)


def _blk_authentic(blk: Block, keys: KeyDirectory, alpha: int) -> bool:
    if blk_hash(blk.prev, blk.owner, blk.txs, blk.search_proofs) != blk.h:
        return False
    if not _owner_signed(blk, keys):
        return False
    expected = [blk_validator_id(blk.prev, blk.owner, blk.txs, i, alpha) for i in range(1, alpha + 1)]
    return _proofs_authentic(blk, expected, keys)


def _is_sound(store: LedgerStore, tx: Transaction, anchor: Identifier) -> bool:
    """
    tx.prev is a main-path block at or before anchor, and no block after
    tx.prev (up to anchor) holds a transaction of the same owner.
    """
    try:
        prev_idx = store.main_index(tx.prev)
        if prev_idx > store.main_index(anchor):
            return False
        latest = latest_owner_block(store, tx.owner, anchor)
    except InvalidReferenceError:
        return False
    return latest is None or store.main_index(latest) <= prev_idx


def signer_set(
    signatures: Iterable[tuple[Identifier, Signature | None]],
    subject_hash: Identifier,
    keys: KeyDirectory,
    allowed: Iterable[Identifier] | None = None,
    blacklist: "Iterable[Identifier] | None" = None,
) -> set[Identifier]:
    """Distinct peers whose signature over subject_hash verifies."""
    allowed_set = set(allowed) if allowed is not None else None
    barred = set(blacklist) if blacklist is not None else set()
    message = signing_message(subject_hash)
    signers: set[Identifier] = set()
    for peer, sig in signatures:
        if sig is None or peer in signers or peer in barred:
            continue
        if allowed_set is not None and peer not in allowed_set:
            continue
        if keys.verify(peer, message, sig):
            signers.add(peer)
    return signers


def _validator_signers(
    subject: Transaction | Block, keys: KeyDirectory, blacklist: "Iterable[Identifier]"
) -> set[Identifier]:
    return signer_set(
        ((sig.signer_id, sig) for sig in subject.validator_signatures),
        subject.h,
        keys,
        allowed=designated_validators(subject),
        blacklist=blacklist,
    )


def _evidence_correct(ctx: ValidatorContext, overlay: Overlay, tx: Transaction) -> bool:
    from chain.incentive import verify_evidence_bytes

    return verify_evidence_bytes(tx.cont.extension, ctx, overlay, reporter=tx.owner)


def validate_transaction(
    ctx: ValidatorContext, overlay: Overlay, tx: Transaction
) -> ValidationOutcome:
    params = ctx.params
    if ctx.is_blacklisted(tx.owner):
        return ValidationOutcome.rejected(Reason.BLACKLISTED)
    if not _tx_authentic(tx, overlay.keys, params.alpha):
        return ValidationOutcome.rejected(Reason.UNAUTHENTIC)
    if not _is_sound(ctx.store, tx, ctx.current_tail()):
        return ValidationOutcome.rejected(Reason.UNSOUND)

    balance = ctx.view.balance(tx.owner)
    if tx.cont.extension:
        if not _evidence_correct(ctx, overlay, tx):
            return ValidationOutcome.rejected(Reason.INCORRECT)
    elif balance < tx.cont.amount:
        return ValidationOutcome.rejected(Reason.INCORRECT)
    if balance < tx.cont.amount + params.fees_for(tx.routing_hops):
        return ValidationOutcome.rejected(Reason.INSUFFICIENT_BALANCE)

    return ValidationOutcome.signed(sign(ctx.keypair.signing_key, signing_message(tx.h)))


def validate_block(ctx: ValidatorContext, overlay: Overlay, blk: Block) -> ValidationOutcome:
    params = ctx.params
    keys = overlay.keys
    blacklist = ctx.view.blacklist
    if ctx.is_blacklisted(blk.owner):
        return ValidationOutcome.rejected(Reason.BLACKLISTED)
    if not _blk_authentic(blk, keys, params.alpha):
        return ValidationOutcome.rejected(Reason.UNAUTHENTIC)
    if blk.prev != ctx.current_tail():
        return ValidationOutcome.rejected(Reason.INCONSISTENT)
    if not params.min_tx <= len(blk.txs) <= params.max_tx:
        return ValidationOutcome.rejected(Reason.INCORRECT)

    owners: set[Identifier] = set()
    for tx in blk.txs:
        if ctx.is_blacklisted(tx.owner):
            return ValidationOutcome.rejected(Reason.BLACKLISTED)
        if not _tx_authentic(tx, keys, params.alpha):
            return ValidationOutcome.rejected(Reason.UNAUTHENTIC)
        if len(_validator_signers(tx, keys, blacklist)) < params.t:
            return ValidationOutcome.rejected(Reason.UNAUTHENTIC)
        if tx.owner in owners or not _is_sound(ctx.store, tx, blk.prev):
            return ValidationOutcome.rejected(Reason.UNSOUND)
        owners.add(tx.owner)

    if blk.prev != ctx.current_tail():
        logger.debug(f"Validator {ctx.peer_id} saw the tail move while validating {blk.h}")
        return ValidationOutcome.rejected(Reason.INCONSISTENT)
    return ValidationOutcome.signed(sign(ctx.keypair.signing_key, signing_message(blk.h)))


def collect_threshold(
    outcomes: Iterable[tuple[Identifier, ValidationOutcome]],
    subject_hash: Identifier,
    keys: KeyDirectory,
    t: int,
    blacklist: "Iterable[Identifier] | None" = None,
) -> bool:
    """True iff at least t distinct peers returned a verifying signature."""
    signers = signer_set(
        ((peer, outcome.signature) for peer, outcome in outcomes),
        subject_hash,
        keys,
        blacklist=blacklist,
    )
    return len(signers) >= t


def attach_signatures(
    subject: Transaction | Block,
    outcomes: Iterable[tuple[Identifier, ValidationOutcome]],
    keys: KeyDirectory,
    blacklist: "Iterable[Identifier] | None" = None,
) -> Transaction | Block:
    """Append one verifying signature per distinct signing validator."""
    outcomes = list(outcomes)
    signers = signer_set(
        ((peer, o.signature) for peer, o in outcomes), subject.h, keys, blacklist=blacklist
    )
    sigs: list[Signature] = []
    seen: set[Identifier] = set()
    for peer, outcome in outcomes:
        if peer in signers and peer not in seen and outcome.signature is not None:
            seen.add(peer)
            sigs.append(outcome.signature)
    return subject.with_signatures(*sigs)


# ── Forks ─────────────────────────────────────────────────────────────────────


def knockout_recovery(
    overlay: Overlay,
    owner: Identifier,
    winner: Block,
    mine: Block,
    pending: "Iterable[Transaction]" = (),
) -> list[Transaction]:
    """
    Withdraw a knocked-out block and rebuild its candidate set: the lost
    block's transactions not in the winner, then newly discovered pending
    ones. Transactions whose owner already spent in the winner are dropped.
    No fees or rewards move; callers resubmit once min_tx is reached.
    """
    for node in overlay.nodes_at(mine.h, NodeKind.BLOCK):
        try:
            overlay.leave(mine.h, NodeKind.BLOCK, host=node.host)
        except NodeNotFoundError:
            pass

    won = {tx.h for tx in winner.txs}
    spent = {tx.owner for tx in winner.txs}
    candidates: list[Transaction] = []
    taken: set[Identifier] = set()
    for tx in (*mine.txs, *pending):
        if tx.h in won or tx.h in taken or tx.owner in spent:
            continue
        taken.add(tx.h)
        candidates.append(tx)
    logger.warning(
        f"Block {mine.h} of {owner} knocked out by {winner.h}; "
        f"{len(candidates)} transactions remain candidates"
    )
    return candidates
