"""
snapshot.py — Line-oriented text dump/restore of an overlay

One node per line, whitespace separated:

    <kind> <numID hex> <nameID hex> <host hex> <online 0|1>

Lines starting with '#' are comments. Replica payloads and signing keys are
not part of a snapshot; restore() takes the key pairs separately so that the
restored overlay can produce search proofs again.

Used for test fixtures and for diffing overlays across runs.
"""

import logging
from collections.abc import Iterable

from core.errors import InvalidParameterError
from core.ident import Identifier, KeyPair
from overlay.skipgraph import NodeKind, Overlay, OverlayNode

logger = logging.getLogger(__name__)


def dump(overlay: Overlay) -> str:
    lines = [f"# width={overlay.width}"]
    for node in overlay.nodes():
        lines.append(
            f"{node.kind.value} {node.num_id.hex()} {node.name_id.hex()} "
            f"{node.host.hex()} {1 if overlay.is_online(node) else 0}"
        )
    return "\n".join(lines) + "\n"


def restore(
    text: str,
    width_s: int,
    keypairs: Iterable[KeyPair] = (),
    verify_binding: bool = True,
) -> Overlay:
    """
    Rebuild an overlay from dump() output. Peers with a matching key pair are
    added with their signer and verify key; other nodes join as plain nodes.
    """
    overlay = Overlay(width_s)
    by_id = {kp.peer_id.value: kp for kp in keypairs}
    offline: set[int] = set()

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 5:
            raise InvalidParameterError(f"Snapshot line {lineno}: expected 5 fields, got {len(parts)}")
        kind_text, num_hex, name_hex, host_hex, online_flag = parts
        try:
            kind = NodeKind(kind_text)
        except ValueError:
            raise InvalidParameterError(f"Snapshot line {lineno}: unknown kind {kind_text!r}") from None
        num_id = Identifier.from_hex(num_hex, width_s)
        name_id = Identifier.from_hex(name_hex, width_s)
        host = Identifier.from_hex(host_hex, width_s)

        keypair = by_id.get(num_id.value) if kind is NodeKind.PEER else None
        if keypair is not None:
            overlay.add_peer(keypair, verify_binding=verify_binding)
        else:
            overlay.join(OverlayNode(num_id, name_id, kind, host))
        if online_flag == "0":
            offline.add(host.value)

    for host_value in offline:
        overlay.set_online(Identifier(host_value, width_s), False)
    logger.debug(f"Restored overlay with {overlay.size()} nodes ({len(offline)} offline hosts)")
    return overlay
