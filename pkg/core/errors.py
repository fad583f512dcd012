"""
errors.py — Exception hierarchy shared by every layer

Verdict-style failures (signature checks, proof checks, PoV validation) do
not raise; they return False or a rejected outcome. The exceptions below are
for broken preconditions: bad parameters, missing nodes, dangling ledger
edges, unreachable replicas.

Everything derives from LightChainError, itself a RuntimeError, so callers
that only care about "the protocol refused this" can catch one type.
"""


class LightChainError(RuntimeError):
    """Base class for all protocol and harness errors."""


class InvalidParameterError(LightChainError, ValueError):
    """A parameter is outside its domain (bit width, index, probability...)."""


class ConfigError(LightChainError, ValueError):
    """A simulation or protocol configuration violates an invariant."""


# ── Overlay ───────────────────────────────────────────────────────────────────


class DuplicateNodeError(LightChainError):
    """An identical overlay node is already present."""


class NodeNotFoundError(LightChainError, KeyError):
    """The requested overlay node, block or pointer does not exist."""

    def __str__(self) -> str:
        # KeyError quotes its argument; keep the plain message instead
        return RuntimeError.__str__(self)


class OverlayEmptyError(LightChainError):
    """No online node passes the search filter."""


# ── Ledger & view ─────────────────────────────────────────────────────────────


class MissingParentError(LightChainError):
    """A block's prev is not present in the store."""


class DuplicateBlockError(LightChainError):
    """A block with the same hash is already stored."""


class InvalidReferenceError(LightChainError):
    """A hash was expected on the main path but is not."""


class InconsistentViewError(LightChainError):
    """A block does not extend the view's tail."""


class InvalidBlockError(LightChainError):
    """Applying a block would break a view invariant (negative balance)."""


# ── Storage, bootstrap & incentives ───────────────────────────────────────────


class UnavailableError(LightChainError):
    """Every replica of the requested subject is offline."""


class BootstrapUnavailableError(UnavailableError):
    """Not enough consistent view introducers answered within the cap."""


class InvalidEvidenceError(LightChainError):
    """Misbehavior evidence does not re-verify."""
