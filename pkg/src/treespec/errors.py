"""Exception types shared across the package.

Every structural or contract violation raises one of these instead of a
bare ValueError so the harness can catch them uniformly, write a failure
dump, and move on to the next prompt.
"""

from __future__ import annotations

__all__ = [
    "TreespecError",
    "ConfigurationError",
    "TokenRangeError",
    "MaskShapeError",
    "MaskValidityError",
    "CacheFormatError",
    "CommitError",
    "TreeStructureError",
    "STRUCTURE_KINDS",
]


class TreespecError(Exception):
    """Base class for all package-specific errors."""


class ConfigurationError(TreespecError):
    """A config object violates its own invariants (bad dims, counts, modes)."""


class TokenRangeError(TreespecError):
    """A token id falls outside [0, vocab_size)."""


class MaskShapeError(TreespecError):
    """An attention mask does not match the expected (slots, prefix+slots) shape."""


class MaskValidityError(TreespecError):
    """An attention mask row denies a slot visibility of itself."""


class CacheFormatError(TreespecError):
    """Exported cache layers are ragged or otherwise malformed."""


class CommitError(TreespecError):
    """A cache commit was asked to adopt rows that do not exist."""


# Structure-error kinds, ordered roughly by how early the corresponding
# check runs during validation.
STRUCTURE_KINDS = ("range", "cycle", "depth_inconsistency", "ordering", "validity_closure")


class TreeStructureError(TreespecError):
    """A speculation tree violates one of its structural invariants.

    Attributes:
        kind: one of STRUCTURE_KINDS, naming the violated invariant.
        node: index of the first offending node (slot index, 0 = root).
        detail: human-readable description of the violation.
    """

    def __init__(self, kind: str, node: int, detail: str):
        if kind not in STRUCTURE_KINDS:
            raise ValueError(f"unknown structure-error kind: {kind!r}")
        self.kind = kind
        self.node = int(node)
        self.detail = detail
        super().__init__(f"[{kind}] node {node}: {detail}")
