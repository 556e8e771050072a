"""Exception taxonomy shared across the package."""

from __future__ import annotations


class CmgError(Exception):
    """Base class for all domain errors."""


class ParseError(CmgError):
    """Instruction/description text rejected by the grammar.

    ``position`` is the character offset of the offending token in the input,
    ``expected`` the set of token surfaces that would have been legal there.
    """

    def __init__(self, message: str, position: int, expected: set[str]):
        super().__init__(f"{message} at position {position}; expected one of "
                         f"{sorted(expected)}")
        self.position = position
        self.expected = expected


class UnresolvableReference(CmgError):
    """Instruction anchor or referenced object missing from the scene."""


class IllegalEdit(CmgError):
    """Edit would violate scene invariants (occupied/out-of-bounds cell,
    duplicate category, object count out of range)."""


class InconsistentLabels(CmgError):
    """Label-set pair does not describe a single-object edit."""


class ExhaustedTokens(CmgError):
    """Not enough unused tokens to synthesize the requested counterfactuals."""


class UndoParseFailure(CmgError):
    """Decoded undo text failed to parse as an instruction."""


class SequenceOverflow(CmgError):
    """Token sequence exceeds the model's maximum length."""
