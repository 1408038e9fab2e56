"""Exception hierarchy shared by the library and the command line front end.

Every error that a subcommand can surface maps to a distinct exit code in
``adt.cli``; keeping the classes in one place keeps that mapping total.
"""

from __future__ import annotations


class AdtError(Exception):
    """Base class for all library errors."""


class DocumentError(AdtError):
    """A serialized document is malformed (bad JSON, missing or mistyped keys)."""


class TreeValidationError(AdtError):
    """A tree document violates a structural invariant.

    Carries the offending node id where one exists so diagnostics can point
    at the exact spot in the input.
    """

    def __init__(self, message: str, node_id: str | None = None):
        super().__init__(message)
        self.node_id = node_id


class ConfigMismatchError(AdtError):
    """Two processes were combined whose metric configurations disagree."""


class SolverError(AdtError):
    """The transport solver was called with unusable data."""


class NotMarkovError(AdtError):
    """An operation requiring the Markov property received a non-Markov input."""


class NotBicausalError(AdtError):
    """An operation requiring a bicausal coupling received one that is not."""


class StaleTableError(AdtError):
    """A distance table was replayed against trees it was not computed from."""


class GridResolutionError(AdtError):
    """A randomization grid is too coarse for the conditional laws in play.

    ``required`` is the least grid size (every admissible size is a multiple
    of it) that makes all conditional probabilities whole numbers of cells.
    """

    def __init__(self, message: str, required: int):
        super().__init__(message)
        self.required = required


class ExpressionError(AdtError):
    """A payoff expression failed to parse or evaluate."""
