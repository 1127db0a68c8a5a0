"""Exception types shared across the toolkit.

Every error raised by library code derives from :class:`KgFaithError`
so callers can catch the whole family with one clause. Validation-style
errors also derive from ValueError.
"""

from __future__ import annotations


class KgFaithError(Exception):
    """Base class for all toolkit errors."""


# --- graph store ---------------------------------------------------------

class MalformedLine(KgFaithError, ValueError):
    """A triple-file line does not have exactly three tab-separated fields."""

    def __init__(self, line_number: int, line: str = ""):
        self.line_number = line_number
        self.line = line
        super().__init__(f"line {line_number}: expected 3 tab-separated fields")


class EmptyGraph(KgFaithError, ValueError):
    """The triple file contained no triples."""


class UnknownEntity(KgFaithError, KeyError):
    """An entity id or name is not in the vocabulary."""


class UnknownRelation(KgFaithError, KeyError):
    """A relation id or name is not in the vocabulary."""


# --- critic --------------------------------------------------------------

class UnlinkedResponse(KgFaithError, ValueError):
    """A response has grounding triples but no linkable mention spans."""


# --- corruptor -----------------------------------------------------------

class NoEligibleReplacement(KgFaithError, ValueError):
    """No mention of the record has a nonempty extrinsic replacement pool."""


class NotApplicable(KgFaithError, ValueError):
    """Intrinsic corruption has no swappable subject/object pair."""


class AllRecordsDropped(KgFaithError, ValueError):
    """Every input record was dropped while building the synthetic dataset."""


# --- embeddings ----------------------------------------------------------

class ZeroDimension(KgFaithError, ValueError):
    """Requested embedding dimension is below 1."""


class DimensionMismatch(KgFaithError, ValueError):
    """Vector operands do not share one dimension."""


class EmptyPool(KgFaithError, ValueError):
    """A negative-sampling candidate pool is empty."""


class DivergenceDetected(KgFaithError, RuntimeError):
    """Mean training loss became non-finite."""

    def __init__(self, epoch: int):
        self.epoch = epoch
        super().__init__(f"mean loss non-finite at epoch {epoch}")


class EmptyHoldout(KgFaithError, ValueError):
    """Link-prediction evaluation received no held-out triples."""


# --- retriever -----------------------------------------------------------

class NoGroundingRelation(KgFaithError, ValueError):
    """Oracle query mode found no grounding triple touching the anchors."""


class EmptySubgraph(KgFaithError, ValueError):
    """The retrieval subgraph offers no candidate entities."""


class UnknownAnchor(KgFaithError, KeyError):
    """The scoring anchor is not a node of the subgraph."""


class SourceExhausted(KgFaithError, ValueError):
    """An external query-vector source ran out of vectors."""


class RetrievalImpossible(KgFaithError, RuntimeError):
    """No candidate entity could be retrieved for a flagged span."""


# --- metrics -------------------------------------------------------------

class EmptyInput(KgFaithError, ValueError):
    """A metric received an empty or invalid input list."""


class LengthMismatch(KgFaithError, ValueError):
    """Parallel hypothesis/reference lists differ in length."""


# --- cli -----------------------------------------------------------------

class ConfigValidation(KgFaithError, ValueError):
    """A command-line or config-file value failed validation."""


class UnknownCommand(ConfigValidation):
    """The requested subcommand does not exist."""
