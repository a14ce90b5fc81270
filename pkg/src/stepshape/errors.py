"""Exception taxonomy shared across the toolkit.

Every error raised by this package derives from StepshapeError so callers can
catch one base type. Client-side failures additionally derive from ClientError
and carry a ``kind`` tag for dispatch without isinstance ladders.
"""

from __future__ import annotations

from enum import Enum


class StepshapeError(Exception):
    """Base class for all toolkit errors."""


# --- chain / path model ----------------------------------------------------


class MalformedChain(StepshapeError):
    """Chain string does not parse: unbalanced brackets, empty fields, no relation."""


# --- segmentation ----------------------------------------------------------


class OffsetsMismatch(StepshapeError):
    """Caller-supplied token offsets do not tile the raw text."""


# --- clients ---------------------------------------------------------------


class ClientErrorKind(Enum):
    TRANSPORT = "transport"
    HTTP_STATUS = "http_status"
    TIMEOUT = "timeout"
    EXHAUSTED_RETRIES = "exhausted_retries"
    MALFORMED_RESPONSE = "malformed_response"


class ClientError(StepshapeError):
    """A remote call failed. ``kind`` says how."""

    def __init__(self, kind: ClientErrorKind, message: str, *, status: int | None = None):
        super().__init__(message)
        self.kind = kind
        self.status = status


class JudgeUnparseable(StepshapeError):
    """Judge reply carries no [[YES]]/[[NO]] verdict marker."""


class UnscriptedRequest(StepshapeError):
    """A mock client received a request no script entry matches (strict mode)."""


class DimensionMismatch(StepshapeError):
    """Embedding batch returned vectors of inconsistent dimension."""


class MockModeViolation(StepshapeError):
    """A network-backed client was invoked while mock mode is active."""


# --- shaping ---------------------------------------------------------------


class EmptyGroup(StepshapeError):
    """Rollout group contains no trajectories."""


class EmptyChain(StepshapeError):
    """A ground-truth chain was required but absent or hopless."""


class MissingSignals(StepshapeError):
    """A negative-reward trajectory lacks per-step validity/similarity signals."""


class NoTokenSpans(StepshapeError):
    """Token-level broadcasting requested on a trajectory without token spans."""


class LengthMismatch(StepshapeError):
    """Parallel arrays (log-probs, advantages, offsets) disagree on length."""


# --- coverage --------------------------------------------------------------


class EmptyPath(StepshapeError):
    """Coverage requested against a path with no nodes."""


# --- knowledge graph -------------------------------------------------------


class AliasCycle(StepshapeError):
    """Alias map cannot be resolved to canonical names (cyclic mapping)."""


class UnknownSeed(StepshapeError):
    """A seed entity for subgraph extraction is not present in the graph."""


class NoPathFound(StepshapeError):
    """Path sampling exhausted its attempt budget without a qualifying path."""


# --- synthesis -------------------------------------------------------------


class GenerationUnparseable(StepshapeError):
    """Generator reply is missing the required question/answer blocks."""


# --- serialization ----------------------------------------------------------


class SchemaViolation(StepshapeError):
    """A JSON/JSONL record does not conform to its declared schema."""
