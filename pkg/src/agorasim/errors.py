"""Exception hierarchy shared by every engine module.

Every error raised by the engine derives from EngineError so callers (and the
CLI exit-code mapping) can distinguish engine failures from programming bugs.
"""


class EngineError(Exception):
    """Base class for all engine-raised errors."""


class ConfigError(EngineError):
    """A run configuration document is malformed or incomplete."""


class InvalidField(EngineError):
    """A record field failed validation (bad type, range, or unknown key)."""


class AlreadyExhausted(EngineError):
    """A token debit was attempted for a persona already at or past budget."""


class SearchBudgetExhausted(EngineError):
    """A search debit was attempted with no search budget remaining."""


class EmptyCorpus(EngineError):
    """World-model ingestion received no documents and empties are forbidden."""


class EmptyText(EngineError):
    """Appended content was empty after normalization."""


class RejectedUnjustified(EngineError):
    """A gated search request carried no adequate justification."""


class BackendError(EngineError):
    """The external search backend failed."""


class DimensionMismatch(EngineError):
    """Two vectors of different dimensionality were combined."""


class EmptyInstance(EngineError):
    """Retrieval was attempted over a world model with no chunks."""


class InvalidStance(EngineError):
    """A claim carried a stance outside the allowed set."""


class InvalidEdge(EngineError):
    """A graph edge was dangling, forward-pointing, or of unknown kind."""


class InvalidClaim(EngineError):
    """A claim record was malformed (for example a duplicate claim id)."""


class GatewayError(EngineError):
    """Base class for LLM gateway failures."""


class EndpointError(GatewayError):
    """The live endpoint could not be reached or returned a bad payload."""


class ReplayDivergence(GatewayError):
    """A replayed request did not match the logged request at that index."""


class MalformedLog(GatewayError):
    """A persisted call log could not be parsed back into entries."""


class DuplicateType(EngineError):
    """A scenario type name was registered twice."""


class UnknownType(EngineError):
    """A run config referenced a scenario type that is not registered."""


class RunError(EngineError):
    """A module error that occurred mid-run, wrapped with its step index."""

    def __init__(self, step: int, cause: BaseException):
        super().__init__(f"run failed at step {step}: {cause!r}")
        self.step = step
        self.cause = cause


class HashMismatch(EngineError):
    """Recorded and recomputed content hashes (or file digests) disagree."""


class MissingParent(EngineError):
    """A reactive social action referenced a post that does not exist."""


class EmptyCandidates(EngineError):
    """A ranker was invoked with an empty candidate list."""


class EmptyPopulation(EngineError):
    """An evolutionary operation received an empty population."""


class PopulationTooSmall(EngineError):
    """The population cannot support the requested elite count."""


class UnknownAgent(EngineError):
    """A lineage query referenced an agent id absent from the snapshot."""
