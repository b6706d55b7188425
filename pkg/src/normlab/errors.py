"""Shared error types.

Every failure mode the engine can signal deliberately lives here so that
callers (and the CLI exit-code mapping) have one vocabulary to catch.
"""

from __future__ import annotations


class NormlabError(Exception):
    """Base class for all deliberate engine errors."""


class ConfigError(NormlabError):
    """Base class for scenario/config problems (CLI exit code 2)."""


class ParseError(ConfigError):
    """Raised when a config file cannot be parsed at all."""


class SchemaError(ConfigError):
    """Raised after validation with the full list of problems found.

    Attributes:
        problems: list of (json_pointer, message) pairs, one per violation.
    """

    def __init__(self, problems: list[tuple[str, str]]):
        self.problems = list(problems)
        lines = [f"{ptr}: {msg}" for ptr, msg in self.problems]
        super().__init__("invalid scenario config:\n" + "\n".join(lines))


class BackendError(NormlabError):
    """Base class for completion-backend failures (CLI exit code 3)."""


class RemoteUnavailable(BackendError):
    """Remote scoring endpoint could not be reached after retries."""


class CandidateRejected(BackendError):
    """Remote endpoint refused to score one of the requested candidates."""


class BackendUnsupported(BackendError):
    """Operation requires a backend capability this backend lacks."""


class TimeRegression(NormlabError):
    """A memory record was written with a timestamp older than the bank tail."""


class DuplicateId(NormlabError):
    """An actor id was registered twice in the same environment."""


class RuleGap(NormlabError):
    """No transition rule matched; scenarios must ship a default rule."""


class UnknownCandidateSet(NormlabError):
    """A logic step referenced a candidate set the actor does not declare."""


class CandidateMismatch(NormlabError):
    """Two distributions were compared over different candidate sets."""


class FramingError(NormlabError):
    """A framing template referenced a slot that cannot be resolved."""


class SimilarityBackendMissing(NormlabError):
    """An epsilon-similarity matcher was requested without a probe backend."""


class InsufficientData(NormlabError):
    """Not enough simulated history to evaluate the requested verdict."""
