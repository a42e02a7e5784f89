"""Error types shared across the package.

Every exception carries a machine-readable ``code`` so the CLI can map
failures to exit codes and emit error JSON.
"""

# Validation / configuration codes (CLI exit 2)
NEGATIVE_PROBABILITY = "NEGATIVE_PROBABILITY"
ROW_SUM_MISMATCH = "ROW_SUM_MISMATCH"
ZERO_STOP_PROBABILITY = "ZERO_STOP_PROBABILITY"
REWARD_OUT_OF_RANGE = "REWARD_OUT_OF_RANGE"
EMPTY_SUPPORT_INITIAL_DIST = "EMPTY_SUPPORT_INITIAL_DIST"
PARSE_ERROR = "PARSE_ERROR"
UNKNOWN_NAME = "UNKNOWN_NAME"
BAD_PARAMS = "BAD_PARAMS"
EPS_OUT_OF_RANGE = "EPS_OUT_OF_RANGE"
INADMISSIBLE_SCHEDULE = "INADMISSIBLE_SCHEDULE"
NOT_DETERMINISTIC_TARGET = "NOT_DETERMINISTIC_TARGET"
INSUFFICIENT_DATA = "INSUFFICIENT_DATA"
TOO_LARGE = "TOO_LARGE"
DIMENSION_MISMATCH = "DIMENSION_MISMATCH"
BOUNDARY_POLICY = "BOUNDARY_POLICY"
NON_FINITE_INPUT = "NON_FINITE_INPUT"

# Runtime invariants (CLI exit 3)
SINGULAR_SYSTEM = "SINGULAR_SYSTEM"
MAX_LENGTH_EXCEEDED = "MAX_LENGTH_EXCEEDED"
ZERO_PROBABILITY_ACTION = "ZERO_PROBABILITY_ACTION"
NON_FINITE_SIGNAL = "NON_FINITE_SIGNAL"


class SgpgError(Exception):
    """Base class; ``code`` identifies the failure kind."""

    def __init__(self, code, message):
        self.code = code
        super().__init__(message)


class ConfigError(SgpgError):
    """Bad user input: rejected games, parameters, schedules, files."""


class GameValidationError(ConfigError):
    """One or more game invariants violated.

    ``errors`` is the full list of ``(code, message)`` pairs so callers see
    every violation at once, not just the first.
    """

    def __init__(self, errors):
        self.errors = list(errors)
        first = self.errors[0][0] if self.errors else "INVALID"
        msg = "; ".join(f"{c}: {m}" for c, m in self.errors)
        SgpgError.__init__(self, first, msg)


class RuntimeBreach(SgpgError):
    """An internal invariant failed at runtime (not a user error)."""
