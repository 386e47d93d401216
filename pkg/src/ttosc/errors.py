"""Exception hierarchy.

Every error carries a short machine-readable ``category`` that the CLI
reports alongside a distinct exit code.
"""


class TTOSCError(Exception):
    category = "error"
    exit_code = 1


class ConfigError(TTOSCError, ValueError):
    category = "config"
    exit_code = 2


class DimensionError(TTOSCError, ValueError):
    category = "dimension"
    exit_code = 3


class InfeasibleError(TTOSCError, ValueError):
    """A deployment or scheduling policy violates a hard constraint."""

    category = "infeasible"
    exit_code = 4


class SolverError(TTOSCError, RuntimeError):
    category = "solver"
    exit_code = 5


class DivergenceError(TTOSCError, RuntimeError):
    """Training produced a non-finite loss."""

    category = "divergence"
    exit_code = 6


class OracleLimitError(TTOSCError, ValueError):
    category = "oracle-limit"
    exit_code = 7


class OracleMismatchError(TTOSCError):
    """A solver disagreed with its brute-force reference."""

    category = "oracle-mismatch"
    exit_code = 8
