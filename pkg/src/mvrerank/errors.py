"""Exception types shared across the engine."""


class InputDataError(Exception):
    """A feature or metadata file is missing, malformed, or inconsistent."""


class ConfigError(Exception):
    """Mutually inconsistent or out-of-range run parameters."""


class MemoryBudgetError(MemoryError):
    """A requested materialization exceeds the configured memory budget."""
