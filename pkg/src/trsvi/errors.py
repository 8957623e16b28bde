class DomainError(ValueError):
    """Argument lies outside the domain of a function or parameter family."""


class UsageError(ValueError):
    """Arguments are mutually inconsistent (shapes, families, configuration)."""


class DataError(ValueError):
    """Input data is malformed or does not match the model."""
