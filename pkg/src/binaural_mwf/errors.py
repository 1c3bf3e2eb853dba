class InvalidInputError(ValueError):
    """Raised when an operation receives input violating its preconditions."""


class ConfigError(InvalidInputError):
    """Raised for malformed run configuration; carries the offending key."""

    def __init__(self, key, message):
        super().__init__(f"invalid config key '{key}': {message}")
        self.key = key
