"""Exception types shared across the package.

Every error a caller is expected to handle derives from ``ContractError`` so
the CLI can map it to exit status 1. ``RuntimeAbort`` maps to exit status 3.
"""


class ContractError(ValueError):
    """Input violates a documented precondition."""


class ConfigError(ContractError):
    """Invalid configuration value; ``field`` names the offending path."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class InvalidDepthError(ContractError):
    pass


class BehindCameraError(ContractError):
    pass


class EmptyWarpError(ContractError):
    pass


class RenderError(ContractError):
    pass


class CorruptionError(ContractError):
    """On-disk artifact does not match its manifest."""


class SchemaVersionError(ContractError):
    def __init__(self, found, expected):
        super().__init__(f"schema version {found} not supported (expected {expected})")
        self.found = found
        self.expected = expected


class StructuralError(ContractError):
    """Checkpoint parameters disagree with the model built from its config."""


class MetricUndefinedError(ContractError):
    pass


class RuntimeAbort(RuntimeError):
    """Non-finite values mid-run; ``state`` carries diagnostics."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state or {}
