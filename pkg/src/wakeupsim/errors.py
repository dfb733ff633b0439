"""Shared exception types."""


class ConfigError(ValueError):
    """A parameter or schedule violates its documented precondition."""


class ProtocolStateError(RuntimeError):
    """A packet state was driven outside its legal envelope."""


class VerificationError(RuntimeError):
    """A verification suite found at least one violated bound."""
