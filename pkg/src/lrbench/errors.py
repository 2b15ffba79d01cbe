"""Shared exception types used across the package and mapped to CLI exit codes."""


class LRBenchError(Exception):
    """Base class for errors raised by this package."""


class ConfigError(LRBenchError):
    """Invalid configuration file, key, or value."""


class DataError(LRBenchError):
    """Dataset file is missing, truncated, or malformed."""
