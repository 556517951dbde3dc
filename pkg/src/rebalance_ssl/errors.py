"""Exceptions shared across the package."""


class ConfigError(Exception):
    """Fatal configuration problem (bad root, bad field, schema mismatch)."""


class TrainingDiverged(RuntimeError):
    """A training step produced a non-finite loss or gradient."""
