"""Exception hierarchy shared across the package.

Three branches map onto the CLI exit codes: configuration problems (2),
data problems (3), everything that breaks mid-pipeline (4).
"""


class PrivamlError(Exception):
    """Base class for all package errors."""


class ConfigError(PrivamlError):
    """Invalid configuration or parameters."""


class DataError(PrivamlError):
    """Malformed or unusable input data."""


class PipelineError(PrivamlError):
    """Failure while running a pipeline stage."""
