"""Exception hierarchy shared by the library, the service, and the CLI."""


class PipelineError(Exception):
    """Base class for errors raised by this package."""


class ConfigError(PipelineError):
    """Invalid configuration or parameters (CLI exit code 2)."""


class DataError(PipelineError):
    """Bad input data or file format (CLI exit code 3)."""


class ContractError(PipelineError):
    """Mismatched shapes/dimensions between pipeline stages (CLI exit code 3)."""
