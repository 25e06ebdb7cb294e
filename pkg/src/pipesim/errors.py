"""Common exception base for the pipesim package."""


class PipelineError(Exception):
    """Base class for all errors raised by pipesim."""
