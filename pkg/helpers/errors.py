"""
Error families for the retrosynthesis pipeline. Each family maps to one exit code of the command-line driver; every
module-specific error derives from exactly one of them.
"""


class PipelineError(Exception):
    """Base for every error the pipeline raises on purpose."""

    exit_code = 3

    @property
    def reason(self):
        """
        Name of the error, used verbatim in rejects files and logs.

        :return: str, the class name
        """
        return type(self).__name__


class UsageError(PipelineError):
    """Bad arguments or configuration; exit code 1."""

    exit_code = 1


class DataError(PipelineError):
    """Input data the pipeline cannot use; exit code 2."""

    exit_code = 2


class RuntimeFailure(PipelineError):
    """Something broke while running, e.g. non-finite values or unwritable outputs; exit code 3."""

    exit_code = 3


class ConfigError(UsageError):
    """Unknown key or unparsable value in a key = value config file."""


class ShapeMismatch(RuntimeFailure):
    """Array shapes that should agree do not."""
