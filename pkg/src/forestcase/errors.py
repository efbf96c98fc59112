"""Exception hierarchy; the CLI maps these onto stable exit codes."""


class ForestCaseError(Exception):
    """Base class for all library errors."""


class ConfigError(ForestCaseError):
    """Bad experiment configuration or config file (CLI exit code 1)."""


class DataError(ForestCaseError):
    """Bad dataset, schema, or CSV content (CLI exit code 2)."""


class ParseError(DataError):
    """Unparseable CSV cell; carries the offending row and column."""

    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class MissingValueError(DataError):
    """Missing value encountered under the ``error`` policy."""


class ModelMismatchError(ForestCaseError):
    """Serialized model does not match the supplied dataset (exit code 3)."""


class StageError(ForestCaseError):
    """A pipeline stage failed; carries fold/stage context (exit code 4)."""

    def __init__(self, stage, fold, cause):
        super().__init__(f"stage '{stage}' failed on fold {fold}: {cause}")
        self.stage = stage
        self.fold = fold
        self.cause = cause
