"""Exception hierarchy shared across the package."""


class MacError(Exception):
    """Base class for all errors raised by macensemble."""


class ShapeError(MacError, ValueError):
    """Array shapes are incompatible for the requested operation."""

    def __init__(self, message, *shapes):
        if shapes:
            message = f"{message}: " + " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(message)
        self.shapes = tuple(tuple(s) for s in shapes)


class DomainError(MacError, ValueError):
    """A value lies outside the domain of an operation."""

    def __init__(self, message, index=None, value=None):
        if index is not None:
            message = f"{message} at index {tuple(int(i) for i in index)} (value {value!r})"
        super().__init__(message)
        self.index = None if index is None else tuple(int(i) for i in index)
        self.value = value


class EmptyEnsembleError(MacError, ValueError):
    """A combination was requested over zero sub-models."""


class ModelFormatError(MacError, ValueError):
    """A serialized model could not be parsed."""


class VersionError(ModelFormatError):
    """A serialized model carries an unsupported format version."""


class DataFormatError(MacError, ValueError):
    """A data file violates its CSV schema."""

    def __init__(self, message, path=None, line=None, column=None):
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column!r}")
        if where:
            message = f"{', '.join(where)}: {message}"
        super().__init__(message)
        self.path = path
        self.line = line
        self.column = column


class AnyConsistencyError(DataFormatError):
    """The "any" label disagrees with the max over the sub-type labels."""

    def __init__(self, message, sample_ids, path=None):
        super().__init__(message, path=path)
        self.sample_ids = list(sample_ids)


class TrainingDivergedError(MacError, RuntimeError):
    """The training loss became non-finite."""
