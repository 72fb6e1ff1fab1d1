"""Exception types shared across the toolkit."""


class ShapeError(ValueError):
    """Array dimensions do not line up."""


class ParseError(ValueError):
    """A data file could not be parsed.

    ``lineno`` is 1-based and may be ``None`` for binary formats.
    """

    def __init__(self, message, path=None, lineno=None):
        where = ""
        if path is not None:
            where = f"{path}"
            if lineno is not None:
                where += f":{lineno}"
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.lineno = lineno


class ValidationError(ValueError):
    """Input parsed fine but violates a data invariant."""


class DomainError(ValueError):
    """A value lies outside the domain of the operation."""


class NumericError(FloatingPointError):
    """A NaN or infinity appeared where finite values are required."""


class TapeStateError(RuntimeError):
    """The gradient tape was used out of order."""
