"""Exception types shared across the package."""


class DataFormatError(Exception):
    """A file or record does not satisfy its documented format."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss or activation."""
