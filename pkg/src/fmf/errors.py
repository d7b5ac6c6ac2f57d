"""Exception types shared across the toolkit."""


class FmfError(Exception):
    """Base class for all toolkit errors."""


class DimensionMismatchError(FmfError):
    """A feature index fell outside the declared dimension of its group."""

    def __init__(self, group: str, index: int, size: int):
        self.group = group
        self.index = index
        self.size = size
        super().__init__(
            f"{group} feature index {index} out of range for dimension {size}"
        )


class InvalidLabelError(FmfError):
    """Label is not valid for the configured loss (binary losses need 0/1)."""


class DivergenceError(FmfError):
    """A non-finite value appeared during training; learning rate too high."""

    def __init__(self, message: str, *, epoch: int | None = None,
                 ordinal: int | None = None):
        self.epoch = epoch
        self.ordinal = ordinal
        super().__init__(message)

    def __str__(self) -> str:
        where = []
        if self.epoch is not None:
            where.append(f"epoch {self.epoch}")
        if self.ordinal is not None:
            where.append(f"instance {self.ordinal}")
        base = super().__str__()
        return f"{base} ({', '.join(where)})" if where else base


class ParseError(FmfError):
    """Malformed text instance line."""

    def __init__(self, message: str, lineno: int | None = None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


class CorruptBufferError(FmfError):
    """Binary buffer failed validation (magic, version, truncation, ...)."""


class ModelFileError(FmfError):
    """Model file failed validation on load."""


class FeatureError(FmfError):
    """Invalid input to a feature encoder (bad ids, degenerate pairs, ...)."""


class ConfigError(FmfError):
    """Invalid run configuration (unknown key, bad value, missing path)."""
