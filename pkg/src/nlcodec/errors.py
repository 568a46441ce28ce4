"""Exception hierarchy. Every error raised by this package derives from CodecError."""


class CodecError(Exception):
    pass


class InvariantError(CodecError):
    """Shape or dtype violates an operation's structural contract."""


class ContractError(CodecError):
    """A caller-side precondition was violated."""


class ConfigError(CodecError):
    """Invalid configuration value."""


class DomainError(CodecError):
    """Numeric input outside the mathematical domain (e.g. log of <= 0)."""


class FormatError(CodecError):
    """A file or stream does not match its declared format."""


class BadMagicError(FormatError):
    pass


class BadVersionError(FormatError):
    pass


class BadChecksumError(FormatError):
    pass


class TruncatedStreamError(FormatError):
    pass


class ModelMismatchError(CodecError):
    """Bitstream was produced with a different model checkpoint."""


class DecodeError(CodecError):
    """Range decoder failure (corrupt or truncated input)."""


class TrainingDivergedError(CodecError):
    """Loss became non-finite during training."""
