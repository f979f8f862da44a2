"""Exception types shared across the engine."""


class SpectexError(Exception):
    """Base class for all engine errors."""


class ConfigurationError(SpectexError):
    """Mismatched shapes, invalid options, or inconsistent inputs."""


class SpectrumSizeError(SpectexError):
    """Image dimensions do not match the spectrum target bin-for-bin."""


class OptimizerError(SpectexError):
    """The objective callback returned a non-finite loss or gradient."""


class WeightFileError(SpectexError):
    """Weight container unreadable or truncated mid-record."""


class WeightFormatError(SpectexError):
    """Weight container has a bad magic, version, or layout violation."""


class WeightChecksumError(SpectexError):
    """Weight container payload does not match its CRC-32."""


class WeightValidationError(SpectexError):
    """Loaded weights violate a structural or architectural expectation."""
