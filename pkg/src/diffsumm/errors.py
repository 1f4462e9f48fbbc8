"""Exception hierarchy shared across the package."""


class DiffsummError(Exception):
    """Base class for all diffsumm errors."""


class ParameterError(DiffsummError):
    """Invalid construction parameter (bounds, counts, ranges)."""


class StepError(DiffsummError):
    """Diffusion step index outside the valid range."""


class ShapeError(DiffsummError):
    """Mismatched array lengths or tensor shapes."""


class DomainError(DiffsummError):
    """Value outside its required domain, e.g. a score not in [0, 1]."""


class ConfigError(DiffsummError):
    """Invalid or inconsistent configuration."""


class DataError(DiffsummError):
    """Malformed or invariant-violating dataset content."""


class NumericError(DiffsummError):
    """Non-finite value encountered where finite arithmetic is required."""


class CheckpointError(DiffsummError):
    """Unreadable, corrupt, or incompatible checkpoint file."""
