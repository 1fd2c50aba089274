"""Exception types shared across the package."""


class Flat3DError(Exception):
    """Base class for all package errors."""


class FormatError(Flat3DError):
    """A file does not carry the expected magic, version or dtype."""


class TruncatedError(FormatError):
    """A file ended before its declared payload."""


class OutOfBoundsError(Flat3DError, ValueError):
    """A trajectory sample falls outside the sampled k-space grid."""

    def __init__(self, shot, sample, coord):
        self.shot = shot
        self.sample = sample
        self.coord = coord
        super().__init__(
            f"trajectory sample out of bounds at shot {shot}, sample {sample}: {coord}"
        )


class NumericalError(Flat3DError, FloatingPointError):
    """Non-finite values appeared during optimization."""
