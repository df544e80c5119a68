"""Exception types shared across the package."""


class IvusNetError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(IvusNetError, ValueError):
    """Tensor or image shapes do not satisfy an operation's contract."""


class ConfigError(IvusNetError, ValueError):
    """Invalid configuration value."""


class FormatError(IvusNetError, ValueError):
    """Malformed file content (PGM, manifest, checkpoint, probability map)."""


class EmptyRegionError(IvusNetError, ValueError):
    """A mask contains no foreground pixels where a region is required."""


class EllipseFitError(IvusNetError, ValueError):
    """Ellipse fitting failed (too few points, degenerate or non-elliptical input)."""
