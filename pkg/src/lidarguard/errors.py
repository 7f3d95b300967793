"""Exception hierarchy. Every error raised on bad input derives from
:class:`LidarGuardError` so callers (and the CLI) can map it to an exit code."""


class LidarGuardError(Exception):
    """Base class for structured, expected failures."""

    kind = "error"


class DegeneratePointError(LidarGuardError, ValueError):
    kind = "degenerate-point"


class OutOfFovError(LidarGuardError, ValueError):
    kind = "out-of-fov"


class InvalidRayError(LidarGuardError, IndexError):
    kind = "invalid-ray"


class MalformedFileError(LidarGuardError, ValueError):
    kind = "malformed-file"

    def __init__(self, message, *, offset=None, line=None):
        super().__init__(message)
        self.offset = offset
        self.line = line


class CalibrationError(LidarGuardError, ValueError):
    kind = "calibration"


class EmptyFrustumError(LidarGuardError, ValueError):
    kind = "empty-frustum"


class EmptyEvidenceError(LidarGuardError, ValueError):
    kind = "empty-evidence"


class DegenerateBoxError(LidarGuardError, ValueError):
    kind = "degenerate-box"


class EmptyTraceError(LidarGuardError, ValueError):
    kind = "empty-trace"


class PlacementError(LidarGuardError, ValueError):
    kind = "placement"


class CapabilityViolationError(LidarGuardError, ValueError):
    kind = "capability-violation"


class NonSeparableError(LidarGuardError, ValueError):
    kind = "non-separable"

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class MetricError(LidarGuardError, ValueError):
    kind = "metric"


class ConfigError(LidarGuardError, ValueError):
    kind = "config"
