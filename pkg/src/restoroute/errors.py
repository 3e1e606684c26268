"""Exception hierarchy shared by every module."""


class RestorationError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(RestorationError, ValueError):
    pass


class InvalidFormatError(RestorationError, ValueError):
    """Pixel data of the wrong shape or channel count."""


class ClipIOError(RestorationError, OSError):
    """Base class for clip-on-disk failures."""


class MissingManifestError(ClipIOError):
    pass


class InconsistentFrameSizeError(ClipIOError):
    pass


class CorruptFrameError(ClipIOError):
    pass


class EmptyClipError(ClipIOError):
    pass


class CalibrationCoverageError(RestorationError):
    def __init__(self, gaps):
        self.gaps = list(gaps)
        listed = ", ".join(f"{k}/{s}" for k, s in self.gaps)
        super().__init__(f"calibration set lacks coverage for: {listed}")


class IdentifierUnavailableError(RestorationError):
    """An external service timed out or answered with garbage."""


class InsufficientDataError(RestorationError):
    pass


class DegenerateRaterError(RestorationError):
    def __init__(self, subject):
        self.subject = subject
        super().__init__(f"subject {subject!r} has zero rating variance")


class NothingToPlanError(RestorationError):
    pass


class RouteExhaustedError(RestorationError):
    """Every ordering of the active kinds has been cached as failed."""


class ConfigurationError(RestorationError):
    pass
