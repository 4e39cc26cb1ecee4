"""Exception hierarchy shared by every demgrade module."""


class DemgradeError(Exception):
    """Base class for all errors raised by this package."""

    phase = None

    def tagged(self, phase):
        self.phase = phase
        return self


class ArgumentError(DemgradeError, ValueError):
    pass


class PathError(DemgradeError, FileNotFoundError):
    pass


class DecodeError(DemgradeError):
    def __init__(self, message, path=None):
        super().__init__(message if path is None else f"{path}: {message}")
        self.path = path


class EmptyDatasetError(DemgradeError):
    pass


class StratifyError(DemgradeError):
    def __init__(self, message, class_name=None):
        super().__init__(message)
        self.class_name = class_name


class MarkerError(DemgradeError):
    pass


class ShapeError(DemgradeError, ValueError):
    pass


class VersionError(DemgradeError):
    def __init__(self, found, supported):
        super().__init__(
            f"model format version {found} is not supported (this build reads version {supported})"
        )
        self.found = found
        self.supported = supported


class CorruptModelError(DemgradeError):
    pass
