"""Exception types raised across the package."""


class HipScreenError(Exception):
    """Base class for all package errors."""


class ShapeError(HipScreenError, ValueError):
    pass


class ShapeMismatch(ShapeError):
    """Two arrays that must share a shape do not."""


class NoPixelsOfClass(HipScreenError):
    def __init__(self, class_id, message=None):
        self.class_id = class_id
        super().__init__(message or f"mask contains no pixels of class {class_id}")


class MissingFile(HipScreenError, FileNotFoundError):
    pass


class BadClassLabel(HipScreenError, ValueError):
    pass


class EmptySplit(HipScreenError, ValueError):
    pass


class EdgeTooShort(HipScreenError, ValueError):
    pass


class MeasurementError(HipScreenError, ValueError):
    pass


class EmptyMask(HipScreenError, ValueError):
    pass


class EmptyInput(HipScreenError, ValueError):
    pass


class LengthMismatch(HipScreenError, ValueError):
    pass


class InconsistentRaterCount(HipScreenError, ValueError):
    pass


class SpecOutOfFrame(HipScreenError, ValueError):
    pass


class IdMismatch(HipScreenError, ValueError):
    pass


class ConfigError(HipScreenError, ValueError):
    pass
