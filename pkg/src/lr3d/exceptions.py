class LR3DError(Exception):
    """Base class for library errors."""


class CornerBehindCamera(LR3DError):
    pass


class NonPositiveDepth(LR3DError, ValueError):
    pass


class NonPositiveDistance(LR3DError, ValueError):
    pass


class DimMismatch(LR3DError, ValueError):
    pass


class SharedModeMisuse(LR3DError):
    pass


class EmptyTrainingSet(LR3DError, ValueError):
    pass


class DivergedLoss(LR3DError, FloatingPointError):
    """Training produced a non-finite loss. ``report`` holds progress up to the failure."""

    def __init__(self, msg, report=None):
        super().__init__(msg)
        self.report = report


class OverlappingBuckets(LR3DError, ValueError):
    pass


class ConfigInvalid(LR3DError, ValueError):
    """Invalid configuration; ``field`` names the offending key."""

    def __init__(self, field, msg):
        super().__init__(f"{field}: {msg}")
        self.field = field


class BadFractions(LR3DError, ValueError):
    pass


class MissingFeature(LR3DError, ValueError):
    pass


class DuplicateId(LR3DError, ValueError):
    pass


class SchemaError(LR3DError, ValueError):
    pass
