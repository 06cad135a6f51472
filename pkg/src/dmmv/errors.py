"""Exception types shared across the package."""


class DmmvError(Exception):
    """Base class for all library errors."""


class ShapeMismatch(DmmvError):
    """Operands have incompatible shapes; message reports both."""

    def __init__(self, op, shape_a, shape_b):
        super().__init__(f"{op}: incompatible shapes {tuple(shape_a)} vs {tuple(shape_b)}")
        self.shapes = (tuple(shape_a), tuple(shape_b))


class NotScalarLoss(DmmvError):
    pass


class NoDominantPeriod(DmmvError):
    pass


class PeriodTooLarge(DmmvError):
    pass


class GeometryMismatch(DmmvError):
    pass


class AllMasked(DmmvError):
    pass


class ParseError(DmmvError):
    """CSV parsing failure; message names the offending row/column."""


class NonNumericCell(ParseError):
    pass


class EmptySplit(DmmvError):
    pass


class ConfigError(DmmvError):
    """Invalid run configuration; maps to CLI exit code 2."""


class ConfigMismatch(ConfigError):
    """Checkpoint does not match the requested model assembly."""


class DivergedLoss(DmmvError):
    pass
