"""Exception hierarchy shared by all solver modules."""


class RGBSDEError(Exception):
    """Base class for every error raised by the package."""

    exit_code = 3


class ConfigInvalid(RGBSDEError):
    exit_code = 2

    def __init__(self, message, field=None):
        self.field = field
        if field:
            message = f"{field}: {message}"
        super().__init__(message)


class InvalidDriver(RGBSDEError, ValueError):
    exit_code = 2


class NonCallableDriver(RGBSDEError):
    pass


class EmptyGrid(RGBSDEError, ValueError):
    pass


class GrowthExceedsIndex(RGBSDEError, ValueError):
    pass


class ObstacleTerminalViolation(RGBSDEError):
    pass


class StartOutsideDomain(RGBSDEError, ValueError):
    pass


class ProjectionDiverged(RGBSDEError):
    pass


class RegressionSingular(RGBSDEError):
    pass


class PicardDiverged(RGBSDEError):
    pass


class PipelineNotCauchy(RGBSDEError):
    pass


class EmptyBundle(RGBSDEError, ValueError):
    pass


class MismatchedGrids(RGBSDEError, ValueError):
    pass


class LcpNotConverged(RGBSDEError):
    pass


class GridTooCoarse(RGBSDEError, ValueError):
    pass


class MismatchedProblem(RGBSDEError, ValueError):
    pass


class AuditFailed(RGBSDEError):
    exit_code = 4
