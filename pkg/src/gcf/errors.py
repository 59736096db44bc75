"""Exception hierarchy shared by all gcf modules."""


class GCFError(Exception):
    """Base class for every error raised by gcf."""


class UnsupportedDimension(GCFError):
    pass


class ResolutionTooSmall(GCFError):
    pass


class GridMismatch(GCFError):
    pass


class NotConvex(GCFError):
    """Second fundamental form is not positive definite at some node."""

    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


class NotConvexAfterStep(NotConvex):
    """A time step produced a non-convex state; retry with a smaller dt."""


class ScalarSolveFailed(GCFError):
    pass


class OrderingViolated(GCFError):
    pass


class NotPositive(GCFError):
    pass


class InvalidProfile(GCFError):
    pass


class NegativeTime(GCFError):
    pass


class InvalidParameter(GCFError):
    pass


class ObstacleInvalid(GCFError):
    pass


class DegenerateObstacle(GCFError):
    pass


class NotGraphable(GCFError):
    pass


class InsufficientSnapshots(GCFError):
    pass


class EmptySet(GCFError):
    pass


class OutOfPatch(GCFError):
    pass


class DegenerateProfile(GCFError):
    pass


class NotGraphLike(GCFError):
    pass


class ConfigError(GCFError):
    """Raised for malformed or invalid scenario configurations."""


class ParseError(ConfigError):
    def __init__(self, message, line=None, field=None):
        super().__init__(message)
        self.line = line
        self.field = field


class ValidationError(ConfigError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))
