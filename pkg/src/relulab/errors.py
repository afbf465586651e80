"""Exception types raised across the package."""


class LabError(Exception):
    """Base class for every error raised by relulab."""


class ShapeError(LabError, ValueError):
    pass


class NonFiniteError(LabError, ValueError):
    pass


class DegenerateHalfspaceError(LabError, ValueError):
    """An input lies exactly on the separating hyperplane."""


class WindowError(LabError, ValueError):
    """Requested time lies outside an approximation's validity window."""


class SingularSpecError(LabError, ValueError):
    pass


class RankDeficiencyError(LabError, ValueError):
    pass


class InfeasibleError(LabError, ValueError):
    """Hard-margin problem has no solution (data not linearly separable)."""


class PreconditionError(LabError, ValueError):
    pass


class ConfigError(LabError, ValueError):
    pass


class MissingArtifactError(LabError, FileNotFoundError):
    pass
