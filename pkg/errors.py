"""Exception hierarchy shared by the estimators, interval methods, simulator and CLI."""


class ClusterRRError(Exception):
    """Base class for every error raised by this package."""

    code = "ERROR"


class ValidationError(ClusterRRError):
    """A domain type was built from values that break its invariants."""

    code = "VALIDATION_ERROR"


class ParseError(ClusterRRError):
    """A study file could not be parsed."""

    code = "PARSE_ERROR"

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ConfigError(ClusterRRError):
    code = "CONFIG_ERROR"


class DegenerateDesign(ClusterRRError):
    """The ANOVA intraclass correlation is undefined for this group."""

    code = "DEGENERATE_DESIGN"


class ZeroVariance(ClusterRRError):
    """Variance estimate is zero, so the effective sample size is unbounded."""

    code = "ZERO_VARIANCE"


class BoundaryProportion(ClusterRRError):
    """A proportion sits at 0 or 1 where the formula needs it strictly inside."""

    code = "BOUNDARY_PROPORTION"


class DegenerateGroup(ClusterRRError):
    """A group is all-success (or all-failure) where the method cannot cope."""

    code = "DEGENERATE_GROUP"


class RootNotBracketed(ClusterRRError):
    code = "ROOT_NOT_BRACKETED"


class ScenarioStalled(ClusterRRError):
    """Too many replications were rejected before reaching the target."""

    code = "SCENARIO_STALLED"

    def __init__(self, message, good=0, rejected=0):
        self.good = good
        self.rejected = rejected
        super().__init__(message)
