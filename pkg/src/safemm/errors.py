"""Exception types raised across the package."""


class InvalidArgument(ValueError):
    pass


class NotFound(KeyError):
    pass


class InvalidStart(ValueError):
    """Planner start configuration is in collision."""


class PlanningFailure(RuntimeError):
    """Planning budget exhausted; ``stats`` carries the tree statistics."""

    def __init__(self, message, stats=None):
        super().__init__(message)
        self.stats = stats or {}


class InsufficientData(ValueError):
    pass


class DegenerateCluster(ValueError):
    pass


class Ungraspable(ValueError):
    pass


class ConfigError(ValueError):
    """Malformed scenario or model file."""
