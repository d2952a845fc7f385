class NashVIError(Exception):
    """Base class for all nashvi errors."""


class GameConfigError(NashVIError):
    def __init__(self, path, issues):
        self.path = path
        self.issues = list(issues)
        detail = "\n  ".join(self.issues)
        super().__init__(f"Invalid game file {path}:\n  {detail}")


class RunConfigError(NashVIError):
    """Bad run settings (unknown keys, missing L, bad environment)."""


class PolicyDomainError(NashVIError):
    """Parameters outside the admissible set, or of the wrong shape."""


class ZeroProbabilityError(PolicyDomainError, ZeroDivisionError):
    def __init__(self, agent, state, action):
        self.agent = agent
        self.state = state
        self.action = action
        super().__init__(
            f"Action {action} of agent {agent} has zero probability in state {state}."
        )


class SolverConfigError(NashVIError):
    def __init__(self, issues):
        self.issues = list(issues)
        super().__init__("; ".join(self.issues))


class EstimationError(NashVIError):
    """Monte-Carlo estimation hit an impossible trajectory."""


class NumericError(NashVIError):
    """A linear solve or reduction produced a non-finite result."""


class DomainError(ValueError):
    """Formula helper called outside its domain."""
