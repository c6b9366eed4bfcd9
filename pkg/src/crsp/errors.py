"""Exception types shared across the package."""


class RspError(Exception):
    """Base class for all errors raised by crsp."""


class GraphParseError(RspError):
    """Malformed graph or MDP input; ``context`` names the offending field."""

    def __init__(self, message, context=None):
        self.context = context
        if context:
            message = f"{context}: {message}"
        super().__init__(message)


class DuplicateEdge(GraphParseError):
    pass


class DanglingNode(RspError):
    """A non-goal node has no outgoing edge."""

    def __init__(self, node):
        self.node = node
        super().__init__(f"node {node} has no successor and is not the goal")


class ValidationError(RspError):
    """Raised by loaders when a validation report is non-empty."""

    def __init__(self, report):
        self.report = report
        super().__init__("; ".join(str(issue) for issue in report.issues))


class NotAbsorbing(RspError):
    """The goal cannot be reached from some node under the current weights."""


class UnderflowAtTheta(RspError):
    """exp(-theta * c) underflows on an existing edge; use the log-domain solver."""

    def __init__(self, theta):
        self.theta = theta
        super().__init__(
            f"exp(-theta*c) underflows at theta={theta:g}; "
            "use the fixed-point solver instead"
        )


class MaxIterExceeded(RspError):
    """Iteration cap hit before convergence."""

    def __init__(self, iterations, residual, trace=None):
        self.iterations = iterations
        self.residual = residual
        self.trace = trace
        super().__init__(
            f"no convergence after {iterations} iterations (residual {residual:.3e})"
        )


class ZeroGamma(RspError):
    pass
