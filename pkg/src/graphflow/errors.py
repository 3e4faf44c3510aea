"""Exception types shared across the package."""


class GraphflowError(Exception):
    """Base class for all package-specific errors."""


class ChartError(GraphflowError, ValueError):
    """Bad chart specification, point outside the chart, or a metric that
    fails positive definiteness."""


class GridError(GraphflowError, ValueError):
    """Domain construction or stencil failure (empty region, spacing not
    dividing the box, stencil touching exterior nodes)."""


class FunctionalError(GraphflowError, ValueError):
    """Invalid functional input: missing boundary data, negative epsilon,
    window out of range, truncation too small, containment violated."""


class FlowDiverged(GraphflowError, RuntimeError):
    """A non-finite value appeared during stepping."""

    def __init__(self, message, step=None, node=None):
        super().__init__(message)
        self.step = step
        self.node = node


class EstimateViolation(GraphflowError, RuntimeError):
    """A monitored a-priori bound failed while assert_estimates was on."""


class BarrierError(GraphflowError, ValueError):
    """Barrier construction failure (degenerate boundary fit, nonpositive
    psi, inadmissible parameters outside the inadmissible-report path)."""


class ConvergenceError(GraphflowError, RuntimeError):
    """A flow leg failed to reach quasi-steady state within its horizon."""


class ConfigError(GraphflowError, ValueError):
    """Invalid experiment configuration."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))
