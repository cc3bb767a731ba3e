"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Matrix or vector shapes are inconsistent."""


class SolverError(RuntimeError):
    """An iterative solver did not converge or produced an unusable result."""


class NumericalError(ArithmeticError):
    """A factorization failed, e.g. a non positive definite innovation covariance."""


class ContractError(ValueError):
    """A caller violated a documented precondition."""


class ConfigurationError(ValueError):
    """A scenario or model configuration is invalid."""


class InvariantViolation(RuntimeError):
    """Internal bookkeeping reached an inconsistent state."""


class TriggerCapExceeded(RuntimeError):
    """No self-trigger horizon up to the cap satisfied the threshold."""

    def __init__(self, m_cap: int):
        super().__init__(f"no horizon M <= {m_cap} reaches the communication cost")
        self.m_cap = m_cap
