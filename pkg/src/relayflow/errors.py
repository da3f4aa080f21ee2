"""Exceptions raised by relayflow."""
from typing import Any, Dict, Optional

import numpy as np


__all__ = [
    'RelayFlowError', 'ConfigError', 'DomainError', 'InfeasibleDemand',
    'ContractViolation', 'SolverError', 'EstimationError', 'FailureBudgetExceeded',
]


class RelayFlowError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(RelayFlowError, ValueError):
    """The experiment or network description is invalid."""


class DomainError(RelayFlowError, ValueError):
    """A mathematical function was called outside its domain."""


class InfeasibleDemand(RelayFlowError):
    """A demand can never be met, for example positive flow in a zero-length slot.

    This is a verdict about the demand, not a numeric failure.
    """


class ContractViolation(RelayFlowError):
    """A precondition that callers must guarantee did not hold."""


class SolverError(RelayFlowError):
    """The interior-point solver failed to converge.

    The last iterate is kept, so the failure can be inspected.
    """
    def __init__(
        self,
        message: str,
        last_iterate: Optional[np.ndarray] = None,
        diagnostics: Optional[Dict[str, Any]] = None,
    ) -> None:
        super().__init__(message)
        self.last_iterate = last_iterate
        self.diagnostics = diagnostics if diagnostics is not None else {}


class EstimationError(RelayFlowError, ValueError):
    """Not enough data to produce an estimate."""


class FailureBudgetExceeded(RelayFlowError):
    """Too many Monte Carlo trials were flagged by solver failures."""
    def __init__(self, flagged: int, evaluated: int, budget: float) -> None:
        super().__init__(
            f'{flagged} of {evaluated} evaluations failed, '
            f'over the budget of {budget:.3%}!'
        )
        self.flagged = flagged
        self.evaluated = evaluated
        self.budget = budget
