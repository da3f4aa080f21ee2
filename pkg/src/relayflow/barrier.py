"""Logarithmic-barrier interior-point method for the small convex programs used here.

Programs minimise a linear objective subject to linear equalities, linear inequalities, strict
positivity of some variables, and perspective-exponential constraints of the form
``sum_k w_k * t * exp(c_k / t) + l . z <= 0`` where ``c_k`` are running sums of variables. The
Gaussian broadcast power constraint is exactly of that form.
"""
from typing import Callable, Final, List, Optional, Sequence, Tuple
from enum import Enum
import math
import warnings

from srctools.logger import get_logger
import attrs
import numpy as np
import scipy.linalg

from .errors import SolverError


__all__ = ['PerspectiveExp', 'BarrierProgram', 'BarrierResult', 'Status', 'mu_schedule']
LOGGER = get_logger(__name__)

# Backtracking line search parameters, 0 < a < 0.5, 0 < b < 1.
SLOPE_RATIO: Final = 0.01
STEP_SHRINK: Final = 0.5
BOUNDARY_FRACTION: Final = 0.99
MIN_STEP: Final = 1e-16
CENTERING_TOL: Final = 1e-9
MAX_CENTERING_STEPS: Final = 80
MAX_TOTAL_STEPS: Final = 2000
# Added to the Hessian diagonal, relative to its infinity norm.
REGULARIZATION: Final = 1e-12
# Relative pivot size below which an equality row counts as dependent.
RANK_TOL: Final = 1e-10


def mu_schedule(start: float = 10.0, stop: float = 1e-8) -> List[float]:
    """Barrier weights, decreasing one decade at a time."""
    first = round(math.log10(start))
    last = round(math.log10(stop))
    return [10.0 ** exp for exp in range(first, last - 1, -1)]


class Status(Enum):
    """Why the solver stopped."""
    CONVERGED = 'converged'
    STOPPED = 'stopped'  # The stop callback asked for it.


@attrs.frozen(eq=False)
class PerspectiveExp:
    """A convex constraint ``sum_k w_k t exp(c_k / t) + l . z + const <= 0``.

    ``c_k`` is the sum of ``z[order[:k + 1]]``, and ``t = z[t_index]`` must stay positive.
    """
    t_index: int
    order: np.ndarray
    weights: np.ndarray
    lin_index: np.ndarray
    lin_coef: np.ndarray
    const: float = 0.0

    def value(self, z: np.ndarray) -> float:
        """Evaluate the constraint function, ``inf`` outside its domain."""
        t = z[self.t_index]
        if t <= 0.0:
            return math.inf
        with np.errstate(over='ignore'):
            expo = self.weights * t * np.exp(np.cumsum(z[self.order]) / t)
        return float(expo.sum() + self.lin_coef @ z[self.lin_index] + self.const)

    def derivatives(self, z: np.ndarray) -> Tuple[float, np.ndarray, np.ndarray, np.ndarray]:
        """Return the value, the local variable indices, and the local gradient and Hessian."""
        t = z[self.t_index]
        u = np.cumsum(z[self.order]) / t
        e = self.weights * np.exp(u)
        size = len(self.order)
        local = np.append(self.order, self.t_index)

        grad = np.empty(size + 1)
        # d/dz_j of sum_k w_k t exp(c_k/t) picks up every k >= j.
        grad[:size] = np.cumsum(e[::-1])[::-1]
        grad[size] = float(np.sum(e * (1.0 - u)))

        vecs = np.tril(np.ones((size, size + 1)))
        vecs[:, size] = -u
        hess = vecs.T @ (vecs * (e / t)[:, None])

        value = float(t * e.sum() + self.lin_coef @ z[self.lin_index] + self.const)
        return value, local, grad, hess


@attrs.frozen(eq=False)
class BarrierResult:
    """The final iterate and some diagnostics."""
    z: np.ndarray
    status: Status
    iterations: int
    mu: float
    gap: float
    kkt_residual: float
    lin_multipliers: np.ndarray
    convex_multipliers: np.ndarray
    ill_conditioned: int = 0


@attrs.define(eq=False)
class BarrierProgram:
    """``min c.z`` subject to ``A z = b``, ``G z <= h``, ``z[positive] > 0`` and convex terms."""
    objective: np.ndarray
    eq_matrix: np.ndarray
    eq_rhs: np.ndarray
    lin_matrix: np.ndarray
    lin_rhs: np.ndarray
    convex: Sequence[PerspectiveExp]
    positive: np.ndarray

    def __attrs_post_init__(self) -> None:
        if len(self.eq_rhs) < 2:
            return
        # Keep a linearly independent subset of the equality rows.
        _, r, pivots = scipy.linalg.qr(self.eq_matrix.T, mode='economic', pivoting=True)
        diag = np.abs(np.diag(r))
        rank = int(np.count_nonzero(diag > RANK_TOL * diag[0])) if len(diag) and diag[0] > 0.0 else 0
        if rank < len(self.eq_rhs):
            keep = np.sort(pivots[:rank])
            LOGGER.debug('Dropping {} dependent equality rows', len(self.eq_rhs) - rank)
            self.eq_matrix = self.eq_matrix[keep]
            self.eq_rhs = self.eq_rhs[keep]

    @property
    def n_vars(self) -> int:
        """Number of variables."""
        return len(self.objective)

    @property
    def n_ineq(self) -> int:
        """Number of barrier terms, which sets the duality gap."""
        return len(self.lin_rhs) + len(self.convex) + len(self.positive)

    def slacks(self, z: np.ndarray) -> Optional[Tuple[np.ndarray, np.ndarray]]:
        """Linear and convex constraint slacks, or None if ``z`` is outside the domain."""
        if np.any(z[self.positive] <= 0.0) or not np.all(np.isfinite(z)):
            return None
        lin = self.lin_rhs - self.lin_matrix @ z
        if np.any(lin <= 0.0):
            return None
        conv = np.array([-term.value(z) for term in self.convex])
        if len(conv) and (np.any(conv <= 0.0) or not np.all(np.isfinite(conv))):
            return None
        return lin, conv

    def barrier_value(self, z: np.ndarray, tau: float) -> float:
        """The centering objective ``tau * c.z - sum(log(slack))``, ``inf`` outside the domain."""
        slacks = self.slacks(z)
        if slacks is None:
            return math.inf
        lin, conv = slacks
        return float(
            tau * (self.objective @ z)
            - np.log(lin).sum() - np.log(conv).sum()
            - np.log(z[self.positive]).sum()
        )

    def _newton_system(self, z: np.ndarray, tau: float) -> Tuple[np.ndarray, np.ndarray]:
        n = self.n_vars
        grad = tau * self.objective.copy()
        hess = np.zeros((n, n))

        lin = self.lin_rhs - self.lin_matrix @ z
        inv = 1.0 / lin
        grad += self.lin_matrix.T @ inv
        hess += self.lin_matrix.T @ (self.lin_matrix * (inv ** 2)[:, None])

        pos = z[self.positive]
        grad[self.positive] -= 1.0 / pos
        hess[self.positive, self.positive] += 1.0 / pos ** 2

        for term in self.convex:
            value, local, t_grad, t_hess = term.derivatives(z)
            # The linear part only enters the gradient.
            full = np.zeros(n)
            full[local] += t_grad
            full[term.lin_index] += term.lin_coef
            slack = -value
            grad += full / slack
            nz = np.flatnonzero(full)
            hess[np.ix_(nz, nz)] += np.outer(full[nz], full[nz]) / slack ** 2
            hess[np.ix_(local, local)] += t_hess / slack
        return grad, hess

    def _direction(self, z: np.ndarray, tau: float) -> Tuple[np.ndarray, np.ndarray, float, bool]:
        """Solve the KKT system for a Newton step. Also reports whether LAPACK found it ill-conditioned."""
        grad, hess = self._newton_system(z, tau)
        n = self.n_vars
        n_eq = len(self.eq_rhs)
        hess[np.diag_indices(n)] += REGULARIZATION * max(1.0, scipy.linalg.norm(hess, np.inf))
        kkt = np.zeros((n + n_eq, n + n_eq))
        kkt[:n, :n] = hess
        kkt[:n, n:] = self.eq_matrix.T
        kkt[n:, :n] = self.eq_matrix
        rhs = np.concatenate([-grad, self.eq_rhs - self.eq_matrix @ z])
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter('always', scipy.linalg.LinAlgWarning)
            try:
                sol = scipy.linalg.solve(kkt, rhs, assume_a='sym')
            except (scipy.linalg.LinAlgError, ValueError):
                sol = scipy.linalg.lstsq(kkt, rhs)[0]
        ill_conditioned = False
        for warning in caught:
            if issubclass(warning.category, scipy.linalg.LinAlgWarning):
                ill_conditioned = True
            else:
                warnings.warn_explicit(warning.message, warning.category, warning.filename, warning.lineno)
        if not np.all(np.isfinite(sol)):
            raise SolverError('Newton step is not finite!', z)
        step = sol[:n]
        return step, grad, float(-grad @ step), ill_conditioned

    def _max_step(self, z: np.ndarray, step: np.ndarray) -> float:
        """Largest step keeping the linear constraints and positive variables strictly feasible."""
        limit = 1.0
        lin = self.lin_rhs - self.lin_matrix @ z
        rate = self.lin_matrix @ step
        growing = rate > 0.0
        if np.any(growing):
            limit = min(limit, BOUNDARY_FRACTION * float(np.min(lin[growing] / rate[growing])))
        pos = z[self.positive]
        dpos = step[self.positive]
        falling = dpos < 0.0
        if np.any(falling):
            limit = min(limit, BOUNDARY_FRACTION * float(np.min(-pos[falling] / dpos[falling])))
        return limit

    def minimize(
        self,
        z0: np.ndarray,
        mu_start: float = 10.0,
        mu_stop: float = 1e-8,
        stop: Optional[Callable[[np.ndarray, float], bool]] = None,
    ) -> BarrierResult:
        """Follow the central path from a strictly feasible starting point.

        ``stop(z, gap)`` is consulted after every Newton step with an infinite gap, and at the end
        of each centering phase with the duality gap bound. Returning True ends the solve early.
        """
        z = np.array(z0, dtype=np.float64)
        if self.slacks(z) is None:
            raise SolverError('Starting point is not strictly feasible!', z)
        total = 0
        ill_conditioned = 0
        mu = mu_start
        decrement = math.inf
        status = Status.CONVERGED
        for mu in mu_schedule(mu_start, mu_stop):
            tau = 1.0 / mu
            for _ in range(MAX_CENTERING_STEPS):
                total += 1
                if total > MAX_TOTAL_STEPS:
                    raise SolverError(
                        f'No convergence after {MAX_TOTAL_STEPS} Newton steps!', z,
                        {'mu': mu, 'decrement': decrement},
                    )
                step, grad, decrement, singular = self._direction(z, tau)
                ill_conditioned += singular
                if decrement / 2.0 <= CENTERING_TOL:
                    break
                size = self._max_step(z, step)
                current = self.barrier_value(z, tau)
                slope = float(grad @ step)
                while size > MIN_STEP:
                    trial = z + size * step
                    if self.barrier_value(trial, tau) <= current + SLOPE_RATIO * size * slope:
                        break
                    size *= STEP_SHRINK
                else:
                    # No progress possible, treat as centred.
                    LOGGER.debug('Line search stalled at mu={}, decrement={}', mu, decrement)
                    break
                z = trial
                if stop is not None and stop(z, math.inf):
                    status = Status.STOPPED
                    break
            if status is Status.STOPPED:
                break
            if stop is not None and stop(z, self.n_ineq * mu):
                status = Status.STOPPED
                break

        if ill_conditioned:
            LOGGER.debug('{} of {} Newton systems were ill-conditioned', ill_conditioned, total)
        tau = 1.0 / mu
        slacks = self.slacks(z)
        if slacks is None:
            raise SolverError('Final iterate left the domain!', z)
        lin, conv = slacks
        return BarrierResult(
            z=z,
            status=status,
            iterations=total,
            mu=mu,
            gap=self.n_ineq * mu,
            kkt_residual=math.sqrt(max(decrement, 0.0)) * mu,
            lin_multipliers=1.0 / (tau * lin),
            convex_multipliers=1.0 / (tau * conv) if len(conv) else np.zeros(0),
            ill_conditioned=ill_conditioned,
        )
