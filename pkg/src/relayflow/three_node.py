"""Exact optimum of the source, relay, destination network.

The source broadcasts to the destination and relay for ``t1``, then both transmit to the
destination for ``t2 = 1 - t1``. Relaying only helps if the source-relay link beats the direct one;
in that case the best ``t2`` lies in ``[0, t2_max]`` and is found by a scalar search.
"""
from typing import Callable, Final, Tuple
from enum import Enum
import math

from srctools.logger import get_logger
import attrs
import numpy as np

from .capregion import bc_boundary_rate_pair
from .errors import DomainError
from .netmodel import capacity


__all__ = [
    'Strategy', 'ThreeNodeResult',
    't2_max', 'rate_given_t2', 'rate_curve', 'solve_three_node',
    'relay_limited_rate', 'case_ii_rate', 'golden_section_max',
]
LOGGER = get_logger(__name__)

INV_PHI: Final = (math.sqrt(5) - 1) / 2  # 1 / phi
INV_PHI_SQUARE: Final = (3 - math.sqrt(5)) / 2  # 1 / phi^2
GRID_POINTS: Final = 200
DENSE_STEP: Final = 1e-5
SEARCH_TOL: Final = 1e-9
Flows4 = Tuple[float, float, float, float]


class Strategy(Enum):
    """How the source reaches the destination."""
    DIRECT = 'direct'
    RELAYED = 'relayed'


@attrs.frozen
class ThreeNodeResult:
    """The optimum of the three-node program.

    Flows are ``(x1, x2, x3, x4)``: source to destination while broadcasting, source to relay,
    source to destination in the second slot, relay to destination.
    """
    rate: float
    strategy: Strategy
    t2_opt: float
    alpha_bar_opt: float
    flows: Flows4
    # Whether the scalar search over t2 had to run.
    searched: bool = False

    @property
    def t1_opt(self) -> float:
        """Length of the broadcast slot."""
        return 1.0 - self.t2_opt


def golden_section_max(func: Callable[[float], float], a: float, b: float, tol: float = SEARCH_TOL) -> Tuple[float, float]:
    """Golden-section search for the maximum of a unimodal function.

    Returns an interval ``[c, d]`` of width at most ``tol`` containing the maximum.
    """
    a, b = min(a, b), max(a, b)
    h = b - a
    if h <= tol:
        return a, b

    # Required steps to achieve tolerance
    n = int(math.ceil(math.log(tol / h) / math.log(INV_PHI)))

    c = a + INV_PHI_SQUARE * h
    d = a + INV_PHI * h
    yc = func(c)
    yd = func(d)

    for _ in range(n - 1):
        if yc >= yd:
            b = d
            d = c
            yd = yc
            h = INV_PHI * h
            c = a + INV_PHI_SQUARE * h
            yc = func(c)
        else:
            a = c
            c = d
            yc = yd
            h = INV_PHI * h
            d = a + INV_PHI * h
            yd = func(d)

    if yc >= yd:
        return a, d
    else:
        return c, b


def t2_max(z_sd: float, z_sr: float, z_rd: float, snr: float) -> float:
    """The longest second slot for which the direct link stays saturated."""
    c_sr = capacity(z_sr * snr)
    if c_sr <= 0.0:
        raise DomainError(f'Source-relay gain must be positive, not {z_sr!r}!')
    gap = capacity((z_sd + z_rd) * snr) - capacity(z_sd * snr)
    return c_sr / (c_sr + gap)


def relay_limited_rate(z_sd: float, z_sr: float, z_rd: float, snr: float) -> float:
    """The rate at ``t2 = t2_max``, which bounds every schedule with a longer second slot."""
    c_sr = capacity(z_sr * snr)
    c_sum = capacity((z_sd + z_rd) * snr)
    return c_sr * c_sum / (c_sr + c_sum - capacity(z_sd * snr))


def case_ii_rate(z_sd: float, z_sr: float, z_rd: float, snr: float, t2: float) -> float:
    """The best rate when ``t2`` exceeds ``t2_max``, so the relay is starved."""
    if not 0.0 <= t2 <= 1.0:
        raise DomainError(f'Slot length {t2!r} is outside [0, 1]!')
    if t2 < t2_max(z_sd, z_sr, z_rd, snr):
        raise DomainError(f't2 = {t2!r} is below t2_max, the relay is not the bottleneck!')
    return (1.0 - t2) * capacity(z_sr * snr) + t2 * capacity(z_sd * snr)


def rate_given_t2(z_sd: float, z_sr: float, z_rd: float, snr: float, t2: float) -> Tuple[float, float, Flows4]:
    """The best rate for a fixed second-slot length.

    Returns ``(rate, alpha_bar, flows)``, where ``alpha_bar`` is the share of source power
    spent on the relay during the broadcast slot.
    """
    if not z_sd < z_sr:
        raise DomainError(f'Relaying needs Z_SR > Z_SD, got {z_sr!r} <= {z_sd!r}!')
    if t2 < 0.0:
        raise DomainError(f'Slot length {t2!r} is negative!')
    limit = t2_max(z_sd, z_sr, z_rd, snr)
    if t2 > limit + 1e-12:
        raise DomainError(f't2 = {t2!r} exceeds t2_max = {limit!r}!')
    t2 = min(t2, limit)
    t1 = 1.0 - t2
    c_sd = capacity(z_sd * snr)
    c_sum = capacity((z_sd + z_rd) * snr)

    if t1 <= 0.0:
        # Only reachable if t2_max = 1, so the relay link is dead.
        return c_sum, 0.0, (0.0, 0.0, c_sd, 0.0)

    if t2 >= limit:
        alpha_bar = 1.0
    else:
        alpha_bar = min(1.0, math.expm1(t2 / t1 * (c_sum - c_sd)) / (z_sr * snr))
    x1, x2 = bc_boundary_rate_pair(z_sd, z_sr, t1, 1.0 - alpha_bar, snr)
    x3 = max(0.0, min(t2 * c_sd, t2 * c_sum - x2))
    return x1 + x2 + x3, alpha_bar, (x1, x2, x3, x2)


def rate_curve(z_sd: float, z_sr: float, z_rd: float, snr: float, t2: np.ndarray) -> np.ndarray:
    """Vectorised :func:`rate_given_t2`, rates only."""
    t2 = np.asarray(t2, dtype=np.float64)
    limit = t2_max(z_sd, z_sr, z_rd, snr)
    t1 = 1.0 - t2
    c_sd = capacity(z_sd * snr)
    c_sum = capacity((z_sd + z_rd) * snr)
    with np.errstate(divide='ignore', invalid='ignore', over='ignore'):
        ratio = np.where(t1 > 0.0, t2 / np.where(t1 > 0.0, t1, 1.0), 0.0)
        alpha_bar = np.minimum(np.expm1(ratio * (c_sum - c_sd)) / (z_sr * snr), 1.0)
    alpha_bar = np.where(t2 >= limit, 1.0, alpha_bar)
    x2 = t1 * np.log1p(z_sr * alpha_bar * snr)
    x1 = t1 * (c_sd - np.log1p(z_sd * alpha_bar * snr))
    x3 = np.maximum(0.0, np.minimum(t2 * c_sd, t2 * c_sum - x2))
    return x1 + x2 + x3


def _is_unimodal(values: np.ndarray, tol: float) -> bool:
    """Check the samples rise then fall, ignoring wiggles below the tolerance."""
    peak = int(np.argmax(values))
    rising = np.diff(values[:peak + 1])
    falling = np.diff(values[peak:])
    return bool(np.all(rising >= -tol) and np.all(falling <= tol))


def solve_three_node(z_sd: float, z_sr: float, z_rd: float, snr: float) -> ThreeNodeResult:
    """Find the optimal strategy, slot split and power split."""
    if min(z_sd, z_sr, z_rd) < 0.0 or not snr > 0.0:
        raise DomainError(f'Bad three-node parameters {(z_sd, z_sr, z_rd, snr)!r}!')
    direct_rate = capacity(z_sd * snr)
    direct = ThreeNodeResult(direct_rate, Strategy.DIRECT, 0.0, 0.0, (direct_rate, 0.0, 0.0, 0.0))
    if z_sd >= z_sr:
        return direct

    limit = t2_max(z_sd, z_sr, z_rd, snr)
    # Improvements smaller than this are rounding noise.
    tie_tol = 1e-12 * (1.0 + direct_rate)
    grid = np.linspace(0.0, limit, GRID_POINTS)
    values = rate_curve(z_sd, z_sr, z_rd, snr, grid)

    if _is_unimodal(values, tie_tol):
        best = int(np.argmax(values))
        lo = grid[max(best - 1, 0)]
        hi = grid[min(best + 1, len(grid) - 1)]
        a, b = golden_section_max(
            lambda t2: rate_given_t2(z_sd, z_sr, z_rd, snr, t2)[0],
            lo, hi,
        )
        candidates = [float(grid[best]), (a + b) / 2.0]
    else:
        LOGGER.debug(
            'Rate not unimodal in t2 for Z=({}, {}, {}), S={}; using a dense grid.',
            z_sd, z_sr, z_rd, snr,
        )
        dense = np.linspace(0.0, limit, max(GRID_POINTS, int(math.ceil(limit / DENSE_STEP)) + 1))
        candidates = [float(dense[int(np.argmax(rate_curve(z_sd, z_sr, z_rd, snr, dense)))])]

    best_t2 = 0.0
    best_rate = direct_rate
    for t2 in sorted(candidates):
        rate = rate_given_t2(z_sd, z_sr, z_rd, snr, t2)[0]
        if rate > best_rate + tie_tol:
            best_t2, best_rate = t2, rate

    if best_t2 <= 0.0:
        return attrs.evolve(direct, searched=True)
    rate, alpha_bar, flows = rate_given_t2(z_sd, z_sr, z_rd, snr, best_t2)
    return ThreeNodeResult(rate, Strategy.RELAYED, best_t2, alpha_bar, flows, searched=True)
