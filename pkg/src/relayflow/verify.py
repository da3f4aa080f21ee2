"""Oracle and property checks, runnable from the command line.

Each check draws its own random instances from a fixed seed, and returns a list of problems. The
quick sizes keep ``relayflow verify`` under a minute; ``--full`` runs the acceptance sizes.
"""
from typing import Callable, Dict, Iterable, List, Optional, Protocol, Final
import itertools
import math

from srctools.logger import get_logger
from scipy import integrate, special
import attrs
import numpy as np
import trio

from . import bounds, fo_solver, protocols, simkit
from .capregion import BcDemand, bc_boundary_rate_pair, bc_min_snr, superposition_snr, validate_allocation
from .errors import ConfigError
from .netmodel import NetworkInstance, RandomSource, draw_network, uniform_means
from .three_node import rate_curve, relay_limited_rate, solve_three_node, t2_max


__all__ = ['VERIFY_SEED', 'CHECKS', 'RegisteredCheck', 'check', 'run_checks', 'grid_three_node']
LOGGER = get_logger(__name__)

VERIFY_SEED: Final = 2024
SNR_CHOICES: Final = (1.0, 10.0, 100.0)
DOMINANCE_TOL: Final = 1e-5
# Wide enough that a fixed seed does not fail nine comparisons by chance.
MC_Z: Final = 3.290526731491926
GRID_ZOOMS: Final = 4


class CheckFunc(Protocol):
    def __call__(self, size: int, seed: int) -> List[str]: ...


@attrs.frozen
class RegisteredCheck:
    """A check and how many instances it runs."""
    func: CheckFunc
    name: str
    quick: int
    full: int


CHECKS: Dict[str, RegisteredCheck] = {}


def check(name: str, *, quick: int, full: int) -> Callable[[CheckFunc], CheckFunc]:
    """Add a check to the registry."""
    def deco(func: CheckFunc) -> CheckFunc:
        """Stores the check."""
        CHECKS[name.casefold()] = RegisteredCheck(func, name, quick, full)
        return func
    return deco


def _draw(n_nodes: int, seed: int, index: int, snr: Optional[float] = None) -> NetworkInstance:
    if snr is None:
        snr = SNR_CHOICES[index % len(SNR_CHOICES)]
    return draw_network(uniform_means(n_nodes), snr, RandomSource(seed, index))


def _grid_rate(z_sd: float, z_sr: float, z_rd: float, snr: float, t2: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    """Brute-force three-node rate over slot splits and power splits."""
    t1 = 1.0 - t2
    direct, relay = np.vectorize(
        lambda t, a: bc_boundary_rate_pair(z_sd, z_sr, t, a, snr),
    )(t1, alpha)
    forwarded = np.minimum(relay, t2 * math.log1p(z_rd * snr))
    second = np.maximum(0.0, np.minimum(
        t2 * math.log1p(z_sd * snr),
        t2 * math.log1p((z_sd + z_rd) * snr) - forwarded,
    ))
    return direct + forwarded + second


def grid_three_node(z_sd: float, z_sr: float, z_rd: float, snr: float, points: int = 61) -> float:
    """Maximise the three-node program by repeatedly zooming a 2-D grid onto the best cell."""
    t2_lo, t2_hi, a_lo, a_hi = 0.0, 1.0, 0.0, 1.0
    best = 0.0
    for _ in range(GRID_ZOOMS):
        t2, alpha = np.meshgrid(np.linspace(t2_lo, t2_hi, points), np.linspace(a_lo, a_hi, points))
        rates = _grid_rate(z_sd, z_sr, z_rd, snr, t2, alpha)
        ind = np.unravel_index(int(np.argmax(rates)), rates.shape)
        best = max(best, float(rates[ind]))
        t2_step = 2.0 * (t2_hi - t2_lo) / (points - 1)
        a_step = 2.0 * (a_hi - a_lo) / (points - 1)
        t2_lo, t2_hi = max(0.0, t2[ind] - t2_step), min(1.0, t2[ind] + t2_step)
        a_lo, a_hi = max(0.0, alpha[ind] - a_step), min(1.0, alpha[ind] + a_step)
    return best


@check('three-node-fo', quick=15, full=1000)
def check_three_node_fo(size: int, seed: int) -> List[str]:
    """The flow program on three nodes reproduces the closed-form optimum."""
    problems = []
    for ind in range(size):
        network = _draw(3, seed, ind)
        expected = solve_three_node(*network.relay_triple(1), network.snr).rate
        got = fo_solver.solve_fo(fo_solver.FoProblem(network)).rate
        if abs(got - expected) > 1e-3:
            problems.append(f'Draw {ind} at S={network.snr}: FO {got}, three-node {expected}')
    return problems


@check('three-node-grid', quick=10, full=100)
def check_three_node_grid(size: int, seed: int) -> List[str]:
    """The three-node optimum matches a brute-force grid over (t2, alpha)."""
    problems = []
    for ind in range(size):
        network = _draw(3, seed, ind)
        triple = network.relay_triple(1)
        expected = grid_three_node(*triple, network.snr)
        got = solve_three_node(*triple, network.snr).rate
        if abs(got - expected) > 1e-3:
            problems.append(f'Draw {ind} {triple} at S={network.snr}: solver {got}, grid {expected}')
    return problems


@check('three-node-unimodal', quick=200, full=10_000)
def check_three_node_unimodal(size: int, seed: int) -> List[str]:
    """No point on a dense scan of t2 beats the solver's optimum."""
    problems = []
    for ind in range(size):
        network = _draw(3, seed, ind)
        z_sd, z_sr, z_rd = network.relay_triple(1)
        result = solve_three_node(z_sd, z_sr, z_rd, network.snr)
        if z_sd >= z_sr:
            continue
        limit = t2_max(z_sd, z_sr, z_rd, network.snr)
        scan = float(np.max(rate_curve(z_sd, z_sr, z_rd, network.snr, np.linspace(0.0, limit, 2001))))
        tol = 1e-9 * (1.0 + scan)
        if scan > result.rate + tol:
            problems.append(f'Draw {ind}: scan found {scan}, solver {result.rate}')
        if relay_limited_rate(z_sd, z_sr, z_rd, network.snr) > result.rate + tol:
            problems.append(f'Draw {ind}: the t2_max schedule beats the solver')
    return problems


@check('cut-reduction', quick=4, full=100)
def check_cut_reduction(size: int, seed: int) -> List[str]:
    """Keeping only the source and destination cuts loses nothing."""
    problems = []
    # A fifth of the draws use five nodes.
    for ind in range(size + max(1, size // 5)):
        n_nodes = 4 if ind < size else 5
        network = _draw(n_nodes, seed, ind)
        two = fo_solver.solve_fo(fo_solver.FoProblem(network)).rate
        every = fo_solver.solve_fo_fullcuts(fo_solver.FoProblem(network)).rate
        if abs(two - every) > 1e-4:
            problems.append(f'N={n_nodes} draw {ind}: two cuts {two}, every cut {every}')
    return problems


@check('dominance', quick=8, full=1000)
def check_dominance(size: int, seed: int) -> List[str]:
    """direct <= GLS <= FO <= cut-set bound on every realization."""
    problems = []
    chain = ['direct', 'gls', 'fo', 'bound']
    for n_nodes in (4, 5):
        for ind in range(size):
            network = _draw(n_nodes, seed + n_nodes, ind)
            rates = [protocols.evaluate(name, network).rate for name in chain]
            for (low_name, low), (high_name, high) in zip(zip(chain, rates), zip(chain[1:], rates[1:])):
                if low > high + DOMINANCE_TOL:
                    problems.append(f'N={n_nodes} draw {ind}: {low_name} {low} > {high_name} {high}')
    return problems


@check('witness', quick=10, full=300)
def check_witness(size: int, seed: int) -> List[str]:
    """Every FO allocation passes the independent constraint checker."""
    problems = []
    for ind in range(size):
        n_nodes = 3 + ind % 3
        network = _draw(n_nodes, seed, ind)
        result = fo_solver.solve_fo(fo_solver.FoProblem(network))
        for problem in validate_allocation(result.flows, network, result.rate):
            problems.append(f'N={n_nodes} draw {ind}: {problem}')
    return problems


@check('bc-region', quick=500, full=10_000)
def check_bc_region(size: int, seed: int) -> List[str]:
    """The BC minimum SNR is monotone and convex, and the weakest-first order is optimal."""
    problems = []
    for ind in range(size):
        rng = RandomSource(seed, ind).generator()
        receivers = int(rng.integers(2, 5))
        gains = np.zeros((receivers + 1, receivers + 1))
        gains[0, 1:] = rng.standard_exponential(receivers)
        rates_a = rng.standard_exponential(receivers)
        rates_b = rng.standard_exponential(receivers)

        def min_snr(rates: np.ndarray) -> float:
            return bc_min_snr(BcDemand(0, list(zip(range(1, receivers + 1), rates)), 1.0), gains)

        snr_a, snr_b = min_snr(rates_a), min_snr(rates_b)
        tol = 1e-9 * (1.0 + snr_a + snr_b)
        if min_snr((rates_a + rates_b) / 2.0) > (snr_a + snr_b) / 2.0 + tol:
            problems.append(f'Instance {ind}: not convex')
        bumped = rates_a.copy()
        bumped[int(rng.integers(receivers))] += float(rng.uniform(0.0, 1.0))
        if min_snr(bumped) < snr_a - tol:
            problems.append(f'Instance {ind}: not monotone')
        pairs = [(float(gains[0, node]), float(rates_a[node - 1])) for node in range(1, receivers + 1)]
        for order in itertools.permutations(pairs):
            if superposition_snr(order) < snr_a - tol:
                problems.append(f'Instance {ind}: order {order} beats weakest-first')
                break
    return problems


@check('incomplete-gamma', quick=100, full=100)
def check_incomplete_gamma(size: int, seed: int) -> List[str]:
    """The incomplete gamma function matches numerical quadrature."""
    problems = []
    shapes = (1.0, 2.0, 3.0, 4.0)
    for x in np.linspace(0.01, 20.0, max(1, size // len(shapes))):
        for a in shapes:
            integral, _ = integrate.quad(
                lambda t, a=a: t ** (a - 1.0) * math.exp(-t),
                0.0, float(x), epsabs=0.0, epsrel=1e-13, limit=200,
            )
            expected = integral / special.gamma(a)
            got = bounds.regularized_lower_gamma(a, float(x))
            if abs(got - expected) > 1e-10:
                problems.append(f'P({a}, {x}) = {got}, quadrature gives {expected}')
    return problems


@check('ma-cut-sampling', quick=10_000, full=100_000)
def check_ma_cut_sampling(size: int, seed: int) -> List[str]:
    """Sampled destination-cut outage agrees with the closed form."""
    problems = []
    for stream, (n_nodes, x) in enumerate(itertools.product((3, 4, 5), (0.1, 0.5, 1.0))):
        rng = RandomSource(seed, stream).generator()
        outages = int(np.sum(rng.standard_exponential((size, n_nodes - 1)).sum(axis=1) < x))
        lo, hi = simkit.wilson_interval(outages, size, MC_Z)
        expected = bounds.regularized_lower_gamma(n_nodes - 1, x)
        if not lo <= expected <= hi:
            problems.append(f'N={n_nodes}, x={x}: {expected} outside [{lo}, {hi}]')
    return problems


@check('seed-determinism', quick=40, full=400)
def check_seed_determinism(size: int, seed: int) -> List[str]:
    """Outage counts do not depend on the number of workers."""
    runs = []
    for workers in (1, 2, 3):
        exp = simkit.Experiment(
            n_nodes=4, means=uniform_means(4),
            protocols=['direct', 'maxmin', 'gls'],
            rates=[1.0, 2.0], snr_db=[0.0, 10.0],
            trials=size, seed=seed, workers=workers,
            chunk_size=max(1, size // 7),
        )
        runs.append(trio.run(simkit.run_experiment, exp))
    problems = []
    first = runs[0]
    for workers, other in zip((2, 3), runs[1:]):
        for curve_a, curve_b in zip(first, other):
            if [p.outages for p in curve_a.points] != [p.outages for p in curve_b.points]:
                problems.append(f'{curve_a.protocol} at {curve_a.target} differs with {workers} workers')
    return problems


def run_checks(names: Optional[Iterable[str]] = None, *, full: bool = False, seed: int = VERIFY_SEED) -> Dict[str, List[str]]:
    """Run the named checks, or all of them. Returns the problems found by each."""
    if names is None:
        selected = list(CHECKS.values())
    else:
        selected = []
        for name in names:
            try:
                selected.append(CHECKS[name.strip().casefold()])
            except KeyError:
                raise ConfigError(f'Unknown check "{name}"! Known: {", ".join(sorted(CHECKS))}') from None

    results: Dict[str, List[str]] = {}
    for registered in selected:
        size = registered.full if full else registered.quick
        LOGGER.info('Running {} ({} instances)...', registered.name, size)
        problems = registered.func(size, seed)
        results[registered.name] = problems
        if problems:
            LOGGER.error('{} FAILED with {} problem(s):\n{}', registered.name, len(problems), '\n'.join(problems[:20]))
        else:
            LOGGER.info('{} passed.', registered.name)
    return results
