"""Monte Carlo outage engine: SNR sweeps, outage curves, slope estimates and CSV output.

Every trial draws its gains from its own random substream, keyed by the SNR point and trial index,
so results do not depend on how trials are split between workers.
"""
from typing import Callable, Dict, Final, Iterable, List, Optional, Sequence, Tuple
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
import csv
import math

from srctools import AtomicWriter
from srctools.logger import get_logger
import attrs
import numpy as np
import trio

from . import protocols
from .bounds import LAYOUTS, ma_cut_outage_lower
from .errors import (
    ConfigError, ContractViolation, EstimationError, FailureBudgetExceeded, SolverError,
)
from .fo_solver import cut_capacity_bound
from .netmodel import MatrixLike, NetworkInstance, RandomSource, db_to_linear, draw_network


__all__ = [
    'MODES', 'CSV_COLUMNS', 'LOWER_BOUND_ID', 'Experiment', 'OutagePoint', 'OutageCurve',
    'ChunkResult', 'snr_grid', 'wilson_interval', 'trial_outages', 'evaluate_chunk',
    'run_experiment', 'estimate_dmt_slope', 'emit_csv', 'read_csv', 'write_gnuplot',
    'snr_at_outage', 'snr_gap_db',
]
LOGGER = get_logger(__name__)

MODES: Final = ('fixed', 'multiplexing')
CSV_COLUMNS: Final = ('protocol', 'snr_db', 'rate_bits', 'trials', 'outages', 'p_hat', 'ci_lo', 'ci_hi')
LOWER_BOUND_ID: Final = 'ma-cut-lb'
# Two-sided 95% normal quantile.
WILSON_Z: Final = 1.959963984540054
# Protocols bracketed by GLS below and the two-cut capacity above.
SCREENED: Final = frozenset({'fo', 'bound'})


def _float_tuple(values: Iterable[float]) -> Tuple[float, ...]:
    return tuple(map(float, values))


def _str_tuple(values: Iterable[str]) -> Tuple[str, ...]:
    return tuple(value.strip().casefold() for value in values)


def _matrix(value: MatrixLike) -> np.ndarray:
    arr = np.array(value, dtype=np.float64)
    arr.flags.writeable = False
    return arr


def snr_grid(min_db: float, max_db: float, step_db: float) -> Tuple[float, ...]:
    """An inclusive SNR grid in dB."""
    if not step_db > 0.0:
        raise ConfigError(f'SNR step must be positive, not {step_db!r}!')
    if max_db < min_db:
        raise ConfigError(f'SNR range [{min_db}, {max_db}] is empty!')
    count = int(math.floor((max_db - min_db) / step_db + 1e-9)) + 1
    return tuple(round(min_db + ind * step_db, 10) for ind in range(count))


@attrs.frozen(eq=False)
class Experiment:
    """One outage study: a network model, protocols, rate targets and an SNR sweep.

    In fixed mode the rates are targets in bits/s/Hz. In multiplexing mode they are multiplexing
    gains ``r``, and each SNR point uses the target ``r log2(S)``.
    """
    n_nodes: int
    means: np.ndarray = attrs.field(converter=_matrix)
    protocols: Tuple[str, ...] = attrs.field(converter=_str_tuple)
    rates: Tuple[float, ...] = attrs.field(converter=_float_tuple)
    snr_db: Tuple[float, ...] = attrs.field(converter=_float_tuple)
    trials: int
    seed: int
    workers: int = 1
    chunk_size: int = 500
    failure_budget: float = 1e-3
    mode: str = 'fixed'
    screen: bool = True
    lower_bound: bool = False
    bound_layout: str = 'half-duplex'
    dump_folder: Optional[Path] = None
    label: str = 'uniform'

    def __attrs_post_init__(self) -> None:
        if self.means.shape != (self.n_nodes, self.n_nodes):
            raise ConfigError(f'Mean gains must be {self.n_nodes}x{self.n_nodes}, not {self.means.shape}!')
        if self.trials < 1:
            raise ConfigError(f'Need at least one trial per point, not {self.trials}!')
        if self.workers < 1 or self.chunk_size < 1:
            raise ConfigError('Workers and chunk size must be positive!')
        if not self.snr_db:
            raise ConfigError('The SNR grid is empty!')
        if any(b <= a for a, b in zip(self.snr_db, self.snr_db[1:])):
            raise ConfigError(f'SNR grid must be strictly increasing: {self.snr_db}')
        if self.mode not in MODES:
            raise ConfigError(f'Unknown mode "{self.mode}", expected one of {", ".join(MODES)}!')
        if not self.rates:
            raise ConfigError('No rate targets given!')
        if self.mode == 'fixed' and any(rate <= 0.0 for rate in self.rates):
            raise ConfigError(f'Rate targets must be positive: {self.rates}')
        if self.mode == 'multiplexing' and any(not 0.0 < rate < 1.0 for rate in self.rates):
            raise ConfigError(f'Multiplexing gains must lie in (0, 1): {self.rates}')
        if not 0.0 <= self.failure_budget < 1.0:
            raise ConfigError(f'Failure budget {self.failure_budget!r} is not a fraction!')
        if self.bound_layout not in LAYOUTS:
            raise ConfigError(f'Unknown bound layout "{self.bound_layout}"!')
        for name in self.protocols:
            protocols.lookup(name)

    def rate_bits(self, point: int) -> np.ndarray:
        """The rate targets at an SNR point, in bits/s/Hz."""
        rates = np.array(self.rates)
        if self.mode == 'multiplexing':
            return rates * math.log2(db_to_linear(self.snr_db[point]))
        return rates

    def targets_nats(self, point: int) -> np.ndarray:
        """The rate targets at an SNR point, in nats."""
        return self.rate_bits(point) * math.log(2.0)


@attrs.frozen
class OutagePoint:
    """The outage estimate at one SNR point."""
    snr_db: float
    rate_bits: float
    trials: int
    outages: int
    p_hat: float
    ci_lo: float
    ci_hi: float
    flagged: int = 0

    def __attrs_post_init__(self) -> None:
        if not 0.0 <= self.p_hat <= 1.0:
            raise EstimationError(f'Outage estimate {self.p_hat!r} is not a probability!')
        if not self.ci_lo <= self.p_hat <= self.ci_hi:
            raise EstimationError(f'Interval [{self.ci_lo}, {self.ci_hi}] excludes {self.p_hat}!')

    @classmethod
    def estimate(cls, snr_db: float, rate_bits: float, trials: int, outages: int, flagged: int = 0) -> 'OutagePoint':
        """Estimate from counts, with a Wilson interval."""
        lo, hi = wilson_interval(outages, trials)
        p_hat = outages / trials if trials else 0.0
        return cls(snr_db, rate_bits, trials, outages, p_hat, min(lo, p_hat), max(hi, p_hat), flagged)

    @classmethod
    def exact(cls, snr_db: float, rate_bits: float, value: float) -> 'OutagePoint':
        """An analytic value, with no trials behind it."""
        return cls(snr_db, rate_bits, 0, 0, value, value, value)


@attrs.frozen
class OutageCurve:
    """Outage probability against SNR for one protocol and one target."""
    protocol: str
    target: float
    points: Tuple[OutagePoint, ...] = attrs.field(converter=tuple)
    mode: str = 'fixed'

    @property
    def snr_db(self) -> np.ndarray:
        """The SNR grid."""
        return np.array([point.snr_db for point in self.points])

    @property
    def p_hat(self) -> np.ndarray:
        """The outage estimates."""
        return np.array([point.p_hat for point in self.points])

    @property
    def flagged(self) -> int:
        """Trials excluded because a solver failed."""
        return sum(point.flagged for point in self.points)


@attrs.frozen(eq=False)
class ChunkResult:
    """Outage counts for a run of trials at one SNR point."""
    point: int
    start: int
    stop: int
    # Protocol -> outage count per target.
    outages: Dict[str, np.ndarray]
    flagged: Tuple[Tuple[int, str], ...]

    @property
    def evaluated(self) -> int:
        """Trials that completed."""
        return self.stop - self.start - len(self.flagged)


def wilson_interval(successes: int, trials: int, z: float = WILSON_Z) -> Tuple[float, float]:
    """The Wilson score interval for a binomial proportion."""
    if trials <= 0:
        return 0.0, 1.0
    p_hat = successes / trials
    denom = 1.0 + z * z / trials
    centre = (p_hat + z * z / (2.0 * trials)) / denom
    half = z * math.sqrt(p_hat * (1.0 - p_hat) / trials + z * z / (4.0 * trials * trials)) / denom
    return max(0.0, centre - half), min(1.0, centre + half)


def trial_outages(
    network: NetworkInstance,
    names: Sequence[str],
    targets: np.ndarray,
    screen: bool = True,
    settings: protocols.ProtocolSettings = protocols.DEFAULT_SETTINGS,
) -> Dict[str, np.ndarray]:
    """Decide for each protocol and target whether this realization is in outage.

    With screening, FO and the cut-set bound are skipped when GLS already reaches every target or
    the two-cut capacity falls short of it, since neither verdict can change.
    """
    ordered = sorted(names, key=lambda name: protocols.lookup(name).cost)
    lower = 0.0
    upper = math.inf
    if screen and SCREENED.intersection(ordered):
        lower = protocols.gls(network).rate
        upper = cut_capacity_bound(network)
    verdicts: Dict[str, np.ndarray] = {}
    for name in ordered:
        if screen and name in SCREENED:
            short = targets > upper
            if np.all((targets <= lower) | short):
                verdicts[name] = short
                continue
        outcome = protocols.evaluate(name, network, settings)
        verdicts[name] = outcome.rate < targets
        if name != 'bound':
            lower = max(lower, outcome.rate)
    return verdicts


def evaluate_chunk(exp: Experiment, point: int, start: int, stop: int) -> ChunkResult:
    """Run trials ``start`` to ``stop`` at one SNR point."""
    snr = db_to_linear(exp.snr_db[point])
    targets = exp.targets_nats(point)
    outages = {name: np.zeros(len(targets), dtype=np.int64) for name in exp.protocols}
    flagged: List[Tuple[int, str]] = []
    for trial in range(start, stop):
        network = draw_network(exp.means, snr, RandomSource(exp.seed, point * exp.trials + trial))
        settings = protocols.ProtocolSettings(
            bound_layout=exp.bound_layout,
            dump_folder=exp.dump_folder,
            dump_tag=f'p{point}_t{trial}',
        )
        try:
            verdicts = trial_outages(network, exp.protocols, targets, exp.screen, settings)
        except (SolverError, ContractViolation) as exc:
            flagged.append((trial, str(exc)))
            continue
        for name, verdict in verdicts.items():
            outages[name] += verdict
    return ChunkResult(point, start, stop, outages, tuple(flagged))


def _chunks(exp: Experiment) -> List[Tuple[int, int, int]]:
    return [
        (point, start, min(start + exp.chunk_size, exp.trials))
        for point in range(len(exp.snr_db))
        for start in range(0, exp.trials, exp.chunk_size)
    ]


async def run_experiment(
    exp: Experiment,
    progress: Optional[Callable[[ChunkResult], None]] = None,
) -> List[OutageCurve]:
    """Run every trial and collect one outage curve per protocol and target.

    Chunks of trials run in worker processes when more than one worker is requested, otherwise in a
    single background thread. Aggregation is always in trial order.
    """
    chunks = _chunks(exp)
    results: Dict[Tuple[int, int], ChunkResult] = {}
    limiter = trio.CapacityLimiter(exp.workers)
    if 'bound' in exp.protocols and exp.bound_layout == 'relaxed':
        LOGGER.warning('Using the relaxed cut-set layout, the bound will be looser.')
    LOGGER.info(
        'Running {} trials at {} SNR points for {} ({} chunks, {} workers)',
        exp.trials, len(exp.snr_db), ', '.join(exp.protocols), len(chunks), exp.workers,
    )
    executor = ProcessPoolExecutor(max_workers=exp.workers) if exp.workers > 1 else None

    async def run_chunk(point: int, start: int, stop: int) -> None:
        """Evaluate one chunk, in a worker process if there is a pool."""
        if executor is None:
            result = await trio.to_thread.run_sync(evaluate_chunk, exp, point, start, stop, limiter=limiter)
        else:
            async with limiter:
                future = executor.submit(evaluate_chunk, exp, point, start, stop)
                result = await trio.to_thread.run_sync(future.result)
        results[point, start] = result
        for trial, message in result.flagged:
            LOGGER.warning('Trial {} at {} dB failed and was excluded: {}', trial, exp.snr_db[point], message)
        LOGGER.debug('Finished trials {}-{} at {} dB', start, stop, exp.snr_db[point])
        if progress is not None:
            progress(result)

    try:
        async with trio.open_nursery() as nursery:
            for point, start, stop in chunks:
                nursery.start_soon(run_chunk, point, start, stop)
    finally:
        if executor is not None:
            executor.shutdown(wait=True, cancel_futures=True)

    counts = {
        name: np.zeros((len(exp.snr_db), len(exp.rates)), dtype=np.int64)
        for name in exp.protocols
    }
    evaluated = np.zeros(len(exp.snr_db), dtype=np.int64)
    flagged = np.zeros(len(exp.snr_db), dtype=np.int64)
    for point, start, _ in chunks:
        result = results[point, start]
        evaluated[point] += result.evaluated
        flagged[point] += len(result.flagged)
        for name in exp.protocols:
            counts[name][point] += result.outages[name]

    total_flagged = int(flagged.sum())
    total = len(exp.snr_db) * exp.trials
    if total_flagged:
        LOGGER.warning('{} of {} trials were excluded after solver failures.', total_flagged, total)
    if total_flagged > exp.failure_budget * total:
        raise FailureBudgetExceeded(total_flagged, total, exp.failure_budget)

    curves = []
    for name in exp.protocols:
        for ind, target in enumerate(exp.rates):
            curves.append(OutageCurve(name, target, [
                OutagePoint.estimate(
                    snr_db, float(exp.rate_bits(point)[ind]),
                    int(evaluated[point]), int(counts[name][point, ind]), int(flagged[point]),
                )
                for point, snr_db in enumerate(exp.snr_db)
            ], exp.mode))
            LOGGER.info(
                '{} at {} {}: outage {:.3g} to {:.3g}',
                name, target, 'b/s/Hz' if exp.mode == 'fixed' else 'r',
                curves[-1].points[0].p_hat, curves[-1].points[-1].p_hat,
            )
    if exp.lower_bound:
        for ind, target in enumerate(exp.rates):
            curves.append(OutageCurve(LOWER_BOUND_ID, target, [
                OutagePoint.exact(snr_db, float(exp.rate_bits(point)[ind]), ma_cut_outage_lower(
                    exp.n_nodes, db_to_linear(snr_db),
                    rate=float(exp.targets_nats(point)[ind]),
                    means=exp.means,
                    rng=RandomSource(exp.seed, total + point),
                ))
                for point, snr_db in enumerate(exp.snr_db)
            ], exp.mode))
    return curves


def estimate_dmt_slope(curve: OutageCurve, snr_window_db: Tuple[float, float]) -> float:
    """Finite-SNR diversity: the least-squares slope of ``-log10(p)`` against ``log10(S)``."""
    lo, hi = sorted(snr_window_db)
    points = [
        point for point in curve.points
        if lo <= point.snr_db <= hi and point.p_hat > 0.0
    ]
    if len(points) < 3:
        raise EstimationError(
            f'Need 3 nonzero outage estimates between {lo} and {hi} dB for "{curve.protocol}", '
            f'got {len(points)}!'
        )
    log_snr = np.array([point.snr_db / 10.0 for point in points])
    log_p = np.log10([point.p_hat for point in points])
    slope = np.polyfit(log_snr, log_p, 1)[0]
    return float(-slope)


def emit_csv(curves: Iterable[OutageCurve], path: Path) -> None:
    """Write curves out, one row per protocol and SNR point."""
    try:
        with AtomicWriter(path) as file:
            writer = csv.writer(file, lineterminator='\n')
            writer.writerow(CSV_COLUMNS)
            for curve in curves:
                for point in curve.points:
                    writer.writerow([
                        curve.protocol, point.snr_db, point.rate_bits, point.trials,
                        point.outages, point.p_hat, point.ci_lo, point.ci_hi,
                    ])
    except OSError as exc:
        raise OSError(f'Could not write results to "{path}": {exc}') from exc


def _recover_target(points: Sequence[OutagePoint]) -> Tuple[float, str]:
    """Work out the curve's target from its per-point rates.

    A multiplexing gain is read off a point above 0 dB, since the rate there is zero.
    """
    rates = {point.rate_bits for point in points}
    if len(rates) <= 1:
        return points[0].rate_bits, 'fixed'
    for point in points:
        if point.snr_db > 0.0:
            return point.rate_bits / math.log2(db_to_linear(point.snr_db)), 'multiplexing'
    raise EstimationError('A curve with changing rates needs a point above 0 dB!')


def read_csv(path: Path) -> List[OutageCurve]:
    """Parse a file written by :func:`emit_csv`.

    A new curve starts whenever the protocol changes or the SNR stops increasing.
    """
    try:
        with open(path, encoding='utf8', newline='') as file:
            rows = list(csv.DictReader(file))
    except OSError as exc:
        raise OSError(f'Could not read results from "{path}": {exc}') from exc

    groups: List[Tuple[str, List[OutagePoint]]] = []
    for line, row in enumerate(rows, start=2):
        try:
            point = OutagePoint(
                float(row['snr_db']), float(row['rate_bits']),
                int(row['trials']), int(row['outages']),
                float(row['p_hat']), float(row['ci_lo']), float(row['ci_hi']),
            )
            name = row['protocol']
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f'{path}:{line}: bad result row: {exc}') from None
        if not groups or groups[-1][0] != name or groups[-1][1][-1].snr_db >= point.snr_db:
            groups.append((name, []))
        groups[-1][1].append(point)

    curves = []
    for name, points in groups:
        target, mode = _recover_target(points)
        curves.append(OutageCurve(name, target, points, mode))
    return curves


def write_gnuplot(curves: Sequence[OutageCurve], csv_path: Path, out_path: Path) -> None:
    """Write a gnuplot script drawing every curve from the CSV file, on a log scale."""
    lines = [
        '# Outage curves',
        'set datafile separator ","',
        'set logscale y',
        'set format y "10^{%L}"',
        'set xlabel "SNR (dB)"',
        'set ylabel "Outage probability"',
        'set key bottom left',
        'set grid',
    ]
    plots = []
    row = 1  # Skip the header.
    for curve in curves:
        first, last = row, row + len(curve.points) - 1
        style = 'lines dashtype 2' if curve.protocol in {'bound', LOWER_BOUND_ID} else 'linespoints'
        unit = 'b/s/Hz' if curve.mode == 'fixed' else 'r'
        plots.append(
            f'"{csv_path.as_posix()}" every ::{first}::{last} using 2:($6 > 0 ? $6 : 1/0) '
            f'with {style} title "{curve.protocol}, {curve.target:g} {unit}"'
        )
        row = last + 1
    if plots:
        lines.append('plot ' + ', \\\n     '.join(plots))
    try:
        with AtomicWriter(out_path) as file:
            file.write('\n'.join(lines) + '\n')
    except OSError as exc:
        raise OSError(f'Could not write plot script to "{out_path}": {exc}') from exc


def snr_at_outage(curve: OutageCurve, target: float) -> float:
    """The SNR where the curve first falls to the target outage probability.

    Interpolates ``log10(p)`` linearly between grid points, or ``p`` itself when the next estimate
    is zero.
    """
    points = curve.points
    for before, after in zip(points, points[1:]):
        if before.p_hat >= target > after.p_hat:
            if after.p_hat > 0.0:
                lo, hi, goal = math.log10(before.p_hat), math.log10(after.p_hat), math.log10(target)
            else:
                lo, hi, goal = before.p_hat, after.p_hat, target
            frac = (lo - goal) / (lo - hi)
            return before.snr_db + frac * (after.snr_db - before.snr_db)
    raise EstimationError(f'"{curve.protocol}" never crosses outage {target} on its grid!')


def snr_gap_db(curve: OutageCurve, reference: OutageCurve, target: float) -> float:
    """How many dB more ``curve`` needs than ``reference`` to reach the target outage."""
    return snr_at_outage(curve, target) - snr_at_outage(reference, target)
