"""Upper bounds on the rate and lower bounds on the outage probability.

The cut-set bound lets several nodes transmit at once and charges each slot only the max-flow
min-cut capacity across every cut, ignoring interference. The outage bound uses the destination's
multiple-access cut, whose gain sum has a gamma distribution for unit-mean Rayleigh links.
"""
from typing import Final, FrozenSet, Iterable, List, Optional, Set, Tuple, Union
import math

from srctools.logger import get_logger
import attrs
import numpy as np

from .errors import ConfigError, DomainError
from .fo_solver import FlowProgram, FoProblem, cut_capacity_bound, solve_fo, usable_entries
from .flowgraph import LENGTH_TOL, enumerate_cuts
from .netmodel import SOURCE, MatrixLike, NetworkInstance, RandomSource, capacity


__all__ = [
    'LAYOUTS', 'BoundSlot', 'BoundSchedule', 'BoundResult',
    'bound_schedule', 'build_bound_program', 'solve_cutset_bound', 'cutset_upper_rate',
    'regularized_lower_gamma', 'outage_threshold', 'ma_cut_outage_lower', 'gls_outage_upper',
    'dmt_reference', 'maxmin_dmt_reference',
]
LOGGER = get_logger(__name__)

LAYOUTS: Final = ('half-duplex', 'relaxed')
MAX_BOUND_NODES: Final = 6
GAMMA_EPS: Final = 1e-16
GAMMA_MAX_ITER: Final = 1000
TINY: Final = 1e-300
MC_TRIALS: Final = 100_000


def _node_set(nodes: Iterable[int]) -> FrozenSet[int]:
    return frozenset(map(int, nodes))


@attrs.frozen
class BoundSlot:
    """A slot where every transmitter may reach every receiver at once."""
    transmitters: FrozenSet[int] = attrs.field(converter=_node_set)
    receivers: FrozenSet[int] = attrs.field(converter=_node_set)
    length: float = attrs.field(default=0.0, converter=float)

    def links(self) -> List[Tuple[int, int]]:
        """Every active link, in sorted order."""
        return [
            (tx, rx)
            for tx in sorted(self.transmitters)
            for rx in sorted(self.receivers)
            if tx != rx
        ]

    def describe(self) -> str:
        """Short human-readable form."""
        return f'{sorted(self.transmitters)} -> {sorted(self.receivers)}'


@attrs.frozen
class BoundSchedule:
    """Generalized slots, from the source broadcast to the destination's multiple access."""
    n_nodes: int
    slots: Tuple[BoundSlot, ...] = attrs.field(converter=tuple)

    def __attrs_post_init__(self) -> None:
        dest = self.n_nodes - 1
        if len(self.slots) < 2:
            raise ConfigError('A bound schedule needs at least two slots!')
        if self.slots[0].transmitters != {SOURCE}:
            raise ConfigError(f'First slot must be the source broadcast, not {self.slots[0].describe()}!')
        if self.slots[-1].receivers != {dest}:
            raise ConfigError(f'Last slot must be the destination receiving, not {self.slots[-1].describe()}!')
        for slot in self.slots:
            nodes = slot.transmitters | slot.receivers
            if not slot.transmitters or not slot.receivers:
                raise ConfigError(f'Slot {slot.describe()} is missing transmitters or receivers!')
            if SOURCE in slot.receivers or dest in slot.transmitters:
                raise ConfigError(f'Slot {slot.describe()} has the source listening or the destination talking!')
            if any(not 0 <= node < self.n_nodes for node in nodes):
                raise ConfigError(f'Slot {slot.describe()} has unknown nodes!')
        total = sum(slot.length for slot in self.slots)
        if abs(total - 1.0) > LENGTH_TOL:
            raise ConfigError(f'Slot lengths must sum to 1, not {total!r}!')

    def __len__(self) -> int:
        return len(self.slots)

    @property
    def lengths(self) -> np.ndarray:
        """The slot lengths as a vector."""
        return np.array([slot.length for slot in self.slots])

    def with_lengths(self, lengths: Iterable[float]) -> 'BoundSchedule':
        """The same slots with new lengths."""
        lengths = list(lengths)
        if len(lengths) != len(self.slots):
            raise ConfigError(f'Expected {len(self.slots)} lengths, got {len(lengths)}!')
        return BoundSchedule(self.n_nodes, [
            attrs.evolve(slot, length=length)
            for slot, length in zip(self.slots, lengths)
        ])


@attrs.frozen(eq=False)
class BoundResult:
    """The cut-set bound for one realization."""
    rate: float
    schedule: Optional[BoundSchedule]
    layout: str
    # Set when the bound could not be formed and the FO rate was used instead.
    fallback: bool = False
    iterations: int = 0
    bisection_steps: int = 0


def bound_schedule(n_nodes: int, layout: str = 'half-duplex') -> BoundSchedule:
    """Build the generalized slot layout.

    Between the source broadcast and the destination's multiple access, there is one slot for each
    nonempty proper subset T of the relays: the source and T transmit, the other relays and the
    destination listen. The relaxed layout instead lets every node talk and listen in each of
    those slots.
    """
    if layout not in LAYOUTS:
        raise ConfigError(f'Unknown bound layout "{layout}", expected one of {", ".join(LAYOUTS)}!')
    if not 3 <= n_nodes <= MAX_BOUND_NODES:
        raise ConfigError(f'Bound layouts exist for 3 to {MAX_BOUND_NODES} nodes, not {n_nodes}!')
    dest = n_nodes - 1
    relays = list(range(1, dest))
    slots = [BoundSlot({SOURCE}, range(1, n_nodes))]
    for mask in range(1, 2 ** len(relays) - 1):
        talking = {relay for bit, relay in enumerate(relays) if mask & (1 << bit)}
        if layout == 'relaxed':
            slots.append(BoundSlot(range(dest), range(1, n_nodes)))
        else:
            slots.append(BoundSlot({SOURCE, *talking}, {*(set(relays) - talking), dest}))
    slots.append(BoundSlot(range(dest), {dest}))
    share = 1.0 / len(slots)
    return BoundSchedule(n_nodes, [attrs.evolve(slot, length=share) for slot in slots])


def build_bound_program(network: NetworkInstance, schedule: BoundSchedule) -> FlowProgram:
    """Charge every slot the cut-set capacity of every cut.

    For a cut with source side C, the flow from ``transmitters & C`` to ``receivers - C`` in a slot
    is at most ``t * C(S * sum(Z_ab))`` over those links.
    """
    gains = network.gains
    snr = network.snr
    all_entries = [
        (ind, tx, rx)
        for ind, slot in enumerate(schedule.slots)
        for tx, rx in slot.links()
    ]
    mask = usable_entries(all_entries, gains)
    entries = [entry for entry, ok in zip(all_entries, mask) if ok]
    index = {entry: pos for pos, entry in enumerate(entries)}
    n_f = len(entries)
    n_k = len(schedule)

    seen: Set[Tuple[int, FrozenSet[int], FrozenSet[int]]] = set()
    flow_rows: List[np.ndarray] = []
    slot_rows: List[np.ndarray] = []
    labels: List[str] = []
    cuts = enumerate_cuts(network.n_nodes)
    for ind, slot in enumerate(schedule.slots):
        for cut in cuts:
            senders = slot.transmitters & cut.source_side
            hearers = slot.receivers - cut.source_side
            if (ind, senders, hearers) in seen:
                continue
            seen.add((ind, senders, hearers))
            links = [(tx, rx) for tx in senders for rx in hearers if tx != rx]
            positions = [index[ind, tx, rx] for tx, rx in links if (ind, tx, rx) in index]
            if not positions:
                continue
            row = np.zeros(n_f)
            row[positions] = 1.0
            slot_row = np.zeros(n_k)
            slot_row[ind] = -capacity(snr * float(sum(gains[tx, rx] for tx, rx in links)))
            flow_rows.append(row)
            slot_rows.append(slot_row)
            labels.append(f'{ind}:{sorted(senders)}->{sorted(hearers)}')

    return FlowProgram(
        n_nodes=network.n_nodes,
        n_slots=n_k,
        entries=entries,
        cap_flow=np.array(flow_rows).reshape(len(flow_rows), n_f),
        cap_slot=np.array(slot_rows).reshape(len(slot_rows), n_k),
        cap_labels=labels,
        bc_terms=[],
        cuts=[cuts[0], cuts[-1]],
        source_slot=0,
        dest_slot=n_k - 1,
    )


def solve_cutset_bound(network: NetworkInstance, layout: str = 'half-duplex') -> BoundResult:
    """Maximise min(x(C_S), x(C_D)) over the generalized schedule.

    The reported rate is the top of the final bisection bracket, so it never falls below the true
    optimum by more than solver noise. Three-node networks have no intermediate slots; the FO rate
    is reported instead and flagged.
    """
    if layout not in LAYOUTS:
        raise ConfigError(f'Unknown bound layout "{layout}", expected one of {", ".join(LAYOUTS)}!')
    if network.n_nodes == 3:
        result = solve_fo(FoProblem(network))
        LOGGER.debug('No cut-set layout for 3 nodes, using the FO rate {:.6f}', result.rate)
        return BoundResult(result.rate, None, layout, fallback=True, iterations=result.iterations)
    schedule = bound_schedule(network.n_nodes, layout)
    program = build_bound_program(network, schedule)
    point, info = program.maximise(program.three_node_point(network), cut_capacity_bound(network))
    LOGGER.debug('Cut-set bound {:.6f} after {} bisection steps', info['upper'], info['steps'])
    return BoundResult(
        rate=info['upper'],
        schedule=schedule.with_lengths(point.lengths),
        layout=layout,
        iterations=info['iterations'],
        bisection_steps=info['steps'],
    )


def cutset_upper_rate(network: NetworkInstance, layout: str = 'half-duplex') -> float:
    """The max-flow min-cut upper bound on the achievable rate, in nats."""
    return solve_cutset_bound(network, layout).rate


def regularized_lower_gamma(a: float, x: float) -> float:
    """The regularized lower incomplete gamma function ``P(a, x)``.

    Uses the power series below ``x = a + 1`` and a continued fraction for the complement above.
    """
    if not a > 0.0:
        raise DomainError(f'Gamma shape must be positive, not {a!r}!')
    if x < 0.0:
        raise DomainError(f'Incomplete gamma is undefined for x = {x!r}!')
    if x == 0.0:
        return 0.0
    if math.isinf(x):
        return 1.0
    log_prefix = -x + a * math.log(x) - math.lgamma(a)

    if x < a + 1.0:
        term = total = 1.0 / a
        denom = a
        for _ in range(GAMMA_MAX_ITER):
            denom += 1.0
            term *= x / denom
            total += term
            if abs(term) < abs(total) * GAMMA_EPS:
                return min(1.0, total * math.exp(log_prefix))
        raise DomainError(f'Gamma series did not converge for a={a!r}, x={x!r}!')

    # Modified Lentz evaluation of the continued fraction for Q(a, x).
    b = x + 1.0 - a
    c = 1.0 / TINY
    d = 1.0 / b
    frac = d
    for i in range(1, GAMMA_MAX_ITER + 1):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < TINY:
            d = TINY
        c = b + an / c
        if abs(c) < TINY:
            c = TINY
        d = 1.0 / d
        delta = d * c
        frac *= delta
        if abs(delta - 1.0) < GAMMA_EPS:
            return max(0.0, 1.0 - math.exp(log_prefix) * frac)
    raise DomainError(f'Gamma continued fraction did not converge for a={a!r}, x={x!r}!')


def outage_threshold(
    snr: float,
    *,
    rate: Optional[float] = None,
    multiplexing: Optional[float] = None,
) -> float:
    """The gain sum below which a rate cannot be carried: ``(e^R - 1) / S``.

    Pass either a fixed rate in nats, or a multiplexing gain ``r`` for ``R = r ln S``.
    """
    if not snr > 0.0:
        raise DomainError(f'SNR must be positive, not {snr!r}!')
    if (rate is None) == (multiplexing is None):
        raise DomainError('Pass exactly one of a rate or a multiplexing gain!')
    if rate is not None:
        return math.expm1(rate) / snr
    assert multiplexing is not None
    return (snr ** multiplexing - 1.0) / snr


def ma_cut_outage_lower(
    n_nodes: int,
    snr: float,
    *,
    rate: Optional[float] = None,
    multiplexing: Optional[float] = None,
    means: Optional[MatrixLike] = None,
    rng: Union[RandomSource, np.random.Generator, None] = None,
    trials: int = MC_TRIALS,
) -> float:
    """Probability that even the destination's multiple-access cut cannot carry the rate.

    No scheme has a lower outage probability. With equal means on the links into the destination
    this is a regularized incomplete gamma function; otherwise it is estimated by sampling.
    """
    if n_nodes < 3:
        raise DomainError(f'A relay network needs at least 3 nodes, not {n_nodes}!')
    x = max(outage_threshold(snr, rate=rate, multiplexing=multiplexing), 0.0)
    if means is None:
        dest_means = np.ones(n_nodes - 1)
    else:
        dest_means = np.asarray(means, dtype=np.float64)[:-1, n_nodes - 1]
    if np.any(dest_means <= 0.0):
        raise DomainError(f'Links into the destination need positive means, not {dest_means.tolist()}!')
    if np.allclose(dest_means, dest_means[0], rtol=1e-12, atol=0.0):
        return regularized_lower_gamma(n_nodes - 1, x / float(dest_means[0]))

    LOGGER.warning(
        'Unequal means into the destination, estimating the outage bound from {} samples.',
        trials,
    )
    if rng is None:
        rng = RandomSource(0, 0)
    if isinstance(rng, RandomSource):
        rng = rng.generator()
    samples = rng.standard_exponential((trials, n_nodes - 1)) * dest_means
    return float(np.mean(samples.sum(axis=1) < x))


def gls_outage_upper(
    n_nodes: int,
    snr: float,
    *,
    rate: Optional[float] = None,
    multiplexing: Optional[float] = None,
) -> float:
    """``[1 - exp(-x)]^(N-1)``: the chance every source link is too weak, for unit-mean links.

    This is the high-SNR surrogate for GLS outage; it has the same slope, ``(N-1)(1-r)``.
    """
    x = max(outage_threshold(snr, rate=rate, multiplexing=multiplexing), 0.0)
    return float(-math.expm1(-x)) ** (n_nodes - 1)


def dmt_reference(n_nodes: int, r: float) -> float:
    """The optimal diversity-multiplexing tradeoff ``(N-1)(1-r)``, reached by FO and GLS."""
    if not 0.0 < r < 1.0:
        raise DomainError(f'Multiplexing gain must lie in (0, 1), not {r!r}!')
    return (n_nodes - 1) * (1.0 - r)


def maxmin_dmt_reference(n_nodes: int, r: float) -> float:
    """The tradeoff of max-min relay selection, ``(N-1)(1-2r)`` for ``r < 1/2``."""
    if not 0.0 < r < 0.5:
        raise DomainError(f'Multiplexing gain must lie in (0, 1/2), not {r!r}!')
    return (n_nodes - 1) * (1.0 - 2.0 * r)
