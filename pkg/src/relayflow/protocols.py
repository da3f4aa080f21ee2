"""Relaying protocols, each mapping a gain realization to an achieved rate.

Protocols register themselves with :func:`protocol` under a stable id, which is what the CSV output
and the config file use.
"""
from typing import Any, Callable, Dict, List, Optional, Protocol, TypeVar
from pathlib import Path

from srctools.logger import get_logger
import attrs

from . import bounds, fo_solver
from .errors import ConfigError, DomainError
from .netmodel import SOURCE, NetworkInstance, capacity
from .three_node import Strategy, ThreeNodeResult, solve_three_node


__all__ = [
    'ProtocolOutcome', 'ProtocolSettings', 'ProtocolFunc', 'RegisteredProtocol', 'PROTOCOLS',
    'protocol', 'evaluate', 'lookup', 'candidate_relays',
    'gls', 'max_min_selection', 'direct', 'flow_optimized', 'cutset_bound',
]
LOGGER = get_logger(__name__)


@attrs.frozen(eq=False)
class ProtocolOutcome:
    """The rate one protocol achieved on one realization."""
    protocol: str
    rate: float
    relay: Optional[int] = None
    detail: Any = attrs.field(default=None, repr=False)
    # Number of scalar maximisations over t2 that were run.
    searches: int = 0

    def __attrs_post_init__(self) -> None:
        if not self.rate >= 0.0:
            raise DomainError(f'Protocol "{self.protocol}" produced a negative rate {self.rate!r}!')


@attrs.frozen
class ProtocolSettings:
    """Options shared by every protocol."""
    bound_layout: str = 'half-duplex'
    dump_folder: Optional[Path] = None
    dump_tag: str = 'network'


DEFAULT_SETTINGS = ProtocolSettings()


class ProtocolFunc(Protocol):
    def __call__(
        self, network: NetworkInstance, settings: ProtocolSettings = DEFAULT_SETTINGS,
    ) -> ProtocolOutcome: ...


ProtocolFuncT = TypeVar('ProtocolFuncT', bound=Callable[..., ProtocolOutcome])


@attrs.frozen(eq=False)
class RegisteredProtocol:
    """A protocol function and its metadata."""
    func: ProtocolFunc
    name: str
    # Cost rank, cheaper protocols are evaluated first.
    cost: int


PROTOCOLS: Dict[str, RegisteredProtocol] = {}


def protocol(name: str, *, cost: int = 0) -> Callable[[ProtocolFuncT], ProtocolFuncT]:
    """Add a protocol to the registry."""
    name = name.strip()
    if ',' in name:
        raise ValueError('Commas are not allowed in names!')

    def deco(func: ProtocolFuncT) -> ProtocolFuncT:
        """Stores the protocol."""
        PROTOCOLS[name.casefold()] = RegisteredProtocol(func, name, cost)
        return func
    return deco


def lookup(name: str) -> RegisteredProtocol:
    """Find a registered protocol."""
    try:
        return PROTOCOLS[name.strip().casefold()]
    except KeyError:
        raise ConfigError(
            f'Unknown protocol "{name}"! Known: {", ".join(sorted(PROTOCOLS))}'
        ) from None


def evaluate(
    name: str,
    network: NetworkInstance,
    settings: ProtocolSettings = DEFAULT_SETTINGS,
) -> ProtocolOutcome:
    """Run a protocol by id."""
    return lookup(name).func(network, settings)


def candidate_relays(network: NetworkInstance) -> List[int]:
    """Relays whose source link beats the direct link, the only ones worth relaying through."""
    z_sd = network.gain(SOURCE, network.dest)
    return [
        relay for relay in network.relays
        if network.gain(SOURCE, relay) > z_sd
    ]


@protocol('direct')
def direct(network: NetworkInstance, settings: ProtocolSettings = DEFAULT_SETTINGS) -> ProtocolOutcome:
    """Send everything over the direct link."""
    return ProtocolOutcome('direct', capacity(network.gain(SOURCE, network.dest) * network.snr))


@protocol('gls', cost=1)
def gls(network: NetworkInstance, settings: ProtocolSettings = DEFAULT_SETTINGS) -> ProtocolOutcome:
    """Generalized link selection: run the three-node optimum through the best single relay.

    Only relays in :func:`candidate_relays` are tried, so at most N-2 scalar searches run. Ties go to
    the lowest relay index.
    """
    relays = candidate_relays(network)
    if not relays:
        return attrs.evolve(direct(network, settings), protocol='gls')

    best: Optional[ThreeNodeResult] = None
    best_relay = relays[0]
    searches = 0
    for relay in relays:
        result = solve_three_node(*network.relay_triple(relay), network.snr)
        searches += result.searched
        if best is None or result.rate > best.rate:
            best, best_relay = result, relay
    assert best is not None
    return ProtocolOutcome(
        'gls', best.rate,
        relay=best_relay if best.strategy is Strategy.RELAYED else None,
        detail=best,
        searches=searches,
    )


@protocol('maxmin', cost=0)
def max_min_selection(network: NetworkInstance, settings: ProtocolSettings = DEFAULT_SETTINGS) -> ProtocolOutcome:
    """Pick the relay with the best bottleneck link, then decode and forward in two equal halves.

    The destination combines the direct and relayed signals in the second half. If sending
    directly does better, it does that instead.
    """
    dest = network.dest
    snr = network.snr
    z_sd = network.gain(SOURCE, dest)
    relay = max(
        network.relays,
        key=lambda node: (min(network.gain(SOURCE, node), network.gain(node, dest)), -node),
    )
    relayed = 0.5 * min(
        capacity(network.gain(SOURCE, relay) * snr),
        capacity((z_sd + network.gain(relay, dest)) * snr),
    )
    direct_rate = capacity(z_sd * snr)
    if relayed > direct_rate:
        return ProtocolOutcome('maxmin', relayed, relay=relay)
    return ProtocolOutcome('maxmin', direct_rate)


@protocol('fo', cost=3)
def flow_optimized(network: NetworkInstance, settings: ProtocolSettings = DEFAULT_SETTINGS) -> ProtocolOutcome:
    """Optimise flows and slot lengths over every relay at once."""
    problem = fo_solver.FoProblem(network)
    result = fo_solver.solve_fo(problem)
    if settings.dump_folder is not None:
        settings.dump_folder.mkdir(parents=True, exist_ok=True)
        fo_solver.dump_program(problem, result, settings.dump_folder / f'fo_{settings.dump_tag}.json')
    return ProtocolOutcome('fo', result.rate, detail=result)


@protocol('bound', cost=4)
def cutset_bound(network: NetworkInstance, settings: ProtocolSettings = DEFAULT_SETTINGS) -> ProtocolOutcome:
    """The max-flow min-cut upper bound, reported like a protocol."""
    result = bounds.solve_cutset_bound(network, settings.bound_layout)
    return ProtocolOutcome('bound', result.rate, detail=result)
