"""Gaussian broadcast and multiple-access capacity regions, in perspective form.

Flows are totals over the unit interval, so a slot of length ``t`` carrying flow ``x`` runs at the
per-slot rate ``x / t``.
"""
from typing import Final, Iterable, List, Optional, Sequence, Tuple, Union
import itertools
import math

from srctools.logger import get_logger
import attrs
import numpy as np

from .errors import DomainError, InfeasibleDemand
from .flowgraph import FlowAllocation, SlotKind, conservation_residuals, reduced_min_cut
from .netmodel import NetworkInstance, capacity


__all__ = [
    'BcDemand', 'MaDemand', 'bc_min_snr', 'superposition_snr', 'bc_feasible', 'ma_feasible',
    'bc_boundary_rate_pair', 'slot_demand', 'validate_allocation',
]
LOGGER = get_logger(__name__)
# Beyond this the cascade overflows a double.
MAX_EXPONENT: Final = 700.0


def _flow_pairs(pairs: Iterable[Tuple[int, float]]) -> Tuple[Tuple[int, float], ...]:
    return tuple((int(node), float(flow)) for node, flow in pairs)


@attrs.frozen
class BcDemand:
    """Flows a transmitter must deliver to several receivers in one slot."""
    tx: int
    targets: Tuple[Tuple[int, float], ...] = attrs.field(converter=_flow_pairs)
    slot_length: float = attrs.field(converter=float)

    def __attrs_post_init__(self) -> None:
        if self.slot_length < 0.0 or any(flow < 0.0 for _, flow in self.targets):
            raise DomainError(f'Negative length or flow in {self}!')

    def scaled(self, factor: float) -> 'BcDemand':
        """Scale both the flows and the slot length."""
        return BcDemand(self.tx, [(node, flow * factor) for node, flow in self.targets], self.slot_length * factor)


@attrs.frozen
class MaDemand:
    """Flows several transmitters must deliver to one receiver in one slot."""
    rx: int
    sources: Tuple[Tuple[int, float], ...] = attrs.field(converter=_flow_pairs)
    slot_length: float = attrs.field(converter=float)

    def __attrs_post_init__(self) -> None:
        if self.slot_length < 0.0 or any(flow < 0.0 for _, flow in self.sources):
            raise DomainError(f'Negative length or flow in {self}!')

    def without(self, node: int) -> 'MaDemand':
        """The same demand with one transmitter removed."""
        return MaDemand(self.rx, [pair for pair in self.sources if pair[0] != node], self.slot_length)


def superposition_snr(gain_rates: Sequence[Tuple[float, float]]) -> float:
    """Minimum SNR of a superposition cascade, in the given decoding order.

    The first entry is layered outermost: every later receiver sees it as already decoded, while it
    sees all later layers as noise. Each pair is ``(gain, per-slot rate)``.
    """
    total = 0.0
    exponent = 0.0
    for gain, rate in gain_rates:
        if rate <= 0.0:
            continue
        if gain <= 0.0:
            return math.inf
        if exponent + rate > MAX_EXPONENT:
            return math.inf
        total += math.expm1(rate) * math.exp(exponent) / gain
        exponent += rate
    return total


def bc_min_snr(demand: BcDemand, gains: np.ndarray) -> float:
    """The smallest transmit SNR at which the demand lies in the degraded BC region.

    Receivers are layered from the weakest outward, so the strongest receiver cancels everything
    else before decoding its own flow. Ties in gain do not change the result.
    """
    if demand.slot_length == 0.0:
        if any(flow > 0.0 for _, flow in demand.targets):
            raise InfeasibleDemand(f'Positive flow in a zero-length slot: {demand}')
        return 0.0
    gain_rates = sorted(
        (float(gains[demand.tx, node]), flow / demand.slot_length)
        for node, flow in demand.targets
    )
    return superposition_snr(gain_rates)


def bc_feasible(demand: BcDemand, gains: np.ndarray, snr: float) -> bool:
    """Check a broadcast demand against the available SNR."""
    try:
        return bc_min_snr(demand, gains) <= snr
    except InfeasibleDemand:
        return False


def ma_feasible(demand: MaDemand, gains: np.ndarray, snr: float, tol: float = 1e-12) -> bool:
    """Check a multiple-access demand against every subset constraint of the polymatroid."""
    if demand.slot_length == 0.0:
        return all(flow == 0.0 for _, flow in demand.sources)
    for size in range(1, len(demand.sources) + 1):
        for subset in itertools.combinations(demand.sources, size):
            flow = sum(flow for _, flow in subset)
            gain = sum(float(gains[node, demand.rx]) for node, _ in subset)
            if flow > demand.slot_length * capacity(snr * gain) + tol:
                return False
    return True


def bc_boundary_rate_pair(z_a: float, z_b: float, t: float, alpha: float, snr: float) -> Tuple[float, float]:
    """A point on the two-receiver BC boundary.

    ``alpha`` is the fraction of power spent on receiver ``a`` (the direct link). The stronger
    receiver decodes without interference from the weaker one's layer.
    """
    if not 0.0 <= alpha <= 1.0:
        raise DomainError(f'Power fraction {alpha!r} is outside [0, 1]!')
    if t < 0.0:
        raise DomainError(f'Slot length {t!r} is negative!')
    alpha_bar = 1.0 - alpha
    if z_a >= z_b:
        return (
            t * capacity(z_a * alpha * snr),
            t * capacity(z_b * alpha_bar * snr / (1.0 + z_b * alpha * snr)),
        )
    else:
        return (
            t * capacity(z_a * alpha * snr / (1.0 + z_a * alpha_bar * snr)),
            t * capacity(z_b * alpha_bar * snr),
        )


def slot_demand(alloc: FlowAllocation, slot: int) -> Union[BcDemand, MaDemand]:
    """Extract the demand placed on one slot of an allocation."""
    desc = alloc.schedule.slots[slot]
    if desc.kind is SlotKind.BC:
        return BcDemand(desc.hub, [
            (peer, alloc.flow(slot, desc.hub, peer)) for peer in desc.peers
        ], desc.length)
    else:
        return MaDemand(desc.hub, [
            (peer, alloc.flow(slot, peer, desc.hub)) for peer in desc.peers
        ], desc.length)


def validate_allocation(
    alloc: FlowAllocation,
    network: NetworkInstance,
    rate: Optional[float] = None,
    tol: float = 1e-6,
) -> List[str]:
    """Check an allocation against every constraint family, independently of any solver.

    Power constraints are checked in perspective form, ``t * (S_min / S - 1) <= tol`` for broadcast
    slots and ``sum(x) - t * C(...) <= tol`` for every multiple-access subset.
    Returns a list of problems, empty if the allocation is valid.
    """
    problems = []
    schedule = alloc.schedule
    if schedule.n_nodes != network.n_nodes:
        return [f'Allocation is for {schedule.n_nodes} nodes, network has {network.n_nodes}']
    total = float(schedule.lengths.sum())
    if abs(total - 1.0) > tol:
        problems.append(f'Slot lengths sum to {total}')
    if np.any(schedule.lengths < 0.0) or np.any(alloc.values < 0.0):
        problems.append('Negative slot length or flow')

    residuals = conservation_residuals(alloc)
    if np.any(np.abs(residuals) > max(tol, 1e-7)):
        problems.append(f'Flow not conserved: {residuals.tolist()}')

    for ind, desc in enumerate(schedule.slots):
        demand = slot_demand(alloc, ind)
        t = desc.length
        if isinstance(demand, BcDemand):
            if t == 0.0:
                if any(flow > tol for _, flow in demand.targets):
                    problems.append(f'Slot {ind} ({desc.describe()}) has zero length but carries flow')
                continue
            excess = t * (bc_min_snr(demand, network.gains) / network.snr - 1.0)
            if excess > tol:
                problems.append(f'Slot {ind} ({desc.describe()}) exceeds the power budget by {excess}')
        else:
            for size in range(1, len(demand.sources) + 1):
                for subset in itertools.combinations(demand.sources, size):
                    flow = sum(flow for _, flow in subset)
                    gain = sum(float(network.gains[node, demand.rx]) for node, _ in subset)
                    excess = flow - t * capacity(network.snr * gain)
                    if excess > tol:
                        nodes = [node for node, _ in subset]
                        problems.append(f'Slot {ind} ({desc.describe()}) MA subset {nodes} over by {excess}')

    if rate is not None and not problems:
        achieved = reduced_min_cut(alloc, tol=max(tol, 1e-7))
        if achieved < rate - tol:
            problems.append(f'Allocation carries {achieved}, less than the claimed {rate}')
    if problems:
        LOGGER.debug('Allocation failed validation: {}', problems)
    return problems
