"""Slots, flows and cuts of the time-shared relay network.

A unit time interval is divided into slots. Each slot is a star: a broadcast (BC) slot has one
transmitting hub and several receivers, a multiple-access (MA) slot several transmitters and one
receiving hub. Summing the per-slot flows gives the equivalent graph, whose cuts bound the rate.
"""
from typing import (
    Any, Dict, Final, FrozenSet, Iterable, Iterator, List, Mapping, Optional, Sequence, Tuple,
)
from typing_extensions import Self, TypeAlias
from enum import Enum
import itertools

from srctools.logger import get_logger
import attrs
import numpy as np

from .errors import ConfigError, ContractViolation
from .netmodel import SOURCE


__all__ = [
    'SlotKind', 'SlotDescriptor', 'SlotSchedule', 'FlowLayout', 'FlowAllocation', 'Cut',
    'canonical_schedule', 'enumerate_cuts', 'cut_flow', 'conservation_residuals',
    'min_cut_value', 'reduced_min_cut', 'CONSERVATION_TOL',
]
LOGGER = get_logger(__name__)

CONSERVATION_TOL: Final = 1e-7
LENGTH_TOL: Final = 1e-9
Link: TypeAlias = Tuple[int, int]


class SlotKind(Enum):
    """The two kinds of basic graph."""
    BC = 'bc'
    MA = 'ma'


@attrs.frozen
class SlotDescriptor:
    """One slot of a schedule."""
    kind: SlotKind
    hub: int
    peers: Tuple[int, ...] = attrs.field(converter=tuple)
    length: float = attrs.field(default=0.0, converter=float)

    def links(self) -> List[Link]:
        """The directed links active in this slot, in peer order."""
        if self.kind is SlotKind.BC:
            return [(self.hub, peer) for peer in self.peers]
        else:
            return [(peer, self.hub) for peer in self.peers]

    def check(self, n_nodes: int) -> None:
        """Verify the half-duplex slot rules for a network of this size."""
        dest = n_nodes - 1
        if not self.peers:
            raise ConfigError(f'Slot {self} has no peers!')
        if len(set(self.peers)) != len(self.peers):
            raise ConfigError(f'Slot {self} lists a peer twice!')
        if self.hub in self.peers:
            raise ConfigError(f'Slot {self} cannot have its hub as a peer!')
        if not 0 <= self.hub < n_nodes or not all(0 <= peer < n_nodes for peer in self.peers):
            raise ConfigError(f'Slot {self} refers to nodes outside 0-{dest}!')
        if self.length < 0.0:
            raise ConfigError(f'Slot {self} has a negative length!')

        if self.kind is SlotKind.BC:
            if self.hub == dest:
                raise ConfigError('The destination never transmits!')
            if SOURCE in self.peers:
                raise ConfigError('The source never receives!')
        else:
            if self.hub == SOURCE:
                raise ConfigError('The source never receives!')
            if dest in self.peers:
                raise ConfigError('The destination never transmits!')

    def describe(self) -> str:
        """A short label like ``BC 0->[1,2,3]``."""
        peers = ','.join(map(str, self.peers))
        if self.kind is SlotKind.BC:
            return f'BC {self.hub}->[{peers}]'
        else:
            return f'MA [{peers}]->{self.hub}'


@attrs.frozen
class FlowLayout:
    """Assigns a vector index to every (slot, link) pair of a schedule."""
    entries: Tuple[Tuple[int, int, int], ...]
    index: Mapping[Tuple[int, int, int], int] = attrs.field(eq=False)

    @classmethod
    def for_slots(cls, slots: Sequence[SlotDescriptor]) -> Self:
        """Lay out the flows of these slots."""
        entries = tuple(
            (ind, tx, rx)
            for ind, slot in enumerate(slots)
            for tx, rx in slot.links()
        )
        return cls(entries, {entry: pos for pos, entry in enumerate(entries)})

    def __len__(self) -> int:
        return len(self.entries)

    def slot_indices(self, slot: int) -> List[int]:
        """Positions of the flows belonging to this slot."""
        return [pos for pos, (ind, _, _) in enumerate(self.entries) if ind == slot]


@attrs.frozen
class SlotSchedule:
    """An ordered list of slots whose lengths sum to one."""
    n_nodes: int
    slots: Tuple[SlotDescriptor, ...] = attrs.field(converter=tuple)
    layout: FlowLayout = attrs.field(init=False, eq=False, repr=False)

    def __attrs_post_init__(self) -> None:
        if self.n_nodes < 3:
            raise ConfigError(f'A relay network needs at least 3 nodes, not {self.n_nodes}!')
        if len(self.slots) > 2 * self.n_nodes - 2:
            raise ConfigError(
                f'At most {2 * self.n_nodes - 2} slots fit a {self.n_nodes}-node network, '
                f'got {len(self.slots)}!'
            )
        for slot in self.slots:
            slot.check(self.n_nodes)
        total = sum(slot.length for slot in self.slots)
        if abs(total - 1.0) > LENGTH_TOL:
            raise ConfigError(f'Slot lengths must sum to 1, not {total!r}!')
        object.__setattr__(self, 'layout', FlowLayout.for_slots(self.slots))

    def __len__(self) -> int:
        return len(self.slots)

    def __iter__(self) -> Iterator[SlotDescriptor]:
        return iter(self.slots)

    @property
    def lengths(self) -> np.ndarray:
        """The slot lengths as a vector."""
        return np.array([slot.length for slot in self.slots])

    def with_lengths(self, lengths: Iterable[float]) -> 'SlotSchedule':
        """The same slots with new lengths."""
        lengths = list(lengths)
        if len(lengths) != len(self.slots):
            raise ConfigError(f'Expected {len(self.slots)} lengths, got {len(lengths)}!')
        return SlotSchedule(self.n_nodes, [
            attrs.evolve(slot, length=length)
            for slot, length in zip(self.slots, lengths)
        ])

    def reordered(self, order: Sequence[int]) -> 'SlotSchedule':
        """The same slots, permuted."""
        if sorted(order) != list(range(len(self.slots))):
            raise ConfigError(f'{order!r} is not a permutation of the slots!')
        return SlotSchedule(self.n_nodes, [self.slots[ind] for ind in order])

    def to_json(self) -> List[Dict[str, Any]]:
        """Debug representation."""
        return [
            {
                'kind': slot.kind.value,
                'hub': slot.hub,
                'peers': list(slot.peers),
                'length': slot.length,
            } for slot in self.slots
        ]


def canonical_schedule(n_nodes: int, lengths: Optional[Iterable[float]] = None) -> SlotSchedule:
    """Build the 2N-2 slot schedule in the fixed order.

    The source broadcasts first, then each relay in turn receives (MA) and broadcasts (BC), and
    the destination receives from everyone in the last slot. Lengths default to equal shares.
    """
    if n_nodes < 3:
        raise ConfigError(f'A relay network needs at least 3 nodes, not {n_nodes}!')
    dest = n_nodes - 1
    relays = range(1, dest)
    slots = [SlotDescriptor(SlotKind.BC, SOURCE, range(1, n_nodes))]
    for relay in relays:
        others = [other for other in relays if other != relay]
        slots.append(SlotDescriptor(SlotKind.MA, relay, [SOURCE, *others]))
        slots.append(SlotDescriptor(SlotKind.BC, relay, [*others, dest]))
    slots.append(SlotDescriptor(SlotKind.MA, dest, range(dest)))

    if lengths is None:
        lengths = [1.0 / len(slots)] * len(slots)
    return SlotSchedule(n_nodes, [
        attrs.evolve(slot, length=length)
        for slot, length in zip(slots, lengths, strict=True)
    ])


def _frozen_vector(value: Iterable[float]) -> np.ndarray:
    arr = np.array(value, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@attrs.frozen(eq=False)
class FlowAllocation:
    """Nonnegative flows for every (slot, link) pair of a schedule."""
    schedule: SlotSchedule
    values: np.ndarray = attrs.field(converter=_frozen_vector)

    def __attrs_post_init__(self) -> None:
        if self.values.shape != (len(self.schedule.layout), ):
            raise ConfigError(
                f'Expected {len(self.schedule.layout)} flows for this schedule, '
                f'got {self.values.shape}!'
            )
        if np.any(self.values < 0.0) or not np.all(np.isfinite(self.values)):
            raise ConfigError('Flows must be finite and nonnegative!')

    @classmethod
    def zeros(cls, schedule: SlotSchedule) -> Self:
        """An allocation carrying nothing."""
        return cls(schedule, np.zeros(len(schedule.layout)))

    @classmethod
    def from_flows(cls, schedule: SlotSchedule, flows: Mapping[Tuple[int, Link], float]) -> Self:
        """Build from a ``{(slot, (tx, rx)): flow}`` mapping."""
        values = np.zeros(len(schedule.layout))
        for (slot, (tx, rx)), flow in flows.items():
            try:
                values[schedule.layout.index[slot, tx, rx]] = flow
            except KeyError:
                raise ConfigError(f'Link {tx}->{rx} is not part of slot {slot}!') from None
        return cls(schedule, values)

    @property
    def n_nodes(self) -> int:
        """Size of the network."""
        return self.schedule.n_nodes

    def flow(self, slot: int, tx: int, rx: int) -> float:
        """The flow on one link in one slot, zero if the link is not in the slot."""
        try:
            return float(self.values[self.schedule.layout.index[slot, tx, rx]])
        except KeyError:
            return 0.0

    def items(self) -> Iterator[Tuple[int, int, int, float]]:
        """Yield ``(slot, tx, rx, flow)`` for every positive flow."""
        for (slot, tx, rx), value in zip(self.schedule.layout.entries, self.values):
            if value > 0.0:
                yield slot, tx, rx, float(value)

    def link_totals(self) -> np.ndarray:
        """The equivalent-graph matrix ``x_AB``, summed over all slots."""
        totals = np.zeros((self.n_nodes, self.n_nodes))
        for (slot, tx, rx), value in zip(self.schedule.layout.entries, self.values):
            totals[tx, rx] += value
        return totals

    def __add__(self, other: 'FlowAllocation') -> 'FlowAllocation':
        if not isinstance(other, FlowAllocation):
            return NotImplemented
        if other.schedule.layout.entries != self.schedule.layout.entries:
            raise ConfigError('Cannot add allocations over different slot layouts!')
        return FlowAllocation(self.schedule, self.values + other.values)

    def __mul__(self, scale: float) -> 'FlowAllocation':
        if not isinstance(scale, (int, float)):
            return NotImplemented
        return FlowAllocation(self.schedule, self.values * scale)

    __rmul__ = __mul__

    def to_json(self) -> Dict[str, Any]:
        """Debug representation, with flows keyed ``"slot:A->B"``."""
        return {
            'slots': self.schedule.to_json(),
            'flows': {
                f'{slot}:{tx}->{rx}': flow
                for slot, tx, rx, flow in self.items()
            },
        }


@attrs.frozen
class Cut:
    """A partition of the nodes, with the source inside and the destination outside."""
    n_nodes: int
    source_side: FrozenSet[int] = attrs.field(converter=frozenset)

    def __attrs_post_init__(self) -> None:
        if SOURCE not in self.source_side:
            raise ConfigError(f'Cut {sorted(self.source_side)} must contain the source!')
        if self.n_nodes - 1 in self.source_side:
            raise ConfigError(f'Cut {sorted(self.source_side)} must exclude the destination!')
        if not all(0 <= node < self.n_nodes for node in self.source_side):
            raise ConfigError(f'Cut {sorted(self.source_side)} has unknown nodes!')

    def crosses(self, tx: int, rx: int) -> bool:
        """Check if the link goes from the source side to the destination side."""
        return tx in self.source_side and rx not in self.source_side

    def mask(self) -> np.ndarray:
        """Boolean membership vector of the source side."""
        mask = np.zeros(self.n_nodes, dtype=bool)
        mask[list(self.source_side)] = True
        return mask

    def __str__(self) -> str:
        return '{' + ','.join(map(str, sorted(self.source_side))) + '}'


def enumerate_cuts(n_nodes: int) -> List[Cut]:
    """Every one of the 2^(N-2) cuts, starting with ``{S}`` and ending with all but the destination."""
    if n_nodes < 3:
        raise ConfigError(f'A relay network needs at least 3 nodes, not {n_nodes}!')
    relays = range(1, n_nodes - 1)
    cuts = []
    for picked in itertools.product((False, True), repeat=len(relays)):
        # Reverse so the first relay is the lowest bit.
        members = [relay for relay, inside in zip(relays, reversed(picked)) if inside]
        cuts.append(Cut(n_nodes, [SOURCE, *members]))
    return cuts


def _cut_flow_totals(cut: Cut, totals: np.ndarray) -> float:
    mask = cut.mask()
    return float(totals[np.ix_(mask, ~mask)].sum())


def cut_flow(cut: Cut, alloc: FlowAllocation) -> float:
    """The total flow across the cut, from the source side to the destination side."""
    if cut.n_nodes != alloc.n_nodes:
        raise ConfigError(f'Cut for {cut.n_nodes} nodes used on a {alloc.n_nodes}-node allocation!')
    return _cut_flow_totals(cut, alloc.link_totals())


def conservation_residuals(alloc: FlowAllocation) -> np.ndarray:
    """Outflow minus inflow of every relay, over the whole interval."""
    totals = alloc.link_totals()
    residual = totals.sum(axis=1) - totals.sum(axis=0)
    return residual[1:-1]


def min_cut_value(alloc: FlowAllocation) -> float:
    """The smallest flow across any cut."""
    totals = alloc.link_totals()
    return min(_cut_flow_totals(cut, totals) for cut in enumerate_cuts(alloc.n_nodes))


def reduced_min_cut(alloc: FlowAllocation, tol: float = CONSERVATION_TOL) -> float:
    """The min-cut, evaluated over the source and destination cuts only.

    This is only valid when every relay passes on exactly what it receives.
    """
    residuals = conservation_residuals(alloc)
    if np.any(np.abs(residuals) > tol):
        raise ContractViolation(
            f'Reduced min-cut needs flow conservation, residuals are {residuals.tolist()}!'
        )
    totals = alloc.link_totals()
    dest = alloc.n_nodes - 1
    return min(float(totals[SOURCE, :].sum()), float(totals[:, dest].sum()))
