"""Test schedules, allocations and cuts."""
import numpy as np
import pytest

from relayflow.errors import ConfigError, ContractViolation
from relayflow.flowgraph import (
    Cut, FlowAllocation, SlotDescriptor, SlotKind, SlotSchedule, canonical_schedule,
    conservation_residuals, cut_flow, enumerate_cuts, min_cut_value, reduced_min_cut,
)


def test_canonical_three_node() -> None:
    """The three-node schedule is source BC, relay listens, relay BC, destination MA."""
    schedule = canonical_schedule(3)
    assert [slot.describe() for slot in schedule] == [
        'BC 0->[1,2]',
        'MA [0]->1',
        'BC 1->[2]',
        'MA [0,1]->2',
    ]
    assert schedule.lengths.sum() == pytest.approx(1.0)


@pytest.mark.parametrize('n_nodes', [3, 4, 5, 8])
def test_canonical_sizes(n_nodes: int) -> None:
    """2N-2 slots, with N^2-2N+2 flow variables in total."""
    schedule = canonical_schedule(n_nodes)
    assert len(schedule) == 2 * n_nodes - 2
    assert len(schedule.layout) == n_nodes * n_nodes - 2 * n_nodes + 2
    kinds = [slot.kind for slot in schedule]
    assert kinds[0] is SlotKind.BC and kinds[-1] is SlotKind.MA


def test_slot_rules() -> None:
    """The source never receives and the destination never transmits."""
    with pytest.raises(ConfigError, match='source never receives'):
        SlotSchedule(3, [
            SlotDescriptor(SlotKind.BC, 1, [0, 2], 1.0),
        ])
    with pytest.raises(ConfigError, match='destination never transmits'):
        SlotSchedule(3, [
            SlotDescriptor(SlotKind.MA, 1, [0, 2], 1.0),
        ])
    with pytest.raises(ConfigError, match='hub as a peer'):
        SlotSchedule(3, [
            SlotDescriptor(SlotKind.BC, 0, [0, 2], 1.0),
        ])
    with pytest.raises(ConfigError, match='sum to 1'):
        SlotSchedule(3, [SlotDescriptor(SlotKind.BC, 0, [1, 2], 0.5)])
    with pytest.raises(ConfigError, match='At most'):
        SlotSchedule(3, [SlotDescriptor(SlotKind.BC, 0, [2], 0.2)] * 5)


def test_with_lengths_and_reorder() -> None:
    """Replacing lengths keeps the slots, reordering permutes them."""
    schedule = canonical_schedule(3)
    longer = schedule.with_lengths([0.4, 0.1, 0.2, 0.3])
    np.testing.assert_allclose(longer.lengths, [0.4, 0.1, 0.2, 0.3])
    swapped = longer.reordered([0, 2, 1, 3])
    assert swapped.slots[1] == longer.slots[2]
    with pytest.raises(ConfigError):
        schedule.with_lengths([1.0])
    with pytest.raises(ConfigError):
        schedule.reordered([0, 0, 1, 2])


def test_allocation_access() -> None:
    """Flows are looked up by slot and link, absent links carry nothing."""
    schedule = canonical_schedule(3)
    alloc = FlowAllocation.from_flows(schedule, {
        (0, (0, 1)): 0.5,
        (3, (1, 2)): 0.5,
        (3, (0, 2)): 0.25,
    })
    assert alloc.flow(0, 0, 1) == 0.5
    assert alloc.flow(0, 1, 0) == 0.0
    assert list(alloc.items()) == [(0, 0, 1, 0.5), (3, 0, 2, 0.25), (3, 1, 2, 0.5)]
    totals = alloc.link_totals()
    assert totals[0, 1] == 0.5
    assert totals[1, 2] == 0.5
    assert alloc.to_json()['flows'] == {'0:0->1': 0.5, '3:0->2': 0.25, '3:1->2': 0.5}
    with pytest.raises(ConfigError, match='not part of slot'):
        FlowAllocation.from_flows(schedule, {(1, (0, 2)): 1.0})


def test_allocation_validation() -> None:
    """Negative or missing flows are rejected."""
    schedule = canonical_schedule(3)
    with pytest.raises(ConfigError):
        FlowAllocation(schedule, np.zeros(3))
    with pytest.raises(ConfigError):
        FlowAllocation(schedule, -np.ones(len(schedule.layout)))


def test_allocation_arithmetic() -> None:
    """Allocations scale and add."""
    schedule = canonical_schedule(3)
    alloc = FlowAllocation(schedule, np.arange(len(schedule.layout), dtype=float))
    np.testing.assert_allclose((alloc + 2.0 * alloc).values, 3.0 * alloc.values)
    np.testing.assert_allclose((alloc * 0.5).values, alloc.values / 2)
    other = FlowAllocation.zeros(canonical_schedule(4))
    with pytest.raises(ConfigError):
        alloc + other


def test_enumerate_cuts() -> None:
    """Cuts run from the source alone to everything but the destination."""
    cuts = enumerate_cuts(4)
    assert [str(cut) for cut in cuts] == ['{0}', '{0,1}', '{0,2}', '{0,1,2}']
    assert len(enumerate_cuts(6)) == 16
    with pytest.raises(ConfigError):
        Cut(4, [1, 2])
    with pytest.raises(ConfigError):
        Cut(4, [0, 3])


def test_cut_values() -> None:
    """Cut flow, min-cut, and the two-cut reduction on a conserving allocation."""
    schedule = canonical_schedule(4)
    alloc = FlowAllocation.from_flows(schedule, {
        (0, (0, 1)): 0.3,
        (0, (0, 3)): 0.2,
        (2, (1, 2)): 0.1,
        (2, (1, 3)): 0.2,
        (5, (2, 3)): 0.1,
    })
    np.testing.assert_allclose(conservation_residuals(alloc), [0.0, 0.0], atol=1e-12)
    assert cut_flow(Cut(4, [0]), alloc) == pytest.approx(0.5)
    assert cut_flow(Cut(4, [0, 1]), alloc) == pytest.approx(0.2 + 0.1 + 0.2)
    assert cut_flow(Cut(4, [0, 2]), alloc) == pytest.approx(0.3 + 0.2 + 0.1)
    assert min_cut_value(alloc) == pytest.approx(0.5)
    assert reduced_min_cut(alloc) == pytest.approx(0.5)


def test_reduced_cut_needs_conservation() -> None:
    """The two-cut shortcut refuses allocations that lose flow at a relay."""
    schedule = canonical_schedule(3)
    alloc = FlowAllocation.from_flows(schedule, {(0, (0, 1)): 0.5})
    with pytest.raises(ContractViolation):
        reduced_min_cut(alloc)
    assert min_cut_value(alloc) == 0.0
