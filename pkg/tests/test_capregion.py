"""Test the broadcast and multiple-access regions."""
import itertools
import math

import numpy as np
import pytest

from relayflow.capregion import (
    BcDemand, MaDemand, bc_boundary_rate_pair, bc_feasible, bc_min_snr, ma_feasible,
    superposition_snr, validate_allocation,
)
from relayflow.errors import DomainError, InfeasibleDemand
from relayflow.flowgraph import FlowAllocation, canonical_schedule
from relayflow.netmodel import NetworkInstance, capacity
from . import rng


def star_gains(*gains: float) -> np.ndarray:
    """Gains from node 0 to each of the other nodes."""
    matrix = np.zeros((len(gains) + 1, len(gains) + 1))
    matrix[0, 1:] = gains
    return matrix


def test_single_receiver() -> None:
    """One receiver needs exactly e^R - 1 over its gain."""
    gains = star_gains(2.0)
    demand = BcDemand(0, [(1, 0.3)], 0.5)
    assert bc_min_snr(demand, gains) == pytest.approx(math.expm1(0.6) / 2.0)


def test_two_receiver_formula() -> None:
    """The weak receiver's layer is paid for at the strong receiver's noise floor."""
    gains = star_gains(0.5, 2.0)
    r_weak, r_strong = 0.4, 0.7
    expected = math.expm1(r_weak) / 0.5 + math.expm1(r_strong) * math.exp(r_weak) / 2.0
    demand = BcDemand(0, [(1, r_weak), (2, r_strong)], 1.0)
    assert bc_min_snr(demand, gains) == pytest.approx(expected)
    assert superposition_snr([(0.5, r_weak), (2.0, r_strong)]) == pytest.approx(expected)


def test_zero_length_slot() -> None:
    """A zero-length slot can only carry nothing."""
    gains = star_gains(1.0, 1.0)
    assert bc_min_snr(BcDemand(0, [(1, 0.0), (2, 0.0)], 0.0), gains) == 0.0
    with pytest.raises(InfeasibleDemand):
        bc_min_snr(BcDemand(0, [(1, 0.1)], 0.0), gains)
    assert not bc_feasible(BcDemand(0, [(1, 0.1)], 0.0), gains, 100.0)
    assert ma_feasible(MaDemand(1, [(0, 0.0)], 0.0), gains, 1.0)
    assert not ma_feasible(MaDemand(1, [(0, 0.1)], 0.0), gains, 1.0)


def test_zero_gain_receiver() -> None:
    """Dead receivers are free when idle and impossible otherwise."""
    gains = star_gains(0.0, 1.0)
    assert math.isfinite(bc_min_snr(BcDemand(0, [(1, 0.0), (2, 0.5)], 1.0), gains))
    assert bc_min_snr(BcDemand(0, [(1, 0.1), (2, 0.5)], 1.0), gains) == math.inf


def test_negative_demand() -> None:
    """Negative flows and lengths are not demands."""
    with pytest.raises(DomainError):
        BcDemand(0, [(1, -0.1)], 1.0)
    with pytest.raises(DomainError):
        MaDemand(1, [(0, 0.1)], -1.0)


def test_bc_feasible_boundary() -> None:
    """Exactly the minimum SNR is feasible, slightly less is not."""
    gains = star_gains(0.8, 1.5, 3.0)
    demand = BcDemand(0, [(1, 0.2), (2, 0.3), (3, 0.1)], 0.6)
    needed = bc_min_snr(demand, gains)
    assert bc_feasible(demand, gains, needed)
    assert not bc_feasible(demand, gains, needed * 0.999)


def test_bc_properties(rng: np.random.Generator) -> None:
    """Monotone, convex, and weakest-first is the cheapest decoding order."""
    for _ in range(300):
        count = int(rng.integers(2, 5))
        gains = star_gains(*rng.standard_exponential(count))
        rates_a = rng.standard_exponential(count)
        rates_b = rng.standard_exponential(count)

        def min_snr(rates: np.ndarray) -> float:
            return bc_min_snr(BcDemand(0, list(zip(range(1, count + 1), rates)), 1.0), gains)

        snr_a, snr_b = min_snr(rates_a), min_snr(rates_b)
        tol = 1e-9 * (1.0 + snr_a + snr_b)
        assert min_snr((rates_a + rates_b) / 2.0) <= (snr_a + snr_b) / 2.0 + tol
        assert min_snr(rates_a + 0.1) >= snr_a
        pairs = [(float(gains[0, node]), float(rates_a[node - 1])) for node in range(1, count + 1)]
        for order in itertools.permutations(pairs):
            assert superposition_snr(order) >= snr_a - tol


def test_bc_three_receivers_against_grid() -> None:
    """No power split found by brute force is cheaper than the superposition cascade."""
    z = np.array([4.0, 2.0, 1.0])
    rates = np.array([0.5, 0.3, 0.2])
    needed = bc_min_snr(BcDemand(0, list(zip([1, 2, 3], rates)), 1.0), star_gains(*z))

    steps = np.linspace(0.0, 1.0, 401)
    a, b = np.meshgrid(steps, steps, indexing='ij')
    inside = a + b <= 1.0
    shares = np.stack([a[inside], b[inside], 1.0 - a[inside] - b[inside]])
    cheapest = math.inf
    for total in np.linspace(0.95 * needed, 1.1 * needed, 601):
        power = shares * total
        # Each receiver cancels the weaker receivers' layers and hears the stronger ones as noise.
        noise = np.stack([np.zeros(power.shape[1]), power[0], power[0] + power[1]])
        achieved = np.log1p(z[:, None] * power / (1.0 + z[:, None] * noise))
        if np.any(np.all(achieved >= rates[:, None], axis=0)):
            cheapest = float(total)
            break
    assert cheapest >= needed * (1.0 - 1e-12)
    assert cheapest == pytest.approx(needed, rel=0.02)


def test_ma_against_subset_search(rng: np.random.Generator) -> None:
    """The MA verdict matches checking every transmitter subset by hand."""
    feasible = checked = 0
    for _ in range(400):
        count = int(rng.integers(1, 5))
        rx = count
        gains = np.zeros((count + 1, count + 1))
        gains[:count, rx] = rng.standard_exponential(count)
        snr = float(rng.uniform(0.5, 20.0))
        t = float(rng.uniform(0.1, 1.0))
        flows = rng.uniform(0.0, 1.2, count) * t
        margin = min(
            t * math.log1p(snr * gains[list(subset), rx].sum()) - flows[list(subset)].sum()
            for size in range(1, count + 1)
            for subset in itertools.combinations(range(count), size)
        )
        if abs(margin) < 1e-9:
            continue
        checked += 1
        feasible += margin > 0.0
        assert ma_feasible(MaDemand(rx, list(zip(range(count), flows)), t), gains, snr) == (margin > 0.0)
    assert 0 < feasible < checked


def test_scaling_invariance() -> None:
    """Scaling flows and length together keeps the per-slot rate."""
    gains = star_gains(1.0, 2.0)
    demand = BcDemand(0, [(1, 0.1), (2, 0.2)], 0.4)
    assert bc_min_snr(demand.scaled(2.5), gains) == pytest.approx(bc_min_snr(demand, gains))


def test_ma_subsets() -> None:
    """Every subset of transmitters is limited, not only the full set."""
    gains = np.zeros((3, 3))
    gains[0, 2] = 1.0
    gains[1, 2] = 3.0
    snr = 2.0
    fits = MaDemand(2, [(0, capacity(2.0)), (1, capacity(8.0) - capacity(2.0))], 1.0)
    assert ma_feasible(fits, gains, snr)
    # Within the sum limit, but the first link alone cannot carry it.
    single = MaDemand(2, [(0, capacity(2.0) + 0.01), (1, 0.1)], 1.0)
    assert not ma_feasible(single, gains, snr)
    total = MaDemand(2, [(0, capacity(2.0)), (1, capacity(6.0))], 1.0)
    assert not ma_feasible(total, gains, snr)
    assert ma_feasible(total.without(0), gains, snr)


@pytest.mark.parametrize('z_a, z_b', [(2.0, 0.5), (0.5, 2.0), (1.0, 1.0)])
def test_boundary_pair(z_a: float, z_b: float) -> None:
    """Boundary points are feasible with equality, and span the corner points."""
    snr, t = 5.0, 0.6
    for alpha in np.linspace(0.0, 1.0, 11):
        rate_a, rate_b = bc_boundary_rate_pair(z_a, z_b, t, float(alpha), snr)
        demand = BcDemand(0, [(1, rate_a), (2, rate_b)], t)
        assert bc_min_snr(demand, star_gains(z_a, z_b)) == pytest.approx(snr, rel=1e-9)
    assert bc_boundary_rate_pair(z_a, z_b, t, 1.0, snr) == pytest.approx((t * capacity(z_a * snr), 0.0))
    assert bc_boundary_rate_pair(z_a, z_b, t, 0.0, snr) == pytest.approx((0.0, t * capacity(z_b * snr)))
    with pytest.raises(DomainError):
        bc_boundary_rate_pair(z_a, z_b, t, 1.5, snr)


def test_validate_allocation() -> None:
    """The checker accepts a valid direct allocation and names every violation."""
    network = NetworkInstance.fixed([
        [0.0, 1.0, 2.0],
        [0.0, 0.0, 1.0],
        [0.0, 0.0, 0.0],
    ], 3.0)
    schedule = canonical_schedule(3, [1.0, 0.0, 0.0, 0.0])
    good = FlowAllocation.from_flows(schedule, {(0, (0, 2)): capacity(6.0)})
    assert validate_allocation(good, network, capacity(6.0)) == []

    greedy = FlowAllocation.from_flows(schedule, {(0, (0, 2)): capacity(6.0) + 0.1})
    [problem] = validate_allocation(greedy, network)
    assert 'power budget' in problem

    assert any('less than the claimed' in problem for problem in validate_allocation(good, network, 2.0))

    leaky = FlowAllocation.from_flows(schedule, {(0, (0, 1)): 0.1})
    assert any('not conserved' in problem for problem in validate_allocation(leaky, network))

    idle = FlowAllocation.from_flows(schedule, {(3, (0, 2)): 0.1})
    assert any('MA subset' in problem for problem in validate_allocation(idle, network))
