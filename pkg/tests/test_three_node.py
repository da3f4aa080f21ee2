"""Test the exact three-node optimum."""
import math

import numpy as np
import pytest

from relayflow.errors import DomainError
from relayflow.netmodel import capacity
from relayflow.three_node import (
    Strategy, case_ii_rate, golden_section_max, rate_curve, rate_given_t2, relay_limited_rate,
    solve_three_node, t2_max,
)
from relayflow.verify import grid_three_node
from . import draw, rng


def test_golden_section() -> None:
    """The search brackets the peak of a unimodal function."""
    lo, hi = golden_section_max(lambda x: -(x - 0.3) ** 2, 0.0, 1.0, tol=1e-8)
    assert hi - lo <= 1e-8
    assert lo <= 0.3 + 1e-8 and hi >= 0.3 - 1e-8
    # Tiny intervals return immediately.
    assert golden_section_max(math.sin, 0.5, 0.5) == (0.5, 0.5)


def test_direct_when_relay_is_weaker() -> None:
    """If the relay hears less than the destination, relaying never helps."""
    result = solve_three_node(2.0, 1.0, 50.0, 10.0)
    assert result.strategy is Strategy.DIRECT
    assert result.rate == capacity(20.0)
    assert not result.searched
    assert result.t1_opt == 1.0


def test_t2_max_continuity() -> None:
    """At t2_max the relay-starved and direct-saturated schedules meet."""
    z_sd, z_sr, z_rd, snr = 0.3, 2.0, 1.5, 20.0
    limit = t2_max(z_sd, z_sr, z_rd, snr)
    assert 0.0 < limit < 1.0
    limited = relay_limited_rate(z_sd, z_sr, z_rd, snr)
    assert case_ii_rate(z_sd, z_sr, z_rd, snr, limit) == pytest.approx(limited)
    assert rate_given_t2(z_sd, z_sr, z_rd, snr, limit)[0] == pytest.approx(limited)
    # Longer second slots only starve the relay further.
    assert case_ii_rate(z_sd, z_sr, z_rd, snr, (1.0 + limit) / 2.0) < limited
    with pytest.raises(DomainError):
        case_ii_rate(z_sd, z_sr, z_rd, snr, limit / 2.0)


def test_t2_max_alternate_form(rng: np.random.Generator) -> None:
    """t2_max also follows from what the relay adds over the direct link, treated as noise."""
    for _ in range(200):
        z_sd, z_sr, z_rd = rng.standard_exponential(3)
        snr = float(10.0 ** rng.uniform(-1.0, 4.0))
        c_sr = capacity(z_sr * snr)
        extra = capacity(z_rd * snr / (1.0 + z_sd * snr))
        assert t2_max(z_sd, z_sr, z_rd, snr) == pytest.approx(c_sr / (c_sr + extra), rel=1e-9)


def test_rate_is_monotone(rng: np.random.Generator) -> None:
    """A stronger link or more power never lowers the optimum."""
    for _ in range(100):
        params = np.append(rng.standard_exponential(3), 10.0 ** rng.uniform(-1.0, 3.0))
        base = solve_three_node(*params).rate
        for ind in range(4):
            bigger = params.copy()
            bigger[ind] *= 1.0 + rng.uniform(0.01, 1.0)
            assert solve_three_node(*bigger).rate >= base - 1e-8, (params, ind)


def test_rate_curve_matches_scalar() -> None:
    """The vectorised curve agrees with the scalar evaluation."""
    z_sd, z_sr, z_rd, snr = 0.5, 3.0, 2.0, 8.0
    grid = np.linspace(0.0, t2_max(z_sd, z_sr, z_rd, snr), 37)
    curve = rate_curve(z_sd, z_sr, z_rd, snr, grid)
    for t2, value in zip(grid, curve):
        assert value == pytest.approx(rate_given_t2(z_sd, z_sr, z_rd, snr, float(t2))[0], rel=1e-12)


def test_flows_are_consistent() -> None:
    """The relay forwards what it hears, and the rate is everything the destination gets."""
    result = solve_three_node(0.2, 4.0, 3.0, 30.0)
    assert result.strategy is Strategy.RELAYED
    assert result.searched
    x1, x2, x3, x4 = result.flows
    assert x2 == x4
    assert result.rate == pytest.approx(x1 + x2 + x3)
    assert result.rate > capacity(0.2 * 30.0)
    assert 0.0 < result.t2_opt <= t2_max(0.2, 4.0, 3.0, 30.0)
    assert 0.0 <= result.alpha_bar_opt <= 1.0


@pytest.mark.parametrize('index', range(12))
def test_matches_grid_oracle(index: int) -> None:
    """A zooming 2-D grid over slot and power splits finds the same optimum."""
    network = draw(3, index, snr=[1.0, 10.0, 100.0][index % 3])
    triple = network.relay_triple(1)
    result = solve_three_node(*triple, network.snr)
    assert result.rate == pytest.approx(grid_three_node(*triple, network.snr), abs=1e-3)


def test_bad_parameters() -> None:
    """Negative gains and nonpositive SNRs are rejected."""
    with pytest.raises(DomainError):
        solve_three_node(-1.0, 1.0, 1.0, 1.0)
    with pytest.raises(DomainError):
        solve_three_node(1.0, 2.0, 1.0, 0.0)
    with pytest.raises(DomainError):
        rate_given_t2(2.0, 1.0, 1.0, 1.0, 0.1)
    with pytest.raises(DomainError):
        rate_given_t2(0.5, 1.0, 1.0, 1.0, 0.99)
