"""Test the protocol registry and the baseline protocols."""
from pathlib import Path

import pytest

from relayflow import protocols
from relayflow.errors import ConfigError, DomainError
from relayflow.netmodel import NetworkInstance, capacity
from relayflow.protocols import (
    ProtocolOutcome, ProtocolSettings, candidate_relays, direct, evaluate, gls, lookup,
    max_min_selection,
)
from relayflow.three_node import solve_three_node
from . import draw, four_node, links


def test_registry() -> None:
    """Every protocol is registered, and lookups ignore case and padding."""
    assert set(protocols.PROTOCOLS) >= {'direct', 'gls', 'maxmin', 'fo', 'bound'}
    assert lookup(' GLS ').name == 'gls'
    costs = {name: reg.cost for name, reg in protocols.PROTOCOLS.items()}
    assert costs['maxmin'] < costs['gls'] < costs['fo'] < costs['bound']
    with pytest.raises(ConfigError, match='Unknown protocol'):
        lookup('amplify')
    with pytest.raises(ValueError):
        protocols.protocol('a,b')


def test_negative_rate() -> None:
    """Outcomes never carry negative or missing rates."""
    with pytest.raises(DomainError):
        ProtocolOutcome('direct', -0.1)
    with pytest.raises(DomainError):
        ProtocolOutcome('direct', float('nan'))


def test_direct() -> None:
    """Direct transmission only uses the source-destination link."""
    network = links(4, {(0, 3): 0.5, (0, 1): 10.0, (1, 3): 10.0}, 8.0)
    outcome = direct(network)
    assert outcome.rate == capacity(4.0)
    assert outcome.relay is None
    assert evaluate('direct', network).rate == outcome.rate


def test_gls_without_candidates() -> None:
    """If no relay hears the source better than the destination, GLS sends directly."""
    network = links(4, {(0, 3): 2.0, (0, 1): 1.0, (0, 2): 2.0, (1, 3): 5.0, (2, 3): 5.0}, 10.0)
    assert candidate_relays(network) == []
    outcome = gls(network)
    assert outcome.protocol == 'gls'
    assert outcome.rate == capacity(20.0)
    assert outcome.relay is None
    assert outcome.searches == 0


def test_gls_picks_the_best_relay(four_node) -> None:
    """GLS returns the best three-node rate over the candidate relays."""
    outcome = gls(four_node)
    expected = max(
        solve_three_node(*four_node.relay_triple(relay), four_node.snr).rate
        for relay in candidate_relays(four_node)
    )
    assert outcome.rate == expected
    assert outcome.relay in candidate_relays(four_node)
    assert outcome.searches <= four_node.n_nodes - 2


@pytest.mark.parametrize('n_nodes', [4, 5, 6])
def test_gls_search_count(n_nodes: int) -> None:
    """At most N-2 scalar searches run."""
    for index in range(5):
        assert gls(draw(n_nodes, index)).searches <= n_nodes - 2


@pytest.mark.parametrize('scale', [1e-3, 0.5, 7.0, 1e4])
def test_gls_ignores_common_scale(scale: float) -> None:
    """Candidates only compare gains, and a common gain factor trades against the SNR."""
    for index in range(5):
        network = draw(5, index)
        scaled = NetworkInstance.fixed(network.gains * scale, network.snr)
        assert candidate_relays(scaled) == candidate_relays(network)
        louder = gls(NetworkInstance.fixed(network.gains, network.snr * scale))
        outcome = gls(scaled)
        assert outcome.relay == louder.relay
        assert outcome.rate == pytest.approx(louder.rate, rel=1e-7)


def test_maxmin_tie_goes_to_lowest_index() -> None:
    """Relays with the same bottleneck are broken by index."""
    network = links(4, {(0, 3): 0.1, (0, 1): 2.0, (1, 3): 1.0, (0, 2): 1.0, (2, 3): 2.0}, 10.0)
    outcome = max_min_selection(network)
    assert outcome.relay == 1
    assert outcome.rate == pytest.approx(0.5 * min(capacity(20.0), capacity(11.0)))


def test_maxmin_falls_back_to_direct() -> None:
    """A strong direct link beats two half-length hops."""
    network = links(4, {(0, 3): 5.0, (0, 1): 6.0, (1, 3): 6.0}, 10.0)
    outcome = max_min_selection(network)
    assert outcome.relay is None
    assert outcome.rate == capacity(50.0)


@pytest.mark.parametrize('index', range(3))
def test_rate_ordering(index: int) -> None:
    """direct <= maxmin, gls <= fo <= bound on every realization."""
    network = draw(4, index)
    rates = {
        name: evaluate(name, network).rate
        for name in ['direct', 'maxmin', 'gls', 'fo', 'bound']
    }
    assert rates['direct'] <= rates['gls']
    assert rates['direct'] <= rates['maxmin']
    assert rates['maxmin'] <= rates['gls'] + 1e-5
    assert rates['gls'] <= rates['fo'] + 1e-9
    assert rates['fo'] <= rates['bound'] + 1e-9


def test_fo_dump(tmp_path: Path, four_node) -> None:
    """Setting a dump folder writes the solved program there."""
    settings = ProtocolSettings(dump_folder=tmp_path / 'dumps', dump_tag='test')
    outcome = evaluate('fo', four_node, settings)
    assert outcome.rate > 0.0
    assert (tmp_path / 'dumps' / 'fo_test.json').is_file()
