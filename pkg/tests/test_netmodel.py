"""Test the network model and fading sampler."""
import logging
import math

import numpy as np
import pytest

from relayflow.errors import ConfigError, DomainError
from relayflow.netmodel import (
    NetworkInstance, RandomSource, bits_to_nats, capacity, db_to_linear, draw_network,
    linear_to_db, nats_to_bits, preset_means, sample_gains, uniform_means,
)
from . import rng


def test_capacity() -> None:
    """Capacity is ln(1 + x), and undefined below zero."""
    assert capacity(0.0) == 0.0
    assert capacity(math.e - 1.0) == pytest.approx(1.0)
    assert capacity(1e-20) == pytest.approx(1e-20)
    with pytest.raises(DomainError):
        capacity(-0.5)
    with pytest.raises(DomainError):
        capacity(math.nan)


def test_unit_conversions() -> None:
    """Decibels and bits convert both ways."""
    assert db_to_linear(20.0) == pytest.approx(100.0)
    assert linear_to_db(1000.0) == pytest.approx(30.0)
    assert nats_to_bits(bits_to_nats(6.0)) == pytest.approx(6.0)
    assert bits_to_nats(1.0) == pytest.approx(math.log(2.0))
    with pytest.raises(DomainError):
        linear_to_db(0.0)


def test_stream_determinism() -> None:
    """The same stream always draws the same gains, different streams differ."""
    means = uniform_means(5)
    first = sample_gains(means, RandomSource(7, 3))
    again = sample_gains(means, RandomSource(7, 3))
    other = sample_gains(means, RandomSource(7, 4))
    np.testing.assert_array_equal(first, again)
    assert not np.array_equal(first, other)
    assert np.all(np.diag(first) == 0.0)


def test_sample_means(rng: np.random.Generator) -> None:
    """Sampled gains are exponential with the requested means."""
    means = np.array([
        [0.0, 2.0, 0.5],
        [1.0, 0.0, 4.0],
        [1.0, 1.0, 0.0],
    ])
    total = np.zeros((3, 3))
    count = 20_000
    for _ in range(count):
        total += sample_gains(means, rng)
    np.testing.assert_allclose(total / count, means, rtol=0.05)


def test_sample_bad_means() -> None:
    """Nonpositive means are rejected."""
    means = uniform_means(4)
    means[1, 2] = 0.0
    with pytest.raises(ConfigError, match='1->2'):
        sample_gains(means, RandomSource(0, 0))
    with pytest.raises(ConfigError):
        sample_gains(np.ones((3, 4)), RandomSource(0, 0))


def test_random_source_validation() -> None:
    """Negative seeds are not streams."""
    with pytest.raises(ConfigError):
        RandomSource(-1, 0)
    with pytest.raises(ConfigError):
        RandomSource(0, -2)


def test_instance_accessors() -> None:
    """Relays, destination and three-node triples."""
    network = draw_network(uniform_means(5), 4.0, RandomSource(1, 1))
    assert network.dest == 4
    assert list(network.relays) == [1, 2, 3]
    z_sd, z_sr, z_rd = network.relay_triple(2)
    assert z_sd == network.gain(0, 4)
    assert z_sr == network.gain(0, 2)
    assert z_rd == network.gain(2, 4)
    with pytest.raises(ConfigError):
        network.relay_triple(4)
    links = list(network.links())
    assert (0, 4) in links
    assert all(rx != 0 and tx != 4 for tx, rx in links)
    assert network.with_snr(9.0).snr == 9.0
    assert network.with_snr(9.0).gains is network.gains


def test_instance_validation() -> None:
    """Bad matrices and SNRs are rejected."""
    with pytest.raises(ConfigError):
        NetworkInstance.fixed([[0.0, 1.0], [1.0, 0.0]], 1.0)
    with pytest.raises(ConfigError):
        NetworkInstance.fixed(np.eye(3), 0.0)
    bad = np.ones((3, 3))
    bad[0, 1] = -1.0
    with pytest.raises(ConfigError):
        NetworkInstance.fixed(bad, 1.0)
    network = NetworkInstance.fixed(np.ones((3, 3)), 1.0)
    with pytest.raises(ValueError):
        network.gains[0, 1] = 5.0  # Read-only.


def test_uniform_means() -> None:
    """Uniform means are one off the diagonal."""
    means = uniform_means(4)
    assert means.shape == (4, 4)
    assert means.sum() == 12.0
    with pytest.raises(ConfigError):
        uniform_means(2)


@pytest.mark.parametrize('name, expected', [
    ('caseA', {(0, 1): 2.0, (0, 2): 2.0, (0, 3): 1.0, (1, 2): 1.0, (1, 3): 1.5, (2, 3): 1.0}),
    ('CASEB', {(0, 1): 1.5, (0, 2): 0.75, (0, 3): 1.0, (1, 2): 3.5, (1, 3): 0.2, (2, 3): 3.0}),
])
def test_presets(name: str, expected: dict) -> None:
    """The named presets carry their link means, and fill reverse links symmetrically."""
    means = preset_means(name)
    for (tx, rx), mean in expected.items():
        assert means[tx, rx] == mean
    assert means[2, 1] == expected[1, 2]
    assert np.all(np.diag(means) == 0.0)
    assert np.all(means[~np.eye(4, dtype=bool)] > 0.0)


def test_preset_errors() -> None:
    """Unknown presets, or presets at the wrong size."""
    with pytest.raises(ConfigError, match='Unknown preset'):
        preset_means('caseZ')
    with pytest.raises(ConfigError):
        preset_means('caseA', 5)
    np.testing.assert_array_equal(preset_means('uniform', 6), uniform_means(6))


def test_preset_logging(caplog: pytest.LogCaptureFixture) -> None:
    """The preset matrix is logged for debugging."""
    caplog.set_level(logging.DEBUG, 'srctools.relayflow.netmodel')
    preset_means('caseA')
    assert [
        (name, level) for name, level, _ in caplog.record_tuples
    ] == [('srctools.relayflow.netmodel', logging.DEBUG)]
