from typing import Mapping, Tuple

import numpy as np
import pytest

from relayflow.netmodel import NetworkInstance, RandomSource, draw_network, uniform_means


def draw(n_nodes: int, index: int, snr: float = 10.0, seed: int = 1234) -> NetworkInstance:
    """A reproducible unit-mean realization."""
    return draw_network(uniform_means(n_nodes), snr, RandomSource(seed, index))


def links(n_nodes: int, gains: Mapping[Tuple[int, int], float], snr: float) -> NetworkInstance:
    """A network where only the listed links exist."""
    return NetworkInstance.from_links(n_nodes, gains, snr)


@pytest.fixture
def rng() -> np.random.Generator:
    """A fresh generator, seeded the same for every test."""
    return RandomSource(99, 0).generator()


@pytest.fixture
def four_node() -> NetworkInstance:
    """A hand-written 4-node network where both relays help."""
    return NetworkInstance.fixed([
        [0.0, 3.0, 2.5, 0.4],
        [0.0, 0.0, 1.2, 2.0],
        [0.0, 0.8, 0.0, 1.7],
        [0.0, 0.0, 0.0, 0.0],
    ], 10.0)
