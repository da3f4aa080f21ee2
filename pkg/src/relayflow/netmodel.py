"""Network description, fading sampler and the elementary channel math.

Node 0 is always the source, node ``n - 1`` the destination, everything between is a relay.
Rates are kept in nats everywhere inside the package, bits only appear at the reporting boundary.
"""
from typing import Dict, Final, Iterator, Mapping, Sequence, Tuple, Union
from typing_extensions import Self, TypeAlias
import math

from srctools.logger import get_logger
import attrs
import numpy as np

from .errors import ConfigError, DomainError


__all__ = [
    'SOURCE', 'NATS_PER_BIT', 'PRESETS', 'GAIN_EPS',
    'NetworkInstance', 'RandomSource',
    'capacity', 'db_to_linear', 'linear_to_db', 'bits_to_nats', 'nats_to_bits',
    'sample_gains', 'preset_means', 'uniform_means', 'draw_network',
]
LOGGER = get_logger(__name__)

SOURCE: Final = 0
NATS_PER_BIT: Final = math.log(2.0)
# Links weaker than this are treated as absent by the solvers.
GAIN_EPS: Final = 1e-12
MatrixLike: TypeAlias = Union[np.ndarray, Sequence[Sequence[float]]]

# Named link means, as (tx, rx) -> E[Z]. Nodes: S=0, R1=1, R2=2, D=3.
PRESETS: Final[Mapping[str, Dict[Tuple[int, int], float]]] = {
    'casea': {
        (0, 1): 2.0, (0, 2): 2.0, (0, 3): 1.0,
        (1, 2): 1.0, (1, 3): 1.5, (2, 3): 1.0,
    },
    'caseb': {
        (0, 1): 1.5, (0, 2): 0.75, (0, 3): 1.0,
        (1, 2): 3.5, (1, 3): 0.2, (2, 3): 3.0,
    },
}


def capacity(x: float) -> float:
    """The AWGN capacity ``ln(1 + x)`` in nats."""
    if x < 0.0 or math.isnan(x):
        raise DomainError(f'Capacity of negative SNR {x!r} is undefined!')
    return math.log1p(x)


def db_to_linear(snr_db: float) -> float:
    """Convert decibels to a linear power ratio."""
    return 10.0 ** (snr_db / 10.0)


def linear_to_db(snr: float) -> float:
    """Convert a linear power ratio to decibels."""
    if snr <= 0.0:
        raise DomainError(f'Cannot express {snr!r} in decibels!')
    return 10.0 * math.log10(snr)


def bits_to_nats(rate: float) -> float:
    """Convert bits/s/Hz to nats."""
    return rate * NATS_PER_BIT


def nats_to_bits(rate: float) -> float:
    """Convert nats to bits/s/Hz."""
    return rate / NATS_PER_BIT


def _frozen_matrix(value: MatrixLike) -> np.ndarray:
    """Copy into a read-only float matrix."""
    arr = np.array(value, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@attrs.frozen(eq=False)
class RandomSource:
    """Identifies one independent random stream.

    Each trial gets its own stream, so results do not depend on which worker ran it.
    """
    seed: int = attrs.field(converter=int)
    stream_id: int = attrs.field(converter=int)

    def __attrs_post_init__(self) -> None:
        if self.seed < 0 or self.stream_id < 0:
            raise ConfigError(f'Seeds must be nonnegative, not ({self.seed}, {self.stream_id})!')

    def generator(self) -> np.random.Generator:
        """Build a fresh generator positioned at the start of this stream."""
        seq = np.random.SeedSequence(self.seed & 0xFFFF_FFFF_FFFF_FFFF, spawn_key=(self.stream_id, ))
        return np.random.Generator(np.random.PCG64(seq))


@attrs.frozen(eq=False)
class NetworkInstance:
    """One fading realization of an N-node network, at a given SNR."""
    n_nodes: int
    mean_gains: np.ndarray = attrs.field(converter=_frozen_matrix)
    gains: np.ndarray = attrs.field(converter=_frozen_matrix)
    snr: float = attrs.field(converter=float)

    def __attrs_post_init__(self) -> None:
        if self.n_nodes < 3:
            raise ConfigError(f'A relay network needs at least 3 nodes, not {self.n_nodes}!')
        shape = (self.n_nodes, self.n_nodes)
        if self.mean_gains.shape != shape or self.gains.shape != shape:
            raise ConfigError(
                f'Gain matrices must be {shape}, got '
                f'{self.mean_gains.shape} and {self.gains.shape}!'
            )
        if not self.snr > 0.0:
            raise ConfigError(f'SNR must be positive, not {self.snr!r}!')
        off_diag = ~np.eye(self.n_nodes, dtype=bool)
        if np.any(self.gains[off_diag] < 0.0) or not np.all(np.isfinite(self.gains[off_diag])):
            raise ConfigError('Gains must be finite and nonnegative!')

    @classmethod
    def fixed(cls, gains: MatrixLike, snr: float) -> Self:
        """Build an instance from a hand-written gain matrix, with unit means."""
        matrix = np.array(gains, dtype=np.float64)
        return cls(len(matrix), np.ones_like(matrix), matrix, snr)

    @classmethod
    def from_links(cls, n_nodes: int, links: Mapping[Tuple[int, int], float], snr: float) -> Self:
        """Build an instance where only the given links have nonzero gain."""
        matrix = np.zeros((n_nodes, n_nodes))
        for (tx, rx), gain in links.items():
            matrix[tx, rx] = gain
        return cls(n_nodes, np.ones_like(matrix), matrix, snr)

    @property
    def dest(self) -> int:
        """Index of the destination."""
        return self.n_nodes - 1

    @property
    def relays(self) -> range:
        """Indices of the relays."""
        return range(1, self.n_nodes - 1)

    def gain(self, tx: int, rx: int) -> float:
        """The power gain of the link ``tx -> rx``."""
        return float(self.gains[tx, rx])

    def relay_triple(self, relay: int) -> Tuple[float, float, float]:
        """Return ``(Z_SD, Z_SR, Z_RD)`` for the three-node network through this relay."""
        if relay not in self.relays:
            raise ConfigError(f'Node {relay} is not a relay!')
        return (
            self.gain(SOURCE, self.dest),
            self.gain(SOURCE, relay),
            self.gain(relay, self.dest),
        )

    def links(self) -> Iterator[Tuple[int, int]]:
        """Every directed link usable by some protocol."""
        for tx in range(self.n_nodes - 1):
            for rx in range(1, self.n_nodes):
                if tx != rx:
                    yield tx, rx

    def with_snr(self, snr: float) -> 'NetworkInstance':
        """The same realization at another SNR."""
        return attrs.evolve(self, snr=snr)


def uniform_means(n_nodes: int) -> np.ndarray:
    """Unit-mean i.i.d. Rayleigh fading on every link."""
    if n_nodes < 3:
        raise ConfigError(f'A relay network needs at least 3 nodes, not {n_nodes}!')
    means = np.ones((n_nodes, n_nodes))
    np.fill_diagonal(means, 0.0)
    return means


def preset_means(name: str, n_nodes: int = 4) -> np.ndarray:
    """Fetch the mean gain matrix of a named preset."""
    key = name.casefold()
    if key == 'uniform':
        return uniform_means(n_nodes)
    try:
        named = PRESETS[key]
    except KeyError:
        raise ConfigError(
            f'Unknown preset "{name}", expected one of uniform, {", ".join(PRESETS)}!'
        ) from None
    if n_nodes != 4:
        raise ConfigError(f'Preset "{name}" describes a 4-node network, not {n_nodes} nodes!')
    means = uniform_means(4)
    # Reverse links the preset doesn't name share their partner's mean.
    for (tx, rx), mean in named.items():
        if (rx, tx) not in named:
            means[rx, tx] = mean
    for (tx, rx), mean in named.items():
        means[tx, rx] = mean
    LOGGER.debug('Mean gains for preset "{}":\n{}', name, means)
    return means


def sample_gains(means: MatrixLike, rng: Union[RandomSource, np.random.Generator]) -> np.ndarray:
    """Draw one exponential (Rayleigh power) realization with the given per-link means.

    Every off-diagonal entry is drawn independently, so ``Z_ij`` and ``Z_ji`` are unrelated.
    """
    means = np.asarray(means, dtype=np.float64)
    if means.ndim != 2 or means.shape[0] != means.shape[1]:
        raise ConfigError(f'Mean gains must be a square matrix, not {means.shape}!')
    off_diag = ~np.eye(len(means), dtype=bool)
    bad = off_diag & ~(means > 0.0)
    if np.any(bad):
        tx, rx = np.argwhere(bad)[0]
        raise ConfigError(f'Mean gain of link {tx}->{rx} must be positive, not {means[tx, rx]!r}!')
    gen = rng.generator() if isinstance(rng, RandomSource) else rng
    gains = gen.standard_exponential(means.shape) * np.where(off_diag, means, 0.0)
    return gains


def draw_network(means: MatrixLike, snr: float, rng: Union[RandomSource, np.random.Generator]) -> NetworkInstance:
    """Sample a realization and wrap it in an instance."""
    means = np.asarray(means, dtype=np.float64)
    return NetworkInstance(len(means), means, sample_gains(means, rng), snr)
