"""Handles the experiment configuration file."""
from typing import Any, Dict, List, Optional, Tuple, Final
from pathlib import Path
import json
import tomllib

from srctools import AtomicWriter, Keyvalues, logger
from srctools.tokenizer import TokenSyntaxError
import attrs
import numpy as np

from .errors import ConfigError
from .netmodel import preset_means
from .props_config import Opt, Options, mapping_to_keyvalues
from .simkit import Experiment, snr_grid


LOGGER = logger.get_logger(__name__)
CONF_NAME: Final = 'relayflow.toml'
TOML_SUFFIXES: Final = frozenset({'.toml'})
JSON_SUFFIXES: Final = frozenset({'.json'})


@attrs.frozen(kw_only=True)
class Config:
    """Result of parse()."""
    opts: Options
    experiment: Experiment

    @property
    def loc(self) -> Path:
        """Location of the config."""
        path = self.opts.path
        assert path is not None
        return path


def _split_list(value: str) -> List[str]:
    return [part.strip() for part in value.split(',') if part.strip()]


def read_keyvalues(path: Path) -> Keyvalues:
    """Read a config file of any supported format into a Keyvalues tree."""
    suffix = path.suffix.casefold()
    try:
        if suffix in TOML_SUFFIXES:
            with open(path, 'rb') as fb:
                data: Dict[str, Any] = tomllib.load(fb)
        else:
            with open(path, encoding='utf8') as f:
                if suffix not in JSON_SUFFIXES:
                    return Keyvalues.parse(f, str(path))
                data = json.load(f)
    except (tomllib.TOMLDecodeError, json.JSONDecodeError, TokenSyntaxError) as exc:
        raise ConfigError(f'Could not parse "{path}": {exc}') from exc
    if not isinstance(data, dict):
        raise ConfigError(f'"{path}" must hold a table of options!')
    return Keyvalues(None, [mapping_to_keyvalues('Config', data)])


def write_default(opts: Options, path: Path) -> None:
    """Write out the options to the path, in the format its suffix names."""
    suffix = path.suffix.casefold()
    with AtomicWriter(path) as f:
        if suffix in TOML_SUFFIXES:
            opts.save_toml(f)
        elif suffix in JSON_SUFFIXES:
            opts.save_json(f)
        else:
            opts.save(f)


def parse_mean_gains(n_nodes: int, preset: str, overrides: Keyvalues) -> np.ndarray:
    """Build the mean gain matrix from a preset and any per-link overrides."""
    means = preset_means(preset, n_nodes)
    for kv in overrides:
        if kv.has_children():
            raise ConfigError(f'Mean gain "{kv.real_name}" cannot be a block!')
        try:
            tx, rx = map(int, kv.real_name.split())
        except ValueError:
            raise ConfigError(f'Mean gain key "{kv.real_name}" must be two node indexes, like "0 1"!') from None
        if not (0 <= tx < n_nodes and 0 <= rx < n_nodes) or tx == rx:
            raise ConfigError(f'Mean gain key "{kv.real_name}" is not a link in a {n_nodes}-node network!')
        try:
            mean = float(kv.value)
        except ValueError:
            raise ConfigError(f'Mean gain for "{kv.real_name}" must be a number, not "{kv.value}"!') from None
        if not mean > 0.0:
            raise ConfigError(f'Mean gain for "{kv.real_name}" must be positive, not {mean}!')
        means[tx, rx] = mean
    return means


def build_experiment(
    opts: Options,
    *,
    workers: Optional[int] = None,
    seed: Optional[int] = None,
) -> Experiment:
    """Construct the experiment the options describe. Explicit arguments override the file."""
    n_nodes = opts.get(N_NODES)
    preset = opts.get(PRESET)
    means = parse_mean_gains(n_nodes, preset, opts.get(MEAN_GAINS))
    try:
        rates: Tuple[float, ...] = tuple(map(float, _split_list(opts.get(RATES))))
    except ValueError:
        raise ConfigError(f'Rates must be a list of numbers, not "{opts.get(RATES)}"!') from None

    snr_min, snr_max, snr_step = opts.get(SNR_MIN_DB), opts.get(SNR_MAX_DB), opts.get(SNR_STEP_DB)
    if snr_step <= 0.0 or snr_max < snr_min:
        raise ConfigError(f'Invalid SNR sweep {snr_min} to {snr_max} dB in steps of {snr_step} dB!')

    dump = opts.get(DUMP_FOLDER)
    dump_folder: Optional[Path] = None
    if dump:
        dump_folder = Path(dump)
        if not dump_folder.is_absolute() and opts.path is not None:
            dump_folder = opts.path.parent / dump_folder

    return Experiment(
        n_nodes=n_nodes,
        means=means,
        protocols=_split_list(opts.get(PROTOCOLS)),
        rates=rates,
        snr_db=snr_grid(snr_min, snr_max, snr_step),
        trials=opts.get(TRIALS),
        seed=opts.get(SEED) if seed is None else seed,
        workers=opts.get(WORKERS) if workers is None else workers,
        chunk_size=opts.get(CHUNK_SIZE),
        failure_budget=opts.get(FAILURE_BUDGET),
        mode=opts.get(MODE).casefold(),
        screen=opts.get(SCREEN),
        lower_bound=opts.get(LOWER_BOUND),
        bound_layout=opts.get(BOUND_LAYOUT).casefold(),
        dump_folder=dump_folder,
        label=preset,
    )


def parse(
    conf_path: Path,
    *,
    workers: Optional[int] = None,
    seed: Optional[int] = None,
) -> Config:
    """Parse the config file at the given location.

    If it does not exist, a documented default copy is written there and ConfigError is raised, so
    the user can edit it before running.
    """
    opts = Options(globals())
    if not conf_path.exists():
        opts.load(Keyvalues(None, []))
        opts.path = conf_path
        LOGGER.warning('Writing default config to "{}"', conf_path)
        write_default(opts, conf_path)
        raise ConfigError(f'No config found, wrote a default to "{conf_path}". Edit it and run again.')

    LOGGER.info('Config path: "{}"', conf_path.absolute())
    try:
        kv = read_keyvalues(conf_path)
    except OSError as exc:
        raise ConfigError(f'Could not read "{conf_path}": {exc}') from exc
    opts.path = conf_path
    opts.load(kv)
    return Config(opts=opts, experiment=build_experiment(opts, workers=workers, seed=seed))


N_NODES = Opt.integer(
    'n_nodes', 4,
    """Number of nodes in the network, including the source and destination.
    The source is node 0 and the destination is the last node.
    """,
)

PRESET = Opt.string(
    'preset', 'uniform',
    """Mean link gains to start from. "uniform" gives every link a mean of 1 and works for any
    number of nodes. "caseA" and "caseB" are non-uniform 4-node networks.
    """,
)

MEAN_GAINS = Opt.block(
    'mean_gains', Keyvalues('', []),
    """\
    Override the mean gain of individual links. Each key is the transmitting and receiving node
    index separated by a space, for example "0 1" "2.0" for the source to the first relay.
    """,
)

PROTOCOLS = Opt.string(
    'protocols', 'direct, gls, fo',
    """Comma-separated protocols to simulate: direct, maxmin, gls, fo and bound.""",
)

RATES = Opt.string(
    'rates', '1',
    """Comma-separated rate targets. In "fixed" mode these are rates in bits/s/Hz, in
    "multiplexing" mode they are multiplexing gains between 0 and 1.
    """,
)

MODE = Opt.string(
    'mode', 'fixed',
    """Either "fixed" for fixed rate targets, or "multiplexing" to scale the target with the SNR.""",
)

SNR_MIN_DB = Opt.floating(
    'snr_min_db', 0.0,
    """The lowest SNR point, in dB.""",
)

SNR_MAX_DB = Opt.floating(
    'snr_max_db', 40.0,
    """The highest SNR point, in dB.""",
)

SNR_STEP_DB = Opt.floating(
    'snr_step_db', 2.5,
    """Spacing between SNR points, in dB.""",
)

TRIALS = Opt.integer(
    'trials', 10_000,
    """Number of fading realizations drawn at each SNR point.""",
)

SEED = Opt.integer(
    'seed', 0,
    """Master random seed. Results only depend on this, not on the number of workers.""",
)

WORKERS = Opt.integer(
    'workers', 1,
    """Number of worker processes to evaluate trials with.""",
)

CHUNK_SIZE = Opt.integer(
    'chunk_size', 500,
    """Number of trials handed to a worker at once.""",
)

FAILURE_BUDGET = Opt.floating(
    'failure_budget', 1e-3,
    """Fraction of evaluations that may fail to converge before the run is aborted.
    Failed trials are left out of the outage estimates.
    """,
)

SCREEN = Opt.boolean(
    'screen', True,
    """Skip the expensive solvers for trials whose outage is already decided by cheaper bounds.""",
)

LOWER_BOUND = Opt.boolean(
    'lower_bound', False,
    """Also output the analytic multiple-access cut lower bound on the outage probability.""",
)

BOUND_LAYOUT = Opt.string(
    'bound_layout', 'half-duplex',
    """Slot layout for the cut-set bound. "half-duplex" lists every listen/transmit state of
    the relays, "relaxed" lets every relay transmit and listen in the same slot.
    """,
)

DUMP_FOLDER = Opt.string_or_none(
    'dump_folder',
    """If set, write the solved flow-optimized program of each trial here as JSON.
    This is relative to the config file.
    """,
)
