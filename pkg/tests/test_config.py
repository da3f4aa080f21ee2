"""Test parsing experiment configs in each format."""
from pathlib import Path
import logging

import numpy as np
import pytest

from relayflow import config
from relayflow.errors import ConfigError
from relayflow.netmodel import preset_means


@pytest.mark.parametrize('filename', ['experiment.toml', 'experiment.json', 'experiment.cfg'])
def test_formats_agree(shared_datadir: Path, filename: str) -> None:
    """TOML, JSON and Keyvalues describe the same experiment."""
    conf = config.parse(shared_datadir / filename)
    exp = conf.experiment
    assert conf.loc == shared_datadir / filename
    assert exp.n_nodes == 5
    assert exp.protocols == ('direct', 'gls', 'fo')
    assert exp.rates == (1.0, 2.5)
    assert exp.snr_db == (0.0, 5.0, 10.0, 15.0, 20.0)
    assert exp.trials == 200
    assert exp.seed == 17
    assert exp.chunk_size == 50
    assert exp.workers == 1
    assert not exp.screen
    assert exp.mode == 'fixed'
    assert exp.dump_folder == shared_datadir / 'dumps'
    assert exp.means[0, 1] == 2.0
    assert exp.means[3, 4] == 0.5
    assert exp.means[1, 0] == 1.0
    assert exp.means[1, 2] == 1.0


def test_overrides(shared_datadir: Path) -> None:
    """Command line values win over the file."""
    exp = config.parse(shared_datadir / 'experiment.toml', workers=3, seed=2).experiment
    assert exp.workers == 3
    assert exp.seed == 2


def test_preset_and_extras(shared_datadir: Path, caplog: pytest.LogCaptureFixture) -> None:
    """Presets fill in the means, and unknown options are warned about."""
    caplog.set_level(logging.WARNING, 'srctools.relayflow.props_config')
    exp = config.parse(shared_datadir / 'caseb.cfg').experiment
    np.testing.assert_array_equal(exp.means, preset_means('caseB'))
    assert exp.label == 'caseB'
    assert exp.mode == 'multiplexing'
    assert exp.rates == (0.25, 0.5)
    assert exp.bound_layout == 'relaxed'
    assert exp.lower_bound
    assert len(exp.snr_db) == 17
    assert caplog.record_tuples == [
        ('srctools.relayflow.props_config', logging.WARNING, 'Extra config options: colour'),
    ]


@pytest.mark.parametrize('suffix', ['.toml', '.json', '.cfg'])
def test_missing_writes_default(tmp_path: Path, suffix: str) -> None:
    """A missing config is written out with defaults, which then parse cleanly."""
    path = tmp_path / f'relayflow{suffix}'
    with pytest.raises(ConfigError, match='wrote a default'):
        config.parse(path)
    assert path.is_file()
    exp = config.parse(path).experiment
    assert exp.n_nodes == 4
    assert exp.protocols == ('direct', 'gls', 'fo')
    assert exp.rates == (1.0, )
    assert exp.trials == 10_000
    assert exp.screen
    assert exp.dump_folder is None
    np.testing.assert_array_equal(exp.means, preset_means('uniform', 4))


def test_default_toml_is_documented(tmp_path: Path) -> None:
    """Every option's description is written as a comment."""
    path = tmp_path / 'relayflow.toml'
    with pytest.raises(ConfigError):
        config.parse(path)
    text = path.read_text(encoding='utf8')
    assert '# Default Value: 10000\ntrials = 10000\n' in text
    assert '# dump_folder = ""' in text
    assert text.rstrip().endswith('[mean_gains]')


def test_default_keyvalues_is_documented(tmp_path: Path) -> None:
    """The Keyvalues default comments every option, and leaves unset ones commented out."""
    path = tmp_path / 'relayflow.cfg'
    with pytest.raises(ConfigError):
        config.parse(path)
    text = path.read_text(encoding='utf8')
    assert text.startswith('"Config"\n\t{\n')
    assert '\t// Default Value: "10000"\n' in text
    assert '\t"trials" "10000"\n' in text
    assert '\t"screen" "1"\n' in text
    assert '\t// "dump_folder" ""\n' in text


@pytest.mark.parametrize('text, message', [
    ('n_nodes = "four"', 'Whole Number'),
    ('rates = "1, fast"', 'list of numbers'),
    ('snr_step_db = -1.0', 'Invalid SNR sweep'),
    ('protocols = "direct, smoke"', 'Unknown protocol'),
    ('mean_gains = "0 1"', 'must be a block'),
    ('trials = [1, 2]\ntrials = 3', 'Could not parse'),
    ('[mean_gains]\n"0 9" = 1.0', 'not a link'),
    ('[mean_gains]\n"zero one" = 1.0', 'two node indexes'),
    ('[mean_gains]\n"0 1" = -1.0', 'positive'),
    ('preset = "caseA"\nn_nodes = 5', '4-node network'),
    ('screen = "maybe"', 'True/False'),
    ('[n_nodes]\nvalue = 4', 'single value'),
], ids=[
    'int', 'rates', 'sweep', 'protocol', 'block', 'syntax',
    'link', 'key', 'mean', 'preset', 'bool', 'scalar-block',
])
def test_bad_values(tmp_path: Path, text: str, message: str) -> None:
    """Mistakes in the file are reported as config errors."""
    path = tmp_path / 'bad.toml'
    path.write_text(text + '\n', encoding='utf8')
    with pytest.raises(ConfigError, match=message):
        config.parse(path)


def test_bad_json(tmp_path: Path) -> None:
    """A JSON document must be an object."""
    path = tmp_path / 'bad.json'
    path.write_text('[1, 2]', encoding='utf8')
    with pytest.raises(ConfigError, match='table of options'):
        config.parse(path)


@pytest.mark.parametrize('name, n_nodes, label, mode', [
    ('uniform4', 4, 'uniform', 'fixed'),
    ('uniform5', 5, 'uniform', 'fixed'),
    ('casea', 4, 'caseA', 'fixed'),
    ('caseb_fixed', 4, 'caseB', 'fixed'),
    ('caseb', 4, 'caseB', 'multiplexing'),
    ('diversity4', 4, 'uniform', 'fixed'),
])
def test_shipped_experiments(name: str, n_nodes: int, label: str, mode: str) -> None:
    """The example experiments are valid."""
    path = Path(__file__).parent.parent / 'experiments' / f'{name}.toml'
    exp = config.parse(path).experiment
    assert exp.n_nodes == n_nodes
    assert exp.label == label
    assert exp.mode == mode
    assert exp.workers == 8
    if mode == 'fixed' and name != 'diversity4':
        assert exp.rates == (1.0, 6.0)
        assert exp.snr_db[0] == 0.0 and exp.snr_db[-1] == 40.0


def test_shipped_experiments_are_listed() -> None:
    """Every config in experiments/ is checked above."""
    folder = Path(__file__).parent.parent / 'experiments'
    assert {path.stem for path in folder.glob('*.toml')} == {
        'uniform4', 'uniform5', 'casea', 'caseb_fixed', 'caseb', 'diversity4',
    }
