"""Command line entry point: run experiments, draw curves and verify the solvers."""
from typing import Iterator, List, Optional
from logging import FileHandler, StreamHandler
from pathlib import Path
import argparse
import sys
import warnings

from srctools.logger import Formatter, init_logging
import trio

from . import __version__, config, simkit, verify
from .errors import ConfigError, EstimationError, FailureBudgetExceeded


LOGGER = init_logging()
warnings.filterwarnings(category=DeprecationWarning, module='srctools', action='once')

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_BUDGET = 3


def build_parser() -> argparse.ArgumentParser:
    """Construct the argument parser for every subcommand."""
    parser = argparse.ArgumentParser(
        prog='relayflow',
        description="Outage simulations of cooperative relaying protocols.",
    )
    parser.add_argument(
        '-v', '--verbose',
        action="store_true",
        help="Show DEBUG level messages.",
    )
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    commands = parser.add_subparsers(dest='command', required=True)

    run = commands.add_parser('run', help="Run the outage experiment described by a config file.")
    run.add_argument(
        '--config',
        type=Path,
        default=Path(config.CONF_NAME),
        help="The experiment config, in TOML, JSON or Keyvalues. "
             "If it does not exist, a default copy is written there.",
    )
    run.add_argument(
        '--out',
        type=Path,
        required=True,
        help="The CSV file to write outage curves to. A log is written next to it.",
    )
    run.add_argument(
        '--workers',
        type=int,
        default=None,
        help="Number of worker processes. This overrides the config.",
    )
    run.add_argument(
        '--seed',
        type=int,
        default=None,
        help="Master random seed. This overrides the config.",
    )
    run.add_argument(
        '--gnuplot',
        type=Path,
        default=None,
        help="Also write a gnuplot script for the results here.",
    )

    curves = commands.add_parser('curves', help="Summarise a results file, and write a plot script.")
    curves.add_argument(
        '--in',
        dest='results',
        type=Path,
        required=True,
        help="A CSV file written by 'relayflow run'.",
    )
    curves.add_argument(
        '--gnuplot',
        type=Path,
        default=None,
        help="Write a gnuplot script drawing the curves here.",
    )
    curves.add_argument(
        '--target',
        type=float,
        default=1e-3,
        help="Report the SNR each curve needs to reach this outage probability.",
    )
    curves.add_argument(
        '--reference',
        default='bound',
        help="Report SNR gaps relative to this protocol's curves, if present.",
    )

    check = commands.add_parser('verify', help="Run the oracle and property checks.")
    check.add_argument(
        '--full',
        action='store_true',
        help="Run the full-size checks, which take a long time.",
    )
    check.add_argument(
        '--only',
        action='append',
        default=None,
        help="Only run this check. May be repeated. Known: " + ', '.join(sorted(verify.CHECKS)),
    )
    check.add_argument(
        '--seed',
        type=int,
        default=verify.VERIFY_SEED,
        help="Seed the checks draw their instances from.",
    )
    return parser


def set_verbose() -> None:
    """Find the stdout handler, make it DEBUG mode."""
    for handler in LOGGER.handlers:
        if isinstance(handler, StreamHandler) and handler.stream is sys.stdout:
            handler.setLevel('DEBUG')
            break
    else:
        LOGGER.warning('Could not set stdout handler to DEBUG mode.')


def add_log_file(path: Path) -> FileHandler:
    """Start writing to a log file next to the output."""
    handler = FileHandler(path)
    handler.setFormatter(Formatter(
        '[{levelname}] {module}.{funcName}(): {message}',
        style='{',
    ))
    LOGGER.addHandler(handler)
    return handler


async def run_command(args: argparse.Namespace) -> None:
    """Run an experiment and write out its curves."""
    out: Path = args.out
    out.parent.mkdir(parents=True, exist_ok=True)
    add_log_file(out.with_suffix('.log'))
    LOGGER.info('relayflow v{}', __version__)

    conf = config.parse(args.config, workers=args.workers, seed=args.seed)
    exp = conf.experiment
    LOGGER.info(
        'Network: {} nodes, "{}" means, seed {}, {} worker(s)',
        exp.n_nodes, exp.label, exp.seed, exp.workers,
    )

    total = len(exp.snr_db) * exp.trials
    done = 0
    reported = 0

    def progress(chunk: simkit.ChunkResult) -> None:
        """Log every tenth of the run."""
        nonlocal done, reported
        done += chunk.stop - chunk.start
        if done * 10 >= (reported + 1) * total:
            reported = done * 10 // total
            LOGGER.info('{}% done ({}/{} trials)', reported * 10, done, total)

    curves = await simkit.run_experiment(exp, progress)
    simkit.emit_csv(curves, out)
    LOGGER.info('Wrote {} curves to "{}"', len(curves), out)
    if args.gnuplot is not None:
        simkit.write_gnuplot(curves, out, args.gnuplot)
        LOGGER.info('Wrote plot script to "{}"', args.gnuplot)


def curves_command(args: argparse.Namespace) -> None:
    """Summarise an existing results file."""
    curves = simkit.read_csv(args.results)
    LOGGER.info('Read {} curves from "{}"', len(curves), args.results)
    references = {curve.target: curve for curve in curves if curve.protocol == args.reference}
    for curve in curves:
        try:
            snr = simkit.snr_at_outage(curve, args.target)
        except EstimationError as exc:
            LOGGER.info('{} at {:g}: {}', curve.protocol, curve.target, exc)
            continue
        reference = references.get(curve.target)
        if reference is None or reference is curve:
            LOGGER.info('{} at {:g}: outage {:g} at {:.2f} dB', curve.protocol, curve.target, args.target, snr)
            continue
        try:
            gap = simkit.snr_gap_db(curve, reference, args.target)
        except EstimationError:
            LOGGER.info('{} at {:g}: outage {:g} at {:.2f} dB', curve.protocol, curve.target, args.target, snr)
        else:
            LOGGER.info(
                '{} at {:g}: outage {:g} at {:.2f} dB, {:+.2f} dB from {}',
                curve.protocol, curve.target, args.target, snr, gap, args.reference,
            )
    if args.gnuplot is not None:
        simkit.write_gnuplot(curves, args.results, args.gnuplot)
        LOGGER.info('Wrote plot script to "{}"', args.gnuplot)


def verify_command(args: argparse.Namespace) -> int:
    """Run the checks, and report which failed."""
    results = verify.run_checks(args.only, full=args.full, seed=args.seed)
    failed = sorted(name for name, problems in results.items() if problems)
    if failed:
        LOGGER.error('{} of {} checks failed: {}', len(failed), len(results), ', '.join(failed))
        return EXIT_CHECK_FAILED
    LOGGER.info('All {} checks passed.', len(results))
    return EXIT_OK


def _leaves(group: BaseExceptionGroup) -> Iterator[BaseException]:
    """Every exception in a possibly nested group."""
    for exc in group.exceptions:
        if isinstance(exc, BaseExceptionGroup):
            yield from _leaves(exc)
        else:
            yield exc


def main(argv: Optional[List[str]] = None) -> int:
    """Run the command line, returning the exit code."""
    args = build_parser().parse_args(argv)
    if args.verbose:
        set_verbose()
    code = EXIT_OK
    # Errors from simulation chunks arrive grouped by the nursery.
    try:
        if args.command == 'run':
            trio.run(run_command, args)
        elif args.command == 'curves':
            curves_command(args)
        else:
            # The determinism check starts its own event loop.
            return verify_command(args)
    except* ConfigError as group:
        for exc in _leaves(group):
            LOGGER.error('Configuration error: {}', exc)
        code = EXIT_CONFIG
    except* FailureBudgetExceeded as group:
        for exc in _leaves(group):
            LOGGER.error('{}', exc)
        if code == EXIT_OK:
            code = EXIT_BUDGET
    return code


def cli() -> None:
    """Console script entry point."""
    sys.exit(main(sys.argv[1:]))


if __name__ == '__main__':
    cli()
