"""
Command-line entry point: ``cce {train,analyze,compress,evaluate,bench}``.

Exit codes: 0 on success, 1 for usage errors, 2 for validation errors (configuration, planning), 3 for
numerical failures and 4 for corrupt checkpoints.
"""

import argparse
import logging
import sys
from typing import List, Optional

import jsonschema

from cce import __version__
from cce.algorithms.compression.baselines import BASELINES, NONE
from cce.cli import commands
from cce.cli.bench import DEFAULT_REPEATS
from cce.cli.report import format_report
from cce.config import load_config
from cce.exceptions import EXIT_VALIDATION, CCEError, UsageError

logger = logging.getLogger(__name__)

LOG_FORMAT = '%(levelname)s %(name)s: %(message)s'
SEED_MAX = 2 ** 64 - 1


class ArgumentParser(argparse.ArgumentParser):
    """An ArgumentParser raising UsageError instead of exiting."""

    def error(self, message):
        raise UsageError(f'{self.prog}: {message}')


def seed_value(text: str) -> int:
    try:
        seed = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f'invalid seed {text!r}') from None
    if not 0 <= seed <= SEED_MAX:
        raise argparse.ArgumentTypeError(f'seed must be in [0, 2^64 - 1], got {seed}')
    return seed


def build_parser() -> ArgumentParser:
    common = ArgumentParser(add_help=False)
    common.add_argument('--seed', type=seed_value, default=0, help='seed of every random stream (default 0)')
    common.add_argument('--config', default=None, help='INI configuration file; defaults apply without one')
    common.add_argument('--out', default=None, help='checkpoint written by train and compress, report of the other commands')
    common.add_argument('--baseline', choices=BASELINES, default=NONE, help='comparison baseline of compress and evaluate')
    common.add_argument('-v', '--verbose', action='count', default=0, help='-v for progress, -vv for details')

    parser = ArgumentParser(prog='cce', description='Contextual compression encoding of toy transformer weights.')
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    subparsers = parser.add_subparsers(dest='command', metavar='command')
    subparsers.required = True

    train = subparsers.add_parser('train', parents=[common], help='train the toy transformer')
    train.add_argument('--report', default=None, help='report path (default: <out>.json)')

    analyze = subparsers.add_parser('analyze', parents=[common], help='redundancy analysis of a checkpoint')
    analyze.add_argument('checkpoint')

    compress = subparsers.add_parser('compress', parents=[common], help='compress a checkpoint')
    compress.add_argument('checkpoint')
    compress.add_argument('--report', default=None, help='report path (default: <out>.json)')

    evaluate = subparsers.add_parser('evaluate', parents=[common], help='compare checkpoints side by side')
    evaluate.add_argument('checkpoints', nargs='+')

    bench = subparsers.add_parser('bench', parents=[common], help='relative inference latency and footprint')
    bench.add_argument('checkpoint')
    bench.add_argument('--repeats', type=int, default=DEFAULT_REPEATS, help='timed repetitions (default %(default)s)')
    return parser


def configure_logging(verbosity: int):
    level = logging.WARNING if verbosity == 0 else logging.INFO if verbosity == 1 else logging.DEBUG
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr)


def run(args: argparse.Namespace) -> dict:
    config = load_config(args.config)
    if args.command == 'train':
        return commands.cmd_train(config, args.seed, args.out, args.report)
    if args.command == 'analyze':
        return commands.cmd_analyze(config, args.seed, args.checkpoint, args.out)
    if args.command == 'compress':
        return commands.cmd_compress(config, args.seed, args.checkpoint, args.out, args.baseline, args.report)
    if args.command == 'evaluate':
        return commands.cmd_evaluate(config, args.seed, args.checkpoints, args.out, args.baseline)
    if args.repeats < 1:
        raise UsageError('--repeats must be positive')
    return commands.cmd_bench(config, args.seed, args.checkpoint, args.out, args.repeats)


def main(argv: Optional[List[str]] = None) -> int:
    """
    Runs the command line and returns its exit code.

    :param argv: Arguments without the program name; ``sys.argv[1:]`` by default.
    """
    try:
        args = build_parser().parse_args(argv)
    except UsageError as error:
        sys.stderr.write(f'{error}\n')
        return error.exit_code
    configure_logging(args.verbose)
    try:
        report = run(args)
    except CCEError as error:
        logger.error('%s: %s', type(error).__name__, error)
        return error.exit_code
    except (ValueError, jsonschema.ValidationError) as error:
        logger.error('%s: %s', type(error).__name__, error)
        return EXIT_VALIDATION
    sys.stdout.write(format_report(report))
    return 0


if __name__ == '__main__':
    sys.exit(main())
