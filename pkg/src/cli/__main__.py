"""
Command-line entry point: python -m src.cli <command> [flags]
"""
import argparse
import logging
import sys
from typing import Dict, List, Optional

from src.cli.commands import COMMANDS, run_command
from src.cli.config import load_run_config
from src.utils.errors import EXIT_CODES, ClassifierError
from src.utils.helpers import setup_logging

logger = logging.getLogger(__name__)


class UsageError(Exception):
    pass


class StrictArgumentParser(argparse.ArgumentParser):
    """Unknown or malformed flags exit with the usage code instead of argparse's default 2"""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _common(parser: argparse.ArgumentParser):
    parser.add_argument('--config', help='YAML run configuration file')
    parser.add_argument('--run-dir', dest='run_dir', help='Run directory holding every output (env QV_RUN_DIR)')
    parser.add_argument('--manifest', help='Sample manifest (tab-separated)')
    parser.add_argument('--checkpoints-dir', dest='checkpoints_dir', help='Checkpoint directory (default <run-dir>/checkpoints)')
    parser.add_argument('--seed', type=int, help='Random seed (required for train)')
    parser.add_argument('--jobs', type=int, help='Parallel workers for featurization (env QV_JOBS)')
    parser.add_argument('--log-level', dest='log_level', choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'],
                        help='Logging level (env QV_LOG_LEVEL)')


def _modules(value: str) -> List[str]:
    return [part.strip() for part in value.split(',') if part.strip()]


def _fpr_list(value: str) -> List[float]:
    try:
        return [float(part) for part in value.split(',') if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {value!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = StrictArgumentParser(
        prog='hybrid-classifier',
        description='Hybrid malware classifier: featurize, train, evaluate, predict and report',
        allow_abbrev=False,
    )
    sub = parser.add_subparsers(dest='command', metavar='command', parser_class=StrictArgumentParser)

    generate = sub.add_parser('generate', help='Write a synthetic labeled corpus', allow_abbrev=False)
    _common(generate)
    generate.add_argument('--corpus-dir', dest='corpus_dir', help='Output directory (default <run-dir>/corpus)')
    generate.add_argument('--cross-fraction', dest='synth.cross_fraction', type=float,
                          help='Share of malicious samples detectable only by combining path and API markers')
    generate.add_argument('--cross-pairs', dest='synth.cross_pairs', type=int, help='Number of planted marker pairs')
    generate.add_argument('--train-size', dest='train_size', type=int, help='Training samples per class')
    generate.add_argument('--valid-size', dest='valid_size', type=int, help='Validation samples per class')
    generate.add_argument('--test-size', dest='test_size', type=int, help='Test samples per class')

    featurize = sub.add_parser('featurize', help='Fit featurizers on the training split and encode the manifest',
                               allow_abbrev=False)
    _common(featurize)
    featurize.add_argument('--env-map', dest='env_map', help='Environment-variable map file (name=replacement)')
    featurize.add_argument('--path-vocab-size', dest='path_vocab_size', type=int, help='Byte vocabulary size V')
    featurize.add_argument('--api-vocab-size', dest='api_vocab_size', type=int, help='API vocabulary size V')
    featurize.add_argument('--valid-fraction', dest='valid_fraction', type=float,
                           help='Validation share for records without a split')

    train = sub.add_parser('train', help='Pre-train modules and meta-models', allow_abbrev=False)
    _common(train)
    train.add_argument('--modules', type=_modules, help='Comma-separated module ids among fp,api,emb')
    train.add_argument('--preset', choices=['full', 'compact'], help='Architecture sizes')
    train.add_argument('--meta-depth', dest='meta_depth', type=int, help='Meta-model hidden layers (0 = logistic regression)')
    train.add_argument('--epochs', type=int, help='Module pre-training epochs')
    train.add_argument('--meta-epochs', dest='meta_epochs', type=int, help='Meta-model training epochs')
    train.add_argument('--batch-size', dest='batch_size', type=int, help='Mini-batch size')
    train.add_argument('--learning-rate', dest='learning_rate', type=float, help='Adam learning rate')
    train.add_argument('--patience', type=int, help='Early-stopping patience on validation F1')
    train.add_argument('--threshold', type=float, help='Decision threshold recorded with the pipeline')

    evaluate = sub.add_parser('eval', help='Evaluate the pipeline on validation and test splits', allow_abbrev=False)
    _common(evaluate)
    evaluate.add_argument('--threshold', type=float, help='Decision threshold (score >= threshold is malicious)')
    evaluate.add_argument('--calibrate-fpr', dest='calibrate_fpr', type=float,
                          help='Choose the threshold for this FPR on validation negatives')

    predict = sub.add_parser('predict', help='Score samples and write predictions.csv', allow_abbrev=False)
    _common(predict)
    predict.add_argument('--threshold', type=float, help='Decision threshold (score >= threshold is malicious)')
    predict.add_argument('--split', dest='predict_split', choices=['train', 'valid', 'test'],
                         help='Only score this split')

    report = sub.add_parser('report', help='Detection-rate grid and corpus statistics', allow_abbrev=False)
    _common(report)
    report.add_argument('--fpr-grid', dest='fpr_grid', type=_fpr_list, help='Comma-separated FPR levels')
    report.add_argument('--no-comparison', dest='compare_meta_models', action='store_const', const=False,
                        help='Skip the meta-model architecture comparison')
    report.add_argument('--meta-epochs', dest='meta_epochs', type=int, help='Epochs for comparison meta-models')
    return parser


def _overrides(args: argparse.Namespace) -> Dict:
    values = {key: value for key, value in vars(args).items() if key not in ('command', 'config')}
    for split in ('train', 'valid', 'test'):
        size = values.pop(f"{split}_size", None)
        if size is not None:
            values[f"synth.{split}_benign"] = size
            values[f"synth.{split}_malicious"] = size
    return values


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_CODES['usage']
    if args.command not in COMMANDS:
        parser.print_help(sys.stderr)
        return EXIT_CODES['usage']

    try:
        config = load_run_config(args.config, _overrides(args))
        setup_logging(config.log_level)
        run_command(args.command, config)
    except ClassifierError as e:
        setup_logging()
        logger.error(f"❌ {type(e).__name__}: {e}")
        return e.exit_code
    return EXIT_CODES['success']


if __name__ == '__main__':
    sys.exit(main())
