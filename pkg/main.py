#!/usr/bin/env python3
"""
Sobolev Alignment Toolkit - Main Application

Command-line entry point: dataset generation, SFT pretraining, adversary
training, preference alignment, evaluation, verification suites, PSD
estimation, Sobolev-order sweeps and the variant ablation.

Results (reports, CSV tables, verification headlines) go to stdout; logs go
to stderr.

Exit codes: 0 success, 1 usage, 2 I/O, 3 validation, 4 verification failure.

Created: October 2026
Changes: Subcommand CLI over the experiment runner and verification suites
"""

import argparse
import dataclasses
import logging
import sys
from pathlib import Path
from typing import List, Optional

import colorama
from colorama import Fore, Style

from colored_noise import estimate_psd, psd_to_csv
from config import Config, ExperimentConfig, load_data_config, load_experiment_config, parse_float_list, \
    parse_int_list, parse_key_values
from errors import ArchiveError, DivergenceError, ValidationError, VerificationError
from synth_data import build_dataset, load_dataset
from train_harness import ExperimentRunner, ablation_to_csv, dataset_alpha, format_report, load_adversary, \
    load_policy, run_ablation, run_s_sweep, sweep_to_csv
from verification import SuiteOptions, VerificationManager


EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_VALIDATION = 3
EXIT_VERIFICATION = 4

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
LEVEL_COLORS = {
    logging.DEBUG: Fore.CYAN,
    logging.INFO: Fore.GREEN,
    logging.WARNING: Fore.YELLOW,
    logging.ERROR: Fore.RED,
    logging.CRITICAL: Fore.RED + Style.BRIGHT,
}


class ColorFormatter(logging.Formatter):
    """Colors each record by level when color is enabled."""

    def __init__(self, color: bool = True):
        super().__init__(LOG_FORMAT, datefmt='%H:%M:%S')
        self.color = color

    def format(self, record: logging.LogRecord) -> str:
        text = super().format(record)
        if not self.color:
            return text
        return f"{LEVEL_COLORS.get(record.levelno, '')}{text}{Style.RESET_ALL}"


class UsageExitParser(argparse.ArgumentParser):
    """ArgumentParser whose usage errors exit with code 1."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def setup_logging(verbose: bool = False, level_name: str = "INFO", color: bool = True):
    """Setup logging configuration on stderr."""
    level = logging.DEBUG if verbose else getattr(logging, level_name, logging.INFO)
    colorama.just_fix_windows_console()

    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setLevel(level)
    console_handler.setFormatter(ColorFormatter(color and sys.stderr.isatty()))
    console_handler.set_name("sobolev-console")

    root_logger = logging.getLogger()
    for handler in list(root_logger.handlers):
        if handler.get_name() == "sobolev-console":
            root_logger.removeHandler(handler)
    root_logger.setLevel(level)
    root_logger.addHandler(console_handler)


def build_parser() -> argparse.ArgumentParser:
    parser = UsageExitParser(
        prog="main.py",
        description="Spectral preference alignment of flow-matching velocity fields on toy grids",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  python main.py gen-data --config data.cfg --out data
  python main.py sft --config experiment.cfg
  python main.py train-adversary --config experiment.cfg --policy output/sft/policy.prm
  python main.py align --variant asdpo --config experiment.cfg --policy output/sft/policy.prm \\
      --adversary output/adversary/adversary.prm
  python main.py eval --policy output/sdpo/policy.prm --data data > eval.csv
  python main.py verify prop1 --s 1.5 --eps 0.1
  python main.py --seed 7 sweep-s --values 0,0.5,1.5 --config experiment.cfg

Configs are plain-text key=value files. All randomness derives from --seed.
        """
    )
    parser.add_argument('--seed', type=int, default=None,
                        help='Master seed (default: the config file value, else SOBOLEV_SEED or 42)')
    parser.add_argument('--verbose', '-v', action='store_true', help='Enable verbose logging')

    commands = parser.add_subparsers(dest='command', metavar='command')
    commands.required = True

    gen = commands.add_parser('gen-data', help='Generate a synthetic power-law dataset archive')
    gen.add_argument('--config', type=Path, required=True, help='Data-generation config file')
    gen.add_argument('--out', type=Path, default=Path('data'), help='Archive directory (default: data/)')

    sft = commands.add_parser('sft', help='Pretrain the velocity field with flow matching')
    sft.add_argument('--config', type=Path, required=True, help='Experiment config file')

    adv = commands.add_parser('train-adversary', help='Train the adversary against a frozen policy')
    adv.add_argument('--config', type=Path, required=True, help='Experiment config file')
    adv.add_argument('--policy', type=Path, required=True, help='Policy parameter file')

    align = commands.add_parser('align', help='Preference-align a copy of an SFT policy')
    align.add_argument('--variant', choices=['dpo-l2', 'sdpo', 'asdpo'], required=True)
    align.add_argument('--config', type=Path, required=True, help='Experiment config file')
    align.add_argument('--policy', type=Path, required=True, help='SFT policy parameter file')
    align.add_argument('--adversary', type=Path, help='Adversary parameter file (asdpo only)')

    ev = commands.add_parser('eval', help='Evaluate a policy on every pair of an archive; CSV to stdout')
    ev.add_argument('--policy', type=Path, required=True, help='Policy parameter file')
    ev.add_argument('--data', type=Path, required=True, help='Dataset archive directory')
    ev.add_argument('--config', type=Path, help='Experiment config for evaluation settings')

    verify = commands.add_parser('verify', help='Run a numerical verification suite')
    verify.add_argument('suite', choices=['prop1', 'prop2', 'spectral'])
    verify.add_argument('--s', type=float, help='Sobolev order (default: per suite)')
    verify.add_argument('--eps', type=float, default=0.1, help='Trust-region radius (default: 0.1)')
    verify.add_argument('--widths', type=parse_int_list, default=None, help='Adversary widths, e.g. 2,8,32,128')
    verify.add_argument('--steps', type=int, default=2000, help='Adversary training steps (default: 2000)')

    psd = commands.add_parser('psd', help='Radially averaged PSD of an archive, as CSV')
    psd.add_argument('--input', type=Path, required=True, help='Dataset archive directory')
    psd.add_argument('--out', type=Path, required=True, help='CSV output path')
    psd.add_argument('--fields', choices=['target', 'condition'], default='target',
                     help='Which side of each pair to analyse (default: target)')

    sweep = commands.add_parser('sweep-s', help='Align and evaluate one sdpo policy per Sobolev order')
    sweep.add_argument('--values', type=parse_float_list, required=True, help='Sobolev orders, e.g. 0,1.5')
    sweep.add_argument('--config', type=Path, required=True, help='Experiment config file')

    ablation = commands.add_parser('ablation', help='Four-variant ablation over shared seeds')
    ablation.add_argument('--config', type=Path, required=True, help='Experiment config file')
    ablation.add_argument('--seeds', type=parse_int_list, required=True, help='Seeds, e.g. 1,2,3')

    return parser


def _seed_overrides(args, settings: Config, text: str) -> dict:
    """--seed wins; otherwise the file's seed; otherwise the environment default."""
    if args.seed is not None:
        return {"seed": args.seed}
    if "seed" not in parse_key_values(text):
        return {"seed": settings.seed}
    return {}


def _load_experiment(args, settings: Config, **overrides):
    loaded = load_experiment_config(args.config)
    changes = {**_seed_overrides(args, settings, loaded.echo), **overrides}
    if "output" not in parse_key_values(loaded.echo):
        changes["output"] = settings.output_dir
    return loaded.value.with_changes(**changes) if changes else loaded.value, loaded.echo


def _runner(args, settings: Config, **overrides):
    cfg, echo = _load_experiment(args, settings, **overrides)
    return ExperimentRunner(cfg, echo, Path(cfg.output)), load_dataset(Path(cfg.dataset))


def cmd_gen_data(args, settings: Config) -> int:
    loaded = load_data_config(args.config)
    synth, degrade = loaded.value
    overrides = _seed_overrides(args, settings, loaded.echo)
    if overrides:
        synth = dataclasses.replace(synth, **overrides)
    dataset = build_dataset(synth, degrade, args.out)
    print(f"pairs={len(dataset)}")
    print(f"archive={args.out}")
    return EXIT_OK


def cmd_sft(args, settings: Config) -> int:
    runner, dataset = _runner(args, settings)
    _, report = runner.run_sft(dataset)
    sys.stdout.write(format_report(report))
    return EXIT_OK


def cmd_train_adversary(args, settings: Config) -> int:
    runner, dataset = _runner(args, settings)
    _, report = runner.run_adversary_training(load_policy(args.policy), dataset)
    sys.stdout.write(format_report(report))
    return EXIT_OK


def cmd_align(args, settings: Config) -> int:
    variant = args.variant.replace("-", "_")
    runner, dataset = _runner(args, settings, variant=variant)
    policy = load_policy(args.policy)
    adversary = load_adversary(args.adversary, policy, runner.cfg) if args.adversary else None
    _, report = runner.run_alignment(policy, dataset, adversary)
    sys.stdout.write(format_report(report))
    return EXIT_OK


def cmd_eval(args, settings: Config) -> int:
    dataset = load_dataset(args.data)
    policy = load_policy(args.policy)
    if args.config is not None:
        cfg, echo = _load_experiment(args, settings)
    else:
        seed = args.seed if args.seed is not None else settings.seed
        cfg = ExperimentConfig(grid=dataset.shape, seed=seed)
        echo = cfg.echo()
    table = ExperimentRunner(cfg, echo).evaluate(policy, dataset.pairs, dataset_alpha(dataset))
    sys.stdout.write(table.to_csv())
    return EXIT_OK


def cmd_verify(args, settings: Config) -> int:
    options = SuiteOptions(
        seed=args.seed if args.seed is not None else settings.seed,
        s=args.s,
        eps=args.eps,
        widths=tuple(args.widths) if args.widths else SuiteOptions.widths,
        steps=args.steps,
    )
    manager = VerificationManager()
    report = manager.run(args.suite, options)
    print(report.headline)
    manager.require_passed(report)
    return EXIT_OK


def cmd_psd(args, settings: Config) -> int:
    dataset = load_dataset(args.input)
    fields = dataset.targets() if args.fields == 'target' else dataset.conditions()
    text = psd_to_csv(estimate_psd(fields))
    try:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(text, encoding="utf-8")
    except OSError as e:
        raise ArchiveError(f"Could not write PSD table ({e.strerror or e})", args.out)
    print(f"psd={args.out}")
    return EXIT_OK


def cmd_sweep_s(args, settings: Config) -> int:
    runner, dataset = _runner(args, settings)
    sys.stdout.write(sweep_to_csv(run_s_sweep(runner, args.values, dataset)))
    return EXIT_OK


def cmd_ablation(args, settings: Config) -> int:
    runner, dataset = _runner(args, settings)
    sys.stdout.write(ablation_to_csv(run_ablation(runner, args.seeds, dataset)))
    return EXIT_OK


COMMANDS = {
    'gen-data': cmd_gen_data,
    'sft': cmd_sft,
    'train-adversary': cmd_train_adversary,
    'align': cmd_align,
    'eval': cmd_eval,
    'verify': cmd_verify,
    'psd': cmd_psd,
    'sweep-s': cmd_sweep_s,
    'ablation': cmd_ablation,
}


def main(argv: Optional[List[str]] = None) -> int:
    """Main application entry point; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    settings = Config()
    settings.validate()
    logging_settings = settings.get_logging_settings()
    setup_logging(args.verbose, logging_settings["level"], logging_settings["color"])
    logger = logging.getLogger(__name__)

    if args.command == 'align' and args.variant == 'asdpo' and args.adversary is None:
        parser.print_usage(sys.stderr)
        print("main.py align: error: --adversary is required for --variant asdpo", file=sys.stderr)
        return EXIT_USAGE

    try:
        return COMMANDS[args.command](args, settings)

    except KeyboardInterrupt:
        logger.warning("Interrupted by user")
        return EXIT_USAGE

    except VerificationError as e:
        logger.error(str(e))
        print(f"verification failed: {e}", file=sys.stderr)
        return EXIT_VERIFICATION

    except (ValidationError, DivergenceError) as e:
        logger.error(f"{type(e).__name__}: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION

    except OSError as e:
        logger.error(f"I/O error: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
