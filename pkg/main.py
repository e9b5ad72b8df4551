#!/usr/bin/env python3
"""
eitkit - Command-line experiment runner

Builds meshes, synthesizes ND data for a phantom, runs the monotonicity
reconstructions and writes CSV/PGM artifacts plus a JSON summary.

Exit codes: 0 success, 2 invalid input, 3 solver failure, 1 anything else.
"""

import sys
import os
import argparse
import json
import logging

# Add project directory to path for imports
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from dotenv import load_dotenv
load_dotenv()

from config import config
from eitkit import setup_logging
from eitkit.models.experiment import ExperimentConfig
from eitkit.services.disk_oracle import VARIANTS
from eitkit.services.experiment_runner import ExperimentRunner
from eitkit.services.forward_solver import SolverError
from eitkit.services.mesh_builder import MeshError
from eitkit.utils.validators import ValidationError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_INVALID = 2
EXIT_SOLVER = 3

COMMANDS = {
    'mesh': ExperimentRunner.run_mesh,
    'forward': ExperimentRunner.run_forward,
    'ndmap': ExperimentRunner.run_ndmap,
    'reconstruct': ExperimentRunner.run_experiment,
    'convergence': ExperimentRunner.run_convergence_study,
    'refinement': ExperimentRunner.run_refinement_study,
    'verify-bounds': ExperimentRunner.run_bounds,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description='Monotonicity-based inclusion detection for 2D EIT')
    parser.add_argument('-v', '--verbose', action='store_true', help='Enable verbose logging')

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--out', help=f'Output directory (default: from config, then {config.OUTPUT_DIR})')
    common.add_argument('--threads', type=int, help=f'Worker threads (default: {config.DEFAULT_THREADS})')

    subparsers = parser.add_subparsers(dest='command', required=True)
    for name in COMMANDS:
        sub = subparsers.add_parser(name, parents=[common], help=f'Run the {name} workflow')
        sub.add_argument('--config', required=True, help='Experiment JSON file')

    oracle = subparsers.add_parser('oracle', parents=[common], help='Closed-form unit disk values')
    oracle.add_argument('--config', help='Experiment JSON file (only the output section is used)')
    oracle.add_argument('--variant', choices=VARIANTS, default='sigma', help='Layered family (default: sigma)')
    oracle.add_argument('--eps', type=float, default=0.0, help='Contrast parameter, 0 for the limit (default: 0)')
    oracle.add_argument('--modes', type=int, default=8, help='Number of Fourier modes (default: 8)')
    return parser


def run(args: argparse.Namespace) -> int:
    """Dispatch a parsed command line and map failures onto exit codes"""
    try:
        experiment = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
        runner = ExperimentRunner(experiment, out_dir=args.out, threads=args.threads)

        if args.command == 'oracle':
            summary = runner.run_oracle(args.variant, args.eps, args.modes)
        else:
            summary = COMMANDS[args.command](runner)

        print(json.dumps({'command': args.command, 'files': summary['files']}, indent=2))
        return EXIT_OK

    except (ValidationError, MeshError) as e:
        logger.error(f"Invalid input: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except SolverError as e:
        logger.error(f"Solver failure: {e}")
        print(f"solver error: {e}", file=sys.stderr)
        return EXIT_SOLVER
    except Exception as e:
        logger.exception(f"Unexpected error: {e}")
        print(f"unexpected error: {e}", file=sys.stderr)
        return EXIT_UNEXPECTED


def main(argv=None) -> int:
    """Main function for command line interface"""
    args = build_parser().parse_args(argv)
    setup_logging(config, verbose=args.verbose)
    return run(args)


if __name__ == '__main__':
    sys.exit(main())
