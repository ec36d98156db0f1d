import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from utils.analysis import moser_schedule
from utils.config import get_config, load_config, load_experiment_config
from utils.errors import ConfigError, SubcriticalExponentError, UltrafastError
from utils.experiments import ExperimentResult, run_comparison, run_experiment
from utils.measures import Exponents
from utils.trajectory import write_csv, write_json, write_trajectory

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CHECKS_FAILED = 1
EXIT_CONFIG_ERROR = 2
EXIT_SOLVER_FAILURE = 3


# ------------------------
# Logging
# ------------------------
def setup_logging(level: str) -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter('%(asctime)s - %(name)s - %(levelname)s - %(message)s'))
    root = logging.getLogger()
    root.handlers[:] = [handler]
    root.setLevel(getattr(logging, level.upper(), logging.INFO))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='ultrafast',
        description='JKO and finite-volume solvers for weighted ultrafast diffusion, with invariant checks')
    parser.add_argument('--log-level', default=None, help='DEBUG, INFO, WARNING or ERROR')
    sub = parser.add_subparsers(dest='command', required=True)

    run = sub.add_parser('run', help='run one experiment config')
    run.add_argument('config')
    compare = sub.add_parser('compare', help='run two configs and report L1 contraction')
    compare.add_argument('config_a')
    compare.add_argument('config_b')
    for p in (run, compare):
        p.add_argument('--out', default=None, help='output directory')
        p.add_argument('--stride', type=int, default=None, help='record every k-th step')
        p.add_argument('--seed', type=int, default=None, help='seed for random presets')

    moser = sub.add_parser('moser', help='print the Moser exponent schedule')
    moser.add_argument('--d', type=int, required=True)
    moser.add_argument('--r', type=float, required=True)
    moser.add_argument('--q0', type=float, required=True)
    moser.add_argument('--p-star', type=float, default=4.0)
    moser.add_argument('--out', default=None)
    return parser


def _load(path, args):
    cfg = load_experiment_config(path)
    overrides = {}
    if args.out is not None:
        overrides['output_dir'] = args.out
    if args.stride is not None:
        overrides['stride'] = args.stride
    elif cfg.stride == 1:
        overrides['stride'] = get_config('stride', 1)
    if args.seed is not None:
        overrides['seed'] = args.seed
    return dataclasses.replace(cfg, **overrides)


def _write_artifacts(result: ExperimentResult, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, traj in result.trajectories.items():
        target = out_dir if name in ('main', 'reference') else out_dir / name
        write_trajectory(traj, result.setup.weight, target)
    write_json(result.diagnostics(), out_dir / 'diagnostics.json')


def _summary_line(result: ExperimentResult) -> str:
    parts = []
    if 'L2_error' in result.summary:
        parts.append(f"L2_error={result.summary['L2_error']:.3e}")
    if result.fit:
        parts.append(f"rate={result.fit['c']:.4g} R2={result.fit['r_squared']:.4f}")
    if result.failure:
        parts.append(f"FAILURE {result.failure}")
    elif not result.checks:
        parts.append('no checks requested')
    elif result.passed:
        parts.append('all checks pass')
    else:
        failed = [name for name, ok in result.checks.items() if not ok]
        parts.append(f"failed checks: {', '.join(failed)}")
    return ', '.join(parts)


def _finish(result: ExperimentResult, out_dir: Path) -> int:
    _write_artifacts(result, out_dir)
    print(_summary_line(result))
    if result.failure:
        return EXIT_SOLVER_FAILURE
    return EXIT_OK if result.passed else EXIT_CHECKS_FAILED


def cmd_run(args) -> int:
    cfg = _load(args.config, args)
    result = run_experiment(cfg)
    return _finish(result, Path(cfg.output_dir))


def cmd_compare(args) -> int:
    cfg_a, cfg_b = _load(args.config_a, args), _load(args.config_b, args)
    result = run_comparison(cfg_a, cfg_b)
    return _finish(result, Path(cfg_a.output_dir))


def cmd_moser(args) -> int:
    schedule = moser_schedule(args.q0, Exponents(args.r, args.d), d=args.d, p_star=args.p_star)
    table = schedule.table()
    print(table.head(12).to_string(index=False))
    print(f"alpha={schedule.alpha:.12g} beta={schedule.beta:.12g} "
          f"A_inf={schedule.A_inf:.12g} (tail <= {schedule.A_tail:.1e}) B_inf={schedule.B_inf:.12g}")
    if args.out:
        out_dir = Path(args.out)
        write_csv(table, out_dir / 'moser_schedule.csv')
        write_json({'schema_version': 1, 'scenario': 'moser', 'summary': schedule.to_dict(),
                    'checks': {'beta_at_least_one': schedule.beta >= 1.0}}, out_dir / 'diagnostics.json')
    return EXIT_OK


# ------------------------
# Main app logic
# ------------------------
def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    config = load_config()
    setup_logging(args.log_level or config['log_level'])
    logger.debug("%s %s", config['app_name'], config['version'])

    commands = {'run': cmd_run, 'compare': cmd_compare, 'moser': cmd_moser}
    try:
        return commands[args.command](args)
    except (ConfigError, SubcriticalExponentError) as exc:
        logger.error("configuration error: %s", exc)
        return EXIT_CONFIG_ERROR
    except UltrafastError as exc:
        logger.error("solver failure: %s", exc)
        return EXIT_SOLVER_FAILURE
    except ValueError as exc:
        logger.error("invalid parameters: %s", exc)
        return EXIT_CONFIG_ERROR


if __name__ == "__main__":
    sys.exit(main())
