"""Точка входа CLI open-krotov: разбор аргументов, запуск режима, запись результатов."""

from __future__ import annotations

import argparse
import logging
import platform
import sys
from collections.abc import Sequence
from datetime import UTC, datetime
from pathlib import Path
from time import perf_counter

import numpy as np
import scipy

from open_krotov import __version__
from open_krotov.config import ExperimentConfig, complex_matrix, load_config
from open_krotov.dynamics import ControlField, Trajectory, propagate_state
from open_krotov.errors import (
    EXIT_OK,
    EXIT_RUNTIME,
    ConfigValidationError,
    InvalidStateError,
    OpenKrotovError,
    exit_code_for,
)
from open_krotov.liouville import ComplexArray, DensityMatrix, RealArray
from open_krotov.logger import log_exception, setup_logging, shutdown_logging
from open_krotov.optimizer import (
    ControlProblem,
    closed_optimize,
    decompose_history,
    hamiltonian_samples,
    optimize,
    qsl_time,
)
from open_krotov.results import RunResult, TrajectoryTable, write_run
from open_krotov.settings import RuntimeSettings, load_settings, print_settings_summary
from open_krotov.thermal import (
    bloch_from_density,
    epsilon_free_time,
    first_passage_time,
    speedup_experiment,
    trace_distance_curve,
)

PROG = 'open-krotov'

EPILOG = """\
output files (written to the output directory):
  convergence.csv    k, J, fidelity, fluence, delta_J       one row per iteration (k = 0: guess)
  trajectory.csv     t, D1_free, D1_controlled, xi          one row per grid node
  decomposition.csv  k, direct, projector_term, delta_term, eta_term, difference
                     (only with output.decomposition = true)
  result.json        scalar results, echoed configuration and run metadata
  results.xlsx       the same tables as spreadsheet sheets (--xlsx or output.xlsx = true)

floating-point values in CSV files carry 17 significant digits.

exit codes:
  0  success
  2  configuration file missing, unreadable or not valid JSON (and no --preset)
  3  configuration or parameter validation failed
  4  runtime abort (monotonicity violation, internal consistency check)
"""


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=PROG,
        description='Monotonically convergent optimal control of open quantum systems.',
        epilog=EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    parser.add_argument(
        '--env-file',
        default='.env',
        help='dotenv file with OPEN_KROTOV_* logging settings (default: .env)',
    )
    parser.add_argument(
        '--log-level',
        choices=['DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL'],
        help='override OPEN_KROTOV_LOG_LEVEL',
    )
    commands = parser.add_subparsers(dest='command', required=True, metavar='COMMAND')

    run = commands.add_parser(
        'run',
        help='run the experiment described by a JSON configuration',
        epilog=EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    run.add_argument(
        'config',
        type=Path,
        nargs='?',
        help='experiment configuration (JSON); optional with --preset',
    )
    run.add_argument('--preset', help='named parameter set, e.g. gad-speedup or paper-fig3')
    run.add_argument('--output-dir', type=Path, help='directory for result files')
    run.add_argument('--seed', type=int, help='seed of the initial guess field')
    run.add_argument(
        '--override',
        action='append',
        default=[],
        metavar='KEY=VALUE',
        help='dotted configuration override, value parsed as JSON (repeatable)',
    )
    run.add_argument('--xlsx', action='store_true', help='also write results.xlsx')

    free_time = commands.add_parser(
        'free-time',
        help='closed-form and integrated free thermalization time',
    )
    free_time.add_argument(
        'config',
        type=Path,
        nargs='?',
        help='experiment configuration (JSON); optional with --preset',
    )
    free_time.add_argument('--preset', help='named parameter set, e.g. gad-qubit')
    free_time.add_argument('--output-dir', type=Path, help='directory for result.json')
    free_time.add_argument(
        '--override',
        action='append',
        default=[],
        metavar='KEY=VALUE',
        help='dotted configuration override (repeatable)',
    )
    return parser


def _setup_logger_from_default() -> logging.Logger:
    """Настраивает логгер с дефолтными настройками (до чтения окружения)."""
    return setup_logging(log_level=logging.ERROR, log_file=None)


def _setup_logger_from_settings(
    settings: RuntimeSettings,
    log_level: str | None,
) -> logging.Logger:
    """Перенастраивает логгер по настройкам окружения и флагу --log-level."""
    log_file = Path(settings.log_file)
    log_file.parent.mkdir(parents=True, exist_ok=True)
    return setup_logging(
        log_level=log_level or settings.log_level,
        log_file=log_file,
        iteration_stride=settings.log_iteration_stride,
    )


def _collect_overrides(args: argparse.Namespace) -> list[str]:
    """Флаги командной строки превращаются в точечные переопределения конфигурации."""
    overrides = list(args.override)
    if args.command == 'free-time':
        overrides.append('mode=free-time')
    if getattr(args, 'seed', None) is not None:
        overrides.append(f'optimizer.seed={args.seed}')
    return overrides


def _output_dir(
    args: argparse.Namespace,
    config: ExperimentConfig,
    settings: RuntimeSettings,
) -> Path:
    """Приоритет: --output-dir, затем output.directory из конфигурации, затем окружение."""
    if args.output_dir is not None:
        return Path(args.output_dir)
    if config.output.directory is not None:
        return Path(config.output.directory)
    return Path(settings.output_dir)


def _ket_density_stack(states: ComplexArray) -> ComplexArray:
    return np.einsum('ni,nj->nij', states, states.conj())


def _distance_curves(
    problem: ControlProblem,
    controlled: Trajectory,
) -> tuple[RealArray, RealArray]:
    """Расстояние до цели без управления и с найденным полем в каждом узле сетки."""
    free = propagate_state(
        problem.generator,
        ControlField.zeros(problem.grid),
        problem.initial_vector,
        problem.grid,
    )
    if problem.is_closed:
        pure_target = DensityMatrix.from_ket(problem.target_vector)
        return (
            trace_distance_curve(_ket_density_stack(free.states), pure_target),
            trace_distance_curve(_ket_density_stack(controlled.states), pure_target),
        )
    target = problem.target
    if not isinstance(target, DensityMatrix):
        raise InvalidStateError('Open problem without a density-matrix target')
    return (
        trace_distance_curve(free.density_matrices(), target),
        trace_distance_curve(controlled.density_matrices(), target),
    )


def _run_optimization(config: ExperimentConfig, *, show_progress: bool) -> RunResult:
    """Режимы open-optimize и closed-optimize."""
    problem = config.control_problem()
    optimizer_config = config.to_optimizer_config(show_progress=show_progress)
    store_history = config.output.decomposition
    if problem.is_closed:
        result = closed_optimize(problem, optimizer_config, store_history=store_history)
    else:
        result = optimize(problem, optimizer_config, store_history=store_history)

    d1_free, d1_controlled = _distance_curves(problem, result.trajectory)
    final = result.final_record
    scalars: dict[str, float | int | bool | str | None] = {
        'iterations': result.iterations,
        'J_initial': result.initial.J,
        'J_final': final.J,
        'fidelity_final': final.fidelity,
        'fluence_final': final.fluence,
        'D1_free_final': float(d1_free[-1]),
        'D1_controlled_final': float(d1_controlled[-1]),
        't_final': problem.grid.t_final,
    }
    if problem.is_closed:
        report = qsl_time(
            problem.initial_state,
            problem.target,
            hamiltonian_samples(problem, result.field),
            problem.grid,
        )
        scalars |= {
            'fubini_study_distance': report.fubini_study_distance,
            't_qsl': report.t_qsl,
            't_qsl_within_horizon': bool(report.t_qsl <= problem.grid.t_final),
        }

    return RunResult(
        mode=config.mode,
        scalars=scalars,
        config=config.model_dump(mode='json'),
        records=(result.initial, *result.records),
        trajectory=TrajectoryTable(
            times=problem.grid.times,
            d1_free=d1_free,
            d1_controlled=d1_controlled,
            xi=result.field.xi,
        ),
        decomposition=decompose_history(problem, result) if store_history else (),
    )


def _run_speedup(config: ExperimentConfig, *, show_progress: bool) -> RunResult:
    """Режим thermal-speedup: T = T_free / s и оптимизация к состоянию Гиббса."""
    if config.epsilon is None or config.grid.speedup is None:
        raise ConfigValidationError('thermal-speedup needs epsilon and grid.speedup')
    store_history = config.output.decomposition
    report = speedup_experiment(
        config.thermal_model(),
        config.initial_density(),
        config.target_density(),
        config.epsilon,
        config.grid.speedup,
        config.to_optimizer_config(show_progress=show_progress),
        alpha=config.problem.alpha,
        n_steps=config.grid.n_steps,
        store_history=store_history,
    )
    result = report.result
    if result is None or report.grid is None or report.problem is None:
        # начальное состояние уже в epsilon-шаре: оптимизировать нечего
        print(f'initial state already within epsilon={report.epsilon:g} of the Gibbs state')
        return RunResult(
            mode=config.mode,
            scalars={
                't_free': report.t_free,
                'speedup': report.speedup,
                't_final': report.t_final,
                'epsilon': report.epsilon,
                'iterations': 0,
                'D1_free_final': float(report.free_distance[-1]),
                'D1_controlled_final': float(report.controlled_distance[-1]),
                'reached': report.reached,
            },
            config=config.model_dump(mode='json'),
        )
    final = result.final_record
    return RunResult(
        mode=config.mode,
        scalars={
            't_free': report.t_free,
            'speedup': report.speedup,
            't_final': report.t_final,
            'epsilon': report.epsilon,
            'iterations': result.iterations,
            'J_initial': result.initial.J,
            'J_final': final.J,
            'fidelity_final': final.fidelity,
            'fluence_final': final.fluence,
            'D1_free_final': float(report.free_distance[-1]),
            'D1_controlled_final': float(report.controlled_distance[-1]),
            'reached': report.reached,
        },
        config=config.model_dump(mode='json'),
        records=(result.initial, *result.records),
        trajectory=TrajectoryTable(
            times=report.grid.times,
            d1_free=report.free_distance,
            d1_controlled=report.controlled_distance,
            xi=result.field.xi,
        ),
        decomposition=decompose_history(report.problem, result) if store_history else (),
    )


def _run_free_time(config: ExperimentConfig) -> RunResult:
    """Режим free-time: аналитическое время и время первого достижения по ОДУ."""
    if config.epsilon is None:
        raise ConfigValidationError('free-time needs epsilon')
    model = config.thermal_model()
    r0 = bloch_from_density(config.initial_density())
    closed_form = epsilon_free_time(r0, model, config.epsilon)
    integrated = first_passage_time(r0, model, config.epsilon)
    scale = max(abs(closed_form), abs(integrated))
    relative_difference = abs(closed_form - integrated) / scale if scale > 0.0 else 0.0

    scalars: dict[str, float | int | bool | str | None] = {
        'epsilon': config.epsilon,
        't_free_closed_form': closed_form,
        't_free_first_passage': integrated,
        'relative_difference': relative_difference,
    }
    if config.reference_time is not None:
        scalars |= {
            'reference_time': config.reference_time,
            'reference_ratio': config.reference_time / closed_form if closed_form else None,
        }

    print(f'T_free (closed form)   : {closed_form:.17g}')
    print(f'T_free (first passage) : {integrated:.17g}')
    print(f'relative difference    : {relative_difference:.3e}')
    if config.reference_time is not None:
        print(f'reference time         : {config.reference_time:.17g} (not reproduced)')
    return RunResult(mode=config.mode, scalars=scalars, config=config.model_dump(mode='json'))


def _run_qsl(config: ExperimentConfig) -> RunResult:
    """Режим qsl: оценка квантового предела скорости для заданного поля."""
    grid = config.time_grid()
    if config.problem.h0 is None:
        raise ConfigValidationError('qsl needs problem.h0')
    h0 = complex_matrix(config.problem.h0)
    mu_prime = (
        np.zeros_like(h0)
        if config.problem.mu_prime is None
        else complex_matrix(config.problem.mu_prime)
    )
    samples = config.qsl_samples()
    hamiltonians = h0[None, :, :] + samples[:, None, None] * mu_prime[None, :, :]
    report = qsl_time(config.ket('psi0'), config.ket('tau'), hamiltonians, grid)
    print(f't_QSL : {report.t_qsl:.17g}')
    return RunResult(
        mode=config.mode,
        scalars={
            'fubini_study_distance': report.fubini_study_distance,
            'avg_energy': report.avg_energy,
            'avg_std_dev': report.avg_std_dev,
            't_qsl': report.t_qsl,
            't_final': grid.t_final,
        },
        config=config.model_dump(mode='json'),
    )


def _dispatch(config: ExperimentConfig, *, show_progress: bool) -> RunResult:
    match config.mode:
        case 'open-optimize' | 'closed-optimize':
            return _run_optimization(config, show_progress=show_progress)
        case 'thermal-speedup':
            return _run_speedup(config, show_progress=show_progress)
        case 'free-time':
            return _run_free_time(config)
        case 'qsl':
            return _run_qsl(config)


def _metadata(config: ExperimentConfig, wall_clock: float) -> dict[str, object]:
    return {
        'version': __version__,
        'seed': config.optimizer.seed,
        'wall_clock_seconds': wall_clock,
        'python': platform.python_version(),
        'numpy': np.__version__,
        'scipy': scipy.__version__,
        'timestamp': datetime.now(UTC).isoformat(timespec='seconds'),
    }


def _execute(args: argparse.Namespace, settings: RuntimeSettings, logger: logging.Logger) -> None:
    """Загрузка конфигурации, запуск режима и запись результатов."""
    config = load_config(args.config, _collect_overrides(args), preset=args.preset)
    output_dir = _output_dir(args, config, settings)
    xlsx = bool(getattr(args, 'xlsx', False) or config.output.xlsx)

    start = perf_counter()
    result = _dispatch(config, show_progress=settings.show_progress_bar)
    wall_clock = perf_counter() - start

    written = write_run(result, output_dir, _metadata(config, wall_clock), xlsx=xlsx)
    logger.info('Mode %s finished in %.2f s', config.mode, wall_clock)
    print(f'\n✓ {config.mode}: results in {output_dir}')
    for path in written:
        print(f'  {path.name}')


def main(argv: Sequence[str] | None = None) -> int:
    """
    Основная точка входа приложения.

    Returns:
        Код завершения: 0 при успехе, 2 для нечитаемой конфигурации, 3 при ошибке
        валидации, 4 при прерывании во время расчёта.
    """
    args = _build_parser().parse_args(argv)

    # Логгер с дефолтными настройками нужен уже для ошибок чтения окружения
    logger = _setup_logger_from_default()
    try:
        settings = load_settings(args.env_file)
    except OpenKrotovError as e:
        logger.error('%s', e)  # noqa: TRY400
        print(f'error: {e}', file=sys.stderr)
        return exit_code_for(e)

    logger = _setup_logger_from_settings(settings, args.log_level)
    logger.info('Запуск %s %s (%s)', PROG, __version__, args.command)
    print_settings_summary(settings, logger)

    try:
        _execute(args, settings, logger)
    except OpenKrotovError as e:
        logger.error('%s', e)  # noqa: TRY400
        print(f'error: {e}', file=sys.stderr)
        return exit_code_for(e)
    except Exception:
        log_exception(logger, 'Непредвиденная ошибка')
        print('error: unexpected failure, see the log file', file=sys.stderr)
        return EXIT_RUNTIME
    else:
        logger.info('Приложение завершено успешно')
        return EXIT_OK
    finally:
        shutdown_logging()


if __name__ == '__main__':
    sys.exit(main())
