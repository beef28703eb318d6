"""
Centralized logging for open_krotov.

Configures the `open_krotov` logger hierarchy with console and rotating file
handlers, and provides timing and context helpers for long optimization runs.
Library modules only ever call `get_logger`; handlers are installed by the CLI.
"""

from __future__ import annotations

import logging
import logging.handlers
import sys
from collections.abc import Callable
from functools import wraps
from pathlib import Path
from time import perf_counter

type LogLevel = str | int

ROOT_LOGGER_NAME: str = 'open_krotov'
DEFAULT_LOG_FORMAT: str = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
DEFAULT_DATE_FORMAT: str = '%Y-%m-%d %H:%M:%S'
MAX_LOG_FILE_SIZE: int = 10 * 1024 * 1024  # 10 MB
BACKUP_COUNT: int = 3

# extra={'iteration': k} marks per-iteration records for IterationFilter
ITERATION_ATTR: str = 'iteration'


def setup_logging(
    log_level: LogLevel = 'INFO',
    log_file: str | Path | None = None,
    logger_name: str = ROOT_LOGGER_NAME,
    *,
    console_output: bool = True,
    iteration_stride: int = 1,
) -> logging.Logger:
    """
    Configure the package logger with console and/or file output.

    Args:
        log_level: Logging level (DEBUG, INFO, WARNING, ERROR, CRITICAL).
        log_file: Path to a rotating log file (optional).
        logger_name: Logger name.
        console_output: Whether to log to stdout.
        iteration_stride: Keep only every n-th per-iteration record.

    Returns:
        Configured Logger object.

    Example:
        >>> logger = setup_logging('DEBUG', console_output=True)
        >>> logger.info('Optimization started')
    """
    logger = logging.getLogger(logger_name)

    # Clear existing handlers (avoid duplication on repeated CLI calls)
    logger.handlers.clear()
    logger.filters.clear()

    numeric_level = _parse_log_level(log_level)
    logger.setLevel(numeric_level)

    formatter = _create_formatter(DEFAULT_LOG_FORMAT, DEFAULT_DATE_FORMAT)

    match (console_output, log_file):
        case (True, None):
            _add_console_handler(logger, formatter)
        case (False, str() | Path() as file):
            _add_file_handler(logger, formatter, file)
        case (True, str() | Path() as file):
            _add_console_handler(logger, formatter)
            _add_file_handler(logger, formatter, file)
        case (False, None):
            # Fallback: at least console
            _add_console_handler(logger, formatter)
            logger.warning('Logging not configured properly, using console')

    if iteration_stride > 1:
        for handler in logger.handlers:
            handler.addFilter(IterationFilter(iteration_stride))

    logger.debug(
        'Logger %r configured with level %s',
        logger_name,
        logging.getLevelName(numeric_level),
    )

    return logger


def _parse_log_level(level: LogLevel) -> int:
    """
    Convert a logging level given as name or number to its numeric value.

    Args:
        level: Logging level (string or number).

    Returns:
        Numeric logging level.

    Raises:
        ValueError: If level is invalid.
    """
    match level:
        case int() as numeric_level if numeric_level in {0, 10, 20, 30, 40, 50}:
            return numeric_level
        case str() as string_level:
            upper_level = string_level.strip().upper()
            numeric = logging.getLevelNamesMapping().get(upper_level)
            if numeric is None:
                raise ValueError(f'Invalid logging level: {level}')
            return numeric
        case _:
            raise ValueError(f'Unsupported logging level type: {type(level)}')


def _create_formatter(fmt: str, datefmt: str) -> logging.Formatter:
    return logging.Formatter(fmt=fmt, datefmt=datefmt)


def _add_console_handler(logger: logging.Logger, formatter: logging.Formatter) -> None:
    console_handler = logging.StreamHandler(sys.stdout)
    console_handler.setFormatter(formatter)

    if _supports_color():
        console_handler.setFormatter(_create_colored_formatter())

    logger.addHandler(console_handler)


def _add_file_handler(
    logger: logging.Logger,
    formatter: logging.Formatter,
    log_file: str | Path,
) -> None:
    """
    Add a rotating file handler, creating the parent directory if needed.

    Args:
        logger: Logger to configure.
        formatter: Formatter for handler.
        log_file: Path to log file.
    """
    file_path = Path(log_file)
    file_path.parent.mkdir(parents=True, exist_ok=True)

    file_handler = logging.handlers.RotatingFileHandler(
        filename=file_path,
        maxBytes=MAX_LOG_FILE_SIZE,
        backupCount=BACKUP_COUNT,
        encoding='utf-8',
    )
    file_handler.setFormatter(formatter)
    logger.addHandler(file_handler)


def _supports_color() -> bool:
    return (
        hasattr(sys.stdout, 'isatty')
        and sys.stdout.isatty()
        and sys.platform != 'win32'  # Windows requires extra setup
    )


def _create_colored_formatter() -> logging.Formatter:
    """
    Create a formatter that colours the level name with ANSI codes.

    Returns:
        Formatter with ANSI escape codes for colors.
    """
    colors = {
        'DEBUG': '\033[36m',  # Cyan
        'INFO': '\033[32m',  # Green
        'WARNING': '\033[33m',  # Yellow
        'ERROR': '\033[31m',  # Red
        'CRITICAL': '\033[35m',  # Magenta
        'RESET': '\033[0m',
    }

    class ColoredFormatter(logging.Formatter):
        def format(self, record: logging.LogRecord) -> str:
            levelname = record.levelname
            if levelname in colors:
                colored = f'{colors[levelname]}{levelname}{colors["RESET"]}'
                original = record.levelname
                try:
                    record.levelname = colored
                    return super().format(record)
                finally:
                    record.levelname = original
            return super().format(record)

    return ColoredFormatter(fmt=DEFAULT_LOG_FORMAT, datefmt=DEFAULT_DATE_FORMAT)


class IterationFilter(logging.Filter):
    """
    Thin out per-iteration records of long optimization runs.

    Records logged with ``extra={'iteration': k}`` pass only when ``k`` is a
    multiple of the stride or ``k == 1``; all other records pass unchanged.

    Args:
        stride: Keep every stride-th iteration record.
    """

    def __init__(self, stride: int = 1) -> None:
        super().__init__()
        if stride < 1:
            raise ValueError(f'Iteration stride must be >= 1, got {stride}')
        self.stride = stride

    def filter(self, record: logging.LogRecord) -> bool:
        iteration = getattr(record, ITERATION_ATTR, None)
        if not isinstance(iteration, int):
            return True
        return iteration == 1 or iteration % self.stride == 0


def log_execution_time[**P, R](func: Callable[P, R]) -> Callable[P, R]:
    """
    Decorator to log function execution time.

    Args:
        func: Function to decorate.

    Returns:
        Wrapped function with timing logs.

    Example:
        >>> @log_execution_time
        ... def run_sweep():
        ...     pass
    """

    @wraps(func)
    def wrapper(*args: P.args, **kwargs: P.kwargs) -> R:
        logger = logging.getLogger(f'{ROOT_LOGGER_NAME}.performance')

        func_name = func.__name__
        module_name = func.__module__

        logger.debug('Starting execution: %s.%s', module_name, func_name)
        start_time = perf_counter()

        try:
            result = func(*args, **kwargs)
        except Exception:
            elapsed_time = perf_counter() - start_time
            logger.exception(
                'Error in %s.%s after %.4fs',
                module_name,
                func_name,
                elapsed_time,
            )
            raise
        else:
            elapsed_time = perf_counter() - start_time
            logger.info(
                'Completed: %s.%s (time: %.4fs)',
                module_name,
                func_name,
                elapsed_time,
            )
            return result

    return wrapper


def get_logger(name: str | None = None) -> logging.Logger:
    """
    Get a logger inside the package namespace.

    Args:
        name: Logger name. If None, returns the package root logger.

    Returns:
        Logger object.

    Example:
        >>> logger = get_logger('optimizer')
        >>> logger.name
        'open_krotov.optimizer'
    """
    if name is None:
        return logging.getLogger(ROOT_LOGGER_NAME)

    if not name.startswith(f'{ROOT_LOGGER_NAME}.'):
        name = f'{ROOT_LOGGER_NAME}.{name}'

    return logging.getLogger(name)


def log_exception(
    logger: logging.Logger | None = None,
    message: str = 'An error occurred',
    level: int = logging.ERROR,
) -> None:
    """
    Log the exception currently being handled, with traceback.

    Args:
        logger: Logger to use. If None, uses the package root logger.
        message: Error message.
        level: Logging level.
    """
    if logger is None:
        logger = get_logger()

    logger.log(level, message, exc_info=True)


def create_context_logger(
    logger: logging.Logger,
    **context: str | int | float,
) -> Callable[..., None]:
    """
    Create a logging function that prefixes every message with run context.

    Args:
        logger: Base logger.
        **context: Context fields (mode, seed, delta, eta, ...).

    Returns:
        Function ``log(level, message, *args, iteration=None)``.

    Example:
        >>> log_ctx = create_context_logger(get_logger('optimizer'), seed=7, delta=1.5)
        >>> log_ctx('INFO', 'J=%.6f', 0.5, iteration=3)
    """
    context_str = ' | '.join(f'{k}={v}' for k, v in context.items())

    def log_with_context(
        level: LogLevel,
        message: str,
        *args: object,
        iteration: int | None = None,
    ) -> None:
        numeric_level = _parse_log_level(level)
        if not logger.isEnabledFor(numeric_level):
            return
        extra = {ITERATION_ATTR: iteration} if iteration is not None else None
        logger.log(numeric_level, f'[{context_str}] {message}', *args, extra=extra)

    return log_with_context


def shutdown_logging() -> None:
    """Flush and close all handlers."""
    logging.shutdown()
