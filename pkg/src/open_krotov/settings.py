"""Настройки окружения (логирование, каталог результатов) через Pydantic Settings."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Final, TypedDict

from dotenv import load_dotenv
from pydantic import Field, ValidationError, ValidationInfo, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from open_krotov.errors import ConfigValidationError
from open_krotov.logger import get_logger

ENV_PREFIX: Final[str] = 'OPEN_KROTOV_'
VALID_LOG_LEVELS: Final[frozenset[str]] = frozenset((
    'DEBUG',
    'INFO',
    'WARNING',
    'ERROR',
    'CRITICAL',
))


class SettingsDict(TypedDict):
    """Типизированный словарь значений по умолчанию."""

    LOG_LEVEL: str
    LOG_FILE: str
    OUTPUT_DIR: str
    SHOW_PROGRESS_BAR: bool
    LOG_ITERATION_STRIDE: int


DEFAULT_SETTINGS: SettingsDict = {
    'LOG_LEVEL': 'INFO',
    'LOG_FILE': './logs/open_krotov.log',
    'OUTPUT_DIR': './results',
    'SHOW_PROGRESS_BAR': False,
    'LOG_ITERATION_STRIDE': 1,
}


class RuntimeSettings(BaseSettings):
    """
    Параметры запуска из переменных окружения ``OPEN_KROTOV_*`` или .env.

    Влияют только на логирование и вывод в консоль, но не на численный результат.
    """

    model_config = SettingsConfigDict(
        env_prefix=ENV_PREFIX,
        env_file_encoding='utf-8',
        case_sensitive=False,
        extra='ignore',
    )

    log_level: str = Field(default=DEFAULT_SETTINGS['LOG_LEVEL'], description='Уровень логирования')
    log_file: str = Field(default=DEFAULT_SETTINGS['LOG_FILE'], description='Путь к файлу логов')
    output_dir: str = Field(
        default=DEFAULT_SETTINGS['OUTPUT_DIR'],
        description='Каталог для CSV/JSON результатов',
    )
    show_progress_bar: bool = Field(
        default=DEFAULT_SETTINGS['SHOW_PROGRESS_BAR'],
        description='Показывать прогресс бар итераций',
    )
    log_iteration_stride: int = Field(
        default=DEFAULT_SETTINGS['LOG_ITERATION_STRIDE'],
        ge=1,
        description='Логировать каждую n-ю итерацию',
    )

    @field_validator('log_iteration_stride', mode='before')
    @classmethod
    def parse_empty_int(cls, v: str | int | None) -> int | str | None:
        """Преобразует пустые строки в дефолтные значения для int полей."""
        if v == '' or v is None:
            return DEFAULT_SETTINGS['LOG_ITERATION_STRIDE']
        return v

    @field_validator('show_progress_bar', mode='before')
    @classmethod
    def parse_empty_bool(cls, v: object) -> object:
        """Преобразует пустые строки и строковые bool."""
        if v == '' or v is None:
            return DEFAULT_SETTINGS['SHOW_PROGRESS_BAR']
        if isinstance(v, str):
            lower_v = v.lower().strip()
            if lower_v in {'true', '1', 'yes', 'on'}:
                return True
            if lower_v in {'false', '0', 'no', 'off'}:
                return False
        return v

    @field_validator('log_level', 'log_file', 'output_dir', mode='before')
    @classmethod
    def parse_empty_str(cls, v: object, info: ValidationInfo) -> object:
        """Пустая строка означает значение по умолчанию."""
        if v == '' or v is None:
            field_name = (info.field_name or '').upper()
            return DEFAULT_SETTINGS.get(field_name, '')
        return v

    @field_validator('log_level')
    @classmethod
    def normalize_log_level(cls, v: str) -> str:
        """Нормализует и проверяет уровень логирования."""
        normalized = v.strip().upper()
        if normalized not in VALID_LOG_LEVELS:
            valid = ', '.join(sorted(VALID_LOG_LEVELS))
            raise ValueError(f"Недопустимый LOG_LEVEL='{v}'. Допустимые значения: {valid}")
        return normalized


def load_settings(env_file: str | Path | None = '.env') -> RuntimeSettings:
    """
    Загружает настройки из окружения и (если есть) из .env файла.

    Отсутствующий .env не является ошибкой: все поля имеют значения по умолчанию.

    Raises:
        ConfigValidationError: Если значения переменных окружения некорректны.
    """
    if env_file is not None:
        env_path = Path(env_file)
        if env_path.is_file():
            # переменные процесса имеют приоритет над .env
            load_dotenv(env_path, override=False)
        else:
            get_logger('settings').debug(
                'Файл %s не найден, используются переменные окружения',
                env_path,
            )
    try:
        return RuntimeSettings()
    except ValidationError as e:
        raise ConfigValidationError(
            format_validation_error(e, 'Ошибка валидации настроек окружения'),
            e,
        ) from e


def format_validation_error(e: ValidationError, title: str) -> str:
    """Собирает ошибки pydantic в строки вида ' • field -> sub: message'."""
    error_messages = []
    for error in e.errors():
        field = ' -> '.join(str(loc) for loc in error['loc']) or '<root>'
        msg = error['msg']
        error_messages.append(f' • {field}: {msg}')
    formatted_errors = '\n'.join(error_messages)
    return f'{title}:\n{formatted_errors}'


def print_settings_summary(settings: RuntimeSettings, logger: logging.Logger) -> None:
    """Выводит сводку настроек в лог по секциям."""
    data = settings.model_dump()
    sections = [
        ('Логирование', ['log_level', 'log_file', 'log_iteration_stride']),
        ('Вывод', ['output_dir', 'show_progress_bar']),
    ]
    logger.info('=' * 60)
    logger.info('НАСТРОЙКИ ЗАПУСКА')
    logger.info('=' * 60)
    for section_name, params in sections:
        logger.info('[%s]', section_name)
        logger.info('-' * 40)
        for param in params:
            display_name = param.replace('_', ' ').title()
            logger.info(' %-28s: %s', display_name, data.get(param))
    logger.info('=' * 60)
