"""Общие фикстуры pytest для open_krotov."""

import logging
import os
import sys
from pathlib import Path

import numpy as np
import pytest

# Добавляем src в sys.path (на случай запуска без установки пакета)
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root / 'src'))

from open_krotov.dynamics import TimeGrid  # noqa: E402
from open_krotov.liouville import DensityMatrix  # noqa: E402
from open_krotov.logger import ROOT_LOGGER_NAME  # noqa: E402
from open_krotov.optimizer import ControlProblem  # noqa: E402
from open_krotov.thermal import ThermalModel, gad_model  # noqa: E402

GAD_OMEGA = 2.0
GAD_BETA = float(np.log(1.5) / 2.0)
GAD_GAMMA = 0.1
GAD_EPSILON = 0.1
# T_free of the reference bath instance from the closed form, validated by first passage
GAD_T_FREE = 2.705733


@pytest.fixture(autouse=True)
def reset_environment(monkeypatch: pytest.MonkeyPatch):
    """Убирает переменные OPEN_KROTOV_* и обработчики логгера перед каждым тестом."""
    for key in list(os.environ):
        if key.startswith('OPEN_KROTOV_'):
            monkeypatch.delenv(key, raising=False)

    yield

    package_logger = logging.getLogger(ROOT_LOGGER_NAME)
    for handler in list(package_logger.handlers):
        handler.close()
        package_logger.removeHandler(handler)
    package_logger.filters.clear()


@pytest.fixture
def bath_model() -> ThermalModel:
    """Кубит в тепловой ванне с параметрами из численного примера."""
    return gad_model(GAD_OMEGA, GAD_BETA, GAD_GAMMA)


@pytest.fixture
def coherent_rho0() -> DensityMatrix:
    return DensityMatrix(np.array([[0.5, 0.19j], [-0.19j, 0.5]]))


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)


@pytest.fixture
def thermal_problem(bath_model: ThermalModel, coherent_rho0: DensityMatrix) -> ControlProblem:
    """Задача управления к состоянию Гиббса на горизонте T_free / 2."""
    return ControlProblem.open_system(
        bath_model.h0,
        bath_model.mu_prime,
        bath_model.lindblad_ops,
        coherent_rho0,
        bath_model.gibbs_state(),
        1e-3,
        TimeGrid(GAD_T_FREE / 2.0, 2000),
    )


@pytest.fixture
def small_thermal_problem(thermal_problem: ControlProblem) -> ControlProblem:
    """Та же задача на грубой сетке для быстрых тестов."""
    return thermal_problem.with_grid(TimeGrid(GAD_T_FREE / 2.0, 200))


@pytest.fixture
def qubit_flip_problem() -> ControlProblem:
    """|0> -> |1> при H0 = sigma_z, mu = sigma_x, T = 4."""
    sigma_z = np.diag([1.0, -1.0])
    sigma_x = np.array([[0.0, 1.0], [1.0, 0.0]])
    return ControlProblem.closed_system(
        sigma_z,
        sigma_x,
        np.array([1.0, 0.0]),
        np.array([0.0, 1.0]),
        1e-3,
        TimeGrid(4.0, 2000),
    )
