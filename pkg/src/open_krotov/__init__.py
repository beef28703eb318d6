"""
Open Krotov.

Монотонно сходящиеся алгоритмы оптимального управления открытыми квантовыми
системами в пространстве Лиувилля и ускорение термализации кубита.
"""

from open_krotov.dynamics import ControlField, TimeGrid, propagate_costate, propagate_state
from open_krotov.liouville import DensityMatrix, Liouvillian, build_liouvillian
from open_krotov.optimizer import (
    ControlProblem,
    OptimizationResult,
    OptimizerConfig,
    closed_optimize,
    optimize,
    qsl_time,
)
from open_krotov.thermal import (
    ThermalModel,
    epsilon_free_time,
    gad_model,
    speedup_experiment,
)

__version__ = '0.1.0'

__all__ = [
    'ControlField',
    'ControlProblem',
    'DensityMatrix',
    'Liouvillian',
    'OptimizationResult',
    'OptimizerConfig',
    'ThermalModel',
    'TimeGrid',
    '__version__',
    'build_liouvillian',
    'closed_optimize',
    'epsilon_free_time',
    'gad_model',
    'optimize',
    'propagate_costate',
    'propagate_state',
    'qsl_time',
    'speedup_experiment',
]
