"""
Experiment configuration: a single JSON document validated with pydantic.

Complex matrix entries are written as ``[re, im]`` pairs (a bare number means a
real entry).  A ``preset`` key pulls in a named parameter set before
validation; keys given explicitly in the document win over the preset.
"""

from __future__ import annotations

import copy
import json
from collections.abc import Iterable, Mapping
from pathlib import Path
from typing import Annotated, Final, Literal

import numpy as np
from pydantic import (
    AfterValidator,
    BaseModel,
    ConfigDict,
    Field,
    NonNegativeFloat,
    PositiveFloat,
    PositiveInt,
    ValidationError,
    ValidationInfo,
    field_validator,
    model_validator,
)

from open_krotov.dynamics import TimeGrid
from open_krotov.errors import ConfigParseError, ConfigValidationError
from open_krotov.liouville import ComplexArray, DensityMatrix, RealArray
from open_krotov.logger import get_logger
from open_krotov.optimizer import ControlProblem, OptimizerConfig
from open_krotov.settings import format_validation_error
from open_krotov.thermal import ThermalModel, gad_model

type Mode = Literal['open-optimize', 'closed-optimize', 'thermal-speedup', 'free-time', 'qsl']

logger = get_logger('config')

PARAMETER_RANGE: Final[tuple[float, float]] = (0.0, 2.0)


ComplexEntry = float | tuple[float, float]


def _check_square(rows: list[list[ComplexEntry]]) -> list[list[ComplexEntry]]:
    size = len(rows)
    if size == 0 or any(len(row) != size for row in rows):
        lengths = [len(row) for row in rows]
        raise ValueError(f'matrix must be square and non-empty, got row lengths {lengths}')
    return rows


def _check_nonempty(entries: list[ComplexEntry]) -> list[ComplexEntry]:
    if not entries:
        raise ValueError('state vector must not be empty')
    return entries


ComplexMatrix = Annotated[list[list[ComplexEntry]], AfterValidator(_check_square)]
ComplexVector = Annotated[list[ComplexEntry], AfterValidator(_check_nonempty)]


def to_complex(entry: ComplexEntry) -> complex:
    """``[re, im]`` or a bare real number to ``complex``."""
    match entry:
        case (re, im):
            return complex(re, im)
        case _:
            return complex(entry)


def complex_matrix(rows: list[list[ComplexEntry]]) -> ComplexArray:
    return np.array([[to_complex(e) for e in row] for row in rows], dtype=np.complex128)


def complex_vector(entries: list[ComplexEntry]) -> ComplexArray:
    return np.array([to_complex(e) for e in entries], dtype=np.complex128)


def encode_matrix(matrix: ComplexArray) -> list[list[list[float]]]:
    """Inverse of `complex_matrix`, always writing ``[re, im]`` pairs."""
    return [[[float(z.real), float(z.imag)] for z in row] for row in np.asarray(matrix)]


def _check_parameter(value: float, name: str) -> float:
    low, high = PARAMETER_RANGE
    if not low <= value <= high:
        raise ValueError(f'{name}={value} outside admissible range [{low:g}, {high:g}]')
    return value


class _Section(BaseModel):
    model_config = ConfigDict(extra='forbid', frozen=True, allow_inf_nan=False)


class ModelSection(_Section):
    """Bath parameters of the thermalization qubit."""

    omega: PositiveFloat
    beta: PositiveFloat
    gamma: PositiveFloat

    def build(self) -> ThermalModel:
        return gad_model(self.omega, self.beta, self.gamma)


class ProblemSection(_Section):
    """Explicit operators and states; every matrix is d x d, every ket has length d."""

    h0: ComplexMatrix | None = None
    mu_prime: ComplexMatrix | None = None
    lindblad_ops: list[ComplexMatrix] = Field(default_factory=list)
    rho0: ComplexMatrix | None = None
    target: ComplexMatrix | None = None
    psi0: ComplexVector | None = None
    tau: ComplexVector | None = None
    alpha: PositiveFloat = 1e-3

    @model_validator(mode='after')
    def check_dimensions(self) -> ProblemSection:
        """All operators and states share one Hilbert-space dimension."""
        sizes = {
            name: len(value)
            for name, value in (
                ('h0', self.h0),
                ('mu_prime', self.mu_prime),
                ('rho0', self.rho0),
                ('target', self.target),
                ('psi0', self.psi0),
                ('tau', self.tau),
            )
            if value is not None
        }
        sizes |= {f'lindblad_ops[{k}]': len(op) for k, op in enumerate(self.lindblad_ops)}
        if len(set(sizes.values())) > 1:
            raise ValueError(f'inconsistent dimensions {sizes}')
        return self


class GridSection(_Section):
    """Either an explicit horizon ``t_final`` or a speedup factor (thermal mode)."""

    t_final: PositiveFloat | None = None
    speedup: float | None = Field(default=None, ge=1.0)
    n_steps: PositiveInt = 2000


class OptimizerSection(_Section):
    """Mirror of `OptimizerConfig` with JSON-friendly types."""

    delta: float = 1.5
    eta: float = 1.5
    k_max: PositiveInt = 100
    delta_tol: NonNegativeFloat = 1e-8
    seed: int = 0
    initial_field_amplitude: NonNegativeFloat = 0.01
    field_update_sign: Literal[1, -1] = 1
    update_rule: Literal['node', 'monotone'] = 'monotone'
    schedule: list[tuple[float, float]] | None = None
    monotonicity_tol: NonNegativeFloat = 1e-9

    @field_validator('delta', 'eta')
    @classmethod
    def check_range(cls, v: float, info: ValidationInfo) -> float:
        """Both parameters must lie in [0, 2]."""
        return _check_parameter(v, info.field_name or 'parameter')

    @field_validator('schedule')
    @classmethod
    def check_schedule(
        cls,
        v: list[tuple[float, float]] | None,
    ) -> list[tuple[float, float]] | None:
        """Every scheduled pair must lie in [0, 2]^2."""
        if v is None:
            return v
        if not v:
            raise ValueError('schedule must not be empty')
        for k, (delta, eta) in enumerate(v, start=1):
            _check_parameter(delta, f'schedule[{k}].delta')
            _check_parameter(eta, f'schedule[{k}].eta')
        return v


class OutputSection(_Section):
    directory: str | None = None
    xlsx: bool = False
    decomposition: bool = False


class ExperimentConfig(_Section):
    """
    One experiment.

    Modes:
        open-optimize: optimize in Liouville space (``rho0``, ``target``, ``t_final``).
        closed-optimize: optimize kets (``psi0``, ``tau``, ``t_final``, no Lindblad operators).
        thermal-speedup: steer ``rho0`` into the epsilon ball ``speedup`` times faster.
        free-time: closed-form and integrated free thermalization time.
        qsl: speed-limit time of ``H0 + qsl_field * mu_prime``.
    """

    mode: Mode
    preset: str | None = None
    model: ModelSection | None = None
    problem: ProblemSection = Field(default_factory=ProblemSection)
    grid: GridSection = Field(default_factory=GridSection)
    optimizer: OptimizerSection = Field(default_factory=OptimizerSection)
    epsilon: float | None = None
    qsl_field: float | list[float] | None = None
    reference_time: PositiveFloat | None = None
    output: OutputSection = Field(default_factory=OutputSection)

    @field_validator('epsilon')
    @classmethod
    def check_epsilon(cls, v: float | None) -> float | None:
        """Ball radius in trace distance, strictly inside (0, 1)."""
        if v is not None and not 0.0 < v < 1.0:
            raise ValueError(f'epsilon={v} outside admissible range (0, 1)')
        return v

    @model_validator(mode='after')
    def check_mode_requirements(self) -> ExperimentConfig:
        """Each mode needs its own subset of keys."""
        problem = self.problem
        required: dict[str, object] = {}
        match self.mode:
            case 'open-optimize':
                required = {
                    'problem.rho0': problem.rho0,
                    'problem.target or model': problem.target or self.model,
                    'problem.h0 or model': problem.h0 or self.model,
                    'grid.t_final': self.grid.t_final,
                }
                if problem.h0 is not None and problem.mu_prime is None:
                    required['problem.mu_prime'] = None
            case 'closed-optimize':
                required = {
                    'problem.h0': problem.h0,
                    'problem.mu_prime': problem.mu_prime,
                    'problem.psi0': problem.psi0,
                    'problem.tau': problem.tau,
                    'grid.t_final': self.grid.t_final,
                }
                if problem.lindblad_ops:
                    raise ValueError('closed-optimize does not accept problem.lindblad_ops')
            case 'thermal-speedup':
                required = {
                    'model': self.model,
                    'epsilon': self.epsilon,
                    'grid.speedup': self.grid.speedup,
                    'problem.rho0': problem.rho0,
                }
            case 'free-time':
                required = {
                    'model': self.model,
                    'epsilon': self.epsilon,
                    'problem.rho0': problem.rho0,
                }
            case 'qsl':
                required = {
                    'problem.h0': problem.h0,
                    'problem.psi0': problem.psi0,
                    'problem.tau': problem.tau,
                    'grid.t_final': self.grid.t_final,
                }
                self._check_qsl_field()
        missing = [name for name, value in required.items() if value is None]
        if missing:
            raise ValueError(f"mode '{self.mode}' requires: {', '.join(missing)}")
        return self

    def _check_qsl_field(self) -> None:
        if self.qsl_field is None:
            return
        if self.problem.mu_prime is None:
            raise ValueError('qsl_field needs problem.mu_prime')
        if isinstance(self.qsl_field, list) and len(self.qsl_field) != self.grid.n_steps + 1:
            raise ValueError(
                f'qsl_field has {len(self.qsl_field)} samples, grid needs {self.grid.n_steps + 1}',
            )

    def thermal_model(self) -> ThermalModel:
        if self.model is None:
            raise ConfigValidationError(f"mode '{self.mode}' has no model section")
        return self.model.build()

    def operators(self) -> tuple[ComplexArray, ComplexArray, tuple[ComplexArray, ...]]:
        """``(H0, mu_prime, lindblad_ops)`` from the problem section, else from the model."""
        problem = self.problem
        if problem.h0 is not None and problem.mu_prime is not None:
            ops = tuple(complex_matrix(op) for op in problem.lindblad_ops)
            return complex_matrix(problem.h0), complex_matrix(problem.mu_prime), ops
        model = self.thermal_model()
        return model.h0, model.mu_prime, model.lindblad_ops

    def initial_density(self) -> DensityMatrix:
        if self.problem.rho0 is None:
            raise ConfigValidationError('problem.rho0 is missing')
        return DensityMatrix(complex_matrix(self.problem.rho0))

    def target_density(self) -> DensityMatrix:
        """Explicit target, or the Gibbs state of the model."""
        if self.problem.target is not None:
            return DensityMatrix(complex_matrix(self.problem.target))
        return self.thermal_model().gibbs_state()

    def time_grid(self) -> TimeGrid:
        if self.grid.t_final is None:
            raise ConfigValidationError('grid.t_final is missing')
        return TimeGrid(self.grid.t_final, self.grid.n_steps)

    def control_problem(self) -> ControlProblem:
        """Open problem for open-optimize, ket problem for closed-optimize."""
        h0, mu_prime, lindblad_ops = self.operators()
        grid = self.time_grid()
        if self.mode == 'closed-optimize':
            return ControlProblem.closed_system(
                h0,
                mu_prime,
                self.ket('psi0'),
                self.ket('tau'),
                self.problem.alpha,
                grid,
            )
        return ControlProblem.open_system(
            h0,
            mu_prime,
            lindblad_ops,
            self.initial_density(),
            self.target_density(),
            self.problem.alpha,
            grid,
        )

    def ket(self, name: Literal['psi0', 'tau']) -> ComplexArray:
        entries = getattr(self.problem, name)
        if entries is None:
            raise ConfigValidationError(f'problem.{name} is missing')
        return complex_vector(entries)

    def qsl_samples(self) -> RealArray:
        """Node values of the field entering the speed-limit Hamiltonian."""
        n_nodes = self.grid.n_steps + 1
        match self.qsl_field:
            case None:
                return np.zeros(n_nodes)
            case list() as values:
                return np.asarray(values, dtype=np.float64)
            case value:
                return np.full(n_nodes, float(value))

    def to_optimizer_config(self, *, show_progress: bool = False) -> OptimizerConfig:
        section = self.optimizer
        schedule = None if section.schedule is None else tuple(section.schedule)
        return OptimizerConfig(
            delta=section.delta,
            eta=section.eta,
            k_max=section.k_max,
            delta_tol=section.delta_tol,
            seed=section.seed,
            initial_field_amplitude=section.initial_field_amplitude,
            field_update_sign=section.field_update_sign,
            schedule=schedule,
            update_rule=section.update_rule,
            monotonicity_tol=section.monotonicity_tol,
            show_progress=show_progress,
        )


_SIGMA_X = [[0.0, 1.0], [1.0, 0.0]]
_SIGMA_Z = [[1.0, 0.0], [0.0, -1.0]]

_GAD_QUBIT: Final[dict[str, object]] = {
    'mode': 'free-time',
    # e^{omega beta} = 1.5 puts the Gibbs state at diag(0.4, 0.6)
    'model': {'omega': 2.0, 'beta': float(np.log(1.5) / 2.0), 'gamma': 0.1},
    'problem': {'rho0': [[0.5, [0.0, 0.19]], [[0.0, -0.19], 0.5]]},
    'epsilon': 0.1,
    'reference_time': 27.0573,
}

_GAD_SPEEDUP: Final[dict[str, object]] = {
    **copy.deepcopy(_GAD_QUBIT),
    'mode': 'thermal-speedup',
    'problem': {'rho0': [[0.5, [0.0, 0.19]], [[0.0, -0.19], 0.5]], 'alpha': 1e-3},
    'grid': {'speedup': 2.0, 'n_steps': 2000},
    'optimizer': {'delta': 1.5, 'eta': 1.5, 'k_max': 100},
}

PRESETS: Final[dict[str, dict[str, object]]] = {
    'gad-qubit': _GAD_QUBIT,
    'gad-speedup': _GAD_SPEEDUP,
    # name under which the worked thermalization example is usually cited
    'paper-fig3': _GAD_SPEEDUP,
    'qubit-flip': {
        'mode': 'closed-optimize',
        'problem': {
            'h0': _SIGMA_Z,
            'mu_prime': _SIGMA_X,
            'psi0': [1.0, 0.0],
            'tau': [0.0, 1.0],
            'alpha': 1e-3,
        },
        'grid': {'t_final': 4.0, 'n_steps': 2000},
        'optimizer': {'delta': 1.0, 'eta': 1.0, 'k_max': 100},
    },
    'qsl-reference': {
        'mode': 'qsl',
        'problem': {
            'h0': [[0.0, 0.0], [0.0, 0.0]],
            'mu_prime': _SIGMA_X,
            'psi0': [1.0, 0.0],
            'tau': [0.0, 1.0],
        },
        'qsl_field': 1.0,
        'grid': {'t_final': 1.0, 'n_steps': 100},
    },
}


def deep_merge(base: Mapping[str, object], override: Mapping[str, object]) -> dict[str, object]:
    """Recursively merge ``override`` into a copy of ``base``; ``override`` wins."""
    merged: dict[str, object] = copy.deepcopy(dict(base))
    for key, value in override.items():
        current = merged.get(key)
        if isinstance(current, Mapping) and isinstance(value, Mapping):
            merged[key] = deep_merge(current, value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def expand_preset(raw: Mapping[str, object]) -> dict[str, object]:
    """
    Expand the ``preset`` key, if any.

    Raises:
        ConfigValidationError: If the preset name is unknown.
    """
    name = raw.get('preset')
    if name is None:
        return dict(raw)
    if not isinstance(name, str) or name not in PRESETS:
        valid = ', '.join(sorted(PRESETS))
        raise ConfigValidationError(f'Unknown preset {name!r}. Available presets: {valid}')
    logger.debug('Expanding preset %r', name)
    return deep_merge(PRESETS[name], raw)


def _parse_override_value(text: str) -> object:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(raw: Mapping[str, object], overrides: Iterable[str]) -> dict[str, object]:
    """
    Apply ``dotted.key=value`` overrides; values are parsed as JSON, falling back to text.

    Example:
        >>> apply_overrides({'optimizer': {'delta': 1.5}}, ['optimizer.delta=1.0'])
        {'optimizer': {'delta': 1.0}}

    Raises:
        ConfigParseError: If an override is not of the form ``key=value``.
    """
    result: dict[str, object] = copy.deepcopy(dict(raw))
    for override in overrides:
        key, sep, text = override.partition('=')
        path = [part for part in key.strip().split('.') if part]
        if not sep or not path:
            raise ConfigParseError(f'Override {override!r} is not of the form key=value')
        node = result
        for part in path[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigParseError(f'Override {override!r}: {part!r} is not a section')
            node = child
        node[path[-1]] = _parse_override_value(text.strip())
    return result


def config_from_mapping(raw: Mapping[str, object]) -> ExperimentConfig:
    """
    Expand presets and validate.

    Raises:
        ConfigValidationError: On any validation failure, with one line per field.
    """
    expanded = expand_preset(raw)
    try:
        return ExperimentConfig.model_validate(expanded)
    except ValidationError as e:
        raise ConfigValidationError(
            format_validation_error(e, 'Experiment configuration is invalid'),
            e,
        ) from e


def read_config_file(path: str | Path) -> dict[str, object]:
    """
    Read a JSON object from disk.

    Raises:
        ConfigParseError: If the file cannot be read or is not a JSON object.
    """
    config_path = Path(path)
    try:
        text = config_path.read_text(encoding='utf-8')
    except OSError as e:
        raise ConfigParseError(f'Cannot read configuration {config_path}: {e}', e) from e
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigParseError(
            f'Configuration {config_path} is not valid JSON (line {e.lineno}, column {e.colno}): '
            f'{e.msg}',
            e,
        ) from e
    if not isinstance(raw, dict):
        raise ConfigParseError(f'Configuration {config_path} must contain a JSON object')
    return raw


def load_config(
    path: str | Path | None,
    overrides: Iterable[str] = (),
    *,
    preset: str | None = None,
) -> ExperimentConfig:
    """
    Read, override, expand and validate an experiment configuration.

    Args:
        path: JSON configuration; ``None`` starts from an empty document.
        overrides: Dotted ``key=value`` overrides.
        preset: Preset name that replaces the ``preset`` key of the document.

    Raises:
        ConfigParseError: If neither a file nor a preset is given, or the file is unreadable.
        ConfigValidationError: If the expanded document is invalid.
    """
    if path is None and preset is None:
        raise ConfigParseError('Either a configuration file or --preset is required')
    raw = read_config_file(path) if path is not None else {}
    if preset is not None:
        raw['preset'] = preset
    raw = apply_overrides(raw, overrides)
    config = config_from_mapping(raw)
    logger.info('Loaded configuration %s (mode=%s, preset=%s)', path, config.mode, config.preset)
    return config
