"""
Two-parameter (delta, eta) family of monotonically convergent control algorithms.

One iteration consists of an implicit forward sweep, in which the new field is
computed node by node from the previous costate and the freshly propagated
state, followed by an implicit backward sweep that builds the new costate and
the auxiliary field.  For ``0 <= delta, eta <= 2`` the cost

    J = |<<psi(T)|tau>>|^2 - alpha * fluence(xi)

does not decrease from one iteration to the next.  The same loop drives open
systems (Liouville vectors) and closed systems (kets); only the generator and
the state representation differ.
"""

from __future__ import annotations

from collections.abc import Callable, Sequence
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Final, Literal

import numpy as np
import numpy.typing as npt
from scipy.integrate import trapezoid
from scipy.linalg import expm_frechet
from scipy.optimize import fixed_point, root_scalar
from tqdm import tqdm

from open_krotov.dynamics import (
    ControlField,
    HilbertGenerator,
    LinearGenerator,
    TimeGrid,
    Trajectory,
    backward_step,
    forward_step,
    propagate_costate,
    propagate_state,
)
from open_krotov.errors import (
    DimensionMismatchError,
    InternalConsistencyError,
    InvalidStateError,
    MonotonicityError,
    ParameterRangeError,
)
from open_krotov.liouville import (
    ComplexArray,
    DensityMatrix,
    Liouvillian,
    RealArray,
    build_liouvillian,
    normalized_ket,
    vec,
)
from open_krotov.logger import create_context_logger, get_logger, log_execution_time

__all__ = [
    'ControlField',
    'ControlProblem',
    'DeltaJDecomposition',
    'IterationRecord',
    'IterationSnapshot',
    'OptimizationResult',
    'OptimizerConfig',
    'QslReport',
    'StepResult',
    'closed_optimize',
    'decompose_history',
    'delta_j_decomposition',
    'evaluate_cost',
    'hamiltonian_samples',
    'krotov_step',
    'optimize',
    'qsl_time',
]

type UpdateRule = Literal['node', 'monotone']

PARAMETER_MIN: Final[float] = 0.0
PARAMETER_MAX: Final[float] = 2.0
DEFAULT_DELTA_TOL: Final[float] = 1e-8
DEFAULT_K_MAX: Final[int] = 100
DEFAULT_AMPLITUDE: Final[float] = 0.01
MONOTONICITY_TOL: Final[float] = 1e-9
# below this separation the divided difference is replaced by the derivative
DIVIDED_DIFFERENCE_EPS: Final[float] = 1e-7
FIXED_POINT_XTOL: Final[float] = 1e-12
FIXED_POINT_MAXITER: Final[int] = 200

logger = get_logger('optimizer')


def _check_parameter(name: str, value: float) -> None:
    if not PARAMETER_MIN <= value <= PARAMETER_MAX:
        raise ParameterRangeError(
            f'{name}={value} outside admissible range [{PARAMETER_MIN:g}, {PARAMETER_MAX:g}]',
        )


@dataclass(frozen=True)
class OptimizerConfig:
    """
    Algorithm parameters.

    Attributes:
        delta: Forward-sweep parameter in [0, 2].
        eta: Backward-sweep parameter in [0, 2].
        k_max: Maximum number of iterations.
        delta_tol: Stop once an iteration improves J by less than this.
        seed: Seed of the generator that draws the initial field.
        initial_field_amplitude: Initial node values are uniform in +/- this.
        field_update_sign: Sign in front of the overlap term. +1 (default) is gradient
            ascent on J and gives the monotone iteration; -1 descends and is caught by
            the decrease check on the first iterations.
        schedule: Optional per-iteration (delta_k, eta_k); the last pair repeats.
        update_rule: 'monotone' (default) solves the divided-difference update that
            keeps every step monotone on the grid for any delta, eta in [0, 2]; 'node'
            evaluates the overlap at the node and is monotone only as dt -> 0.
        monotonicity_tol: Relative tolerance of the decrease check.
        show_progress: Show a tqdm progress bar over iterations.
    """

    delta: float = 1.5
    eta: float = 1.5
    k_max: int = DEFAULT_K_MAX
    delta_tol: float = DEFAULT_DELTA_TOL
    seed: int = 0
    initial_field_amplitude: float = DEFAULT_AMPLITUDE
    field_update_sign: int = 1
    schedule: tuple[tuple[float, float], ...] | None = None
    update_rule: UpdateRule = 'monotone'
    monotonicity_tol: float = MONOTONICITY_TOL
    show_progress: bool = False

    def __post_init__(self) -> None:
        _check_parameter('delta', self.delta)
        _check_parameter('eta', self.eta)
        if self.k_max < 1:
            raise ParameterRangeError(f'k_max must be >= 1, got {self.k_max}')
        if self.delta_tol < 0.0:
            raise ParameterRangeError(f'delta_tol must be >= 0, got {self.delta_tol}')
        if self.initial_field_amplitude < 0.0:
            raise ParameterRangeError(
                f'initial_field_amplitude must be >= 0, got {self.initial_field_amplitude}',
            )
        if self.field_update_sign not in {1, -1}:
            raise ParameterRangeError(
                f'field_update_sign must be +1 or -1, got {self.field_update_sign}',
            )
        if self.update_rule not in {'node', 'monotone'}:
            raise ParameterRangeError(f'Unknown update_rule {self.update_rule!r}')
        if self.monotonicity_tol < 0.0:
            raise ParameterRangeError('monotonicity_tol must be >= 0')
        if self.schedule is not None:
            if not self.schedule:
                raise ParameterRangeError('schedule must not be empty')
            schedule = tuple((float(d), float(e)) for d, e in self.schedule)
            for k, (d, e) in enumerate(schedule, start=1):
                _check_parameter(f'schedule[{k}].delta', d)
                _check_parameter(f'schedule[{k}].eta', e)
            object.__setattr__(self, 'schedule', schedule)

    @classmethod
    def tannor(cls, **kwargs: object) -> OptimizerConfig:
        """The delta=1, eta=0 member of the family."""
        return cls(delta=1.0, eta=0.0, **kwargs)  # type: ignore[arg-type]

    @classmethod
    def zhu_rabitz(cls, **kwargs: object) -> OptimizerConfig:
        """The delta=eta=1 member of the family."""
        return cls(delta=1.0, eta=1.0, **kwargs)  # type: ignore[arg-type]

    def parameters_for(self, k: int) -> tuple[float, float]:
        """(delta, eta) used by iteration ``k`` (1-based)."""
        if self.schedule is None:
            return self.delta, self.eta
        return self.schedule[min(k, len(self.schedule)) - 1]


@dataclass(frozen=True)
class ControlProblem:
    """
    State-to-state control problem.

    Open mode: ``initial_state`` and ``target`` are `DensityMatrix` objects and the
    dynamics run in Liouville space with ``Q = |tau>><<tau|``.  Closed mode: both are
    kets, ``lindblad_ops`` is empty and ``Q = |tau><tau|``.
    """

    h0: ComplexArray
    mu_prime: ComplexArray
    lindblad_ops: tuple[ComplexArray, ...]
    initial_state: DensityMatrix | ComplexArray
    target: DensityMatrix | ComplexArray
    alpha: float
    grid: TimeGrid

    def __post_init__(self) -> None:
        if not np.isfinite(self.alpha) or self.alpha <= 0.0:
            raise ParameterRangeError(f'alpha must be positive, got {self.alpha}')
        h0 = np.array(self.h0, dtype=np.complex128)
        mu = np.array(self.mu_prime, dtype=np.complex128)
        ops = tuple(np.array(op, dtype=np.complex128) for op in self.lindblad_ops)
        if h0.shape != mu.shape or any(op.shape != h0.shape for op in ops):
            raise DimensionMismatchError('H0, mu_prime and Lindblad operators must share d')
        object.__setattr__(self, 'h0', h0)
        object.__setattr__(self, 'mu_prime', mu)
        object.__setattr__(self, 'lindblad_ops', ops)

        match isinstance(self.initial_state, DensityMatrix), isinstance(self.target, DensityMatrix):
            case (True, True):
                if self.initial_state.dim != h0.shape[0] or self.target.dim != h0.shape[0]:
                    raise DimensionMismatchError('States do not match the Hamiltonian dimension')
            case (False, False):
                if ops:
                    raise InvalidStateError('Open dynamics require density-matrix states')
                psi0 = normalized_ket(self.initial_state)
                tau = normalized_ket(self.target)
                if psi0.shape[0] != h0.shape[0] or tau.shape[0] != h0.shape[0]:
                    raise DimensionMismatchError('Kets do not match the Hamiltonian dimension')
                object.__setattr__(self, 'initial_state', psi0)
                object.__setattr__(self, 'target', tau)
            case _:
                raise InvalidStateError(
                    'Initial and target state must both be kets or both be density matrices',
                )

    @classmethod
    def open_system(
        cls,
        h0: npt.ArrayLike,
        mu_prime: npt.ArrayLike,
        lindblad_ops: Sequence[npt.ArrayLike],
        rho0: DensityMatrix,
        target: DensityMatrix,
        alpha: float,
        grid: TimeGrid,
    ) -> ControlProblem:
        return cls(
            np.asarray(h0),
            np.asarray(mu_prime),
            tuple(np.asarray(op) for op in lindblad_ops),
            rho0,
            target,
            alpha,
            grid,
        )

    @classmethod
    def closed_system(
        cls,
        h0: npt.ArrayLike,
        mu_prime: npt.ArrayLike,
        psi0: npt.ArrayLike,
        tau: npt.ArrayLike,
        alpha: float,
        grid: TimeGrid,
    ) -> ControlProblem:
        return cls(
            np.asarray(h0),
            np.asarray(mu_prime),
            (),
            np.asarray(psi0),
            np.asarray(tau),
            alpha,
            grid,
        )

    @property
    def is_closed(self) -> bool:
        """True when states are kets (Hilbert-space propagation)."""
        return not isinstance(self.initial_state, DensityMatrix)

    @cached_property
    def generator(self) -> Liouvillian | HilbertGenerator:
        if self.is_closed:
            return HilbertGenerator(self.h0, self.mu_prime)
        return build_liouvillian(self.h0, self.mu_prime, self.lindblad_ops)

    @cached_property
    def initial_vector(self) -> ComplexArray:
        if isinstance(self.initial_state, DensityMatrix):
            return vec(self.initial_state).data
        return self.initial_state

    @cached_property
    def target_vector(self) -> ComplexArray:
        if isinstance(self.target, DensityMatrix):
            return vec(self.target).data
        return self.target

    def with_grid(self, grid: TimeGrid) -> ControlProblem:
        return replace(self, grid=grid)

    def project(self, vector: ComplexArray) -> ComplexArray:
        """Apply ``Q = |tau><tau|``."""
        return self.target_vector * np.vdot(self.target_vector, vector)

    def fidelity(self, vector: ComplexArray) -> float:
        """``|<tau|v>|^2``."""
        return float(abs(np.vdot(vector, self.target_vector)) ** 2)


@dataclass(frozen=True, slots=True)
class IterationRecord:
    """Cost bookkeeping of one iteration."""

    k: int
    J: float  # noqa: N815
    fidelity: float
    fluence: float
    delta_J: float  # noqa: N815


@dataclass(frozen=True, slots=True)
class StepResult:
    """Everything produced by one `krotov_step`."""

    field: ControlField
    state: Trajectory
    costate: Trajectory
    record: IterationRecord


@dataclass(frozen=True, slots=True)
class IterationSnapshot:
    """Fields and trajectories of iteration ``k`` (k = 0 is the initial guess)."""

    k: int
    field: ControlField
    state: Trajectory
    costate: Trajectory
    record: IterationRecord
    delta: float
    eta: float


@dataclass(frozen=True)
class OptimizationResult:
    """
    Outcome of `optimize` / `closed_optimize`.

    Attributes:
        field: Final forward and auxiliary fields.
        records: One record per performed iteration (k = 1, 2, ...).
        trajectory: Final forward state trajectory.
        costate: Final costate trajectory.
        initial: Record of the initial guess (k = 0).
        history: Snapshots of every iteration when requested, including k = 0.
    """

    field: ControlField
    records: tuple[IterationRecord, ...]
    trajectory: Trajectory
    costate: Trajectory
    initial: IterationRecord
    history: tuple[IterationSnapshot, ...] = ()

    @property
    def final_record(self) -> IterationRecord:
        return self.records[-1]

    @property
    def iterations(self) -> int:
        return len(self.records)


def _cost(
    problem: ControlProblem,
    control: ControlField,
    final_state: ComplexArray,
) -> tuple[float, float, float]:
    fidelity = problem.fidelity(final_state)
    fluence = control.fluence(problem.grid)
    return fidelity - problem.alpha * fluence, fidelity, fluence


def evaluate_cost(problem: ControlProblem, control: ControlField) -> IterationRecord:
    """
    Evaluate ``J`` for a given field by forward propagation.

    The dynamics constraint term vanishes because the state is propagated exactly.

    Returns:
        Record with ``k = 0`` and ``delta_J = 0``.
    """
    control.check_grid(problem.grid)
    trajectory = propagate_state(problem.generator, control, problem.initial_vector, problem.grid)
    j_value, fidelity, fluence = _cost(problem, control, trajectory.final)
    return IterationRecord(k=0, J=j_value, fidelity=fidelity, fluence=fluence, delta_J=0.0)


def _overlap(chi: ComplexArray, control_operator: ComplexArray, psi: ComplexArray) -> float:
    return float(np.imag(np.vdot(chi, control_operator @ psi)))


@dataclass(frozen=True, slots=True)
class _IntervalCoupling:
    """
    Divided difference ``Re<<chi_{n+1}|(U(x) - U(y)) psi_n>> / (dt (x - y))``.

    ``anchor`` is the field value whose propagator is known in advance.
    """

    generator: LinearGenerator
    chi_next: ComplexArray
    psi: ComplexArray
    anchor: float
    anchor_pairing: complex
    dt: float

    def __call__(self, value: float) -> float:
        gap = value - self.anchor
        if abs(gap) < DIVIDED_DIFFERENCE_EPS * max(1.0, abs(self.anchor)):
            midpoint = self.anchor + 0.5 * gap
            frechet = expm_frechet(
                -1j * self.dt * self.generator.assemble(midpoint),
                -1j * self.dt * self.generator.control_operator,
                compute_expm=False,
            )
            return float(np.real(np.vdot(self.chi_next, frechet @ self.psi))) / self.dt
        moved = np.vdot(self.chi_next, forward_step(self.generator, value, self.dt) @ self.psi)
        return float(np.real(moved - self.anchor_pairing)) / (self.dt * gap)


def _solve_implicit(update: Callable[[float], float], start: float) -> float:
    """Solve ``x = update(x)``; fixed-point iteration first, bracketing as fallback."""
    try:
        return float(
            fixed_point(update, start, xtol=FIXED_POINT_XTOL, maxiter=FIXED_POINT_MAXITER),
        )
    except RuntimeError:
        logger.debug('Fixed-point iteration stalled at %.6g, switching to bracketing', start)

    def residual(x: float) -> float:
        return x - update(x)

    width = max(1.0, abs(start))
    for _ in range(60):
        low, high = start - width, start + width
        if residual(low) * residual(high) <= 0.0:
            solution = root_scalar(residual, bracket=(low, high), method='brentq', xtol=1e-14)
            return float(solution.root)
        width *= 2.0
    raise InternalConsistencyError(f'Monotone field update has no root near {start:.6g}')


def _forward_sweep(
    problem: ControlProblem,
    previous: ControlField,
    costate_prev: Trajectory,
    delta: float,
    config: OptimizerConfig,
) -> tuple[RealArray, Trajectory]:
    generator = problem.generator
    control_op = generator.control_operator
    grid = problem.grid
    dt = grid.dt
    gain = config.field_update_sign * delta / problem.alpha
    weights = grid.quadrature_weights()
    monotone = config.update_rule == 'monotone'
    chi = costate_prev.states
    xi_tilde = previous.xi_tilde

    xi = np.empty(grid.n_nodes, dtype=np.float64)
    psi = np.empty((grid.n_nodes, generator.state_size), dtype=np.complex128)
    psi[0] = problem.initial_vector
    for n in range(grid.n_steps):
        base = (1.0 - delta) * xi_tilde[n]
        if monotone and delta > 0.0:
            # the penalty of node n carries weight w_n, the interval it drives a full dt
            node_gain = gain / weights[n]
            anchor = float(xi_tilde[n])
            coupling = _IntervalCoupling(
                generator,
                chi[n + 1],
                psi[n],
                anchor,
                complex(np.vdot(chi[n + 1], forward_step(generator, anchor, dt) @ psi[n])),
                dt,
            )
            start = base + node_gain * _overlap(chi[n], control_op, psi[n])
            value = _solve_implicit(lambda x, c=coupling, b=base, g=node_gain: b + g * c(x), start)
        else:
            value = base + gain * _overlap(chi[n], control_op, psi[n])
        xi[n] = value
        psi[n + 1] = forward_step(generator, value, dt) @ psi[n]
    if monotone:
        # node N drives no interval
        xi[-1] = (1.0 - delta) * xi_tilde[-1]
    else:
        xi[-1] = (1.0 - delta) * xi_tilde[-1] + gain * _overlap(chi[-1], control_op, psi[-1])
    return xi, Trajectory(psi, grid)


def _backward_sweep(
    problem: ControlProblem,
    xi: RealArray,
    state: Trajectory,
    eta: float,
    config: OptimizerConfig,
) -> tuple[RealArray, Trajectory]:
    generator = problem.generator
    control_op = generator.control_operator
    grid = problem.grid
    dt = grid.dt
    gain = config.field_update_sign * eta / problem.alpha
    psi = state.states

    xi_tilde = np.empty(grid.n_nodes, dtype=np.float64)
    chi = np.empty_like(psi)
    chi[-1] = problem.project(psi[-1])

    if config.update_rule == 'monotone':
        weights = grid.quadrature_weights()
        xi_tilde[-1] = (1.0 - eta) * xi[-1]
        # interval n is driven by xi_tilde[n], solved from chi[n + 1]
        for n in range(grid.n_steps - 1, -1, -1):
            base = (1.0 - eta) * xi[n]
            value = base
            if eta > 0.0:
                node_gain = gain / weights[n]
                coupling = _IntervalCoupling(
                    generator,
                    chi[n + 1],
                    psi[n],
                    float(xi[n]),
                    complex(np.vdot(chi[n + 1], psi[n + 1])),
                    dt,
                )
                start = base + node_gain * _overlap(chi[n + 1], control_op, psi[n + 1])
                value = _solve_implicit(
                    lambda y, c=coupling, b=base, g=node_gain: b + g * c(y),
                    start,
                )
            xi_tilde[n] = value
            chi[n] = backward_step(generator, value, dt) @ chi[n + 1]
        return xi_tilde, Trajectory(chi, grid)

    # node rule: xi_tilde[n] is fixed at node n and drives the interval to its left
    xi_tilde[-1] = (1.0 - eta) * xi[-1] + gain * _overlap(chi[-1], control_op, psi[-1])
    for n in range(grid.n_steps, 0, -1):
        if n < grid.n_steps:
            xi_tilde[n] = (1.0 - eta) * xi[n] + gain * _overlap(chi[n], control_op, psi[n])
        chi[n - 1] = backward_step(generator, float(xi_tilde[n]), dt) @ chi[n]
    xi_tilde[0] = (1.0 - eta) * xi[0] + gain * _overlap(chi[0], control_op, psi[0])
    return xi_tilde, Trajectory(chi, grid)


def krotov_step(
    problem: ControlProblem,
    fields_prev: ControlField,
    costate_prev: Trajectory,
    config: OptimizerConfig,
    *,
    k: int = 1,
    j_prev: float | None = None,
) -> StepResult:
    """
    Perform one iteration of the (delta, eta) algorithm.

    Args:
        problem: Control problem.
        fields_prev: Fields of iteration k - 1 (``xi_tilde`` enters the forward sweep).
        costate_prev: Costate of iteration k - 1 at all nodes.
        config: Algorithm parameters; ``config.parameters_for(k)`` picks (delta, eta).
        k: Iteration index, used for the schedule and the record.
        j_prev: Cost of iteration k - 1; evaluated from ``fields_prev.xi`` if omitted.

    Returns:
        New fields, state and costate trajectories, and the iteration record.
    """
    delta, eta = config.parameters_for(k)
    _check_parameter('delta', delta)
    _check_parameter('eta', eta)
    fields_prev.check_grid(problem.grid)
    if costate_prev.states.shape != (problem.grid.n_nodes, problem.generator.state_size):
        raise DimensionMismatchError('Previous costate does not match the problem')

    if j_prev is None:
        j_prev = evaluate_cost(problem, ControlField.from_values(fields_prev.xi)).J

    xi, state = _forward_sweep(problem, fields_prev, costate_prev, delta, config)
    xi_tilde, costate = _backward_sweep(problem, xi, state, eta, config)
    new_field = ControlField(xi, xi_tilde)
    j_value, fidelity, fluence = _cost(problem, new_field, state.final)
    record = IterationRecord(
        k=k,
        J=j_value,
        fidelity=fidelity,
        fluence=fluence,
        delta_J=j_value - j_prev,
    )
    return StepResult(new_field, state, costate, record)


def _run(
    problem: ControlProblem,
    config: OptimizerConfig,
    *,
    mode: str,
    store_history: bool,
) -> OptimizationResult:
    grid = problem.grid
    generator = problem.generator
    rng = np.random.default_rng(config.seed)
    control = ControlField.random(grid, config.initial_field_amplitude, rng)

    # cold start: costate of the guess, backward under xi_tilde = xi
    state = propagate_state(generator, control, problem.initial_vector, grid)
    costate = propagate_costate(generator, control, problem.project(state.final), grid)
    j_value, fidelity, fluence = _cost(problem, control, state.final)
    initial = IterationRecord(k=0, J=j_value, fidelity=fidelity, fluence=fluence, delta_J=0.0)

    log = create_context_logger(
        logger,
        mode=mode,
        seed=config.seed,
        delta=config.delta,
        eta=config.eta,
        rule=config.update_rule,
    )
    log('INFO', 'Initial guess: J=%.10f fidelity=%.10f fluence=%.6g', j_value, fidelity, fluence)

    history: list[IterationSnapshot] = []
    if store_history:
        delta, eta = config.parameters_for(1)
        history.append(IterationSnapshot(0, control, state, costate, initial, delta, eta))

    records: list[IterationRecord] = []
    j_prev = j_value
    iterations = tqdm(
        range(1, config.k_max + 1),
        desc=f'{mode} (seed={config.seed})',
        unit='iter',
        disable=not config.show_progress,
    )
    for k in iterations:
        step = krotov_step(problem, control, costate, config, k=k, j_prev=j_prev)
        record = step.record
        records.append(record)
        log(
            'DEBUG',
            'k=%d J=%.12f fidelity=%.10f fluence=%.6g delta_J=%.3e',
            k,
            record.J,
            record.fidelity,
            record.fluence,
            record.delta_J,
            iteration=k,
        )
        if store_history:
            delta, eta = config.parameters_for(k)
            history.append(
                IterationSnapshot(k, step.field, step.state, step.costate, record, delta, eta),
            )
        if record.delta_J < -config.monotonicity_tol * max(1.0, abs(j_prev)):
            log('ERROR', 'Monotonicity violated at k=%d: delta_J=%.3e', k, record.delta_J)
            raise MonotonicityError(k, j_prev, record.J)

        control, state, costate, j_prev = step.field, step.state, step.costate, record.J
        if record.delta_J < config.delta_tol:
            log(
                'INFO',
                'Converged at k=%d: delta_J=%.3e < %.3e',
                k,
                record.delta_J,
                config.delta_tol,
            )
            break

    final = records[-1]
    log(
        'INFO',
        'Finished after %d iterations: J=%.10f fidelity=%.10f',
        len(records),
        final.J,
        final.fidelity,
    )
    return OptimizationResult(
        field=control,
        records=tuple(records),
        trajectory=state,
        costate=costate,
        initial=initial,
        history=tuple(history),
    )


@log_execution_time
def optimize(
    problem: ControlProblem,
    config: OptimizerConfig,
    *,
    store_history: bool = False,
) -> OptimizationResult:
    """
    Run the open-system algorithm until ``delta_J < delta_tol`` or ``k_max``.

    Args:
        problem: Open-mode problem (density-matrix states).
        config: Algorithm parameters.
        store_history: Keep fields and trajectories of every iteration.

    Returns:
        Final field, iteration records, final trajectories.

    Raises:
        InvalidStateError: If the problem is in closed (ket) mode.
        MonotonicityError: If J decreases beyond roundoff.
    """
    if problem.is_closed:
        raise InvalidStateError('optimize expects density-matrix states; use closed_optimize')
    return _run(problem, config, mode='open', store_history=store_history)


@log_execution_time
def closed_optimize(
    problem: ControlProblem,
    config: OptimizerConfig,
    *,
    store_history: bool = False,
) -> OptimizationResult:
    """
    Run the algorithm in Hilbert space for pure states and no dissipation.

    Raises:
        InvalidStateError: If the problem carries density matrices or Lindblad operators.
    """
    if not problem.is_closed or problem.lindblad_ops:
        raise InvalidStateError('closed_optimize expects kets and no Lindblad operators')
    return _run(problem, config, mode='closed', store_history=store_history)


@dataclass(frozen=True, slots=True)
class DeltaJDecomposition:
    """Positive-semidefinite split of ``J_{k+1} - J_k`` next to the direct difference."""

    k: int
    direct: float
    projector_term: float
    delta_term: float
    eta_term: float

    @property
    def predicted(self) -> float:
        return self.projector_term + self.delta_term + self.eta_term

    @property
    def difference(self) -> float:
        return self.direct - self.predicted

    @property
    def terms_nonnegative(self) -> bool:
        return min(self.projector_term, self.delta_term, self.eta_term) >= 0.0


def delta_j_decomposition(
    problem: ControlProblem,
    before: IterationSnapshot,
    after: IterationSnapshot,
) -> DeltaJDecomposition:
    """
    Evaluate the terms of ``J_{k+1} - J_k``.

    ``<<dpsi(T)|Q|dpsi(T)>> + alpha * int (2/delta - 1)(xi' - xi_tilde)^2
    + (2/eta - 1)(xi_tilde - xi)^2 dt`` with (delta, eta) of the later iteration.
    A zero parameter forces its squared difference to vanish, so its term is dropped.
    The integrals use the trapezoidal weights of the fluence.  Under the monotone
    rule the split reproduces the direct difference up to solver tolerance; under
    the node rule only to O(dt).
    """
    if after.k != before.k + 1:
        raise ParameterRangeError(f'Snapshots {before.k} and {after.k} are not consecutive')
    grid = problem.grid
    weights = grid.quadrature_weights() * grid.dt
    d_final = after.state.final - before.state.final
    projector = float(abs(np.vdot(problem.target_vector, d_final)) ** 2)

    delta_term = 0.0
    if after.delta > 0.0:
        diff = after.field.xi - before.field.xi_tilde
        delta_term = problem.alpha * (2.0 / after.delta - 1.0) * float(np.dot(weights, diff**2))
    eta_term = 0.0
    if after.eta > 0.0:
        diff = before.field.xi_tilde - before.field.xi
        eta_term = problem.alpha * (2.0 / after.eta - 1.0) * float(np.dot(weights, diff**2))

    return DeltaJDecomposition(
        k=before.k,
        direct=after.record.J - before.record.J,
        projector_term=projector,
        delta_term=delta_term,
        eta_term=eta_term,
    )


def decompose_history(
    problem: ControlProblem,
    result: OptimizationResult,
) -> list[DeltaJDecomposition]:
    """Decompositions for every consecutive pair of stored snapshots."""
    if len(result.history) < 2:
        raise InvalidStateError('Run optimize(..., store_history=True) first')
    return [
        delta_j_decomposition(problem, before, after)
        for before, after in zip(result.history, result.history[1:], strict=False)
    ]


@dataclass(frozen=True, slots=True)
class QslReport:
    """Quantum speed limit of unitary driving from ``psi0`` to ``tau``."""

    fubini_study_distance: float
    avg_energy: float
    avg_std_dev: float
    ground_energy_curve: RealArray
    t_qsl: float


def qsl_time(
    psi0: npt.ArrayLike,
    tau: npt.ArrayLike,
    hamiltonians: npt.ArrayLike,
    grid: TimeGrid,
) -> QslReport:
    """
    Mandelstam-Tamm / Margolus-Levitin bound for time-dependent driving.

    Args:
        psi0: Initial ket.
        tau: Target ket.
        hamiltonians: Samples ``H(t_n)``, shape ``(N + 1, d, d)``.
        grid: Grid of the samples.

    Returns:
        Report with ``t_qsl = L * max(1/E, 1/dE)``; infinite when an average vanishes
        while the states differ.
    """
    psi = normalized_ket(psi0)
    target = normalized_ket(tau)
    h = np.asarray(hamiltonians, dtype=np.complex128)
    if h.ndim != 3 or h.shape[0] != grid.n_nodes or h.shape[1:] != (psi.shape[0],) * 2:
        raise DimensionMismatchError(
            f'Expected Hamiltonian samples of shape ({grid.n_nodes}, d, d), got {h.shape}',
        )
    if target.shape != psi.shape:
        raise DimensionMismatchError('psi0 and tau differ in dimension')

    overlap = np.vdot(psi, target)
    # arctan2 keeps the distance accurate when the states nearly coincide
    orthogonal = float(np.linalg.norm(target - overlap * psi))
    distance = float(np.arctan2(orthogonal, abs(overlap)))

    h_psi = np.einsum('nij,j->ni', h, psi)
    energies = np.real(h_psi @ psi.conj())
    ground = np.linalg.eigvalsh(h)[:, 0]
    spread = np.linalg.norm(h_psi - energies[:, None] * psi[None, :], axis=1)
    avg_energy = float(trapezoid(energies - ground, dx=grid.dt)) / grid.t_final
    avg_std_dev = float(trapezoid(spread, dx=grid.dt)) / grid.t_final

    if distance <= 1e-12:
        t_qsl = 0.0
    elif avg_energy <= 0.0 or avg_std_dev <= 0.0:
        t_qsl = float('inf')
    else:
        t_qsl = distance * max(1.0 / avg_energy, 1.0 / avg_std_dev)
    return QslReport(
        fubini_study_distance=distance,
        avg_energy=avg_energy,
        avg_std_dev=avg_std_dev,
        ground_energy_curve=ground,
        t_qsl=t_qsl,
    )


def hamiltonian_samples(problem: ControlProblem, control: ControlField) -> ComplexArray:
    """``H0 + xi_n * mu_prime`` at every node."""
    control.check_grid(problem.grid)
    return problem.h0[None, :, :] + control.xi[:, None, None] * problem.mu_prime[None, :, :]
