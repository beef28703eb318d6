"""
Thermalization of a qubit in contact with a bosonic bath.

The bath is modelled by generalized amplitude damping: one Lindblad channel
raises the qubit with weight ``l_plus``, the other lowers it with weight
``l_minus``.  Basis convention: ``sigma_z|0> = +|0>``, so ``rho[0, 0]`` is the
excited population and ``sigma_plus = |0><1|``.  Bloch vectors use
``rho = (I + r . sigma) / 2``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Final

import numpy as np
import numpy.typing as npt
from scipy.integrate import solve_ivp

from open_krotov.dynamics import ControlField, TimeGrid, propagate_state
from open_krotov.errors import (
    DimensionMismatchError,
    InternalConsistencyError,
    InvalidStateError,
    ParameterRangeError,
    TargetMismatchError,
)
from open_krotov.liouville import (
    ComplexArray,
    DensityMatrix,
    Liouvillian,
    RealArray,
    build_liouvillian,
    unvec,
    vec,
)
from open_krotov.logger import get_logger, log_execution_time
from open_krotov.optimizer import ControlProblem, OptimizationResult, OptimizerConfig, optimize

SIGMA_X: Final = np.array([[0, 1], [1, 0]], dtype=np.complex128)
SIGMA_Y: Final = np.array([[0, -1j], [1j, 0]], dtype=np.complex128)
SIGMA_Z: Final = np.array([[1, 0], [0, -1]], dtype=np.complex128)
SIGMA_PLUS: Final = np.array([[0, 1], [0, 0]], dtype=np.complex128)
SIGMA_MINUS: Final = np.array([[0, 0], [1, 0]], dtype=np.complex128)
PAULI: Final = np.stack([SIGMA_X, SIGMA_Y, SIGMA_Z])
for _matrix in (SIGMA_X, SIGMA_Y, SIGMA_Z, SIGMA_PLUS, SIGMA_MINUS, PAULI):
    _matrix.setflags(write=False)
del _matrix

BLOCH_NORM_ATOL: Final[float] = 1e-10
GIBBS_ATOL: Final[float] = 1e-10
DEFAULT_ALPHA: Final[float] = 1e-3

logger = get_logger('thermal')


@dataclass(frozen=True, slots=True)
class ThermalModel:
    """
    Qubit with gap ``omega`` damped at rate ``gamma`` by a bath at inverse temperature ``beta``.

    Raises:
        ParameterRangeError: If any parameter is not a positive finite number.
    """

    omega: float
    beta: float
    gamma: float

    def __post_init__(self) -> None:
        for name in ('omega', 'beta', 'gamma'):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0.0:
                raise ParameterRangeError(f'{name} must be positive and finite, got {value}')

    @property
    def l_plus(self) -> float:
        """Bose weight of the raising channel, ``1 / (e^{omega beta} - 1)``."""
        return float(1.0 / np.expm1(self.omega * self.beta))

    @property
    def l_minus(self) -> float:
        """Bose weight of the lowering channel, ``e^{omega beta} / (e^{omega beta} - 1)``."""
        return 1.0 + self.l_plus

    @property
    def r_fp(self) -> float:
        """Length of the fixed-point Bloch vector, ``(e^{wb} - 1) / (e^{wb} + 1)``."""
        return float(np.tanh(0.5 * self.omega * self.beta))

    @property
    def gamma1(self) -> float:
        """Coherence decay rate."""
        return self.gamma / (2.0 * self.r_fp)

    @property
    def gamma2(self) -> float:
        """Population relaxation rate."""
        return 2.0 * self.gamma1

    @property
    def gamma3(self) -> float:
        return self.gamma

    @property
    def h0(self) -> ComplexArray:
        return 0.5 * self.omega * SIGMA_Z

    @property
    def mu_prime(self) -> ComplexArray:
        return SIGMA_X.copy()

    @property
    def lindblad_ops(self) -> tuple[ComplexArray, ComplexArray]:
        """``sqrt(gamma l+) sigma_plus`` and ``sqrt(gamma l-) sigma_minus``."""
        return (
            np.sqrt(self.gamma * self.l_plus) * SIGMA_PLUS,
            np.sqrt(self.gamma * self.l_minus) * SIGMA_MINUS,
        )

    def liouvillian(self) -> Liouvillian:
        return build_liouvillian(self.h0, self.mu_prime, self.lindblad_ops)

    def gibbs_bloch(self) -> BlochVector:
        return BlochVector(np.array([0.0, 0.0, -self.r_fp]))

    def gibbs_state(self) -> DensityMatrix:
        r_fp = self.r_fp
        return DensityMatrix(np.diag([(1.0 - r_fp) / 2.0, (1.0 + r_fp) / 2.0]))


def gad_model(omega: float, beta: float, gamma: float) -> ThermalModel:
    """
    Build the generalized-amplitude-damping qubit.

    Example:
        >>> model = gad_model(2.0, np.log(1.5) / 2.0, 0.1)
        >>> round(model.l_plus, 12), round(model.r_fp, 12), round(model.gamma1, 12)
        (2.0, 0.2, 0.25)
    """
    model = ThermalModel(float(omega), float(beta), float(gamma))
    logger.debug(
        'GAD model: omega=%g beta=%g gamma=%g l+=%.6g l-=%.6g r_fp=%.6g',
        model.omega,
        model.beta,
        model.gamma,
        model.l_plus,
        model.l_minus,
        model.r_fp,
    )
    return model


def beta_for_populations(omega: float, excited: float, ground: float) -> float:
    """
    Inverse temperature whose Gibbs state has the given populations.

    ``excited / ground = e^{-omega beta}``; for ``(0.4, 0.6)`` and ``omega = 2`` this is
    ``ln(1.5) / 2``.
    """
    if omega <= 0.0:
        raise ParameterRangeError(f'omega must be positive, got {omega}')
    if not 0.0 < excited < ground:
        raise ParameterRangeError(
            f'Need 0 < excited < ground for a positive temperature, got ({excited}, {ground})',
        )
    return float(np.log(ground / excited) / omega)


@dataclass(frozen=True, slots=True)
class BlochVector:
    """Real 3-vector ``(r_x, r_y, r_z)`` of a qubit state, ``|r| <= 1``."""

    r: RealArray

    def __post_init__(self) -> None:
        r = np.array(self.r, dtype=np.float64).reshape(-1)
        if r.shape != (3,) or not np.isfinite(r).all():
            raise DimensionMismatchError(f'Bloch vector must be 3 finite reals, got {self.r!r}')
        norm = float(np.linalg.norm(r))
        if norm > 1.0 + BLOCH_NORM_ATOL:
            raise InvalidStateError(f'Bloch vector of length {norm:.6g} is unphysical')
        r.setflags(write=False)
        object.__setattr__(self, 'r', r)

    @classmethod
    def from_components(cls, x: float, y: float, z: float) -> BlochVector:
        return cls(np.array([x, y, z]))

    @property
    def x(self) -> float:
        return float(self.r[0])

    @property
    def y(self) -> float:
        return float(self.r[1])

    @property
    def z(self) -> float:
        return float(self.r[2])

    def distance(self, other: BlochVector) -> float:
        """Trace distance of the two qubit states, ``|r - s| / 2``."""
        return 0.5 * float(np.linalg.norm(self.r - other.r))


def _bloch_components(rhos: npt.ArrayLike) -> RealArray:
    """``Re tr(rho sigma_i)`` for a stack of 2 x 2 matrices, shape ``(..., 3)``."""
    array = np.asarray(rhos, dtype=np.complex128)
    return np.real(np.einsum('...ij,kji->...k', array, PAULI))


def bloch_from_density(rho: DensityMatrix) -> BlochVector:
    """
    Bloch vector ``r_i = tr(rho sigma_i)`` of a qubit state.

    Raises:
        DimensionMismatchError: If ``rho`` is not 2 x 2.
    """
    if rho.dim != 2:
        raise DimensionMismatchError(f'Bloch vectors need d = 2, got d = {rho.dim}')
    return BlochVector(_bloch_components(rho.data))


def density_from_bloch(bloch: BlochVector) -> DensityMatrix:
    """Inverse of `bloch_from_density`."""
    return DensityMatrix(0.5 * (np.eye(2) + np.tensordot(bloch.r, PAULI, axes=1)))


def analytic_bloch_curve(r0: BlochVector, model: ThermalModel, times: npt.ArrayLike) -> RealArray:
    """
    Closed-form free evolution of the Bloch vector at several times.

    Returns:
        Array of shape ``(len(times), 3)``.
    """
    t = np.asarray(times, dtype=np.float64).reshape(-1)
    if np.any(t < 0.0):
        raise ParameterRangeError('Times must be non-negative')
    phase = model.omega * t
    coherence = np.exp(-model.gamma1 * t)
    population = np.exp(-model.gamma2 * t)
    r_x = coherence * (r0.x * np.cos(phase) - r0.y * np.sin(phase))
    r_y = coherence * (r0.y * np.cos(phase) + r0.x * np.sin(phase))
    r_z = -model.r_fp + population * (r0.z + model.r_fp)
    return np.column_stack([r_x, r_y, r_z])


def analytic_trajectory(r0: BlochVector, model: ThermalModel, t: float) -> BlochVector:
    """
    Bloch vector at time ``t`` under the uncontrolled dynamics.

    Raises:
        ParameterRangeError: If ``t < 0``.
    """
    if t < 0.0:
        raise ParameterRangeError(f'Time must be non-negative, got {t}')
    return BlochVector(analytic_bloch_curve(r0, model, [t])[0])


def trace_distance(rho: DensityMatrix, sigma: DensityMatrix) -> float:
    """
    ``D1 = tr|rho - sigma| / 2``.

    Uses the Bloch formula for qubits and the eigenvalues of ``rho - sigma`` otherwise.

    Raises:
        DimensionMismatchError: If the dimensions differ.
    """
    if rho.dim != sigma.dim:
        raise DimensionMismatchError(f'Cannot compare d = {rho.dim} with d = {sigma.dim}')
    if rho.dim == 2:
        return bloch_from_density(rho).distance(bloch_from_density(sigma))
    return 0.5 * float(np.abs(np.linalg.eigvalsh(rho.data - sigma.data)).sum())


def trace_distance_curve(rhos: npt.ArrayLike, sigma: DensityMatrix) -> RealArray:
    """
    Trace distance of every matrix in a stack ``(n, d, d)`` to ``sigma``.

    Works on raw propagated matrices, which are only Hermitian up to roundoff.
    """
    stack = np.asarray(rhos, dtype=np.complex128)
    if stack.ndim != 3 or stack.shape[1:] != sigma.data.shape:
        raise DimensionMismatchError(f'Expected a stack of {sigma.data.shape} matrices')
    if sigma.dim == 2:
        diff = _bloch_components(stack) - _bloch_components(sigma.data)
        return 0.5 * np.linalg.norm(diff, axis=1)
    delta = stack - sigma.data[None, :, :]
    delta = 0.5 * (delta + np.conj(np.swapaxes(delta, 1, 2)))
    return 0.5 * np.abs(np.linalg.eigvalsh(delta)).sum(axis=1)


def _check_epsilon(epsilon: float) -> None:
    if not 0.0 < epsilon < 1.0:
        raise ParameterRangeError(f'epsilon must lie in (0, 1), got {epsilon}')


def epsilon_free_time(r0: BlochVector, model: ThermalModel, epsilon: float) -> float:
    """
    Time the free dynamics need to bring ``r0`` within trace distance ``epsilon`` of Gibbs.

    With ``u = e^{-2 gamma1 t}`` the squared distance is ``(a u + b^2 u^2) / 4`` where
    ``a = r_x^2 + r_y^2`` and ``b = r_z + r_fp``; the positive root is taken in the
    rationalized form ``u = 8 eps^2 / (a + sqrt(a^2 + 16 eps^2 b^2))``, which also covers
    ``b = 0``.

    Returns:
        ``-ln(u) / (2 gamma1)``, or 0 if the state already lies inside the ball.

    Raises:
        ParameterRangeError: If ``epsilon`` is outside (0, 1).
        InternalConsistencyError: If the root does not correspond to a positive time.
    """
    _check_epsilon(epsilon)
    if r0.distance(model.gibbs_bloch()) <= epsilon:
        return 0.0
    a = r0.x**2 + r0.y**2
    b = r0.z + model.r_fp
    u = 8.0 * epsilon**2 / (a + np.sqrt(a**2 + 16.0 * epsilon**2 * b**2))
    if u >= 1.0:
        raise InternalConsistencyError(
            f'Free contraction root u={u:.17g} >= 1 although the initial distance exceeds epsilon',
        )
    return float(-np.log(u) / (2.0 * model.gamma1))


@log_execution_time
def first_passage_time(
    r0: BlochVector,
    model: ThermalModel,
    epsilon: float,
    *,
    t_max: float | None = None,
    rtol: float = 1e-11,
    atol: float = 1e-13,
) -> float:
    """
    Integrate the vectorized master equation until the distance to Gibbs drops to ``epsilon``.

    Independent of the closed form in `epsilon_free_time`; uses `solve_ivp` (DOP853) with
    a terminal event.

    Raises:
        InternalConsistencyError: If the ball is not reached before ``t_max``.
    """
    _check_epsilon(epsilon)
    gibbs = model.gibbs_bloch()
    if r0.distance(gibbs) <= epsilon:
        return 0.0
    horizon = t_max if t_max is not None else 60.0 / model.gamma1
    generator = model.liouvillian().generator(0.0)
    gibbs_components = gibbs.r

    def rhs(_t: float, y: ComplexArray) -> ComplexArray:
        return generator @ y

    def reached(_t: float, y: ComplexArray) -> float:
        components = _bloch_components(unvec(y))
        return 0.5 * float(np.linalg.norm(components - gibbs_components)) - epsilon

    reached.terminal = True  # type: ignore[attr-defined]
    reached.direction = -1  # type: ignore[attr-defined]

    solution = solve_ivp(
        rhs,
        (0.0, horizon),
        vec(density_from_bloch(r0)).data,
        method='DOP853',
        events=reached,
        rtol=rtol,
        atol=atol,
    )
    if not solution.success:
        raise InternalConsistencyError(f'Free-dynamics integration failed: {solution.message}')
    if solution.t_events[0].size == 0:
        raise InternalConsistencyError(f'Distance {epsilon} not reached before t={horizon:.6g}')
    return float(solution.t_events[0][0])


@dataclass(frozen=True)
class ExperimentReport:
    """
    Outcome of a thermalization speedup run.

    Attributes:
        t_free: Free thermalization time into the epsilon ball.
        speedup: Requested speedup factor s.
        epsilon: Ball radius.
        grid: Grid over ``[0, t_free / s]``; ``None`` when ``rho0`` starts inside the ball.
        problem: The open control problem that was optimized, or ``None``.
        free_distance: Node-sampled trace distance to Gibbs without control.
        controlled_distance: Same under the optimized field.
        result: Optimizer output, or ``None`` when nothing had to be optimized.
    """

    t_free: float
    speedup: float
    epsilon: float
    grid: TimeGrid | None
    problem: ControlProblem | None
    free_distance: RealArray
    controlled_distance: RealArray
    result: OptimizationResult | None

    @property
    def t_final(self) -> float:
        return 0.0 if self.grid is None else self.grid.t_final

    @property
    def field(self) -> ControlField | None:
        return None if self.result is None else self.result.field

    @property
    def reached(self) -> bool:
        """True when the controlled state ends inside the epsilon ball."""
        return bool(self.controlled_distance[-1] <= self.epsilon)


def _check_gibbs_target(model: ThermalModel, target: DensityMatrix) -> None:
    gibbs = model.gibbs_state()
    if target.dim != 2:
        raise DimensionMismatchError(f'Thermalization targets a qubit, got d = {target.dim}')
    deviation = float(np.abs(target.data - gibbs.data).max())
    if deviation > GIBBS_ATOL:
        raise TargetMismatchError(
            f'Target differs from the Gibbs state of the bath by {deviation:.3e}; '
            f'the free dynamics only fix diag({gibbs.data[0, 0].real:.6g}, '
            f'{gibbs.data[1, 1].real:.6g})',
        )


@log_execution_time
def speedup_experiment(
    model: ThermalModel,
    rho0: DensityMatrix,
    tau: DensityMatrix,
    epsilon: float,
    speedup: float,
    config: OptimizerConfig,
    *,
    alpha: float = DEFAULT_ALPHA,
    n_steps: int = 2000,
    store_history: bool = False,
) -> ExperimentReport:
    """
    Steer ``rho0`` into the epsilon ball around Gibbs ``speedup`` times faster than free decay.

    Args:
        model: Bath model; ``tau`` must be its Gibbs state.
        rho0: Initial qubit state.
        tau: Target, the Gibbs state to 1e-10.
        epsilon: Ball radius in trace distance.
        speedup: Factor s >= 1; the horizon is ``T = T_free / s``.
        config: Optimizer parameters.
        alpha: Fluence penalty.
        n_steps: Number of grid intervals.
        store_history: Forwarded to `optimize`.

    Returns:
        Free and controlled distance curves, optimized field and iteration records.

    Raises:
        TargetMismatchError: If ``tau`` is not the Gibbs state.
        ParameterRangeError: If ``speedup < 1``.

    An initial state already inside the ball needs no control: the report then has
    ``t_free = 0``, single-node distance curves, ``reached = True`` and no result.
    """
    if not np.isfinite(speedup) or speedup < 1.0:
        raise ParameterRangeError(f'Speedup factor must be >= 1, got {speedup}')
    _check_gibbs_target(model, tau)
    t_free = epsilon_free_time(bloch_from_density(rho0), model, epsilon)
    if t_free == 0.0:
        distance = np.array([trace_distance(rho0, tau)])
        logger.info(
            'Initial state already within epsilon=%g of the Gibbs state (D1=%.6g), '
            'nothing to optimize',
            epsilon,
            distance[0],
        )
        return ExperimentReport(
            t_free=0.0,
            speedup=float(speedup),
            epsilon=float(epsilon),
            grid=None,
            problem=None,
            free_distance=distance,
            controlled_distance=distance,
            result=None,
        )
    grid = TimeGrid(t_free / speedup, n_steps)
    logger.info(
        'Speedup run: T_free=%.10g s=%g T=%.10g N=%d epsilon=%g',
        t_free,
        speedup,
        grid.t_final,
        n_steps,
        epsilon,
    )

    problem = ControlProblem.open_system(
        model.h0,
        model.mu_prime,
        model.lindblad_ops,
        rho0,
        tau,
        alpha,
        grid,
    )
    free = propagate_state(
        problem.generator,
        ControlField.zeros(grid),
        problem.initial_vector,
        grid,
    )
    free_distance = trace_distance_curve(free.density_matrices(), tau)

    result = optimize(problem, config, store_history=store_history)
    controlled_distance = trace_distance_curve(result.trajectory.density_matrices(), tau)

    report = ExperimentReport(
        t_free=t_free,
        speedup=float(speedup),
        epsilon=float(epsilon),
        grid=grid,
        problem=problem,
        free_distance=free_distance,
        controlled_distance=controlled_distance,
        result=result,
    )
    if report.reached:
        logger.info(
            'Reached the epsilon ball: D1(T)=%.6g (free: %.6g)',
            controlled_distance[-1],
            free_distance[-1],
        )
    else:
        logger.warning(
            'Epsilon ball not reached: D1(T)=%.6g > %g (free: %.6g)',
            controlled_distance[-1],
            epsilon,
            free_distance[-1],
        )
    return report
