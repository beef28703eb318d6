"""
Forward and backward time propagation.

States obey ``i d|psi>>/dt = A(xi(t))|psi>>`` and costates
``i d|chi>>/dt = A(xi(t))^dagger |chi>>``.  The field is piecewise constant:
interval ``[t_n, t_{n+1})`` sees the left node value ``xi_n`` and is advanced
with the exact exponential of the frozen generator.

`propagate_density_direct` integrates the matrix-valued master equation with
RK4 and never touches vectorization; it exists to check everything else.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass
from typing import Final, Protocol

import numpy as np
import numpy.typing as npt
from scipy.linalg import expm

from open_krotov.errors import (
    DimensionMismatchError,
    GridMismatchError,
    NonHermitianError,
    ParameterRangeError,
)
from open_krotov.liouville import (
    ComplexArray,
    DensityMatrix,
    LiouvilleVector,
    RealArray,
    is_hermitian,
    unvec,
)
from open_krotov.logger import get_logger

DEFAULT_N_STEPS: Final[int] = 2000

logger = get_logger('dynamics')


@dataclass(frozen=True, slots=True)
class TimeGrid:
    """
    Uniform grid ``t_n = n * dt`` for ``n = 0..N`` over ``[0, T]``.

    Raises:
        ParameterRangeError: If ``t_final <= 0`` or ``n_steps < 1``.
    """

    t_final: float
    n_steps: int = DEFAULT_N_STEPS

    def __post_init__(self) -> None:
        if not np.isfinite(self.t_final) or self.t_final <= 0.0:
            raise ParameterRangeError(f't_final must be positive, got {self.t_final}')
        if self.n_steps < 1:
            raise ParameterRangeError(f'n_steps must be >= 1, got {self.n_steps}')

    @property
    def dt(self) -> float:
        return self.t_final / self.n_steps

    @property
    def n_nodes(self) -> int:
        return self.n_steps + 1

    @property
    def times(self) -> RealArray:
        return np.arange(self.n_nodes, dtype=np.float64) * self.dt

    def quadrature_weights(self) -> RealArray:
        """Trapezoidal weights in units of dt: ``(1/2, 1, ..., 1, 1/2)``."""
        weights = np.ones(self.n_nodes)
        weights[0] = weights[-1] = 0.5
        return weights


@dataclass(frozen=True, slots=True)
class ControlField:
    """
    Forward field ``xi`` and auxiliary backward field ``xi_tilde`` on grid nodes.

    Both arrays are copied and made read-only.
    """

    xi: RealArray
    xi_tilde: RealArray

    def __post_init__(self) -> None:
        xi = np.array(self.xi, dtype=np.float64).reshape(-1)
        xi_tilde = np.array(self.xi_tilde, dtype=np.float64).reshape(-1)
        if xi.shape != xi_tilde.shape:
            raise GridMismatchError(
                f'xi has {xi.shape[0]} nodes but xi_tilde has {xi_tilde.shape[0]}',
            )
        if not (np.isfinite(xi).all() and np.isfinite(xi_tilde).all()):
            raise ParameterRangeError('Control field contains non-finite values')
        xi.setflags(write=False)
        xi_tilde.setflags(write=False)
        object.__setattr__(self, 'xi', xi)
        object.__setattr__(self, 'xi_tilde', xi_tilde)

    @classmethod
    def from_values(cls, xi: npt.ArrayLike) -> ControlField:
        """A field whose auxiliary copy equals the forward field."""
        return cls(np.asarray(xi), np.asarray(xi))

    @classmethod
    def zeros(cls, grid: TimeGrid) -> ControlField:
        return cls.from_values(np.zeros(grid.n_nodes))

    @classmethod
    def constant(cls, grid: TimeGrid, value: float) -> ControlField:
        return cls.from_values(np.full(grid.n_nodes, value, dtype=np.float64))

    @classmethod
    def random(cls, grid: TimeGrid, amplitude: float, rng: np.random.Generator) -> ControlField:
        """I.i.d. uniform node values in ``[-amplitude, amplitude]``."""
        if amplitude < 0.0:
            raise ParameterRangeError(f'Field amplitude must be >= 0, got {amplitude}')
        return cls.from_values(rng.uniform(-amplitude, amplitude, size=grid.n_nodes))

    @property
    def n_nodes(self) -> int:
        return int(self.xi.shape[0])

    def check_grid(self, grid: TimeGrid) -> None:
        if self.n_nodes != grid.n_nodes:
            raise GridMismatchError(
                f'Field has {self.n_nodes} nodes, grid has {grid.n_nodes}',
            )

    def fluence(self, grid: TimeGrid) -> float:
        """Trapezoidal integral of the squared forward field over the grid."""
        self.check_grid(grid)
        return float(np.dot(grid.quadrature_weights(), self.xi**2) * grid.dt)


class LinearGenerator(Protocol):
    """
    Minimal interface of a generator ``A(xi) = A_0 + xi * M`` of ``i dv/dt = A v``.

    Implemented by `Liouvillian` (open systems, vectors of size d^2) and by
    `HilbertGenerator` (closed systems, kets of size d).
    """

    @property
    def state_size(self) -> int:
        """Length of the propagated vectors."""
        ...

    @property
    def control_operator(self) -> ComplexArray:
        """Operator M multiplying the field."""
        ...

    def assemble(self, xi: float) -> ComplexArray:
        """Generator for a frozen field value."""
        ...


@dataclass(frozen=True, slots=True)
class HilbertGenerator:
    """Closed-system generator ``H(xi) = H0 + xi * mu`` acting on kets."""

    h0: ComplexArray
    mu: ComplexArray

    def __post_init__(self) -> None:
        h0 = np.array(self.h0, dtype=np.complex128)
        mu = np.array(self.mu, dtype=np.complex128)
        if h0.shape != mu.shape or h0.ndim != 2 or h0.shape[0] != h0.shape[1]:
            raise DimensionMismatchError(f'H0 {h0.shape} and mu {mu.shape} must be equal squares')
        if not (is_hermitian(h0) and is_hermitian(mu)):
            raise NonHermitianError('Closed-system H0 and mu must be Hermitian')
        h0.setflags(write=False)
        mu.setflags(write=False)
        object.__setattr__(self, 'h0', h0)
        object.__setattr__(self, 'mu', mu)

    @property
    def state_size(self) -> int:
        return int(self.h0.shape[0])

    @property
    def control_operator(self) -> ComplexArray:
        return self.mu

    def assemble(self, xi: float) -> ComplexArray:
        return self.h0 + xi * self.mu


@dataclass(frozen=True, slots=True)
class Trajectory:
    """
    Node-sampled solution, indexed forward in time.

    Attributes:
        states: Array of shape ``(N + 1, state_size)``.
        grid: Time grid the states live on.
    """

    states: ComplexArray
    grid: TimeGrid

    def __post_init__(self) -> None:
        states = np.array(self.states, dtype=np.complex128)
        if states.ndim != 2 or states.shape[0] != self.grid.n_nodes:
            raise GridMismatchError(
                f'Trajectory of shape {states.shape} does not fit {self.grid.n_nodes} nodes',
            )
        states.setflags(write=False)
        object.__setattr__(self, 'states', states)

    def __len__(self) -> int:
        return int(self.states.shape[0])

    @property
    def initial(self) -> ComplexArray:
        return self.states[0]

    @property
    def final(self) -> ComplexArray:
        return self.states[-1]

    def liouville_vector(self, n: int) -> LiouvilleVector:
        return LiouvilleVector.from_array(self.states[n])

    def density_matrices(self) -> ComplexArray:
        """Unvectorized states, shape ``(N + 1, d, d)``."""
        dim = int(round(np.sqrt(self.states.shape[1])))
        if dim * dim != self.states.shape[1]:
            raise DimensionMismatchError('Trajectory states are not Liouville vectors')
        return np.stack([unvec(LiouvilleVector(state, dim)) for state in self.states])

    def traces(self) -> ComplexArray:
        """Pairing of every node state with vec(identity)."""
        dim = int(round(np.sqrt(self.states.shape[1])))
        return self.states[:, :: dim + 1].sum(axis=1)


def forward_step(generator: LinearGenerator, xi: float, dt: float) -> ComplexArray:
    """Propagator ``exp(-i A(xi) dt)`` of one interval."""
    return expm(-1j * dt * generator.assemble(xi))


def backward_step(generator: LinearGenerator, xi: float, dt: float) -> ComplexArray:
    """Costate propagator ``exp(+i A(xi)^dagger dt)`` from ``t + dt`` back to ``t``."""
    return expm(1j * dt * generator.assemble(xi).conj().T)


def _node_values(
    field: ControlField | npt.ArrayLike,
    grid: TimeGrid,
    *,
    auxiliary: bool,
) -> RealArray:
    if isinstance(field, ControlField):
        values = field.xi_tilde if auxiliary else field.xi
    else:
        values = np.asarray(field, dtype=np.float64).reshape(-1)
    if values.shape[0] != grid.n_nodes:
        raise GridMismatchError(f'Field has {values.shape[0]} nodes, grid has {grid.n_nodes}')
    return values


def _initial_vector(
    vector: LiouvilleVector | npt.ArrayLike,
    generator: LinearGenerator,
) -> ComplexArray:
    data = vector.data if isinstance(vector, LiouvilleVector) else np.asarray(vector)
    data = np.asarray(data, dtype=np.complex128).reshape(-1)
    if data.shape[0] != generator.state_size:
        raise DimensionMismatchError(
            f'State of length {data.shape[0]} does not match generator size '
            f'{generator.state_size}',
        )
    return data


def propagate_state(
    generator: LinearGenerator,
    field: ControlField | npt.ArrayLike,
    psi0: LiouvilleVector | npt.ArrayLike,
    grid: TimeGrid,
) -> Trajectory:
    """
    Propagate a state forward over the grid.

    Args:
        generator: Liouvillian (open) or HilbertGenerator (closed).
        field: Node values; for a `ControlField` the forward field ``xi`` is used.
        psi0: Initial vector at ``t = 0``.
        grid: Time grid.

    Returns:
        Trajectory with ``states[0] == psi0``.

    Raises:
        GridMismatchError: If the field does not have N + 1 node values.
        DimensionMismatchError: If ``psi0`` does not fit the generator.
    """
    xi = _node_values(field, grid, auxiliary=False)
    states = np.empty((grid.n_nodes, generator.state_size), dtype=np.complex128)
    states[0] = _initial_vector(psi0, generator)
    for n in range(grid.n_steps):
        states[n + 1] = forward_step(generator, float(xi[n]), grid.dt) @ states[n]
    return Trajectory(states, grid)


def propagate_costate(
    generator: LinearGenerator,
    field: ControlField | npt.ArrayLike,
    chi_final: LiouvilleVector | npt.ArrayLike,
    grid: TimeGrid,
) -> Trajectory:
    """
    Propagate a costate backward from ``t = T`` under the adjoint generator.

    Step ``n + 1 -> n`` applies ``exp(+i A(xi_n)^dagger dt)``.  For a
    `ControlField` the auxiliary field ``xi_tilde`` is used.

    Returns:
        Trajectory indexed forward in time, ``states[N] == chi_final``.
    """
    xi = _node_values(field, grid, auxiliary=True)
    states = np.empty((grid.n_nodes, generator.state_size), dtype=np.complex128)
    states[-1] = _initial_vector(chi_final, generator)
    for n in range(grid.n_steps - 1, -1, -1):
        states[n] = backward_step(generator, float(xi[n]), grid.dt) @ states[n + 1]
    return Trajectory(states, grid)


def pairing_series(costate: Trajectory, state: Trajectory) -> ComplexArray:
    """``<<chi(t_n)|psi(t_n)>>`` at every node."""
    if costate.states.shape != state.states.shape:
        raise GridMismatchError('Costate and state trajectories have different shapes')
    return np.einsum('ni,ni->n', costate.states.conj(), state.states)


def control_overlaps(
    costate: Trajectory,
    state: Trajectory,
    control_operator: ComplexArray,
) -> RealArray:
    """``Im <<chi(t_n)|M|psi(t_n)>>`` at every node."""
    m_psi = state.states @ control_operator.T
    return np.imag(np.einsum('ni,ni->n', costate.states.conj(), m_psi))


def _lindblad_rhs(
    rho: ComplexArray,
    hamiltonian: ComplexArray,
    jumps: Sequence[tuple[ComplexArray, ComplexArray]],
) -> ComplexArray:
    drho = -1j * (hamiltonian @ rho - rho @ hamiltonian)
    for op, ldl in jumps:
        drho += op @ rho @ op.conj().T - 0.5 * (ldl @ rho + rho @ ldl)
    return drho


def propagate_density_direct(
    h0: npt.ArrayLike,
    mu_prime: npt.ArrayLike,
    lindblad_ops: Sequence[npt.ArrayLike],
    field: ControlField | npt.ArrayLike,
    rho0: DensityMatrix,
    grid: TimeGrid,
) -> ComplexArray:
    """
    Integrate the master equation on the density matrix with fixed-step RK4.

    Uses the same left-constant field convention as `propagate_state`.

    Returns:
        Array of shape ``(N + 1, d, d)`` of node density matrices.
    """
    h0_arr = np.asarray(h0, dtype=np.complex128)
    mu_arr = np.asarray(mu_prime, dtype=np.complex128)
    if h0_arr.shape != mu_arr.shape or h0_arr.shape != rho0.data.shape:
        raise DimensionMismatchError('H0, mu_prime and rho0 must share the dimension d')
    jumps = []
    for op in lindblad_ops:
        op_arr = np.asarray(op, dtype=np.complex128)
        if op_arr.shape != h0_arr.shape:
            raise DimensionMismatchError('Lindblad operator does not match H0 dimension')
        jumps.append((op_arr, op_arr.conj().T @ op_arr))

    xi = _node_values(field, grid, auxiliary=False)
    dt = grid.dt
    rhos = np.empty((grid.n_nodes, *h0_arr.shape), dtype=np.complex128)
    rhos[0] = rho0.data
    for n in range(grid.n_steps):
        hamiltonian = h0_arr + xi[n] * mu_arr
        rho = rhos[n]
        k1 = _lindblad_rhs(rho, hamiltonian, jumps)
        k2 = _lindblad_rhs(rho + 0.5 * dt * k1, hamiltonian, jumps)
        k3 = _lindblad_rhs(rho + 0.5 * dt * k2, hamiltonian, jumps)
        k4 = _lindblad_rhs(rho + dt * k3, hamiltonian, jumps)
        rhos[n + 1] = rho + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    logger.debug('Direct RK4 integration finished: %d steps, dt=%.3e', grid.n_steps, dt)
    return rhos
