"""
Liouville-space linear algebra.

Density matrices are mapped to vectors by column stacking: entry (i, j) of a
d x d matrix lands at index ``j * d + i``.  With this convention
``vec(B @ rho @ C) == kron(C.T, B) @ vec(rho)``, which is the identity every
superoperator builder below is derived from.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass
from functools import reduce
from typing import Final

import numpy as np
import numpy.typing as npt

from open_krotov.errors import DimensionMismatchError, InvalidStateError, NonHermitianError

type ComplexArray = npt.NDArray[np.complex128]
type RealArray = npt.NDArray[np.float64]

HERMITIAN_ATOL: Final[float] = 1e-12
TRACE_ATOL: Final[float] = 1e-12
PSD_ATOL: Final[float] = 1e-10


def _frozen(array: npt.ArrayLike) -> ComplexArray:
    """Return a read-only complex copy."""
    result = np.array(array, dtype=np.complex128, copy=True)
    result.setflags(write=False)
    return result


def _require_square(matrix: ComplexArray, name: str) -> int:
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise DimensionMismatchError(f'{name} must be a square matrix, got shape {matrix.shape}')
    return int(matrix.shape[0])


def is_hermitian(matrix: npt.ArrayLike, atol: float = HERMITIAN_ATOL) -> bool:
    """Check ``matrix == matrix^dagger`` elementwise within ``atol``."""
    array = np.asarray(matrix)
    return bool(np.allclose(array, array.conj().T, rtol=0.0, atol=atol))


@dataclass(frozen=True, slots=True)
class DensityMatrix:
    """
    A Hermitian, unit-trace, positive semidefinite d x d matrix.

    The wrapped array is copied and made read-only on construction.

    Raises:
        DimensionMismatchError: If ``data`` is not square.
        NonHermitianError: If ``data`` is not Hermitian to 1e-12.
        InvalidStateError: If the trace differs from 1 or an eigenvalue is below -1e-10.
    """

    data: ComplexArray

    def __post_init__(self) -> None:
        data = _frozen(self.data)
        _require_square(data, 'DensityMatrix')
        if not is_hermitian(data):
            raise NonHermitianError('Density matrix is not Hermitian')
        trace = np.trace(data)
        if abs(trace - 1.0) > TRACE_ATOL:
            raise InvalidStateError(f'Density matrix trace is {trace}, expected 1')
        min_eig = float(np.linalg.eigvalsh(data).min())
        if min_eig < -PSD_ATOL:
            raise InvalidStateError(f'Density matrix has negative eigenvalue {min_eig:.3e}')
        object.__setattr__(self, 'data', data)

    @property
    def dim(self) -> int:
        return int(self.data.shape[0])

    @classmethod
    def from_ket(cls, ket: npt.ArrayLike) -> DensityMatrix:
        """Projector onto a (normalized copy of a) pure state."""
        psi = normalized_ket(ket)
        return cls(np.outer(psi, psi.conj()))

    @classmethod
    def maximally_mixed(cls, dim: int) -> DensityMatrix:
        return cls(np.eye(dim) / dim)

    def purity(self) -> float:
        return float(np.real(np.trace(self.data @ self.data)))


@dataclass(frozen=True, slots=True)
class LiouvilleVector:
    """
    Column-stacked image of a d x d operator.

    Attributes:
        data: Complex vector of length ``dim ** 2``.
        dim: Hilbert-space dimension d.
    """

    data: ComplexArray
    dim: int

    def __post_init__(self) -> None:
        data = _frozen(self.data).reshape(-1)
        if data.shape[0] != self.dim * self.dim:
            raise DimensionMismatchError(
                f'Liouville vector of length {data.shape[0]} does not match dim={self.dim}',
            )
        object.__setattr__(self, 'data', data)

    @classmethod
    def from_array(cls, data: npt.ArrayLike) -> LiouvilleVector:
        """Wrap a raw vector, inferring d from its length."""
        array = np.asarray(data).reshape(-1)
        dim = int(round(np.sqrt(array.shape[0])))
        if dim * dim != array.shape[0]:
            raise DimensionMismatchError(f'Length {array.shape[0]} is not a perfect square')
        return cls(array, dim)

    def trace(self) -> complex:
        """Pairing with vec(identity), i.e. the trace of the underlying operator."""
        return complex(self.data[:: self.dim + 1].sum())


def normalized_ket(ket: npt.ArrayLike) -> ComplexArray:
    """
    Return a normalized complex copy of a state vector.

    Raises:
        InvalidStateError: If the vector is not 1-D or has zero norm.
    """
    psi = np.array(ket, dtype=np.complex128).reshape(-1)
    norm = np.linalg.norm(psi)
    if norm == 0.0:
        raise InvalidStateError('Cannot normalize the zero vector')
    return psi / norm


def vec(rho: DensityMatrix | npt.ArrayLike) -> LiouvilleVector:
    """
    Column-stack an operator into a Liouville vector.

    Example:
        >>> vec(np.eye(2)).data.real.tolist()
        [1.0, 0.0, 0.0, 1.0]
    """
    matrix = rho.data if isinstance(rho, DensityMatrix) else np.asarray(rho, dtype=np.complex128)
    dim = _require_square(matrix, 'vec operand')
    return LiouvilleVector(matrix.reshape(-1, order='F'), dim)


def unvec(vector: LiouvilleVector | npt.ArrayLike) -> ComplexArray:
    """Inverse of `vec`; returns a plain (writable) d x d array."""
    lv = vector if isinstance(vector, LiouvilleVector) else LiouvilleVector.from_array(vector)
    return np.array(lv.data.reshape((lv.dim, lv.dim), order='F'))


def liouville_inner(a: LiouvilleVector, b: LiouvilleVector) -> complex:
    """
    Hilbert-Schmidt pairing ``<<a|b>> = tr(A^dagger B)``.

    Raises:
        DimensionMismatchError: If the vectors have different dimensions.
    """
    if a.dim != b.dim:
        raise DimensionMismatchError(f'Cannot pair dim {a.dim} with dim {b.dim}')
    return complex(np.vdot(a.data, b.data))


def commutator_superop(hamiltonian: npt.ArrayLike) -> ComplexArray:
    """
    Superoperator of ``rho -> [H, rho]``: ``I kron H - H^T kron I``.

    Raises:
        NonHermitianError: If H is not Hermitian.
    """
    h = np.asarray(hamiltonian, dtype=np.complex128)
    dim = _require_square(h, 'Hamiltonian')
    if not is_hermitian(h):
        raise NonHermitianError('commutator_superop requires a Hermitian operator')
    identity = np.eye(dim, dtype=np.complex128)
    return np.kron(identity, h) - np.kron(h.T, identity)


def dissipator_superop(lindblad_ops: Sequence[npt.ArrayLike]) -> ComplexArray:
    """
    Superoperator of ``rho -> sum_k L rho L^dagger - 1/2 {L^dagger L, rho}``.

    The operators are expected to carry their rates already (``sqrt(rate) * L``).
    The jump term is ``conj(L) kron L``, which coincides with ``L^T kron L`` for
    real operators.

    Raises:
        DimensionMismatchError: If operators are not square or differ in size.
    """
    ops = [np.asarray(op, dtype=np.complex128) for op in lindblad_ops]
    if not ops:
        raise DimensionMismatchError('dissipator_superop needs at least one operator')
    dims = {_require_square(op, 'Lindblad operator') for op in ops}
    if len(dims) != 1:
        raise DimensionMismatchError(f'Lindblad operators have mixed dimensions {sorted(dims)}')
    dim = dims.pop()
    identity = np.eye(dim, dtype=np.complex128)

    def term(op: ComplexArray) -> ComplexArray:
        ldl = op.conj().T @ op
        return np.kron(op.conj(), op) - 0.5 * (np.kron(identity, ldl) + np.kron(ldl.T, identity))

    return reduce(np.add, (term(op) for op in ops))


@dataclass(frozen=True, slots=True)
class Liouvillian:
    """
    Generator ``A(xi)`` of ``i d|psi>>/dt = A(xi)|psi>>`` split by origin.

    Attributes:
        drift_commutator: Commutator superoperator of the bare Hamiltonian.
        control_superop: Commutator superoperator M of the control operator.
        dissipator: ``i`` times the Lindblad dissipator superoperator.
    """

    drift_commutator: ComplexArray
    control_superop: ComplexArray
    dissipator: ComplexArray

    def __post_init__(self) -> None:
        shapes = {
            self.drift_commutator.shape,
            self.control_superop.shape,
            self.dissipator.shape,
        }
        if len(shapes) != 1:
            raise DimensionMismatchError(f'Liouvillian parts have mixed shapes {shapes}')
        for name in ('drift_commutator', 'control_superop', 'dissipator'):
            object.__setattr__(self, name, _frozen(getattr(self, name)))

    @property
    def dim(self) -> int:
        """Hilbert-space dimension d."""
        return int(round(np.sqrt(self.drift_commutator.shape[0])))

    @property
    def state_size(self) -> int:
        return int(self.drift_commutator.shape[0])

    @property
    def control_operator(self) -> ComplexArray:
        return self.control_superop

    def assemble(self, xi: float) -> ComplexArray:
        """``A(xi) = drift_commutator + xi * control_superop + dissipator``."""
        return self.drift_commutator + xi * self.control_superop + self.dissipator

    def generator(self, xi: float) -> ComplexArray:
        """``G(xi) = -i A(xi)``, so that ``d|psi>>/dt = G|psi>>``."""
        return -1j * self.assemble(xi)

    def is_closed(self) -> bool:
        return not np.any(self.dissipator)


def build_liouvillian(
    h0: npt.ArrayLike,
    mu_prime: npt.ArrayLike,
    lindblad_ops: Sequence[npt.ArrayLike] = (),
) -> Liouvillian:
    """
    Assemble the vectorized master-equation generator.

    Args:
        h0: Bare Hamiltonian.
        mu_prime: Control operator coupling to the field.
        lindblad_ops: Rate-scaled Lindblad operators (empty for a closed system).

    Returns:
        Liouvillian whose dissipator carries the factor ``i``.
    """
    drift = commutator_superop(h0)
    control = commutator_superop(mu_prime)
    if drift.shape != control.shape:
        raise DimensionMismatchError('H0 and mu_prime have different dimensions')
    if lindblad_ops:
        dissipator = 1j * dissipator_superop(lindblad_ops)
        if dissipator.shape != drift.shape:
            raise DimensionMismatchError('Lindblad operators do not match H0 dimension')
    else:
        dissipator = np.zeros_like(drift)
    return Liouvillian(drift, control, dissipator)


def hermitian_split(matrix: npt.ArrayLike) -> tuple[ComplexArray, ComplexArray]:
    """
    Split ``A = X + iY`` with X and Y Hermitian.

    Returns:
        Tuple ``(X, Y)`` with ``X = (A + A^dagger)/2`` and ``Y = (A - A^dagger)/(2i)``.
    """
    a = np.asarray(matrix, dtype=np.complex128)
    _require_square(a, 'hermitian_split operand')
    a_dag = a.conj().T
    return (a + a_dag) / 2, (a - a_dag) / 2j
