"""Spin-1/2 operator algebra on the N-site tensor product space.

Basis convention: the computational basis index ``b`` encodes an Ising
configuration with site 1 as the most significant bit (the usual Kronecker
ordering ``S_1 (x) S_2 (x) ... (x) S_N``). A bit value 0 means spin +1 and a
bit value 1 means spin -1. Pauli matrices have eigenvalues +-1.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence, Union

import numpy as np

from .errors import CapacityError, DomainError, NumericError

MAX_SITES = 12
HERMITIAN_TOL = 1e-12


@dataclass(frozen=True)
class SpinSystem:
    """N spin-1/2 particles; the Hilbert space has dimension 2**N."""

    n_sites: int
    max_sites: int = field(default=MAX_SITES, compare=False, repr=False)

    def __post_init__(self):
        if int(self.n_sites) != self.n_sites or self.n_sites < 1:
            raise DomainError(f"n_sites must be a positive integer, got {self.n_sites!r}")
        if self.n_sites > self.max_sites:
            raise CapacityError(
                f"n_sites={self.n_sites} exceeds the cap of {self.max_sites} sites"
            )

    @property
    def dim(self) -> int:
        return 1 << self.n_sites

    def bit(self, site: int) -> int:
        """Bit position (0 = least significant) holding ``site`` (1-based)."""
        self._check_site(site)
        return self.n_sites - site

    def _check_site(self, site: int) -> None:
        if not 1 <= site <= self.n_sites:
            raise DomainError(f"site {site} out of range 1..{self.n_sites}")

    def configurations(self) -> np.ndarray:
        """Array of shape (dim, N); row ``b`` holds the +-1 spins of basis state b."""
        b = np.arange(self.dim)[:, None]
        shifts = self.n_sites - np.arange(1, self.n_sites + 1)
        bits = (b >> shifts[None, :]) & 1
        return (1 - 2 * bits).astype(np.int8)

    def index_of(self, sigma: Sequence[int]) -> int:
        sigma = np.asarray(sigma)
        if sigma.shape != (self.n_sites,) or not np.all(np.abs(sigma) == 1):
            raise DomainError(f"configuration must be a +-1 vector of length {self.n_sites}")
        index = 0
        for s in sigma:
            index = (index << 1) | (1 if s < 0 else 0)
        return index


class PauliAxis(enum.Enum):
    X = "x"
    Y = "y"
    Z = "z"

    @classmethod
    def parse(cls, value: Union["PauliAxis", str]) -> "PauliAxis":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise DomainError(f"unknown Pauli axis {value!r}") from None


PAULI_MATRICES = {
    PauliAxis.X: np.array([[0, 1], [1, 0]], dtype=complex),
    PauliAxis.Y: np.array([[0, -1j], [1j, 0]], dtype=complex),
    PauliAxis.Z: np.array([[1, 0], [0, -1]], dtype=complex),
}


@dataclass(frozen=True, eq=False)
class HermitianOperator:
    """Dense Hermitian matrix acting on ``system``.

    The constructor validates; use :meth:`from_matrix` to symmetrize a matrix
    that is Hermitian only up to rounding.
    """

    system: SpinSystem
    entries: np.ndarray

    def __post_init__(self):
        m = np.array(self.entries, dtype=complex)
        d = self.system.dim
        if m.shape != (d, d):
            raise DomainError(f"operator shape {m.shape} does not match dim {d}")
        if not np.all(np.isfinite(m)):
            raise NumericError("operator has non-finite entries")
        residue = np.max(np.abs(m - m.conj().T)) if d else 0.0
        if residue > HERMITIAN_TOL:
            raise DomainError(f"matrix is not Hermitian (max |A - A^dag| = {residue:.3e})")
        m.setflags(write=False)
        object.__setattr__(self, "entries", m)

    @classmethod
    def from_matrix(cls, system: SpinSystem, matrix) -> "HermitianOperator":
        m = np.asarray(matrix, dtype=complex)
        return cls(system, 0.5 * (m + m.conj().T))

    @property
    def dim(self) -> int:
        return self.system.dim

    @property
    def is_diagonal(self) -> bool:
        m = self.entries
        return not np.any(m - np.diag(np.diag(m)))

    def diagonal(self) -> np.ndarray:
        return np.diag(self.entries).real.copy()

    def trace(self) -> float:
        return float(np.trace(self.entries).real)

    def _check_same(self, other: "HermitianOperator") -> None:
        if other.system.n_sites != self.system.n_sites:
            raise DomainError("operators act on different spin systems")

    def __add__(self, other: "HermitianOperator") -> "HermitianOperator":
        self._check_same(other)
        return HermitianOperator(self.system, self.entries + other.entries)

    def __sub__(self, other: "HermitianOperator") -> "HermitianOperator":
        self._check_same(other)
        return HermitianOperator(self.system, self.entries - other.entries)

    def __neg__(self) -> "HermitianOperator":
        return HermitianOperator(self.system, -self.entries)

    def __mul__(self, scalar) -> "HermitianOperator":
        if np.iscomplexobj(scalar) and np.imag(scalar) != 0:
            raise DomainError("Hermitian operators only admit real scaling")
        return HermitianOperator(self.system, float(np.real(scalar)) * self.entries)

    __rmul__ = __mul__

    def __truediv__(self, scalar) -> "HermitianOperator":
        return self * (1.0 / float(scalar))

    def allclose(self, other: "HermitianOperator", atol: float = 1e-12) -> bool:
        self._check_same(other)
        return bool(np.allclose(self.entries, other.entries, rtol=0.0, atol=atol))


def identity(system: SpinSystem) -> HermitianOperator:
    return HermitianOperator(system, np.eye(system.dim, dtype=complex))


def zero(system: SpinSystem) -> HermitianOperator:
    return HermitianOperator(system, np.zeros((system.dim, system.dim), dtype=complex))


def pauli_string_matrix(
    system: SpinSystem, factors: Union[Mapping[int, PauliAxis], Iterable[tuple]]
) -> np.ndarray:
    """Dense matrix of a product of Pauli operators on distinct sites.

    Built directly from bit operations: X and Y flip a bit, Z and Y
    contribute a sign depending on the bit, Y also a factor i.
    """
    items = list(factors.items()) if isinstance(factors, Mapping) else list(factors)
    seen = set()
    flip = 0
    b = np.arange(system.dim)
    phase = np.ones(system.dim, dtype=complex)
    for site, axis in items:
        axis = PauliAxis.parse(axis)
        if site in seen:
            raise DomainError(f"site {site} repeated in Pauli string")
        seen.add(site)
        shift = system.bit(site)
        sign = 1 - 2 * ((b >> shift) & 1)
        if axis is PauliAxis.Z:
            phase *= sign
        elif axis is PauliAxis.X:
            flip |= 1 << shift
        else:
            phase *= 1j * sign
            flip |= 1 << shift
    m = np.zeros((system.dim, system.dim), dtype=complex)
    m[b ^ flip, b] = phase
    return m


def pauli_string(system: SpinSystem, factors) -> HermitianOperator:
    return HermitianOperator(system, pauli_string_matrix(system, factors))


def single_site(system: SpinSystem, site: int, axis) -> HermitianOperator:
    """Pauli matrix ``axis`` on ``site`` (1-based), identity elsewhere."""
    return pauli_string(system, [(site, PauliAxis.parse(axis))])


def multiply_chain(ops: Sequence[HermitianOperator]) -> np.ndarray:
    """Ordered matrix product; the result is a plain complex array."""
    if not ops:
        raise DomainError("multiply_chain needs at least one operand")
    n = ops[0].system.n_sites
    for op in ops[1:]:
        if op.system.n_sites != n:
            raise DomainError("dimension mismatch in multiply_chain")
    out = np.array(ops[0].entries)
    for op in ops[1:]:
        out = out @ op.entries
    return out


def symmetrized_product(a: HermitianOperator, b: HermitianOperator) -> HermitianOperator:
    a._check_same(b)
    ab = a.entries @ b.entries
    return HermitianOperator.from_matrix(a.system, 0.5 * (ab + ab.conj().T))


def operator_norm(op: HermitianOperator) -> float:
    """Largest absolute eigenvalue."""
    m = op.entries
    if op.is_diagonal:
        return float(np.max(np.abs(np.diag(m).real)))
    try:
        w = np.linalg.eigvalsh(m)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"eigensolver failed on {m.shape} operator: {exc}") from exc
    return float(np.max(np.abs(w)))
