"""Model builders: a deterministic part plus an indexed family of couplings.

A :class:`DisorderedHamiltonian` stores the operator ``G`` that appears in the
Gibbs weight as ``exp(beta * G)``. For the physical models written as
``-H = ...`` this means ``G = -H`` (``sign_convention="minus"``); for the
abstract family ``H(xi) = sum xi_I X_I`` with ``Z = Tr exp(beta H)`` it means
``G = H`` (``sign_convention="plus"``). Either way the exponent is

    Theta(beta, xi) = beta * sum_I xi_I X_I + c(beta) * H0

with ``c(beta) = beta`` when ``field_scaling == "beta"`` (the field is a
physical energy, as in the transverse S-K model) and ``c(beta) = 1`` when
``field_scaling == "fixed"`` (the ``(1/beta) H0`` convention).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, Sequence, Union

import numpy as np

from .errors import CapacityError, DomainError
from .spin_operators import (
    HermitianOperator,
    PauliAxis,
    SpinSystem,
    operator_norm,
    pauli_string_matrix,
    single_site,
    zero,
)

MAX_TERMS = 10**6
# Dense per-term stacks are kept only below this many complex entries.
STACK_ENTRY_LIMIT = 1 << 23

SIGN_CONVENTIONS = ("minus", "plus")
FIELD_SCALINGS = ("beta", "fixed")


def _reduce_factors(factors) -> tuple:
    """Cancel repeated same-axis Pauli factors (S^2 = 1) and sort by site."""
    counts: dict = {}
    for site, axis in factors:
        axis = PauliAxis.parse(axis)
        prev = counts.get(site)
        if prev is None:
            counts[site] = [axis, 1]
        elif prev[0] is axis:
            prev[1] += 1
        else:
            raise DomainError(f"mixed Pauli axes on site {site} are not Hermitian products")
    return tuple(sorted((s, a) for s, (a, n) in counts.items() if n % 2))


@dataclass(frozen=True, eq=False)
class InteractionTerm:
    """One coupling operator ``X_I``: a real combination of Pauli strings."""

    index: tuple
    system: SpinSystem
    paulis: tuple  # ((coefficient, ((site, axis), ...)), ...)

    def __post_init__(self):
        reduced = tuple((float(c), _reduce_factors(f)) for c, f in self.paulis)
        object.__setattr__(self, "paulis", reduced)

    @property
    def support(self) -> tuple:
        return tuple(sorted({s for _, f in self.paulis for s, _ in f}))

    @property
    def is_diagonal(self) -> bool:
        return all(a is PauliAxis.Z for _, f in self.paulis for _, a in f)

    def _matrix_on(self, system: SpinSystem, relabel=None) -> np.ndarray:
        m = np.zeros((system.dim, system.dim), dtype=complex)
        for c, f in self.paulis:
            if relabel is not None:
                f = [(relabel[s], a) for s, a in f]
            m += c * pauli_string_matrix(system, f)
        return m

    @property
    def operator(self) -> HermitianOperator:
        return HermitianOperator(self.system, self._matrix_on(self.system))

    def diagonal(self) -> np.ndarray:
        """Diagonal of a z-only term, computed without forming the matrix."""
        if not self.is_diagonal:
            raise DomainError(f"term {self.index} is not diagonal in the z basis")
        spins = self.system.configurations().astype(float)
        out = np.zeros(self.system.dim)
        for c, f in self.paulis:
            prod = np.ones(self.system.dim)
            for site, _ in f:
                prod = prod * spins[:, site - 1]
            out += c * prod
        return out

    def norm(self) -> float:
        """Operator norm, evaluated on the support only (||A (x) 1|| = ||A||)."""
        support = self.support
        if not support:
            return abs(sum(c for c, _ in self.paulis))
        local = SpinSystem(len(support))
        relabel = {s: k + 1 for k, s in enumerate(support)}
        return operator_norm(HermitianOperator(local, self._matrix_on(local, relabel)))


@dataclass(frozen=True)
class PSpinSpec:
    """Coefficients ``a_r`` (r = 1..r_max) of a mixed p-spin disorder."""

    coefficients: tuple
    require_even: bool = True

    def __post_init__(self):
        coeffs = tuple(float(a) for a in self.coefficients)
        object.__setattr__(self, "coefficients", coeffs)
        if not 1 <= len(coeffs) <= 3:
            raise DomainError("p-spin coefficients must cover 1 <= r_max <= 3")
        if self.require_even and any(a != 0 for r, a in enumerate(coeffs, 1) if r % 2):
            raise DomainError("odd-r coefficients must vanish for an even mixture")
        q = np.arange(-1000, 1001) / 1000.0
        f = self.mixture(q)
        if np.min(f[2:] - 2 * f[1:-1] + f[:-2]) < -1e-12:
            raise DomainError("q -> sum a_r^2 q^r is not convex on [-1, 1]")

    def mixture(self, q):
        q = np.asarray(q, dtype=float)
        return sum(a * a * q**r for r, a in enumerate(self.coefficients, 1))


@dataclass(frozen=True, eq=False)
class DisorderedHamiltonian:
    system: SpinSystem
    deterministic: HermitianOperator
    terms: tuple
    sign_convention: str = "minus"
    field_scaling: str = "beta"
    family: str = "custom"
    params: Mapping = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        if self.sign_convention not in SIGN_CONVENTIONS:
            raise DomainError(f"sign_convention must be one of {SIGN_CONVENTIONS}")
        if self.field_scaling not in FIELD_SCALINGS:
            raise DomainError(f"field_scaling must be one of {FIELD_SCALINGS}")
        if self.deterministic.system.n_sites != self.system.n_sites:
            raise DomainError("deterministic part lives on a different system")
        if len(self.terms) > MAX_TERMS:
            raise CapacityError(f"{len(self.terms)} terms exceed the cap of {MAX_TERMS}")
        seen = set()
        for t in self.terms:
            if t.system.n_sites != self.system.n_sites:
                raise DomainError(f"term {t.index} lives on a different system")
            if t.index in seen:
                raise DomainError(f"duplicate coupling index {t.index}")
            seen.add(t.index)

    @property
    def n_terms(self) -> int:
        return len(self.terms)

    @property
    def indices(self) -> list:
        return [t.index for t in self.terms]

    @cached_property
    def _position(self) -> dict:
        return {t.index: k for k, t in enumerate(self.terms)}

    def position(self, index) -> int:
        try:
            return self._position[index]
        except KeyError:
            raise DomainError(f"unknown coupling index {index!r}") from None

    @cached_property
    def term_norms(self) -> np.ndarray:
        return np.array([t.norm() for t in self.terms], dtype=float)

    @cached_property
    def _diag_mask(self) -> np.ndarray:
        return np.array([t.is_diagonal for t in self.terms], dtype=bool)

    @cached_property
    def _diag_stack(self) -> np.ndarray:
        rows = [t.diagonal() for t in self.terms if t.is_diagonal]
        if not rows:
            return np.zeros((0, self.system.dim))
        return np.array(rows)

    @cached_property
    def _offdiag_stack(self):
        terms = [t for t in self.terms if not t.is_diagonal]
        d = self.system.dim
        if not terms or len(terms) * d * d > STACK_ENTRY_LIMIT:
            return None
        return np.array([t._matrix_on(self.system) for t in terms]).reshape(len(terms), d * d)

    @property
    def is_classical_disorder(self) -> bool:
        """True when every coupling operator is diagonal in the z basis."""
        return bool(np.all(self._diag_mask))

    def field_factor(self, beta: float) -> float:
        return float(beta) if self.field_scaling == "beta" else 1.0

    def coupling_vector(self, xi) -> np.ndarray:
        """Coupling values ordered like ``terms``; accepts a mapping or a sequence."""
        if isinstance(xi, Mapping):
            out = np.empty(self.n_terms)
            for k, t in enumerate(self.terms):
                try:
                    out[k] = float(xi[t.index])
                except KeyError:
                    raise DomainError(f"missing coupling for index {t.index!r}") from None
            return out
        arr = np.asarray(xi, dtype=float)
        if arr.shape != (self.n_terms,):
            raise DomainError(f"expected {self.n_terms} couplings, got shape {arr.shape}")
        return arr

    def coupling_map(self, xi_vector) -> dict:
        return {t.index: float(v) for t, v in zip(self.terms, xi_vector)}

    def disorder_matrices(self, xi_batch: np.ndarray) -> np.ndarray:
        """``sum_I xi_I X_I`` for a batch of coupling rows; shape (R, dim, dim)."""
        xi_batch = np.atleast_2d(np.asarray(xi_batch, dtype=float))
        r, d = xi_batch.shape[0], self.system.dim
        out = np.zeros((r, d, d), dtype=complex)
        if self.n_terms == 0:
            return out
        mask = self._diag_mask
        if mask.any():
            diag = xi_batch[:, mask] @ self._diag_stack
            idx = np.arange(d)
            out[:, idx, idx] = diag
        if not mask.all():
            xo = xi_batch[:, ~mask]
            stack = self._offdiag_stack
            if stack is not None:
                out += (xo @ stack).reshape(r, d, d)
            else:
                offterms = [t for t in self.terms if not t.is_diagonal]
                for k, t in enumerate(offterms):
                    m = t._matrix_on(self.system)
                    out += xo[:, k, None, None] * m[None]
        return out

    def exponent_batch(self, beta: float, xi_batch: np.ndarray) -> np.ndarray:
        if float(beta) == 0.0:
            d = self.system.dim
            theta = np.zeros((np.atleast_2d(xi_batch).shape[0], d, d), dtype=complex)
        else:
            theta = float(beta) * self.disorder_matrices(xi_batch)
        c = self.field_factor(beta)
        if c != 0.0:
            theta += c * self.deterministic.entries[None]
        return theta

    def exponent(self, beta: float, xi) -> HermitianOperator:
        """The operator ``Theta`` with Z = Tr exp(Theta)."""
        theta = self.exponent_batch(beta, self.coupling_vector(xi)[None])[0]
        return HermitianOperator.from_matrix(self.system, theta)

    def with_deterministic(
        self, op: HermitianOperator, field_scaling=None, params=None
    ) -> "DisorderedHamiltonian":
        return DisorderedHamiltonian(
            self.system,
            op,
            self.terms,
            self.sign_convention,
            field_scaling or self.field_scaling,
            self.family,
            dict(self.params if params is None else params),
        )

    def without_terms(self) -> "DisorderedHamiltonian":
        return DisorderedHamiltonian(
            self.system, self.deterministic, (), self.sign_convention,
            self.field_scaling, self.family, dict(self.params),
        )


def transverse_field(system: SpinSystem, lam: float) -> HermitianOperator:
    m = sum((pauli_string_matrix(system, [(j, PauliAxis.X)]) for j in range(1, system.n_sites + 1)),
            np.zeros((system.dim, system.dim), dtype=complex))
    return HermitianOperator(system, float(lam) * m)


def _pair_indices(n: int):
    return [(i, j) for i in range(1, n + 1) for j in range(1, n + 1)]


def build_transverse_sk(
    system: SpinSystem, lam: float, field_scaling: str = "beta"
) -> DisorderedHamiltonian:
    """Transverse S-K model: ``-H = 1/(2 sqrt N) sum_ij J_ij Z_i Z_j + lam sum_j X_j``.

    All N^2 ordered pairs (i, j) are independent couplings, diagonal ones
    included; they contribute ``J_ii / (2 sqrt N)`` times the identity.
    """
    lam = float(lam)
    if lam < 0:
        raise DomainError("transverse field strength must be nonnegative")
    scale = 1.0 / (2.0 * math.sqrt(system.n_sites))
    terms = [
        InteractionTerm((i, j), system, ((scale, ((i, "z"), (j, "z"))),))
        for i, j in _pair_indices(system.n_sites)
    ]
    return DisorderedHamiltonian(
        system, transverse_field(system, lam), terms, "minus", field_scaling,
        "transverse_sk", {"lambda": lam},
    )


def build_heisenberg(system: SpinSystem, alpha: float, gamma: float) -> DisorderedHamiltonian:
    """Heisenberg glass: one coupling per pair for ``ZZ + alpha XX + gamma YY``."""
    alpha, gamma = float(alpha), float(gamma)
    if not (math.isfinite(alpha) and math.isfinite(gamma)):
        raise DomainError("alpha and gamma must be finite")
    scale = 1.0 / (2.0 * math.sqrt(system.n_sites))
    terms = []
    for i, j in _pair_indices(system.n_sites):
        parts = [(scale, ((i, "z"), (j, "z")))]
        if alpha:
            parts.append((scale * alpha, ((i, "x"), (j, "x"))))
        if gamma:
            parts.append((scale * gamma, ((i, "y"), (j, "y"))))
        terms.append(InteractionTerm((i, j), system, tuple(parts)))
    return DisorderedHamiltonian(
        system, zero(system), terms, "minus", "beta", "heisenberg",
        {"alpha": alpha, "gamma": gamma},
    )


def build_heisenberg_xyz(system: SpinSystem) -> DisorderedHamiltonian:
    """Independent couplings per axis: index ``(axis, i, j)``."""
    scale = 1.0 / (2.0 * math.sqrt(system.n_sites))
    terms = [
        InteractionTerm((ax, i, j), system, ((scale, ((i, ax), (j, ax))),))
        for ax in ("x", "y", "z")
        for i, j in _pair_indices(system.n_sites)
    ]
    return DisorderedHamiltonian(system, zero(system), terms, "minus", "beta", "heisenberg_xyz", {})


def build_pspin(system: SpinSystem, spec: PSpinSpec) -> DisorderedHamiltonian:
    """Mixed p-spin z-disorder ``N sum_r a_r N^{-r/2} sum g_{i1..ir} Z_i1...Z_ir``."""
    n = system.n_sites
    count = sum(n**r for r, a in enumerate(spec.coefficients, 1) if a != 0)
    if count == 0:
        raise DomainError("all p-spin coefficients vanish; the model has no couplings")
    if count > MAX_TERMS:
        raise CapacityError(f"p-spin model needs {count} terms, cap is {MAX_TERMS}")
    terms = []
    for r, a in enumerate(spec.coefficients, 1):
        if a == 0:
            continue
        scale = n * a / n ** (r / 2.0)
        for tup in np.ndindex(*([n] * r)):
            sites = tuple(s + 1 for s in tup)
            terms.append(
                InteractionTerm((r,) + sites, system, ((scale, tuple((s, "z") for s in sites)),))
            )
    return DisorderedHamiltonian(
        system, zero(system), terms, "minus", "beta", "pspin",
        {"coefficients": list(spec.coefficients)},
    )


def add_transverse_field(ham: DisorderedHamiltonian, lam: float) -> DisorderedHamiltonian:
    params = dict(ham.params)
    params["lambda"] = params.get("lambda", 0.0) + float(lam)
    return ham.with_deterministic(
        ham.deterministic + transverse_field(ham.system, lam), params=params
    )


def deterministic_only(system: SpinSystem, lam: float) -> DisorderedHamiltonian:
    """Transverse field with no couplings at all."""
    return DisorderedHamiltonian(
        system, transverse_field(system, lam), (), "minus", "beta", "field_only",
        {"lambda": float(lam)},
    )


def assemble(ham: DisorderedHamiltonian, xi) -> HermitianOperator:
    """``H0 + sum_I xi_I X_I`` with ``xi`` a coupling map or ordered vector."""
    vec = ham.coupling_vector(xi)
    m = ham.disorder_matrices(vec[None])[0] + ham.deterministic.entries
    return HermitianOperator.from_matrix(ham.system, m)


def norm_power_sum(ham: DisorderedHamiltonian, p: float) -> float:
    if p < 1:
        raise DomainError("p must be at least 1")
    return float(np.sum(ham.term_norms**p))


MODEL_FAMILIES = ("transverse_sk", "heisenberg", "heisenberg_xyz", "pspin", "field_only")


def build_model(family: str, n_sites: int, **params) -> DisorderedHamiltonian:
    """Construct a named model family from plain parameters (config front door)."""
    system = SpinSystem(int(n_sites))
    lam = float(params.get("lam", params.get("lambda", 0.0)) or 0.0)
    if family == "transverse_sk":
        return build_transverse_sk(system, lam, params.get("field_scaling", "beta"))
    if family == "heisenberg":
        return build_heisenberg(system, params.get("alpha", 0.0), params.get("gamma", 0.0))
    if family == "heisenberg_xyz":
        return build_heisenberg_xyz(system)
    if family == "pspin":
        coeffs = params.get("coefficients") or params.get("pspin")
        if coeffs is None:
            raise DomainError("p-spin model needs coefficients")
        ham = build_pspin(system, PSpinSpec(tuple(coeffs)))
        return add_transverse_field(ham, lam) if lam else ham
    if family == "field_only":
        return deterministic_only(system, lam)
    raise DomainError(f"unknown model family {family!r}; choose from {MODEL_FAMILIES}")
