"""Exact Gibbs traces, thermal averages and Duhamel correlation functions.

Everything is evaluated in the eigenbasis of the exponent ``Theta`` (so that
``Z = Tr exp(Theta)``) after shifting the spectrum by its maximum. The
Duhamel functions reduce to divided differences of ``exp`` at the
eigenvalues:

    (A, B)    = sum_mn     A_mn B_nm      exp[l_m, l_n]       / Z
    (A, B, C) = sum_mnp    A_mn B_np C_pm exp[l_m, l_n, l_p]  / Z

where ``exp[.,.]`` and ``exp[.,.,.]`` are the first and second divided
differences (the integrals of ``exp`` over the unit interval and the unit
simplex, respectively).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import DomainError, NumericError
from .hamiltonians import DisorderedHamiltonian
from .spin_operators import HermitianOperator

# Below this node spread the divided differences switch to series forms.
SERIES_THRESHOLD = 1e-4
IMAG_TOL = 1e-10
GAUSSIAN_ABS_THIRD = 2.0 * math.sqrt(2.0 / math.pi)


def _eigh(m: np.ndarray):
    try:
        return np.linalg.eigh(m)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"eigensolver failed on {m.shape} matrix: {exc}") from exc


def exp_dd1(x, y):
    """First divided difference of exp, ``int_0^1 exp(u x + (1-u) y) du``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    z = 0.5 * (x - y)
    z2 = z * z
    small = np.abs(z) < SERIES_THRESHOLD
    with np.errstate(invalid="ignore", divide="ignore"):
        sinhc = np.where(small, 1.0 + z2 / 6.0 * (1.0 + z2 / 20.0 * (1.0 + z2 / 42.0)), np.sinh(z) / z)
    return np.exp(0.5 * (x + y)) * sinhc


def exp_dd2(x, y, z):
    """Second divided difference of exp: the integral of exp over the 2-simplex.

    Nodes are sorted so the outer difference is taken across the widest gap;
    when all three nodes lie within ``SERIES_THRESHOLD`` the symmetric series
    ``e^mu sum_k h_k(centered nodes) / (k + 2)!`` is used instead.
    """
    nodes = np.sort(np.stack(np.broadcast_arrays(
        np.asarray(x, float), np.asarray(y, float), np.asarray(z, float)), axis=-1), axis=-1)
    lo, mid, hi = nodes[..., 0], nodes[..., 1], nodes[..., 2]
    spread = hi - lo
    small = spread < SERIES_THRESHOLD

    mu = (lo + mid + hi) / 3.0
    c = nodes - mu[..., None]
    p2 = np.sum(c**2, axis=-1)
    p3 = np.sum(c**3, axis=-1)
    # complete homogeneous polynomials of centered nodes (p1 = 0)
    h2 = 0.5 * p2
    h3 = p3 / 3.0
    series = np.exp(mu) * (0.5 + h2 / 24.0 + h3 / 120.0)

    with np.errstate(invalid="ignore", divide="ignore"):
        direct = (exp_dd1(hi, mid) - exp_dd1(mid, lo)) / spread
    return np.where(small, series, direct)


@dataclass(frozen=True, eq=False)
class GibbsState:
    """Spectral data of ``exp(Theta)``; all queries are read-only."""

    hamiltonian_exponent: HermitianOperator
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    log_partition: float

    @classmethod
    def from_exponent(cls, theta: HermitianOperator) -> "GibbsState":
        m = theta.entries
        diag = np.diagonal(m)
        if not np.any(m - np.diag(diag)):
            # already diagonal: skip the eigensolver
            order = np.argsort(diag.real, kind="stable")
            w = np.ascontiguousarray(diag.real[order])
            u = np.eye(len(diag), dtype=complex)[:, order]
            lz = float(logsumexp(w))
            w.setflags(write=False)
            u.setflags(write=False)
            return cls(theta, w, u, lz)
        w, u = _eigh(m)
        lz = float(logsumexp(w))
        recon = (u * w) @ u.conj().T
        scale = max(float(np.max(np.abs(w))), 1.0)
        if np.max(np.abs(recon - theta.entries)) > 1e-9 * scale:
            raise NumericError("eigendecomposition failed reconstruction check")
        w.setflags(write=False)
        u.setflags(write=False)
        return cls(theta, w, u, lz)

    @property
    def system(self):
        return self.hamiltonian_exponent.system

    @property
    def shifted(self) -> np.ndarray:
        """Eigenvalues minus their maximum (all <= 0)."""
        return self.eigenvalues - self.eigenvalues.max()

    @property
    def weights(self) -> np.ndarray:
        """Boltzmann probabilities of the eigenstates."""
        w = np.exp(self.shifted)
        return w / w.sum()

    def _shifted_z(self) -> float:
        return float(np.exp(self.shifted).sum())

    def to_eigenbasis(self, op) -> np.ndarray:
        m = op.entries if isinstance(op, HermitianOperator) else np.asarray(op)
        if m.shape != self.eigenvectors.shape:
            raise DomainError("operator dimension does not match the Gibbs state")
        u = self.eigenvectors
        return u.conj().T @ m @ u

    def kernel2(self) -> np.ndarray:
        lam = self.shifted
        return exp_dd1(lam[:, None], lam[None, :])

    def kernel3(self) -> np.ndarray:
        lam = self.shifted
        return exp_dd2(lam[:, None, None], lam[None, :, None], lam[None, None, :])


def _real(value: complex, what: str) -> float:
    value = complex(value)
    if abs(value.imag) > IMAG_TOL * max(1.0, abs(value.real)):
        raise NumericError(f"{what} has imaginary residue {value.imag:.3e}")
    return value.real


def make_gibbs(ham: DisorderedHamiltonian, beta: float, xi) -> GibbsState:
    beta = float(beta)
    if not math.isfinite(beta):
        raise DomainError("beta must be finite")
    return GibbsState.from_exponent(ham.exponent(beta, xi))


def log_partition_batch(thetas: np.ndarray) -> np.ndarray:
    """``log Tr exp(Theta)`` for a stack of Hermitian exponents."""
    try:
        w = np.linalg.eigvalsh(thetas)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"eigensolver failed: {exc}") from exc
    return logsumexp(w, axis=-1)


def thermal_average(state: GibbsState, a: HermitianOperator) -> float:
    at = state.to_eigenbasis(a)
    return _real(np.dot(np.diag(at), state.weights), "thermal average")


def duhamel_two_point(state: GibbsState, a: HermitianOperator, b: HermitianOperator) -> float:
    at = state.to_eigenbasis(a)
    bt = state.to_eigenbasis(b)
    val = np.sum(at * bt.T * state.kernel2()) / state._shifted_z()
    return _real(val, "Duhamel two-point function")


def duhamel_three_point(
    state: GibbsState, a: HermitianOperator, b: HermitianOperator, c: HermitianOperator,
    complex_value: bool = False,
):
    """Three-point Duhamel function ``(A, B, C)``.

    Its conjugate is ``(C, B, A)``, so it is real when ``A`` and ``C``
    coincide (the case the residue check enforces). For distinct ``A, C``
    the real part ``[(A,B,C) + (C,B,A)] / 2`` is returned unless
    ``complex_value`` is set.
    """
    at, bt, ct = (state.to_eigenbasis(o) for o in (a, b, c))
    val = complex(np.einsum("mn,np,pm,mnp->", at, bt, ct, state.kernel3()) / state._shifted_z())
    if complex_value:
        return val
    if a is c or np.array_equal(at, ct):
        return _real(val, "Duhamel three-point function")
    return val.real


def _term_moments(state: GibbsState, ham: DisorderedHamiltonian):
    """Per-term thermal averages and Duhamel self-correlations, vectorized."""
    if ham.n_terms == 0:
        return np.zeros(0), np.zeros(0)
    stack = ham.disorder_matrices(np.eye(ham.n_terms))
    u = state.eigenvectors
    xt = np.einsum("ai,tab,bj->tij", u.conj(), stack, u)
    w = state.weights
    avg = np.einsum("tii,i->t", xt, w)
    k2 = state.kernel2() / state._shifted_z()
    two = np.einsum("tij,ij->t", np.abs(xt) ** 2, k2)
    if np.max(np.abs(avg.imag), initial=0.0) > IMAG_TOL * max(1.0, np.max(np.abs(avg))):
        raise NumericError("thermal averages of coupling operators are not real")
    return avg.real, two.real


@dataclass(frozen=True)
class PressureDerivativeTerms:
    duhamel_sum: float
    bound_radius: float


def pressure_derivative_terms(
    ham: DisorderedHamiltonian, beta: float, xi, dist=GAUSSIAN_ABS_THIRD
) -> PressureDerivativeTerms:
    """``beta sum_i [(X_i, X_i) - <X_i>^2]`` and the non-Gaussian correction radius.

    ``dist`` is a disorder law (anything with ``abs_third``) or the third
    absolute moment itself.
    """
    beta = float(beta)
    abs_third = float(getattr(dist, "abs_third", dist))
    radius = 9.0 * beta**2 * abs_third * float(np.sum(ham.term_norms**3))
    if beta == 0.0 or ham.n_terms == 0:
        return PressureDerivativeTerms(0.0, radius)
    state = make_gibbs(ham, beta, xi)
    avg, two = _term_moments(state, ham)
    return PressureDerivativeTerms(beta * float(np.sum(two - avg**2)), radius)


@dataclass(frozen=True)
class CouplingResponse:
    """Thermal average of one coupling operator and its first two derivatives."""

    value: float
    first: float
    second: float
    two_point: float
    three_point: float


def coupling_response(ham: DisorderedHamiltonian, beta: float, xi, index) -> CouplingResponse:
    """``F(z) = <X_i>`` at the current coupling, with ``F'`` and ``F''`` from Duhamel functions."""
    beta = float(beta)
    state = make_gibbs(ham, beta, xi)
    x = ham.terms[ham.position(index)].operator
    avg = thermal_average(state, x)
    two = duhamel_two_point(state, x, x)
    three = duhamel_three_point(state, x, x, x)
    first = beta * (two - avg**2)
    second = beta**2 * (2.0 * three - 3.0 * two * avg + 2.0 * avg**3)
    return CouplingResponse(avg, first, second, two, three)
