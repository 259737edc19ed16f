"""Lie-Trotter products and trace inequalities as executable checks."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DomainError
from .gibbs import _eigh, log_partition_batch
from .hamiltonians import DisorderedHamiltonian
from .spin_operators import HermitianOperator

MAX_STEPS = 1 << 20
RELATIVE_SLACK = 1e-10


@dataclass(frozen=True)
class TrotterPlan:
    steps: int
    left: HermitianOperator
    right: HermitianOperator

    def __post_init__(self):
        if int(self.steps) != self.steps or not 1 <= self.steps <= MAX_STEPS:
            raise DomainError(f"steps must be an integer in 1..{MAX_STEPS}")
        if self.left.system.n_sites != self.right.system.n_sites:
            raise DomainError("Trotter factors act on different systems")


def hermitian_expm(m: np.ndarray, t: float = 1.0) -> np.ndarray:
    """``exp(t M)`` for Hermitian ``M`` through its eigendecomposition."""
    w, u = _eigh(m)
    return (u * np.exp(t * w)) @ u.conj().T


def trotter_product(plan: TrotterPlan) -> np.ndarray:
    """``(exp(A/k) exp(B/k))^k`` by binary powering of the single step."""
    k = plan.steps
    step = hermitian_expm(plan.left.entries, 1.0 / k) @ hermitian_expm(plan.right.entries, 1.0 / k)
    return np.linalg.matrix_power(step, k)


def exact_exponential(a: HermitianOperator, b: HermitianOperator) -> np.ndarray:
    return hermitian_expm(a.entries + b.entries)


def trotter_error_curve(a: HermitianOperator, b: HermitianOperator, k_list: Sequence[int]):
    """Spectral-norm error of the k-step product for each k, plus the log-log slope.

    Returns ``(rows, slope)`` with rows ``[(k, error), ...]``; ``slope`` is
    ``None`` when fewer than two strictly positive errors are available.
    """
    ks = [int(k) for k in k_list]
    if any(k2 <= k1 for k1, k2 in zip(ks, ks[1:])):
        raise DomainError("k_list must be strictly ascending")
    target = exact_exponential(a, b)
    rows = []
    for k in ks:
        err = np.linalg.norm(trotter_product(TrotterPlan(k, a, b)) - target, 2)
        rows.append((k, float(err)))
    pos = [(k, e) for k, e in rows if e > 0]
    slope = None
    if len(pos) >= 2:
        x = np.log([k for k, _ in pos])
        y = np.log([e for _, e in pos])
        slope = float(np.polyfit(x, y, 1)[0])
    return rows, slope


@dataclass(frozen=True)
class InequalityCheck:
    lhs: float
    rhs: float
    holds: bool


def check_trace_product_bound(
    x: HermitianOperator, h: HermitianOperator, a: Sequence[float]
) -> InequalityCheck:
    """``|Tr(X e^{a_1 H} ... X e^{a_n H})| <= ||X||^n Tr e^H`` for a positive partition."""
    a = np.asarray(a, dtype=float)
    if a.ndim != 1 or a.size < 1 or np.any(a <= 0):
        raise DomainError("partition weights must be a nonempty positive vector")
    if abs(a.sum() - 1.0) > 1e-12:
        raise DomainError(f"partition weights sum to {a.sum()!r}, not 1")
    w, u = _eigh(h.entries)
    shift = w.max()
    xt = u.conj().T @ x.entries @ u
    prod = np.eye(len(w), dtype=complex)
    for aj in a:
        prod = prod @ (xt * np.exp(aj * (w - shift))[None, :])
    # both sides carry the common factor e^{shift}
    lhs = abs(np.trace(prod)) * math.exp(shift)
    xnorm = float(np.max(np.abs(np.linalg.eigvalsh(x.entries))))
    rhs = xnorm ** len(a) * float(np.exp(w - shift).sum()) * math.exp(shift)
    return InequalityCheck(lhs, rhs, bool(lhs <= rhs * (1 + RELATIVE_SLACK)))


def check_holder_trace(b_list: Sequence[np.ndarray]) -> InequalityCheck:
    """``|Tr prod_j B_j| <= prod_j Tr((B_j B_j^*)^k)^{1/2k}`` for 2k matrices."""
    mats = [np.asarray(b, dtype=complex) for b in b_list]
    if not mats or len(mats) % 2:
        raise DomainError("need an even, nonzero number of matrices")
    shape = mats[0].shape
    if len(shape) != 2 or shape[0] != shape[1] or any(m.shape != shape for m in mats):
        raise DomainError("all matrices must be square with equal dimension")
    k = len(mats) // 2
    prod = mats[0]
    for m in mats[1:]:
        prod = prod @ m
    lhs = float(abs(np.trace(prod)))
    rhs = 1.0
    for m in mats:
        s = np.clip(np.linalg.eigvalsh(m @ m.conj().T), 0.0, None)
        rhs *= float(np.sum(s**k)) ** (1.0 / (2 * k))
    return InequalityCheck(lhs, rhs, bool(lhs <= rhs * (1 + RELATIVE_SLACK)))


@dataclass(frozen=True)
class RatioCheck:
    ratio: float
    bound: float
    holds: bool


def partition_function_ratio_bound(
    ham: DisorderedHamiltonian, beta: float, xi, index
) -> RatioCheck:
    """``Z / Z_i <= exp(beta |xi_i| ||X_i||)`` where ``Z_i`` drops coupling ``i``."""
    vec = ham.coupling_vector(xi)
    pos = ham.position(index)
    removed = vec.copy()
    removed[pos] = 0.0
    lz = log_partition_batch(ham.exponent_batch(beta, np.stack([vec, removed])))
    log_ratio = float(lz[0] - lz[1])
    log_bound = abs(beta) * abs(vec[pos]) * float(ham.term_norms[pos])
    holds = log_ratio <= log_bound + RELATIVE_SLACK * max(1.0, abs(log_bound))
    return RatioCheck(math.exp(log_ratio), math.exp(log_bound), bool(holds))


def random_hermitian(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Standard normal real and imaginary parts, then symmetrized."""
    m = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    return 0.5 * (m + m.conj().T)


def trotter_trace_is_positive(a: HermitianOperator, b: HermitianOperator, k: int) -> bool:
    """``Tr(e^{A/k} e^{B/k})^k`` is real and positive."""
    t = np.trace(trotter_product(TrotterPlan(k, a, b)))
    return bool(t.real > 0 and abs(t.imag) <= 1e-10 * abs(t.real))

