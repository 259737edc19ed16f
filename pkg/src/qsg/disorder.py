"""Random environments and quenched Monte Carlo over disorder replicas.

Every estimator here is a pure function of its inputs and a master seed:
replica ``r`` of stream ``s`` always sees the couplings drawn from
``SeedPolicy(master_seed).generator(r, s)``. Inequality flags use a
3-standard-error slack on Monte Carlo quantities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import partial
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DomainError, NumericError
from .gibbs import _term_moments, log_partition_batch, make_gibbs
from .hamiltonians import DisorderedHamiltonian, norm_power_sum
from .parallel import block_size_for, replica_map

SIGMA_SLACK = 3.0
GH_ORDER = 128

STREAM_XI = 1
STREAM_GAUSS = 2


@dataclass(frozen=True)
class DisorderDistribution:
    """A mean-zero, unit-variance law for the couplings."""

    kind: str
    support: tuple = ()
    weights: tuple = ()

    KINDS = ("gaussian", "rademacher", "uniform", "discrete")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise DomainError(f"unknown distribution kind {self.kind!r}")
        if self.kind == "discrete":
            x = np.asarray(self.support, float)
            p = np.asarray(self.weights, float)
            if x.ndim != 1 or x.shape != p.shape or x.size < 2:
                raise DomainError("discrete law needs matching support and weights")
            if np.any(p <= 0) or abs(p.sum() - 1) > 1e-12:
                raise DomainError("discrete weights must be positive and sum to 1")
            mean = float(np.dot(p, x))
            var = float(np.dot(p, x * x))
            if abs(mean) > 1e-12 or abs(var - 1) > 1e-12:
                raise DomainError(f"discrete law has mean {mean:.3g}, variance {var:.3g}")

    @classmethod
    def gaussian(cls):
        return cls("gaussian")

    @classmethod
    def rademacher(cls):
        return cls("rademacher")

    @classmethod
    def uniform_scaled(cls):
        return cls("uniform")

    @classmethod
    def discrete(cls, support, weights):
        return cls("discrete", tuple(float(v) for v in support), tuple(float(w) for w in weights))

    @classmethod
    def by_name(cls, name: str) -> "DisorderDistribution":
        key = name.strip().lower().replace("-", "_")
        aliases = {
            "gaussian": "gaussian", "normal": "gaussian", "g": "gaussian",
            "rademacher": "rademacher", "sign": "rademacher",
            "uniform": "uniform", "uniform_scaled": "uniform", "uniformscaled": "uniform",
        }
        if key not in aliases:
            raise DomainError(f"unknown distribution {name!r}")
        return cls(aliases[key])

    @property
    def name(self) -> str:
        return {"uniform": "uniform_scaled"}.get(self.kind, self.kind)

    @property
    def is_gaussian(self) -> bool:
        return self.kind == "gaussian"

    def _nodes(self):
        """Quadrature nodes and weights representing the law (exact when discrete)."""
        if self.kind == "rademacher":
            return np.array([-1.0, 1.0]), np.array([0.5, 0.5])
        if self.kind == "discrete":
            return np.asarray(self.support, float), np.asarray(self.weights, float)
        if self.kind == "gaussian":
            x, w = np.polynomial.hermite.hermgauss(GH_ORDER)
            return math.sqrt(2.0) * x, w / math.sqrt(math.pi)
        x, w = np.polynomial.legendre.leggauss(GH_ORDER)
        return math.sqrt(3.0) * x, 0.5 * w

    def expectation(self, f: Callable) -> float:
        x, w = self._nodes()
        vals = np.asarray([f(v) for v in x], dtype=float)
        if not np.all(np.isfinite(vals)):
            raise DomainError("function is not finite on the support")
        return float(np.dot(w, vals))

    @property
    def mean(self) -> float:
        return 0.0 if self.kind != "discrete" else float(np.dot(self.weights, self.support))

    @property
    def variance(self) -> float:
        if self.kind != "discrete":
            return 1.0
        x = np.asarray(self.support)
        return float(np.dot(self.weights, x * x))

    @property
    def abs_third(self) -> float:
        if self.kind == "gaussian":
            return 2.0 * math.sqrt(2.0 / math.pi)
        if self.kind == "rademacher":
            return 1.0
        if self.kind == "uniform":
            return 3.0 * math.sqrt(3.0) / 4.0
        return float(np.dot(self.weights, np.abs(self.support) ** 3))

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        if self.kind == "gaussian":
            return rng.standard_normal(size)
        if self.kind == "rademacher":
            return 2.0 * rng.integers(0, 2, size=size) - 1.0
        if self.kind == "uniform":
            s = math.sqrt(3.0)
            return rng.uniform(-s, s, size)
        return rng.choice(np.asarray(self.support), size=size, p=np.asarray(self.weights))


GAUSSIAN = DisorderDistribution.gaussian()


@dataclass(frozen=True)
class SeedPolicy:
    """Counter-based streams: (master_seed, stream tag, index) -> Philox generator."""

    master_seed: int

    def __post_init__(self):
        if not 0 <= int(self.master_seed) < 2**64:
            raise DomainError("master_seed must be an unsigned 64-bit integer")

    def generator(self, index: int, stream: int = 0) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.master_seed), spawn_key=(int(stream), int(index)))
        return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class QuenchedEstimate:
    mean: float
    std_error: float
    n_samples: int
    values: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    @classmethod
    def from_values(cls, values, keep: bool = True) -> "QuenchedEstimate":
        v = np.asarray(values, dtype=float)
        if v.size < 2:
            raise DomainError("need at least two samples for a standard error")
        if not np.all(np.isfinite(v)):
            bad = int(np.flatnonzero(~np.isfinite(v))[0])
            raise NumericError(f"non-finite sample at replica {bad}")
        if np.ptp(v) == 0:
            # identical replicas: report the common value exactly
            return cls(float(v[0]), 0.0, int(v.size), v if keep else None)
        return cls(float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size)), int(v.size),
                   v if keep else None)


def sample_environment(dist: DisorderDistribution, indices: Sequence, seed_stream) -> dict:
    """One i.i.d. coupling per index; ``seed_stream`` is a Generator or an int seed."""
    indices = list(indices)
    if not indices:
        raise DomainError("no coupling indices to sample")
    rng = seed_stream if isinstance(seed_stream, np.random.Generator) else \
        SeedPolicy(int(seed_stream)).generator(0)
    return dict(zip(indices, dist.sample(rng, len(indices)).tolist()))


def _couplings(ham, dist, policy, stream, start, stop) -> np.ndarray:
    n = ham.n_terms
    return np.array([dist.sample(policy.generator(r, stream), n) for r in range(start, stop)]).reshape(
        stop - start, n
    )


def _log_z_block(ham, beta, dist, seed, stream, start, stop):
    xi = _couplings(ham, dist, SeedPolicy(seed), stream, start, stop)
    try:
        return log_partition_batch(ham.exponent_batch(beta, xi))
    except NumericError as exc:
        raise NumericError(f"{exc} (replicas {start}..{stop - 1}, seed {seed})") from exc


def log_partition_samples(ham, beta, dist, n_samples, seed, stream=STREAM_XI, workers=None):
    """Per-replica ``log Z`` values in replica order."""
    fn = partial(_log_z_block, ham, float(beta), dist, int(seed), int(stream))
    return replica_map(fn, int(n_samples), block_size_for(ham.system.dim), workers)


def quenched_pressure(
    ham: DisorderedHamiltonian, beta: float, dist: DisorderDistribution, n_samples: int,
    seed: int, workers=None, keep_values: bool = True,
) -> QuenchedEstimate:
    """Monte Carlo estimate of ``E log Z`` over disorder replicas."""
    if n_samples < 2:
        raise DomainError("n_samples must be at least 2")
    vals = log_partition_samples(ham, beta, dist, n_samples, seed, STREAM_XI, workers)
    return QuenchedEstimate.from_values(vals, keep_values)


@dataclass(frozen=True)
class UniversalityGap:
    gap_per_site: float
    bound_per_site: float
    stderr_per_site: float
    gap_le_bound: bool
    alpha_xi: QuenchedEstimate
    alpha_gauss: QuenchedEstimate


def universality_bound(ham: DisorderedHamiltonian, beta: float, dist: DisorderDistribution) -> float:
    """``9 |beta|^3 E|xi|^3 sum ||X_I||^3`` (total, not per site)."""
    return 9.0 * abs(beta) ** 3 * dist.abs_third * norm_power_sum(ham, 3)


def universality_gap(ham, beta, dist, n_samples, seed, workers=None) -> UniversalityGap:
    """Compare the quenched pressure under ``dist`` with the Gaussian reference.

    The two environments are sampled independently (separate streams).
    """
    if dist.is_gaussian:
        raise DomainError("universality gap compares a non-Gaussian law against the Gaussian one")
    n = ham.system.n_sites
    a_xi = QuenchedEstimate.from_values(
        log_partition_samples(ham, beta, dist, n_samples, seed, STREAM_XI, workers))
    a_g = QuenchedEstimate.from_values(
        log_partition_samples(ham, beta, GAUSSIAN, n_samples, seed, STREAM_GAUSS, workers))
    gap = abs(a_xi.mean - a_g.mean) / n
    se = math.hypot(a_xi.std_error, a_g.std_error) / n
    bound = universality_bound(ham, beta, dist) / n
    return UniversalityGap(gap, bound, se, bool(gap <= bound + SIGMA_SLACK * se), a_xi, a_g)


@dataclass(frozen=True)
class ThirdMoment:
    third_moment: float
    reference_scale: float
    ratio: Optional[float]
    n_samples: int


def fluctuation_third_moment(ham, beta, dist, n_samples, seed, workers=None) -> ThirdMoment:
    """``E|log Z - alpha|^3 / N^3`` against ``E|xi|^3 beta^3 sqrt|J| sum||X||^3 / N^3``.

    The constant relating the two is unspecified, so only the ratio is reported.
    """
    if n_samples < 100:
        raise DomainError("fluctuation_third_moment needs at least 100 samples")
    n = ham.system.n_sites
    vals = log_partition_samples(ham, beta, dist, n_samples, seed, STREAM_XI, workers)
    center = vals[0] if np.ptp(vals) == 0 else vals.mean()
    third = float(np.mean(np.abs(vals - center) ** 3)) / n**3
    ref = dist.abs_third * abs(beta) ** 3 * math.sqrt(ham.n_terms) * norm_power_sum(ham, 3) / n**3
    ratio = third / ref if ref > 0 else None
    return ThirdMoment(third, ref, ratio, int(n_samples))


@dataclass(frozen=True)
class TailRow:
    u: float
    empirical: float
    stderr: float
    bound: float
    holds: bool


def _tail_table(deviations: np.ndarray, u_grid, bound_fn) -> list:
    n = deviations.size
    rows = []
    for u in u_grid:
        u = float(u)
        if u < 0:
            raise DomainError("tail thresholds must be nonnegative")
        p = float(np.count_nonzero(deviations >= u)) / n
        se = math.sqrt(p * (1.0 - p) / n)
        b = bound_fn(u)
        rows.append(TailRow(u, p, se, b, bool(p <= b + SIGMA_SLACK * se)))
    return rows


def gaussian_tail_bound(u: float, variance_proxy: float) -> float:
    """``2 exp(-u^2 / v)`` with the conventions 2 at u = 0 and 0 when v = 0 < u."""
    if u == 0:
        return 2.0
    if variance_proxy <= 0:
        return 0.0
    return 2.0 * math.exp(-u * u / variance_proxy)


def concentration_tail(ham, beta, n_samples, u_grid, seed, workers=None) -> list:
    """Empirical ``P(|log Z - alpha| >= u)`` against ``2 exp(-u^2 / (beta^2 sum ||X_I||^2))``.

    Gaussian disorder only; ``alpha`` is the sample mean of the same replicas.
    """
    vals = log_partition_samples(ham, beta, GAUSSIAN, n_samples, seed, STREAM_XI, workers)
    proxy = float(beta) ** 2 * norm_power_sum(ham, 2)
    dev = np.abs(vals - vals.mean())
    return _tail_table(dev, u_grid, lambda u: gaussian_tail_bound(u, proxy))


@dataclass(frozen=True)
class IBPCheck:
    residual: float
    bound: float
    holds: bool


def ibp_residual(dist: DisorderDistribution, f: Callable, f_prime: Callable,
                 f_second_sup: float) -> IBPCheck:
    """``|E[xi F(xi)] - E[xi^2] E[F'(xi)]|`` against ``(3/2) sup|F''| E|xi|^3``.

    Discrete laws are summed exactly; the Gaussian uses 128-point
    Gauss-Hermite and the scaled uniform 128-point Gauss-Legendre nodes.
    """
    if not f_second_sup >= 0:
        raise DomainError("sup |F''| must be a nonnegative number")
    e_xf = dist.expectation(lambda x: x * f(x))
    e_x2 = dist.expectation(lambda x: x * x)
    e_fp = dist.expectation(f_prime)
    residual = abs(e_xf - e_x2 * e_fp)
    bound = 1.5 * float(f_second_sup) * dist.abs_third
    # rounding floor for exact evaluations with a zero bound
    return IBPCheck(residual, bound, bool(residual <= bound + 1e-12))


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=float)))


# (name, F, F', sup |F''|) with the sup computed in closed form
IBP_FUNCTIONS = (
    ("sin", np.sin, np.cos, 1.0),
    ("cos(2x)", lambda x: np.cos(2 * x), lambda x: -2 * np.sin(2 * x), 4.0),
    ("tanh", np.tanh, lambda x: 1.0 / np.cosh(x) ** 2, 4.0 / (3.0 * math.sqrt(3.0))),
    ("sigmoid", _sigmoid, lambda x: _sigmoid(x) * (1.0 - _sigmoid(x)), math.sqrt(3.0) / 18.0),
    ("arctan", np.arctan, lambda x: 1.0 / (1.0 + np.asarray(x, dtype=float) ** 2),
     3.0 * math.sqrt(3.0) / 8.0),
)


def ibp_catalog() -> list:
    """Twenty ``(F name, dist, F, F', sup|F''|)`` cases: five functions by four laws."""
    laws = (
        DisorderDistribution.gaussian(),
        DisorderDistribution.rademacher(),
        DisorderDistribution.uniform_scaled(),
        DisorderDistribution.discrete((-2.0, 0.5), (0.2, 0.8)),
    )
    return [(name, law, f, fp, sup) for law in laws for name, f, fp, sup in IBP_FUNCTIONS]


@dataclass(frozen=True)
class InterpolationRow:
    s: float
    alpha_hat: float
    alpha_stderr: float
    slope: Optional[float]
    slope_stderr: Optional[float]
    slope_bound: float
    holds: Optional[bool]


def _interp_block(ham, t, s_grid, dist, seed, start, stop):
    policy = SeedPolicy(seed)
    xi = _couplings(ham, dist, policy, STREAM_XI, start, stop)
    g = _couplings(ham, GAUSSIAN, policy, STREAM_GAUSS, start, stop)
    h0 = ham.field_factor(math.sqrt(t)) * ham.deterministic.entries
    out = np.empty((stop - start, len(s_grid)))
    for k, s in enumerate(s_grid):
        mix = math.sqrt(s) * xi + math.sqrt(max(t - s, 0.0)) * g
        out[:, k] = log_partition_batch(ham.disorder_matrices(mix) + h0[None])
    return out


def guerra_interpolation_scan(ham, beta, dist, s_grid, n_samples, seed, workers=None) -> list:
    """Interpolate between ``dist`` and Gaussian couplings at ``t = beta^2``.

    ``alpha(s) = E log Tr exp(sqrt(s) sum xi X + sqrt(t - s) sum g X + H0)`` so
    that ``alpha(t)`` is the quenched pressure under ``dist`` and ``alpha(0)``
    under the Gaussian, both at inverse temperature ``|beta|``. The same
    replicas are used at every grid point. Interior points get a centered
    finite-difference slope checked against ``9 sqrt(t) E|xi|^3 sum ||X||^3``.
    """
    t = float(beta) ** 2
    s_grid = [float(s) for s in s_grid]
    if any(not 0.0 <= s <= t * (1 + 1e-12) for s in s_grid):
        raise DomainError("interpolation grid must lie in [0, beta^2]")
    if any(b <= a for a, b in zip(s_grid, s_grid[1:])):
        raise DomainError("interpolation grid must be strictly increasing")
    fn = partial(_interp_block, ham, t, s_grid, dist, int(seed))
    vals = replica_map(fn, int(n_samples), block_size_for(ham.system.dim), workers)
    n = vals.shape[0]
    bound = 9.0 * math.sqrt(t) * dist.abs_third * norm_power_sum(ham, 3)
    rows = []
    for k, s in enumerate(s_grid):
        col = vals[:, k]
        slope = se = holds = None
        if 0 < k < len(s_grid) - 1:
            d = (vals[:, k + 1] - vals[:, k - 1]) / (s_grid[k + 1] - s_grid[k - 1])
            slope = float(d.mean())
            se = float(d.std(ddof=1) / math.sqrt(n))
            holds = bool(abs(slope) <= bound + SIGMA_SLACK * se)
        rows.append(InterpolationRow(s, float(col.mean()), float(col.std(ddof=1) / math.sqrt(n)),
                                     slope, se, bound, holds))
    return rows


@dataclass(frozen=True)
class PressureDerivativeCheck:
    finite_difference: float
    duhamel_mean: float
    difference: float
    difference_stderr: float
    truncation: float
    correction_radius: float
    holds: bool


def _press_block(ham, beta, h, dist, seed, start, stop):
    xi = _couplings(ham, dist, SeedPolicy(seed), STREAM_XI, start, stop)
    h0 = ham.field_factor(beta) * ham.deterministic.entries
    dis = ham.disorder_matrices(xi)
    out = np.empty((stop - start, 3))
    lz = {}
    for step in (-2 * h, -h, h, 2 * h):
        lz[step] = log_partition_batch((beta + step) * dis + h0[None])
    out[:, 0] = (lz[h] - lz[-h]) / (2 * h)
    out[:, 1] = (lz[2 * h] - lz[-2 * h]) / (4 * h)
    for r in range(stop - start):
        state = make_gibbs(ham, beta, xi[r])
        avg, two = _term_moments(state, ham)
        out[r, 2] = beta * float(np.sum(two - avg**2))
    return out


def pressure_derivative_check(ham, beta, dist, n_samples, seed, h=1e-3, workers=None
                              ) -> PressureDerivativeCheck:
    """Finite difference of the quenched pressure in ``beta`` vs. the Duhamel expansion.

    The deterministic part is frozen at its value for ``beta`` (only the
    disorder term is differentiated), matching ``Z = Tr exp(beta sum xi X + H0)``.
    Replicas are shared between the two sides, so the comparison uses the
    paired difference. The allowed gap is the correction radius
    ``9 beta^2 E|xi|^3 sum||X||^3`` (zero for Gaussian disorder), plus three
    standard errors, plus a Richardson estimate of the O(h^2) truncation.
    """
    beta = float(beta)
    fn = partial(_press_block, ham, beta, float(h), dist, int(seed))
    vals = replica_map(fn, int(n_samples), block_size_for(ham.system.dim), workers)
    n = vals.shape[0]
    fd, fd2, duh = vals[:, 0], vals[:, 1], vals[:, 2]
    diff = fd - duh
    se = float(diff.std(ddof=1) / math.sqrt(n))
    trunc = abs(float(fd2.mean() - fd.mean()))
    radius = 0.0 if dist.is_gaussian else 9.0 * beta**2 * dist.abs_third * norm_power_sum(ham, 3)
    gap = abs(float(diff.mean()))
    return PressureDerivativeCheck(
        float(fd.mean()), float(duh.mean()), float(diff.mean()), se, trunc, radius,
        bool(gap <= radius + SIGMA_SLACK * se + trunc),
    )
