"""Continuous-time spin-flip paths and the path-integral form of the transverse S-K trace.

For ``Theta = beta * (sum xi_I X_I) + beta * lam * sum_j S^x_j`` with z-diagonal
couplings, writing ``lam S^x = lam (S^x - 1) + lam`` turns the transverse field
into the generator of independent rate-``lam`` spin flips plus the constant
``N lam``. Hence

    <sigma| e^Theta |tau> = e^{N beta lam} E_sigma[ exp(int_0^beta E(sigma(u)) du) ; sigma(beta) = tau ]

where ``E`` is the diagonal disorder energy. Tracing with a uniform starting
configuration gives the unbiased estimator of ``Z`` implemented below.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import partial
from typing import Mapping, Optional

import numpy as np

from .disorder import (
    GAUSSIAN,
    SIGMA_SLACK,
    STREAM_XI,
    QuenchedEstimate,
    SeedPolicy,
    TailRow,
    _couplings,
    _tail_table,
    log_partition_samples,
)
from .errors import DomainError
from .hamiltonians import DisorderedHamiltonian, transverse_field
from .parallel import replica_map
from .spin_operators import SpinSystem

PATH_BLOCK = 4096
STREAM_PATHS = 3
STREAM_COV = 4


@dataclass(frozen=True)
class PathMeasureParams:
    lam: float
    beta: float
    n_sites: int

    def __post_init__(self):
        if not self.lam >= 0:
            raise DomainError("flip rate must be nonnegative")
        if not self.beta > 0:
            raise DomainError("time horizon beta must be positive")
        SpinSystem(self.n_sites)


def _as_config(sigma, n: int) -> np.ndarray:
    s = np.asarray(sigma, dtype=np.int8)
    if s.shape != (n,) or not np.all(np.abs(s) == 1):
        raise DomainError(f"configuration must be a +-1 vector of length {n}")
    return s


@dataclass(frozen=True, eq=False)
class SpinPath:
    """Piecewise-constant, right-continuous trajectory on {-1, +1}^N over [0, beta]."""

    system: SpinSystem
    beta: float
    initial: np.ndarray
    jumps: tuple  # per-site increasing arrays of jump times in (0, beta)

    def __post_init__(self):
        n = self.system.n_sites
        object.__setattr__(self, "initial", _as_config(self.initial, n))
        jumps = tuple(np.asarray(j, dtype=float) for j in self.jumps)
        if len(jumps) != n:
            raise DomainError(f"need one jump list per site ({n})")
        for j in jumps:
            if j.ndim != 1 or np.any(j <= 0) or np.any(j >= self.beta) or np.any(np.diff(j) <= 0):
                raise DomainError("jump times must be strictly increasing inside (0, beta)")
        object.__setattr__(self, "jumps", jumps)

    def state_at(self, u: float) -> np.ndarray:
        """Configuration at time ``u`` (right-continuous: a jump at u counts)."""
        flips = np.array([np.searchsorted(j, u, side="right") % 2 for j in self.jumps])
        return np.where(flips == 1, -self.initial, self.initial).astype(np.int8)

    @property
    def final(self) -> np.ndarray:
        return self.state_at(self.beta)

    @property
    def n_jumps(self) -> int:
        return int(sum(len(j) for j in self.jumps))

    def pieces(self):
        """Merged partition: ``(lengths, configs)`` of the constant pieces."""
        times = np.concatenate([j for j in self.jumps]) if self.n_jumps else np.zeros(0)
        sites = np.concatenate([np.full(len(j), k) for k, j in enumerate(self.jumps)]) \
            if self.n_jumps else np.zeros(0, dtype=int)
        order = np.argsort(times, kind="stable")
        times, sites = times[order], sites[order]
        edges = np.concatenate([[0.0], times, [self.beta]])
        configs = np.empty((len(times) + 1, self.system.n_sites), dtype=np.int8)
        cur = self.initial.copy()
        configs[0] = cur
        for k, s in enumerate(sites):
            cur[s] = -cur[s]
            configs[k + 1] = cur
        return np.diff(edges), configs

    def reversed(self) -> "SpinPath":
        return SpinPath(self.system, self.beta, self.final,
                        tuple((self.beta - j)[::-1] for j in self.jumps))

    def to_text(self) -> str:
        lines = [f"beta {self.beta!r}", f"n_sites {self.system.n_sites}",
                 "initial " + " ".join("+" if s > 0 else "-" for s in self.initial)]
        for k, j in enumerate(self.jumps, 1):
            lines.append(" ".join([f"site {k}"] + [repr(float(t)) for t in j]))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "SpinPath":
        beta = n = initial = None
        jumps = {}
        for raw in text.splitlines():
            parts = raw.split()
            if not parts:
                continue
            key = parts[0]
            if key == "beta":
                beta = float(parts[1])
            elif key == "n_sites":
                n = int(parts[1])
            elif key == "initial":
                initial = [1 if c == "+" else -1 for c in parts[1:]]
            elif key == "site":
                jumps[int(parts[1])] = [float(t) for t in parts[2:]]
            else:
                raise DomainError(f"unrecognised path line {raw!r}")
        if beta is None or n is None or initial is None:
            raise DomainError("path text needs beta, n_sites and initial lines")
        return cls(SpinSystem(n), beta, initial, tuple(jumps.get(k, []) for k in range(1, n + 1)))


def sample_path(params: PathMeasureParams, initial, rng: np.random.Generator) -> SpinPath:
    """Independent rate-``lam`` Poisson flip clocks at each site on (0, beta)."""
    system = SpinSystem(params.n_sites)
    if isinstance(initial, str):
        if initial != "uniform":
            raise DomainError(f"unknown initial specification {initial!r}")
        init = 1 - 2 * rng.integers(0, 2, params.n_sites)
    else:
        init = initial
    jumps = []
    for _ in range(params.n_sites):
        k = rng.poisson(params.lam * params.beta)
        jumps.append(np.sort(rng.uniform(0.0, params.beta, k)))
    return SpinPath(system, params.beta, init, tuple(jumps))


def overlap(sigma, tau) -> float:
    s = np.asarray(sigma, dtype=float)
    t = np.asarray(tau, dtype=float)
    if s.shape != t.shape or s.ndim != 1:
        raise DomainError("overlap needs two configurations of equal length")
    return float(np.dot(s, t)) / s.size


def _coupling_matrix(couplings, n: int) -> np.ndarray:
    if isinstance(couplings, Mapping):
        g = np.zeros((n, n))
        for i in range(1, n + 1):
            for j in range(1, n + 1):
                try:
                    g[i - 1, j - 1] = float(couplings[(i, j)])
                except KeyError:
                    raise DomainError(f"missing coupling for pair {(i, j)}") from None
        return g
    g = np.asarray(couplings, dtype=float)
    if g.shape != (n, n):
        raise DomainError(f"coupling matrix must be {n}x{n}")
    return g


def _pair_time_integrals(path: SpinPath) -> np.ndarray:
    """``(1/(2 sqrt N)) int_0^beta sigma_i(u) sigma_j(u) du`` as an N x N matrix."""
    lengths, configs = path.pieces()
    c = configs.astype(float)
    return (c.T * lengths) @ c / (2.0 * math.sqrt(path.system.n_sites))


def path_action(path: SpinPath, couplings) -> float:
    """``zeta(path) = int_0^beta (1/(2 sqrt N)) sum_ij g_ij sigma_i sigma_j du``, exactly."""
    g = _coupling_matrix(couplings, path.system.n_sites)
    return float(np.sum(g * _pair_time_integrals(path)))


def double_overlap_integral(path_a: SpinPath, path_b: SpinPath) -> float:
    """``int_0^beta int_0^beta R(sigma(u), tau(s))^2 du ds`` over the product partition."""
    if path_a.system.n_sites != path_b.system.n_sites or path_a.beta != path_b.beta:
        raise DomainError("paths must share N and beta")
    la, ca = path_a.pieces()
    lb, cb = path_b.pieces()
    r = (ca.astype(float) @ cb.astype(float).T) / path_a.system.n_sites
    return float(la @ (r * r) @ lb)


@dataclass(frozen=True)
class CovarianceCheck:
    analytic: float
    overlap_form: float
    mc: float
    mc_stderr: float
    agree: bool


def covariance_check(path_a: SpinPath, path_b: SpinPath, n_gaussian_samples: int, seed: int
                     ) -> CovarianceCheck:
    """Covariance of the two path actions under i.i.d. standard normal couplings."""
    n = path_a.system.n_sites
    a = _pair_time_integrals(path_a)
    b = _pair_time_integrals(path_b)
    analytic = float(np.sum(a * b))
    overlap_form = n / 4.0 * double_overlap_integral(path_a, path_b)
    rng = SeedPolicy(int(seed)).generator(0, STREAM_COV)
    g = rng.standard_normal((int(n_gaussian_samples), n * n))
    za = g @ a.ravel()
    zb = g @ b.ravel()
    prod = (za - za.mean()) * (zb - zb.mean())
    m = prod.size
    mc = float(prod.sum() / (m - 1))
    se = float(prod.std(ddof=1) / math.sqrt(m))
    exact = abs(analytic - overlap_form) <= 1e-10 * max(1.0, abs(analytic))
    return CovarianceCheck(analytic, overlap_form, mc, se,
                           bool(exact and abs(mc - analytic) <= SIGMA_SLACK * se))


# ---------------------------------------------------------------------------
# vectorized path ensembles


@dataclass(frozen=True)
class PathBatch:
    """A block of sampled paths in flat event form (sorted by path, then time)."""

    n_sites: int
    beta: float
    initial_index: np.ndarray  # (P,) basis index of sigma(0)
    event_path: np.ndarray
    event_time: np.ndarray
    event_site: np.ndarray  # 1-based

    @property
    def n_paths(self) -> int:
        return self.initial_index.size

    def _bitmask(self, sites):
        return np.left_shift(1, self.n_sites - np.asarray(sites)).astype(np.int64)

    def final_index(self) -> np.ndarray:
        flips = np.zeros(self.n_paths, dtype=np.int64)
        np.bitwise_xor.at(flips, self.event_path, self._bitmask(self.event_site))
        return self.initial_index ^ flips

    def states_after_events(self) -> np.ndarray:
        """Basis index right after each event."""
        masks = self._bitmask(self.event_site)
        if masks.size == 0:
            return masks
        prefix = np.bitwise_xor.accumulate(masks)
        exclusive = prefix ^ masks
        first = np.searchsorted(self.event_path, self.event_path, side="left")
        return self.initial_index[self.event_path] ^ prefix ^ exclusive[first]

    def energy_integrals(self, energies: np.ndarray) -> np.ndarray:
        """``int_0^beta E(sigma(u)) du`` per path for a basis-indexed energy vector."""
        base = self.beta * energies[self.initial_index]
        if self.event_time.size == 0:
            return base
        after = self.states_after_events()
        prev = np.concatenate([[0], after[:-1]])
        new_path = np.concatenate([[True], self.event_path[1:] != self.event_path[:-1]])
        prev = np.where(new_path, self.initial_index[self.event_path], prev)
        jump = (self.beta - self.event_time) * (energies[after] - energies[prev])
        return base + np.bincount(self.event_path, weights=jump, minlength=self.n_paths)

    def path(self, p: int) -> SpinPath:
        system = SpinSystem(self.n_sites)
        sel = self.event_path == p
        t, s = self.event_time[sel], self.event_site[sel]
        init = system.configurations()[self.initial_index[p]]
        return SpinPath(system, self.beta, init,
                        tuple(np.sort(t[s == k]) for k in range(1, self.n_sites + 1)))


def sample_path_batch(params: PathMeasureParams, n_paths: int, rng: np.random.Generator,
                      initial_index=None) -> PathBatch:
    """``n_paths`` independent flip paths; ``initial_index=None`` draws sigma(0) uniformly."""
    n = params.n_sites
    if initial_index is None:
        init = rng.integers(0, 1 << n, n_paths).astype(np.int64)
    else:
        init = np.full(n_paths, int(initial_index), dtype=np.int64)
    counts = rng.poisson(params.lam * params.beta, size=(n_paths, n))
    total = int(counts.sum())
    path_ids = np.repeat(np.repeat(np.arange(n_paths), n), counts.ravel())
    site_ids = np.repeat(np.tile(np.arange(1, n + 1), n_paths), counts.ravel())
    times = rng.uniform(0.0, params.beta, total)
    order = np.lexsort((times, path_ids))
    return PathBatch(n, float(params.beta), init, path_ids[order], times[order], site_ids[order])


def _fk_setup(ham: DisorderedHamiltonian, beta: float, xi):
    """Flip rate and diagonal disorder energies, after checking the model's form."""
    if not ham.is_classical_disorder:
        raise DomainError("path-integral estimator needs couplings diagonal in the z basis")
    beta = float(beta)
    if beta <= 0:
        raise DomainError("beta must be positive for the path-integral estimator")
    h0 = ham.deterministic.entries
    n = ham.system.n_sites
    lam = float(h0[1, 0].real) if ham.system.dim > 1 else 0.0
    if not np.allclose(h0, transverse_field(ham.system, lam).entries, rtol=0, atol=1e-12) or lam < 0:
        raise DomainError("deterministic part must be a nonnegative uniform transverse field")
    rate = ham.field_factor(beta) * lam / beta
    energies = ham.disorder_matrices(ham.coupling_vector(xi)[None])[0].diagonal().real.copy()
    return PathMeasureParams(rate, beta, n), energies


def _fk_block(params, energies, init, target, seed, start, stop):
    rng = SeedPolicy(seed).generator(start // PATH_BLOCK, STREAM_PATHS)
    batch = sample_path_batch(params, stop - start, rng, init)
    log_w = params.n_sites * params.beta * params.lam
    integral = batch.energy_integrals(energies)
    final = batch.final_index()
    hit = final == (batch.initial_index if target is None else target)
    w = np.where(hit, np.exp(log_w + integral), 0.0)
    if init is None:
        w *= float(1 << params.n_sites)
    return w


def fk_weights(ham, beta, xi, n_paths, seed, initial_index=None, target_index=None, workers=None):
    """Per-path estimator weights (partition function when both indices are None)."""
    params, energies = _fk_setup(ham, beta, xi)
    fn = partial(_fk_block, params, energies, initial_index, target_index, int(seed))
    return replica_map(fn, int(n_paths), PATH_BLOCK, workers)


def fk_partition_estimate(ham, beta, xi, n_paths, seed, workers=None) -> QuenchedEstimate:
    """Unbiased path-integral estimate of ``Z = Tr exp(Theta)``."""
    return QuenchedEstimate.from_values(fk_weights(ham, beta, xi, n_paths, seed, workers=workers),
                                        keep=False)


def fk_matrix_element(ham, beta, xi, sigma, sigma_tilde, n_paths, seed, workers=None
                      ) -> QuenchedEstimate:
    """Estimate ``<sigma| exp(Theta) |sigma_tilde>`` in the z basis."""
    system = ham.system
    i0 = system.index_of(sigma)
    i1 = system.index_of(sigma_tilde)
    w = fk_weights(ham, beta, xi, n_paths, seed, initial_index=i0, target_index=i1,
                   workers=workers)
    return QuenchedEstimate.from_values(w, keep=False)


@dataclass(frozen=True)
class FKConcentration:
    rows: list
    best_fit_k: Optional[float]
    per_site_values: np.ndarray
    cross_checks: list  # (replica, exact log Z, FK log-estimate, z-score)


def conc2_bound(u: float, n_sites: int, beta: float) -> float:
    return 2.0 if u == 0 else 2.0 * math.exp(-2.0 * u * u * n_sites / beta**2)


def fk_concentration_probe(ham, beta, n_disorder, u_grid, seed, n_paths=0, n_cross=3,
                           workers=None) -> FKConcentration:
    """Tail of the per-site ``log Z`` under Gaussian disorder vs ``2 exp(-2 u^2 N / beta^2)``.

    ``log Z`` per replica is exact; with ``n_paths > 0`` the first ``n_cross``
    replicas are also estimated by the path integral as a cross-check. The
    fitted constant ``K`` in ``2 exp(-N K u^2 / beta^2)`` is reported only.
    """
    beta = float(beta)
    n = ham.system.n_sites
    _fk_setup(ham, beta, np.zeros(ham.n_terms))
    vals = log_partition_samples(ham, beta, GAUSSIAN, n_disorder, seed, workers=workers) / n
    dev = np.abs(vals - vals.mean())
    rows = _tail_table(dev, u_grid, lambda u: conc2_bound(u, n, beta))
    ks = [-beta**2 * math.log(r.empirical / 2.0) / (n * r.u**2)
          for r in rows if r.u > 0 and r.empirical > 0]
    best_k = min(ks) if ks else None
    checks = []
    if n_paths > 0:
        xi = _couplings(ham, GAUSSIAN, SeedPolicy(int(seed)), STREAM_XI, 0, min(n_cross, n_disorder))
        for r, row in enumerate(xi):
            est = fk_partition_estimate(ham, beta, row, n_paths, int(seed) + r + 1, workers)
            exact = vals[r] * n
            z = (est.mean - math.exp(exact)) / est.std_error if est.std_error > 0 else 0.0
            checks.append((r, float(exact), float(math.log(max(est.mean, 1e-300))), float(z)))
    return FKConcentration(rows, best_k, vals, checks)


__all__ = [
    "PathMeasureParams", "SpinPath", "PathBatch", "TailRow", "sample_path", "sample_path_batch",
    "overlap", "path_action", "double_overlap_integral", "covariance_check",
    "fk_partition_estimate", "fk_matrix_element", "fk_concentration_probe", "conc2_bound",
]
