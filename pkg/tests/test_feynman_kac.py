import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qsg.disorder import SeedPolicy
from qsg.errors import DomainError
from qsg.feynman_kac import (
    PathMeasureParams,
    SpinPath,
    conc2_bound,
    covariance_check,
    double_overlap_integral,
    fk_concentration_probe,
    fk_matrix_element,
    fk_partition_estimate,
    overlap,
    path_action,
    sample_path,
    sample_path_batch,
)
from qsg.gibbs import make_gibbs
from qsg.hamiltonians import build_heisenberg_xyz, build_transverse_sk
from qsg.spin_operators import SpinSystem
from qsg.trotter import hermitian_expm


def rng(seed=0):
    return SeedPolicy(seed).generator(0, 99)


def const_path(sigma, beta=1.0):
    return SpinPath(SpinSystem(len(sigma)), beta, sigma, tuple([] for _ in sigma))


def test_sampling_examples():
    p = sample_path(PathMeasureParams(0.0, 2.0, 3), "uniform", rng())
    assert p.n_jumps == 0
    a = sample_path(PathMeasureParams(1.0, 2.0, 3), [1, -1, 1], rng(4))
    b = sample_path(PathMeasureParams(1.0, 2.0, 3), [1, -1, 1], rng(4))
    assert a.to_text() == b.to_text()
    params = PathMeasureParams(0.7, 1.5, 3)
    batch = sample_path_batch(params, 100_000, rng(5))
    counts = np.bincount(batch.event_path, minlength=batch.n_paths)
    mean, se = counts.mean(), counts.std(ddof=1) / math.sqrt(counts.size)
    assert abs(mean - 3 * 0.7 * 1.5) <= 3 * se


def test_param_validation():
    with pytest.raises(DomainError):
        PathMeasureParams(-1.0, 1.0, 2)
    with pytest.raises(DomainError):
        PathMeasureParams(1.0, 0.0, 2)
    with pytest.raises(DomainError):
        SpinPath(SpinSystem(1), 1.0, [1], ([0.5, 0.2],))
    with pytest.raises(DomainError):
        SpinPath(SpinSystem(1), 1.0, [1], ([1.0],))


def test_overlap_examples():
    s = np.array([1, -1, 1, 1])
    assert overlap(s, s) == 1.0
    assert overlap(s, -s) == -1.0
    assert overlap([1, 1, -1, -1], [1, -1, 1, -1]) == 0.0


def test_path_action_examples():
    n = 3
    g = np.random.default_rng(1).standard_normal((n, n))
    sigma = np.array([1, -1, 1])
    beta = 1.7
    p = const_path(sigma, beta)
    assert path_action(p, np.zeros((n, n))) == 0.0
    want = beta / (2 * math.sqrt(n)) * sigma @ g @ sigma
    assert math.isclose(path_action(p, g), want, rel_tol=1e-13)
    jumped = SpinPath(SpinSystem(n), beta, sigma, ([], [beta / 2], []))
    other = sigma * np.array([1, -1, 1])
    half = (sigma @ g @ sigma + other @ g @ other) / (2 * math.sqrt(n))
    assert math.isclose(path_action(jumped, g), beta * half / 2, rel_tol=1e-13)
    gmap = {(i + 1, j + 1): g[i, j] for i in range(n) for j in range(n)}
    assert path_action(jumped, gmap) == path_action(jumped, g)


def test_double_overlap_examples():
    beta = 1.3
    a = const_path([1, 1, -1, -1], beta)
    assert math.isclose(double_overlap_integral(a, a), beta**2)
    assert double_overlap_integral(a, const_path([1, -1, 1, -1], beta)) == 0.0
    # N = 2, one flip of site 2 at t on path a, constant (+,+) on b
    t = 0.4
    a = SpinPath(SpinSystem(2), beta, [1, 1], ([], [t]))
    b = const_path([1, 1], beta)
    assert math.isclose(double_overlap_integral(a, b), t * beta * 1.0 + (beta - t) * beta * 0.0)


def test_covariance_examples():
    beta, n = 0.9, 3
    a = const_path([1, -1, 1], beta)
    c = covariance_check(a, a, 20_000, seed=1)
    assert math.isclose(c.analytic, n * beta**2 / 4, rel_tol=1e-12)
    assert c.agree


def test_independent_couplings_uncorrelated():
    p = sample_path(PathMeasureParams(1.0, 1.0, 3), "uniform", rng(2))
    r = np.random.default_rng(3)
    g1 = r.standard_normal((5000, 3, 3))
    g2 = r.standard_normal((5000, 3, 3))
    z1 = np.array([path_action(p, g) for g in g1])
    z2 = np.array([path_action(p, g) for g in g2])
    prod = (z1 - z1.mean()) * (z2 - z2.mean())
    assert abs(prod.mean()) <= 3 * prod.std(ddof=1) / math.sqrt(prod.size)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 4), lam=st.floats(0.0, 3.0),
       beta=st.floats(0.1, 2.0))
def test_covariance_identity_exact(seed, n, lam, beta):
    r = np.random.default_rng(seed)
    params = PathMeasureParams(lam, beta, n)
    a = sample_path(params, "uniform", r)
    b = sample_path(params, "uniform", r)
    c = covariance_check(a, b, 200, seed=seed)
    assert abs(c.analytic - c.overlap_form) <= 1e-10 * max(1.0, abs(c.analytic))
    assert math.isclose(double_overlap_integral(a.reversed(), b.reversed()),
                        double_overlap_integral(a, b), rel_tol=1e-12, abs_tol=1e-14)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_path_action_is_linear(seed):
    r = np.random.default_rng(seed)
    p = sample_path(PathMeasureParams(1.5, 1.0, 3), "uniform", r)
    g, h = r.standard_normal((2, 3, 3))
    assert math.isclose(path_action(p, g + h), path_action(p, g) + path_action(p, h),
                        rel_tol=1e-12, abs_tol=1e-12)


def test_state_reconstruction_by_parity():
    p = sample_path(PathMeasureParams(2.0, 1.0, 4), "uniform", rng(6))
    times = rng(7).uniform(0, 1, 1000)
    for u in times:
        parity = np.array([np.count_nonzero(j <= u) % 2 for j in p.jumps])
        assert np.array_equal(p.state_at(u), p.initial * (1 - 2 * parity))


def test_text_round_trip():
    p = sample_path(PathMeasureParams(2.0, 1.3, 3), "uniform", rng(8))
    q = SpinPath.from_text(p.to_text())
    assert q.to_text() == p.to_text()
    assert all(np.array_equal(a, b) for a, b in zip(p.jumps, q.jumps))
    with pytest.raises(DomainError):
        SpinPath.from_text("beta 1.0\nbogus 3\n")


def test_batch_agrees_with_single_paths():
    n = 3
    params = PathMeasureParams(1.2, 0.8, n)
    batch = sample_path_batch(params, 200, rng(9))
    g = np.random.default_rng(10).standard_normal((n, n))
    ham = build_transverse_sk(SpinSystem(n), 0.0)
    energies = ham.disorder_matrices(g.ravel()[None])[0].diagonal().real
    integrals = batch.energy_integrals(energies)
    finals = batch.final_index()
    for p in range(batch.n_paths):
        path = batch.path(p)
        assert math.isclose(integrals[p], path_action(path, g), rel_tol=1e-12, abs_tol=1e-12)
        assert finals[p] == SpinSystem(n).index_of(path.final)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_zero_couplings_partition(n):
    lam, beta = 0.8, 1.1
    ham = build_transverse_sk(SpinSystem(n), lam)
    est = fk_partition_estimate(ham, beta, np.zeros(ham.n_terms), 50_000, seed=n)
    assert abs(est.mean - (2 * math.cosh(beta * lam)) ** n) <= 3 * est.std_error


def test_classical_limit_is_exact():
    ham = build_transverse_sk(SpinSystem(3), 0.0)
    xi = np.random.default_rng(11).standard_normal(ham.n_terms)
    est = fk_partition_estimate(ham, 0.9, xi, 20_000, seed=1)
    assert math.isclose(est.mean, math.exp(make_gibbs(ham, 0.9, xi).log_partition), rel_tol=0.05)
    assert abs(est.mean - math.exp(make_gibbs(ham, 0.9, xi).log_partition)) <= 3 * est.std_error


def test_partition_against_exact_n2():
    ham = build_transverse_sk(SpinSystem(2), 1.0)
    xi = np.random.default_rng(12).standard_normal(ham.n_terms)
    est = fk_partition_estimate(ham, 0.7, xi, 100_000, seed=2)
    exact = math.exp(make_gibbs(ham, 0.7, xi).log_partition)
    assert abs(est.mean - exact) <= 3 * est.std_error


def test_matrix_elements_single_site():
    lam, beta = 1.0, 0.9
    ham = build_transverse_sk(SpinSystem(1), lam)
    xi = np.zeros(1)
    diag = fk_matrix_element(ham, beta, xi, [1], [1], 50_000, seed=3)
    off = fk_matrix_element(ham, beta, xi, [1], [-1], 50_000, seed=4)
    assert abs(diag.mean - math.cosh(beta * lam)) <= 3 * diag.std_error
    assert abs(off.mean - math.sinh(beta * lam)) <= 3 * off.std_error
    tiny = fk_matrix_element(ham, 1e-3, xi, [1], [1], 2000, seed=5)
    tiny_off = fk_matrix_element(ham, 1e-3, xi, [1], [-1], 2000, seed=5)
    # almost no path flips, so the weights are nearly constant: allow O(beta lam)
    assert abs(tiny.mean - 1) <= 3 * tiny.std_error + 2e-3
    assert tiny_off.mean <= 3 * tiny_off.std_error + 2e-3


def test_matrix_elements_nonnegative_and_match_expm():
    ham = build_transverse_sk(SpinSystem(2), 0.6)
    xi = np.random.default_rng(13).standard_normal(ham.n_terms)
    beta = 1.0
    expo = hermitian_expm(make_gibbs(ham, beta, xi).hamiltonian_exponent.entries).real
    confs = SpinSystem(2).configurations()
    for i, s in enumerate(confs):
        for j, t in enumerate(confs):
            me = fk_matrix_element(ham, beta, xi, s, t, 20_000, seed=10 * i + j)
            assert me.mean >= -3 * me.std_error
            # 16 simultaneous comparisons, so a Bonferroni-sized band
            assert abs(me.mean - expo[i, j]) <= 4 * me.std_error + 1e-12


def test_unbiased_over_independent_runs():
    ham = build_transverse_sk(SpinSystem(2), 1.0)
    xi = np.random.default_rng(14).standard_normal(ham.n_terms)
    exact = math.exp(make_gibbs(ham, 0.8, xi).log_partition)
    inside = 0
    for seed in range(20):
        est = fk_partition_estimate(ham, 0.8, xi, 8192, seed=1000 + seed)
        inside += abs(est.mean - exact) <= 3 * est.std_error
    assert inside >= 18


def test_worker_count_does_not_change_estimate():
    ham = build_transverse_sk(SpinSystem(2), 1.0)
    xi = np.ones(ham.n_terms)
    a = fk_partition_estimate(ham, 0.5, xi, 10_000, seed=1, workers=1)
    b = fk_partition_estimate(ham, 0.5, xi, 10_000, seed=1, workers=2)
    assert a.mean == b.mean and a.std_error == b.std_error


def test_rejects_non_diagonal_models():
    ham = build_heisenberg_xyz(SpinSystem(2))
    with pytest.raises(DomainError):
        fk_partition_estimate(ham, 1.0, np.zeros(ham.n_terms), 10, seed=1)


def test_conc2_bound():
    assert conc2_bound(0.0, 4, 1.0) == 2.0
    b = [conc2_bound(0.1, n, 1.0) for n in (4, 6, 8)]
    assert b[0] > b[1] > b[2]


def test_fk_concentration_probe():
    ham = build_transverse_sk(SpinSystem(4), 1.0)
    probe = fk_concentration_probe(ham, 1.0, 2000, [0.0, 0.05, 0.1, 0.2], seed=3,
                                   n_paths=20_000, n_cross=2)
    assert probe.rows[0].empirical == 1.0 and probe.rows[0].bound == 2.0
    assert all(r.holds for r in probe.rows)
    assert probe.best_fit_k is not None and probe.best_fit_k > 0
    assert len(probe.cross_checks) == 2
    assert all(abs(z) <= 3 for *_, z in probe.cross_checks)
